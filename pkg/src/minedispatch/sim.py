"""Discrete-event simulation of the shovel/truck haulage cycle.

Every truck loops through

    charging --init--> load site --haul--> dump site --load--> load site ...

and asks the dispatcher for a target each time it becomes idle.  The engine
advances the event queue until the next truck needs an order and hands back
a :class:`DispatchRequest`; :meth:`MineSim.step` routes that truck and
advances again.  Decision intervals are therefore uneven in wall-clock time.

Events at equal times are ordered by (kind, truck index) with
service completions before arrivals before decisions, which keeps runs
bit-exact for a given (scenario, seed, action sequence).
"""
from __future__ import annotations

import csv
import heapq
import io
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import EpisodeNotFinished, EpisodeOver, IllegalAction
from .scenario import ScenarioConfig

INIT, HAUL, LOAD = "init", "haul", "load"
EVENT_TYPES = (INIT, HAUL, LOAD)

DUMP_MINUTES = 2.0
MIN_ESTIMATE_RATIO = 0.05

# truck status
AT_CHARGING, EN_ROUTE, QUEUED, IN_SERVICE, AWAITING = range(5)
STATUS_NAMES = ("at_charging", "en_route", "queued", "in_service", "awaiting_order")

# event kinds, in tie-break priority order
SERVICE_DONE, ARRIVAL, DECISION = 0, 1, 2


@dataclass(frozen=True)
class DispatchRequest:
    truck_index: int
    event_type: str
    clock: float
    time_delta: float


@dataclass(frozen=True)
class EpisodeEnd:
    clock: float
    final_tons: float


@dataclass(frozen=True)
class StepInfo:
    delta_tons: float
    wait_duration: float
    service_duration: float
    jam_duration: float
    move_duration: float
    episode_done: bool
    final_tons: float


@dataclass(frozen=True)
class EpisodeMetrics:
    produced_tons: float
    match_factor: float
    total_wait_time: float
    jam_ratio: float
    trips_completed: int


@dataclass
class TargetView:
    """Per-target quantities for one pending request (length = number of legal targets).

    All times are minutes.  ``est_wait`` includes trucks already heading to the
    target that arrive before this one; ``queue_wait`` only counts trucks
    physically at the site.
    """

    travel: np.ndarray
    return_travel: np.ndarray
    dist: np.ndarray
    trucks_on_road: np.ndarray
    jams_on_road: np.ndarray
    jams_total: np.ndarray
    est_wait: np.ndarray
    queue_wait: np.ndarray
    queue_len: np.ndarray
    servers: np.ndarray
    ability: np.ndarray
    produced: np.ndarray
    service: np.ndarray


class TruckState:
    __slots__ = (
        "status", "loc", "dest", "load", "eta", "leg_move", "leg_jam", "jammed",
        "queue_enter", "service_start", "last_load_done", "cycle_time",
        "acc_wait", "acc_service", "acc_jam", "acc_move", "total_wait",
    )

    def __init__(self):
        self.status = AT_CHARGING
        self.loc = 0
        self.dest = -1
        self.load = 0.0
        self.eta = 0.0
        self.leg_move = 0.0
        self.leg_jam = 0.0
        self.jammed = False
        self.queue_enter = 0.0
        self.service_start = 0.0
        self.last_load_done = None
        self.cycle_time = 0.0
        self.acc_wait = self.acc_service = self.acc_jam = self.acc_move = 0.0
        self.total_wait = 0.0


def largest_remainder(total: int, weights) -> list:
    """Split ``total`` integer units proportionally to ``weights``; ties go to the lower index."""
    weights = np.asarray(weights, dtype=float)
    quotas = total * weights / weights.sum()
    counts = np.floor(quotas).astype(int)
    rest = total - counts.sum()
    frac = quotas - counts
    order = sorted(range(len(weights)), key=lambda i: (-frac[i], i))
    for i in order[:rest]:
        counts[i] += 1
    return [int(c) for c in counts]


class MineSim:
    """One independent simulation instance (single-threaded).

    Locations are coded as integers: 0 is the charging site, ``1 + i`` load
    site ``i`` and ``1 + M + j`` dump site ``j``.  The same order is used by
    the location one-hot of the observation.
    """

    def __init__(self, config: ScenarioConfig, trace: bool = False):
        self.config = config
        self.trace_enabled = trace
        c = config
        self.M, self.N, self.K = c.num_load_sites, c.num_dump_sites, c.num_trucks
        self._cap = np.array([t.capacity_tons for t in c.trucks])
        speeds = np.array([min(t.speed_kmh, c.speed_limit_kmh) for t in c.trucks])
        self._min_per_km = 60.0 / speeds
        self._shovel_rate = np.array([s.service_tons_per_minute for s in c.shovels])
        self._site_shovels = [c.shovels_at(i) for i in range(self.M)]
        self._site_mean_rate = np.array(
            [self._shovel_rate[idx].mean() for idx in self._site_shovels])
        # distance from location code to target code, for every legal pair
        self._dist = {}
        for i in range(self.M):
            self._dist[(0, 1 + i)] = c.dist_charge_to_load[i]
            for j in range(self.N):
                self._dist[(1 + i, 1 + self.M + j)] = c.dist_load_to_dump[i][j]
                self._dist[(1 + self.M + j, 1 + i)] = c.dist_dump_to_load[j][i]
        self._schedules = [tuple(sorted(s)) for s in c.ability_schedules]
        self.fixed_group = self._fixed_group_assignment()
        self.reset()

    # -- location helpers ----------------------------------------------------

    def location_code(self, kind: str, index: int = 0) -> int:
        if kind == "charging":
            return 0
        return 1 + index if kind == "load" else 1 + self.M + index

    def location_name(self, code: int) -> str:
        if code == 0:
            return "charging"
        if code <= self.M:
            return f"load{code - 1}"
        return f"dump{code - 1 - self.M}"

    def is_load(self, code: int) -> bool:
        return 1 <= code <= self.M

    def target_codes(self, event_type: str) -> list:
        if event_type == HAUL:
            return [1 + self.M + j for j in range(self.N)]
        return [1 + i for i in range(self.M)]

    def distance(self, origin: int, dest: int) -> float:
        return self._dist[(origin, dest)]

    def travel_minutes(self, truck: int, origin: int, dest: int) -> float:
        return self._dist[(origin, dest)] * self._min_per_km[truck]

    def _fixed_group_assignment(self) -> list:
        rates = [self._shovel_rate[idx].sum() for idx in self._site_shovels]
        counts = largest_remainder(self.K, rates)
        out = []
        for site, cnt in enumerate(counts):
            out.extend([site] * cnt)
        return out

    # -- maintenance windows -------------------------------------------------

    def _site_index(self, code: int) -> int:
        return code - 1

    def ability_ratio(self, code: int, t: float) -> float:
        for start, end, ratio in self._schedules[self._site_index(code)]:
            if start <= t < end:
                return ratio
        return 1.0

    def _service_end(self, code: int, start: float, nominal: float) -> float:
        """Completion time of ``nominal`` full-rate minutes of work started at ``start``."""
        t, remaining = start, nominal
        for ws, we, ratio in self._schedules[self._site_index(code)]:
            if we <= t:
                continue
            if ws > t:
                if t + remaining <= ws:
                    return t + remaining
                remaining -= ws - t
                t = ws
            if ratio > 0:
                capacity = (we - t) * ratio
                if remaining <= capacity:
                    return t + remaining / ratio
                remaining -= capacity
            t = we
        return t + remaining

    # -- lifecycle -----------------------------------------------------------

    def reset(self, seed: int | None = None) -> DispatchRequest:
        """Put every truck at the charging site and return the first init request."""
        c = self.config
        self.seed = c.seed if seed is None else seed
        self.rng = np.random.default_rng(self.seed)
        self.clock = 0.0
        self.trucks = [TruckState() for _ in range(self.K)]
        self.load_queues = [deque() for _ in range(self.M)]
        self.dump_queues = [deque() for _ in range(self.N)]
        self.shovel_busy_until = np.zeros(len(c.shovels))
        self.shovel_truck = [None] * len(c.shovels)
        self.dump_busy_until = np.zeros((self.N, c.dump_positions_per_site))
        self.dump_truck = [[None] * c.dump_positions_per_site for _ in range(self.N)]
        self.produced_tons = 0.0
        self.site_tons = np.zeros(self.M + self.N)
        self.dump_log = []
        self.decision_log = []
        self.trace_rows = []
        self.trips = 0
        self.jam_trips = 0
        self.route_jams = {}
        self.load_time_sum = 0.0
        self.load_count = 0
        self.cycle_sum = 0.0
        self.cycle_count = 0
        self.last_dispatch_clock = 0.0
        self.done = False
        self.pending = None
        self._seq = 0
        self._events = []
        self._tons_at_decision = 0.0
        for k in range(self.K):
            self._push(0.0, DECISION, k)
        return self._advance()

    def _push(self, t: float, kind: int, truck: int) -> None:
        heapq.heappush(self._events, (t, kind, truck, self._seq))
        self._seq += 1

    def _trace(self, truck: int, event: str, location: int, detail: str = "") -> None:
        if self.trace_enabled:
            self.trace_rows.append((self.clock, truck, event, self.location_name(location), detail))

    def _advance(self):
        end = self.config.episode_minutes
        while self._events and self._events[0][0] < end:
            t, kind, k, _ = heapq.heappop(self._events)
            self.clock = t
            if kind == SERVICE_DONE:
                self._on_service_done(k)
            elif kind == ARRIVAL:
                self._on_arrival(k)
            else:
                truck = self.trucks[k]
                loc = truck.loc
                event_type = INIT if loc == 0 else (HAUL if self.is_load(loc) else LOAD)
                req = DispatchRequest(k, event_type, t, t - self.last_dispatch_clock)
                self.last_dispatch_clock = t
                self.pending = req
                self.decision_log.append((k, event_type, t))
                self._trace(k, "request_" + event_type, loc)
                return req
        self.clock = max(self.clock, end)
        self.done = True
        self.pending = None
        for truck in self.trucks:
            if truck.status == QUEUED:
                truck.total_wait += end - truck.queue_enter
        return EpisodeEnd(end, self.produced_tons)

    # -- event handlers ------------------------------------------------------

    def _on_arrival(self, k: int) -> None:
        truck = self.trucks[k]
        self.trips += 1
        self.jam_trips += truck.jammed
        truck.acc_move += truck.leg_move
        truck.acc_jam += truck.leg_jam
        truck.loc = truck.dest
        truck.dest = -1
        truck.status = QUEUED
        truck.queue_enter = self.clock
        self._trace(k, "arrive", truck.loc, "jammed" if truck.jammed else "")
        if self.is_load(truck.loc):
            self.load_queues[truck.loc - 1].append(k)
        else:
            self.dump_queues[truck.loc - 1 - self.M].append(k)
        self._start_services(truck.loc)

    def _begin_service(self, k: int, code: int, nominal: float) -> float:
        truck = self.trucks[k]
        wait = self.clock - truck.queue_enter
        truck.acc_wait += wait
        truck.total_wait += wait
        truck.status = IN_SERVICE
        truck.service_start = self.clock
        end = self._service_end(code, self.clock, nominal)
        self._push(end, SERVICE_DONE, k)
        self._trace(k, "service_start", code)
        return end

    def _start_services(self, code: int) -> None:
        if self.is_load(code):
            site = code - 1
            queue = self.load_queues[site]
            for s in self._site_shovels[site]:
                if not queue:
                    break
                if self.shovel_truck[s] is None:
                    k = queue.popleft()
                    nominal = self._cap[k] / self._shovel_rate[s]
                    self.shovel_truck[s] = k
                    self.shovel_busy_until[s] = self._begin_service(k, code, nominal)
        else:
            site = code - 1 - self.M
            queue = self.dump_queues[site]
            for p in range(self.config.dump_positions_per_site):
                if not queue:
                    break
                if self.dump_truck[site][p] is None:
                    k = queue.popleft()
                    self.dump_truck[site][p] = k
                    self.dump_busy_until[site, p] = self._begin_service(k, code, DUMP_MINUTES)

    def _on_service_done(self, k: int) -> None:
        truck = self.trucks[k]
        code = truck.loc
        duration = self.clock - truck.service_start
        truck.acc_service += duration
        if self.is_load(code):
            site = code - 1
            for s in self._site_shovels[site]:
                if self.shovel_truck[s] == k:
                    self.shovel_truck[s] = None
            truck.load = float(self._cap[k])
            self.site_tons[site] += truck.load
            self.load_time_sum += duration
            self.load_count += 1
            if truck.last_load_done is not None:
                truck.cycle_time = self.clock - truck.last_load_done
                self.cycle_sum += truck.cycle_time
                self.cycle_count += 1
            truck.last_load_done = self.clock
            self._trace(k, "loaded", code, f"{truck.load:g}")
        else:
            site = code - 1 - self.M
            for p, occupant in enumerate(self.dump_truck[site]):
                if occupant == k:
                    self.dump_truck[site][p] = None
            self.produced_tons += truck.load
            self.site_tons[code - 1] += truck.load
            self.dump_log.append((self.clock, k, site, truck.load))
            self._trace(k, "dumped", code, f"{truck.load:g}")
            truck.load = 0.0
        truck.status = AWAITING
        self._push(self.clock, DECISION, k)
        self._start_services(code)

    # -- public stepping -----------------------------------------------------

    def legal_mask(self, request: DispatchRequest | None = None) -> np.ndarray:
        request = request or self.pending
        width = max(self.M, self.N)
        mask = np.zeros(width, dtype=bool)
        mask[: self.N if request.event_type == HAUL else self.M] = True
        return mask

    def sample_jam(self, trip=None):
        """Draw a jam delay for a trip that is starting, or None.

        ``trip`` is accepted for interface symmetry; all draws come from the
        simulation's own seeded stream.
        """
        p = self.config.jam_probability_per_trip
        if p <= 0.0:
            return None
        if p < 1.0 and self.rng.random() >= p:
            return None
        lo, hi = self.config.jam_delay_minutes
        return float(lo) if lo == hi else float(self.rng.uniform(lo, hi))

    def step(self, action: int):
        """Route the pending truck to target ``action`` and run to the next decision.

        Returns ``(next_request_or_EpisodeEnd, StepInfo)``.  The StepInfo
        durations belong to the truck that was just dispatched and cover its
        leg since its own previous order; ``delta_tons`` is global production
        between this decision and the next one.
        """
        if self.done:
            raise EpisodeOver("episode already finished")
        req = self.pending
        action = int(action)
        n_targets = self.N if req.event_type == HAUL else self.M
        if not 0 <= action < n_targets:
            raise IllegalAction(
                f"target {action} is not legal for a {req.event_type} order "
                f"({n_targets} targets)")
        k = req.truck_index
        truck = self.trucks[k]
        durations = (truck.acc_wait, truck.acc_service, truck.acc_jam, truck.acc_move)
        truck.acc_wait = truck.acc_service = truck.acc_jam = truck.acc_move = 0.0

        dest = self.target_codes(req.event_type)[action]
        origin = truck.loc
        move = self.travel_minutes(k, origin, dest)
        jam = self.sample_jam((origin, dest))
        truck.status = EN_ROUTE
        truck.dest = dest
        truck.leg_move = move
        truck.leg_jam = jam or 0.0
        truck.jammed = jam is not None
        if truck.jammed:
            self.route_jams[(origin, dest)] = self.route_jams.get((origin, dest), 0) + 1
        truck.eta = self.clock + move + truck.leg_jam
        self._push(truck.eta, ARRIVAL, k)
        self._trace(k, "depart", origin, f"to {self.location_name(dest)}")

        before = self._tons_at_decision
        nxt = self._advance()
        self._tons_at_decision = self.produced_tons
        info = StepInfo(
            delta_tons=self.produced_tons - before,
            wait_duration=durations[0],
            service_duration=durations[1],
            jam_duration=durations[2],
            move_duration=durations[3],
            episode_done=self.done,
            final_tons=self.produced_tons if self.done else 0.0,
        )
        return nxt, info

    # -- derived views -------------------------------------------------------

    def _site_servers(self, code: int, ratio: float):
        """(free_at, minutes_per_ton) for every server at ``code``."""
        now = self.clock
        if self.is_load(code):
            site = code - 1
            free = [self.shovel_busy_until[s] if self.shovel_truck[s] is not None else now
                    for s in self._site_shovels[site]]
            per_ton = [1.0 / (self._shovel_rate[s] * ratio) for s in self._site_shovels[site]]
            return free, per_ton, self.load_queues[site]
        site = code - 1 - self.M
        positions = self.config.dump_positions_per_site
        free = [self.dump_busy_until[site, p] if self.dump_truck[site][p] is not None else now
                for p in range(positions)]
        return free, None, self.dump_queues[site]

    def _lookahead(self, code: int, k: int, arrive: float, ratio: float):
        """Predicted (queue wait now, wait at arrival, own service) for truck ``k`` at ``code``.

        Queued trucks and then en-route trucks (by ETA, ties kept in
        dispatch order) are assigned to the earliest-free server; the
        current truck follows them.
        """
        free, per_ton, queue = self._site_servers(code, ratio)
        free = [max(f, self.clock) for f in free]

        def service(truck, server):
            if per_ton is None:
                return DUMP_MINUTES / ratio
            return self._cap[truck] * per_ton[server]

        def assign(truck, ready):
            s = min(range(len(free)), key=lambda i: (free[i], i))
            start = max(free[s], ready)
            free[s] = start + service(truck, s)
            return start

        for q in queue:
            assign(q, self.clock)
        queue_wait = min(free) - self.clock
        coming = sorted((t.eta, i) for i, t in enumerate(self.trucks)
                        if t.status == EN_ROUTE and t.dest == code and i != k)
        for eta, i in coming:
            if eta > arrive:
                break
            assign(i, eta)
        s = min(range(len(free)), key=lambda i: (free[i], i))
        wait = max(free[s], arrive) - arrive
        return queue_wait, wait, service(k, s)

    def targets(self, request: DispatchRequest | None = None) -> TargetView:
        """Per-target estimates for ``request`` (default: the pending one)."""
        req = request or self.pending
        k = req.truck_index
        origin = self.trucks[k].loc
        codes = self.target_codes(req.event_type)
        T = len(codes)
        now = self.clock
        out = {name: np.zeros(T) for name in TargetView.__dataclass_fields__}
        for j, code in enumerate(codes):
            dist = self._dist[(origin, code)]
            travel = dist * self._min_per_km[k]
            ratio = self.ability_ratio(code, now)
            queue_wait, wait, own = self._lookahead(
                code, k, now + travel, max(ratio, MIN_ESTIMATE_RATIO))
            on_road = [t for t in self.trucks
                       if t.status == EN_ROUTE and t.loc == origin and t.dest == code]
            queue = self.load_queues[code - 1] if self.is_load(code) \
                else self.dump_queues[code - 1 - self.M]
            out["travel"][j] = travel
            out["return_travel"][j] = self._dist.get((code, origin), dist) * self._min_per_km[k]
            out["dist"][j] = dist
            out["trucks_on_road"][j] = len(on_road)
            out["jams_on_road"][j] = sum(t.jammed for t in on_road)
            out["jams_total"][j] = self.route_jams.get((origin, code), 0)
            out["est_wait"][j] = wait
            out["queue_wait"][j] = queue_wait
            out["queue_len"][j] = len(queue)
            out["servers"][j] = (len(self._site_shovels[code - 1]) if self.is_load(code)
                                 else self.config.dump_positions_per_site)
            out["ability"][j] = ratio
            out["produced"][j] = self.site_tons[code - 1]
            out["service"][j] = own
        return TargetView(**out)

    def metrics(self) -> EpisodeMetrics:
        if not self.done:
            raise EpisodeNotFinished("episode still running")
        mean_load = self.load_time_sum / self.load_count if self.load_count else 0.0
        mean_cycle = self.cycle_sum / self.cycle_count if self.cycle_count else 0.0
        shovels = len(self.config.shovels)
        mf = self.K * mean_load / (shovels * mean_cycle) if mean_cycle > 0 else 0.0
        return EpisodeMetrics(
            produced_tons=float(self.produced_tons),
            match_factor=float(mf),
            total_wait_time=float(sum(t.total_wait for t in self.trucks)),
            jam_ratio=self.jam_trips / self.trips if self.trips else 0.0,
            trips_completed=int(self.trips),
        )

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_min", "truck", "event", "location", "detail"])
        for t, k, ev, loc, detail in self.trace_rows:
            w.writerow([repr(float(t)), k, ev, loc, detail])
        return buf.getvalue()


def reset(config: ScenarioConfig, seed: int | None = None, trace: bool = False):
    """Create a simulator for ``config`` and return ``(sim, first_request)``."""
    sim = MineSim(config, trace=trace)
    req = sim.reset(seed)
    return sim, req


def compute_metrics(sim: MineSim) -> EpisodeMetrics:
    return sim.metrics()
