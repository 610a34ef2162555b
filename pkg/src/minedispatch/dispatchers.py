"""Rule-based dispatch policies.

Each rule maps (simulator view, pending request) to a target index that is
always legal for the request.  Ties break toward the lower target index,
which is what ``np.argmin`` does already.
"""
from __future__ import annotations

import numpy as np

from .sim import HAUL, DispatchRequest, MineSim

DISPATCHERS = (
    "naive",
    "random",
    "nearest",
    "shortest_trip",
    "shortest_queue",
    "sptf",
    "fixed_group",
)


def sptf_choice(travel, wait, service) -> int:
    """Index with the smallest estimated completion time travel + wait + service."""
    total = np.asarray(travel, dtype=float) + np.asarray(wait, dtype=float) \
        + np.asarray(service, dtype=float)
    return int(np.argmin(total))


def _n_targets(sim: MineSim, request: DispatchRequest) -> int:
    return sim.N if request.event_type == HAUL else sim.M


def decide(kind: str, sim: MineSim, request: DispatchRequest | None = None, rng=None) -> int:
    """Target chosen by dispatcher ``kind`` for ``request`` (default: the pending one).

    ``rng`` is a ``numpy.random.Generator`` and is only used by ``random``.
    """
    request = request or sim.pending
    if kind == "naive":
        return 0
    if kind == "random":
        if rng is None:
            raise ValueError("the random dispatcher needs a seeded generator")
        return int(rng.integers(_n_targets(sim, request)))
    if kind == "fixed_group":
        k = request.truck_index
        if request.event_type == HAUL:
            origin = sim.location_code("load", sim.fixed_group[k])
            dists = [sim.distance(origin, code) for code in sim.target_codes(HAUL)]
            return int(np.argmin(dists))
        return sim.fixed_group[k]
    view = sim.targets(request)
    if kind == "nearest":
        return int(np.argmin(view.travel))
    if kind == "shortest_trip":
        return int(np.argmin(view.travel + view.return_travel))
    if kind == "shortest_queue":
        return int(np.argmin(view.queue_len))
    if kind == "sptf":
        return sptf_choice(view.travel, view.est_wait, view.service)
    raise ValueError(f"unknown dispatcher {kind!r}; choose from {', '.join(DISPATCHERS)}")


def teacher_action(sim: MineSim, request: DispatchRequest | None = None) -> int:
    """Shortest-processing-time suggestion used to guide the learner."""
    return decide("sptf", sim, request)


def run_episode(sim: MineSim, kind: str, seed: int, rng=None):
    """Play one full episode with a rule dispatcher and return its metrics."""
    if kind == "random" and rng is None:
        rng = np.random.default_rng([seed, 1])
    req = sim.reset(seed)
    while not sim.done:
        req, _ = sim.step(decide(kind, sim, req, rng))
    return sim.metrics()
