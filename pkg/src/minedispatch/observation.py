"""Observation vector and legal-action mask for a dispatch request.

Layout of the flat vector (W = max(M, N))::

    event one-hot (3) | time_delta | time_now | time_left
    | location one-hot (M+N+1) | log(load+1), log(cycle_time+1)
    | travel_time | truck_counts | road_dist | road_jam
    | est_wait | tar_wait_time | queue_lens | tar_capa | ability_ratio | produced_tons

each of the last ten blocks W wide.  Slot ``i`` of a per-target block
describes target ``i`` of the request; slots past the number of legal
targets are zero.
"""
from __future__ import annotations

import numpy as np

from .sim import EVENT_TYPES, DispatchRequest, MineSim

PER_TARGET_BLOCKS = (
    "travel_time", "truck_counts", "road_dist", "road_jam", "est_wait",
    "tar_wait_time", "queue_lens", "tar_capa", "ability_ratio", "produced_tons",
)


def obs_dim(m: int, n: int) -> int:
    return 8 + (m + n + 1) + 10 * max(m, n)


def feature_names(m: int, n: int) -> list:
    w = max(m, n)
    names = [f"event_{e}" for e in EVENT_TYPES] + ["time_delta", "time_now", "time_left"]
    names += ["loc_charging"] + [f"loc_load{i}" for i in range(m)] + [f"loc_dump{j}" for j in range(n)]
    names += ["log_load", "log_cycle_time"]
    for block in PER_TARGET_BLOCKS:
        names += [f"{block}_{i}" for i in range(w)]
    return names


def mask(sim: MineSim, request: DispatchRequest | None = None) -> np.ndarray:
    return sim.legal_mask(request)


def encode(sim: MineSim, request: DispatchRequest | None = None, view=None,
           road_jam: str = "active") -> np.ndarray:
    """Feature vector for ``request``; ``view`` may pass precomputed ``sim.targets``.

    ``road_jam`` counts jammed trucks currently on each route (``"active"``)
    or every jammed trip started on it this episode (``"cumulative"``).
    """
    if road_jam not in ("active", "cumulative"):
        raise ValueError(f"road_jam must be 'active' or 'cumulative', got {road_jam!r}")
    req = request or sim.pending
    m, n, k = sim.M, sim.N, sim.K
    w = max(m, n)
    out = np.zeros(obs_dim(m, n))
    out[EVENT_TYPES.index(req.event_type)] = 1.0
    horizon = sim.config.episode_minutes
    time_now = min(max(req.clock / horizon, 0.0), 1.0)
    out[3] = req.time_delta / 60.0
    out[4] = time_now
    out[5] = 1.0 - time_now
    truck = sim.trucks[req.truck_index]
    out[6 + truck.loc] = 1.0
    base = 6 + m + n + 1
    out[base] = np.log(truck.load + 1.0)
    out[base + 1] = np.log(truck.cycle_time + 1.0)
    base += 2

    v = view if view is not None else sim.targets(req)
    t = len(v.travel)
    blocks = (
        np.log(v.travel + 1.0),
        v.trucks_on_road / k,
        np.log(v.dist + 1.0),
        v.jams_on_road if road_jam == "active" else v.jams_total,
        np.log(v.est_wait + 1.0),
        np.log(v.queue_wait + 1.0),
        v.queue_len / k,
        np.log(v.servers + 1.0),
        v.ability,
        np.log(v.produced + 1.0),
    )
    for b, values in enumerate(blocks):
        out[base + b * w: base + b * w + t] = values
    return out
