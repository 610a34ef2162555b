"""Mine scenario definitions: loading, saving, validation and builtin instances.

A scenario is the static half of a simulation: sites, shovels, trucks, the
point-to-point distance tables and the parameters of the random events.
Scenarios are immutable; the simulator never writes to them.

Time is in minutes, distances in km, speeds in km/h, mass in tons.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class TruckSpec:
    capacity_tons: float
    speed_kmh: float


@dataclass(frozen=True)
class ShovelSpec:
    load_site_index: int
    service_tons_per_minute: float


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete static description of a mine instance.

    ``ability_schedules`` holds one list of maintenance windows per site,
    load sites first (M entries) then dump sites (N entries).  Inside a
    window the site works at ``ratio`` times its nominal rate.
    """

    num_load_sites: int
    num_dump_sites: int
    trucks: tuple
    shovels: tuple
    dump_positions_per_site: int
    dist_charge_to_load: tuple
    dist_load_to_dump: tuple
    dist_dump_to_load: tuple
    speed_limit_kmh: float
    episode_minutes: float
    jam_probability_per_trip: float
    jam_delay_minutes: tuple
    ability_schedules: tuple
    seed: int = 0

    @property
    def num_trucks(self) -> int:
        return len(self.trucks)

    @property
    def max_targets(self) -> int:
        return max(self.num_load_sites, self.num_dump_sites)

    def shovels_at(self, site: int) -> list:
        """Indices of the shovels working at load site ``site``."""
        return [i for i, s in enumerate(self.shovels) if s.load_site_index == site]

    def with_fleet_size(self, k: int) -> "ScenarioConfig":
        """Copy with ``k`` trucks, cycling through the existing truck list."""
        if k < 1:
            raise ValidationError("trucks", "fleet size must be >= 1")
        trucks = tuple(self.trucks[i % len(self.trucks)] for i in range(k))
        return replace(self, trucks=trucks)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    """Check every invariant of ``cfg``; raise ValidationError naming the field."""
    m, n = cfg.num_load_sites, cfg.num_dump_sites
    if not isinstance(m, int) or m < 1:
        raise ValidationError("num_load_sites", "must be an integer >= 1")
    if not isinstance(n, int) or n < 1:
        raise ValidationError("num_dump_sites", "must be an integer >= 1")
    if len(cfg.trucks) < 1:
        raise ValidationError("trucks", "at least one truck is required")
    if not _is_number(cfg.speed_limit_kmh) or cfg.speed_limit_kmh <= 0:
        raise ValidationError("speed_limit_kmh", "must be > 0")
    for t in cfg.trucks:
        if not _is_number(t.capacity_tons) or t.capacity_tons <= 0:
            raise ValidationError("trucks", "capacity_tons must be > 0")
        if not _is_number(t.speed_kmh) or t.speed_kmh <= 0:
            raise ValidationError("trucks", "speed_kmh must be > 0")
        if t.speed_kmh > cfg.speed_limit_kmh:
            raise ValidationError("trucks", "speed_kmh exceeds speed_limit_kmh")
    if len(cfg.shovels) < 1:
        raise ValidationError("shovels", "at least one shovel is required")
    covered = set()
    for s in cfg.shovels:
        if not isinstance(s.load_site_index, int) or not 0 <= s.load_site_index < m:
            raise ValidationError("shovels", f"load_site_index {s.load_site_index} out of range")
        if not _is_number(s.service_tons_per_minute) or s.service_tons_per_minute <= 0:
            raise ValidationError("shovels", "service_tons_per_minute must be > 0")
        covered.add(s.load_site_index)
    if len(covered) != m:
        missing = sorted(set(range(m)) - covered)
        raise ValidationError("shovels", f"load sites without a shovel: {missing}")
    if not isinstance(cfg.dump_positions_per_site, int) or cfg.dump_positions_per_site < 1:
        raise ValidationError("dump_positions_per_site", "must be an integer >= 1")

    def check_vector(name, vec, size):
        if len(vec) != size:
            raise ValidationError(name, f"expected length {size}, got {len(vec)}")
        for d in vec:
            if not _is_number(d) or not d > 0:
                raise ValidationError(name, "distances must be > 0")

    check_vector("dist_charge_to_load", cfg.dist_charge_to_load, m)
    for name, mat, rows, cols in (
        ("dist_load_to_dump", cfg.dist_load_to_dump, m, n),
        ("dist_dump_to_load", cfg.dist_dump_to_load, n, m),
    ):
        if len(mat) != rows:
            raise ValidationError(name, f"expected {rows} rows, got {len(mat)}")
        for row in mat:
            check_vector(name, row, cols)

    if not _is_number(cfg.episode_minutes) or cfg.episode_minutes <= 0:
        raise ValidationError("episode_minutes", "must be > 0")
    p = cfg.jam_probability_per_trip
    if not _is_number(p) or not 0.0 <= p <= 1.0:
        raise ValidationError("jam_probability_per_trip", "must lie in [0, 1]")
    if len(cfg.jam_delay_minutes) != 2:
        raise ValidationError("jam_delay_minutes", "expected (min, max)")
    lo, hi = cfg.jam_delay_minutes
    if not (_is_number(lo) and _is_number(hi)) or lo < 0 or lo > hi:
        raise ValidationError("jam_delay_minutes", "need 0 <= min <= max")
    if len(cfg.ability_schedules) != m + n:
        raise ValidationError("ability_schedules", f"expected {m + n} site schedules")
    for sched in cfg.ability_schedules:
        for w in sched:
            if len(w) != 3:
                raise ValidationError("ability_schedules", "windows are (start, end, ratio)")
            start, end, ratio = w
            if not all(_is_number(v) for v in w) or start < 0 or end <= start:
                raise ValidationError("ability_schedules", "need 0 <= start < end")
            if not 0.0 <= ratio <= 1.0:
                raise ValidationError("ability_schedules", "ratio must lie in [0, 1]")
        ordered = sorted(sched)
        for a, b in zip(ordered, ordered[1:]):
            if b[0] < a[1]:
                raise ValidationError("ability_schedules", "windows of one site overlap")
    if not isinstance(cfg.seed, int):
        raise ValidationError("seed", "must be an integer")
    return cfg


def _freeze(obj):
    if isinstance(obj, list):
        return tuple(_freeze(x) for x in obj)
    return obj


def from_dict(doc: dict) -> ScenarioConfig:
    """Build and validate a ScenarioConfig from a plain (JSON-shaped) dict."""
    if not isinstance(doc, dict):
        raise ParseError("scenario document must be a JSON object")
    names = [f.name for f in fields(ScenarioConfig)]
    # free-text "description" is allowed for documentation and ignored
    unknown = sorted(set(doc) - set(names) - {"description"})
    if unknown:
        raise ParseError(f"unknown keys: {unknown}")
    missing = [k for k in names if k not in doc]
    if missing:
        raise ParseError(f"missing keys: {missing}")
    try:
        trucks = tuple(TruckSpec(**t) for t in doc["trucks"])
    except TypeError as exc:
        raise ParseError(f"field 'trucks': {exc}") from None
    try:
        shovels = tuple(ShovelSpec(**s) for s in doc["shovels"])
    except TypeError as exc:
        raise ParseError(f"field 'shovels': {exc}") from None
    kwargs = {k: _freeze(doc[k]) for k in names}
    kwargs["trucks"] = trucks
    kwargs["shovels"] = shovels
    return validate(ScenarioConfig(**kwargs))


def to_dict(cfg: ScenarioConfig) -> dict:
    def thaw(obj):
        if isinstance(obj, (tuple, list)):
            return [thaw(x) for x in obj]
        if isinstance(obj, dict):
            return {k: thaw(v) for k, v in obj.items()}
        return obj

    return thaw(asdict(cfg))


def load_scenario(path) -> ScenarioConfig:
    """Read a JSON scenario file, raising ParseError or ValidationError."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return from_dict(doc)


def save_scenario(cfg: ScenarioConfig, path, description: str | None = None) -> None:
    doc = to_dict(cfg)
    if description:
        doc = {"description": description, **doc}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# -- builtin scenarios -------------------------------------------------------

RETURN_SKEW = 1.1


def _grid(rows: int, cols: int, lo: float, hi: float) -> list:
    """Deterministic scatter of distances in [lo, hi] (no randomness involved)."""
    span = hi - lo
    return [[round(lo + span * (((3 * i + 5 * j + 1) % 7) / 6.0), 3) for j in range(cols)]
            for i in range(rows)]


def default_scenario() -> ScenarioConfig:
    """Full-size synthetic mine: 5 load sites, 5 dump sites, 71 trucks, 21 shovels.

    Trucks come in three capacity classes (20, 40, 60 t) in near-equal shares.
    Return legs are 10% longer than the matching outbound legs.
    """
    m, n, k = 5, 5, 71
    classes = (20.0, 40.0, 60.0)
    trucks = tuple(TruckSpec(classes[i % 3], 25.0) for i in range(k))
    per_site = (5, 4, 4, 4, 4)
    shovels = []
    s = 0
    for site, count in enumerate(per_site):
        for _ in range(count):
            shovels.append(ShovelSpec(site, round(1.0 + 2.0 * s / 20, 3)))
            s += 1
    load_dump = _grid(m, n, 2.0, 8.0)
    dump_load = [[round(load_dump[i][j] * RETURN_SKEW, 3) for i in range(m)] for j in range(n)]
    charge = [round(8.0 - 1.5 * i, 3) for i in range(m)]
    schedules = [((40.0 + 40.0 * i, 70.0 + 40.0 * i, 0.5),) for i in range(m)]
    schedules += [((60.0 + 30.0 * j, 75.0 + 30.0 * j, 0.5),) for j in range(n)]
    return validate(ScenarioConfig(
        num_load_sites=m,
        num_dump_sites=n,
        trucks=trucks,
        shovels=tuple(shovels),
        dump_positions_per_site=2,
        dist_charge_to_load=tuple(charge),
        dist_load_to_dump=_freeze(load_dump),
        dist_dump_to_load=_freeze(dump_load),
        speed_limit_kmh=25.0,
        episode_minutes=240.0,
        jam_probability_per_trip=0.1,
        jam_delay_minutes=(2.0, 10.0),
        ability_schedules=tuple(schedules),
        seed=42,
    ))


def reduced_scenario(m: int, n: int, k: int, minutes: float) -> ScenarioConfig:
    """Small deterministic mine for tests and short training runs.

    One shovel per load site, rates rising with the site index while the
    charge distance also rises, so that the nearest site is not the fastest.
    """
    for name, v in (("num_load_sites", m), ("num_dump_sites", n), ("trucks", k),
                    ("episode_minutes", minutes)):
        if v is None or v <= 0:
            raise ValidationError(name, "must be >= 1")
    classes = (20.0, 40.0, 60.0)
    trucks = tuple(TruckSpec(classes[i % 3], 25.0) for i in range(k))
    shovels = tuple(ShovelSpec(i, round(4.0 + 6.0 * i / max(m - 1, 1), 3)) for i in range(m))
    load_dump = _grid(m, n, 2.0, 6.0)
    dump_load = [[round(load_dump[i][j] * RETURN_SKEW, 3) for i in range(m)] for j in range(n)]
    charge = [round(1.0 + 1.0 * i, 3) for i in range(m)]
    return validate(ScenarioConfig(
        num_load_sites=int(m),
        num_dump_sites=int(n),
        trucks=trucks,
        shovels=shovels,
        dump_positions_per_site=1,
        dist_charge_to_load=tuple(charge),
        dist_load_to_dump=_freeze(load_dump),
        dist_dump_to_load=_freeze(dump_load),
        speed_limit_kmh=25.0,
        episode_minutes=float(minutes),
        jam_probability_per_trip=0.05,
        jam_delay_minutes=(1.0, 5.0),
        ability_schedules=tuple(() for _ in range(m + n)),
        seed=0,
    ))


def resolve_scenario(spec: str | None) -> ScenarioConfig:
    """Interpret a scenario argument: a file path, ``default`` or ``reduced:m,n,k,minutes``."""
    if spec is None or spec == "default":
        return default_scenario()
    if spec.startswith("reduced:"):
        try:
            m, n, k, minutes = (float(x) for x in spec.split(":", 1)[1].split(","))
        except ValueError:
            raise ParseError(f"bad reduced scenario spec {spec!r}; want reduced:m,n,k,minutes") from None
        return reduced_scenario(int(m), int(n), int(k), minutes)
    return load_scenario(spec)
