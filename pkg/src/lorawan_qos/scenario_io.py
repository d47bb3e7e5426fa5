"""Scenario files, CSV outputs and run manifests.

A scenario file is JSON.  Only ``groups`` is required; every other section
falls back to defaults.  Example::

    {
      "groups": [{"name": "sensors", "n_motes": 1000, "total_rate": 0.5, "plr_target": 0.01}],
      "phy": {"payload_bytes": 51},
      "geometry": {"radius": 600, "q": 6, "c1": -133.7, "c2": 44.9},
      "timing": {"t1": 1, "t2": 2, "delta_m": 0, "retry_delay_min": 1, "retry_delay_max": 3},
      "network": {"f_main_channels": 1, "retry_limit": 7, "acknowledged": true},
      "assignment": {"mcs": 5},
      "simulation": {"duration": 1e6, "seed": 1, "bins": 30},
      "solver": {"grid_points": 512}
    }

A group gives either ``rate_per_mote`` or ``total_rate`` (shared by its
motes).  ``assignment`` is ``{"mcs": i}`` (every mote on MCS ``i``) or
``{"counts": [[...], ...]}`` with one row per MCS and one column per group.
``geometry.q`` accepts ``"inf"`` to disable capture.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .geometry import PathLossParams
from .model import DEFAULT_GRID, GroupSpec, PlrProfile, Scenario
from .phy import PhyConfig, RadioTiming, build_mcs_table
from .sim import DEFAULT_BINS, BinnedCurve, SimStats

SECTIONS = ("groups", "phy", "geometry", "timing", "network", "assignment", "simulation", "solver")
PHY_TABLE_KEYS = ("payload_bytes", "ack_payload_bytes", "m_count")
GROUP_KEYS = ("name", "n_motes", "rate_per_mote", "total_rate", "plr_target")


class ScenarioError(ValueError):
    """Invalid scenario file; the message names the offending field."""


@dataclass(frozen=True)
class SimSettings:
    duration: float = 1e6
    seed: int = 1
    bins: int = DEFAULT_BINS


@dataclass(frozen=True)
class Experiment:
    """A validated scenario plus the MCS assignment and run settings."""

    scenario: Scenario
    counts: np.ndarray  # (mcs, group)
    sim: SimSettings = field(default_factory=SimSettings)
    grid_points: int = DEFAULT_GRID
    phy: PhyConfig = field(default_factory=PhyConfig)
    resolved: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return config_digest(self.resolved)


def _fail(where: str, msg: str) -> ScenarioError:
    return ScenarioError(f"{where}: {msg}")


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise _fail(name, "must be an object")
    return sec


def _check_keys(where: str, obj: dict, allowed: Sequence[str]) -> None:
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise _fail(where, f"unknown key(s) {', '.join(extra)}; allowed: {', '.join(allowed)}")


def _number(where: str, value: Any, *, integer: bool = False, allow_inf: bool = False) -> float | int:
    if allow_inf and isinstance(value, str) and value.strip().lower() in ("inf", "infinity"):
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _fail(where, f"expected a number, got {value!r}")
    if integer:
        if float(value) != int(value):
            raise _fail(where, f"expected an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value) and not allow_inf:
        raise _fail(where, f"expected a finite number, got {value!r}")
    return float(value)


def _build(where: str, cls, kwargs: dict):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise _fail(where, str(exc)) from None


def _parse_group(i: int, raw: Any) -> GroupSpec:
    where = f"groups[{i}]"
    if not isinstance(raw, dict):
        raise _fail(where, "must be an object")
    _check_keys(where, raw, GROUP_KEYS)
    for key in ("n_motes", "plr_target"):
        if key not in raw:
            raise _fail(f"{where}.{key}", "is required")
    n = _number(f"{where}.n_motes", raw["n_motes"], integer=True)
    if n < 0:
        raise _fail(f"{where}.n_motes", f"must be >= 0, got {n}")
    has_rate, has_total = "rate_per_mote" in raw, "total_rate" in raw
    if has_rate == has_total:
        raise _fail(where, "give exactly one of rate_per_mote and total_rate")
    if has_rate:
        rate = _number(f"{where}.rate_per_mote", raw["rate_per_mote"])
        if not rate > 0:
            raise _fail(f"{where}.rate_per_mote", f"must be > 0, got {rate}")
    else:
        total = _number(f"{where}.total_rate", raw["total_rate"])
        if not total > 0:
            raise _fail(f"{where}.total_rate", f"must be > 0, got {total}")
        if n == 0:
            raise _fail(f"{where}.total_rate", "needs n_motes > 0")
        rate = total / n
    target = _number(f"{where}.plr_target", raw["plr_target"])
    if not 0 < target < 1:
        raise _fail(f"{where}.plr_target", f"must be in (0, 1), got {target}")
    name = raw.get("name", str(i))
    if not isinstance(name, str):
        raise _fail(f"{where}.name", "must be a string")
    return GroupSpec(n, rate, target, name)


def _typed_section(name: str, raw: dict, cls, *, extra: Sequence[str] = (), inf_ok: Sequence[str] = ()) -> tuple[Any, dict]:
    sec = _section(raw, name)
    fields = cls.__dataclass_fields__
    _check_keys(name, sec, [*fields, *extra])
    kwargs = {}
    for key, value in sec.items():
        if key in extra:
            continue
        default = fields[key].default
        where = f"{name}.{key}"
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise _fail(where, f"expected true or false, got {value!r}")
            kwargs[key] = value
        elif key == "ldro_min_sf" and value is None:
            kwargs[key] = None
        else:
            kwargs[key] = _number(where, value, integer=isinstance(default, int), allow_inf=key in inf_ok)
    return _build(name, cls, kwargs), sec


def parse_experiment(raw: Any) -> Experiment:
    """Validate a decoded scenario document and apply defaults."""
    if not isinstance(raw, dict):
        raise ScenarioError("top level: must be an object")
    _check_keys("top level", raw, SECTIONS)
    groups_raw = raw.get("groups")
    if not isinstance(groups_raw, list) or not groups_raw:
        raise _fail("groups", "must be a non-empty list")
    groups = tuple(_parse_group(i, g) for i, g in enumerate(groups_raw))

    phy, phy_sec = _typed_section("phy", raw, PhyConfig, extra=PHY_TABLE_KEYS)
    payload = _number("phy.payload_bytes", phy_sec.get("payload_bytes", 51), integer=True)
    ack_payload = _number("phy.ack_payload_bytes", phy_sec.get("ack_payload_bytes", 0), integer=True)
    m_count = _number("phy.m_count", phy_sec.get("m_count", 6), integer=True)
    try:
        table = build_mcs_table(phy, payload, m_count, ack_payload)
    except ValueError as exc:
        raise _fail("phy", str(exc)) from None
    path_loss, _ = _typed_section("geometry", raw, PathLossParams, inf_ok=("q",))
    timing, _ = _typed_section("timing", raw, RadioTiming)

    net = _section(raw, "network")
    _check_keys("network", net, ("f_main_channels", "retry_limit", "acknowledged"))
    f_ch = _number("network.f_main_channels", net.get("f_main_channels", 1), integer=True)
    rl = _number("network.retry_limit", net.get("retry_limit", 7), integer=True)
    acked = net.get("acknowledged", True)
    if not isinstance(acked, bool):
        raise _fail("network.acknowledged", f"expected true or false, got {acked!r}")
    try:
        scenario = Scenario(groups, table, path_loss, timing, f_ch, rl, acked)
    except ValueError as exc:
        raise _fail("network", str(exc)) from None

    counts = _parse_assignment(_section(raw, "assignment"), scenario)

    sim_sec = _section(raw, "simulation")
    _check_keys("simulation", sim_sec, ("duration", "seed", "bins"))
    sim = SimSettings(
        duration=_number("simulation.duration", sim_sec.get("duration", 1e6)),
        seed=_number("simulation.seed", sim_sec.get("seed", 1), integer=True),
        bins=_number("simulation.bins", sim_sec.get("bins", DEFAULT_BINS), integer=True),
    )
    if not sim.duration > 0:
        raise _fail("simulation.duration", "must be > 0")
    if sim.bins < 1:
        raise _fail("simulation.bins", "must be >= 1")
    if sim.seed < 0:
        raise _fail("simulation.seed", "must be >= 0")

    solver = _section(raw, "solver")
    _check_keys("solver", solver, ("grid_points",))
    grid = _number("solver.grid_points", solver.get("grid_points", DEFAULT_GRID), integer=True)
    if grid < 64:
        raise _fail("solver.grid_points", f"must be >= 64, got {grid}")

    resolved = _resolved(scenario, phy, ack_payload, counts, sim, grid)
    return Experiment(scenario, counts, sim, grid, phy, resolved)


def _parse_assignment(sec: dict, scenario: Scenario) -> np.ndarray:
    _check_keys("assignment", sec, ("mcs", "counts"))
    m, g = scenario.m_count, len(scenario.groups)
    sizes = np.array([gr.n_motes for gr in scenario.groups])
    if "mcs" in sec and "counts" in sec:
        raise _fail("assignment", "give either mcs or counts, not both")
    if "counts" in sec:
        rows = sec["counts"]
        if not isinstance(rows, list) or len(rows) != m or any(not isinstance(r, list) or len(r) != g for r in rows):
            raise _fail("assignment.counts", f"must be a {m} x {g} list of lists (rows are MCSs)")
        counts = np.array(
            [[_number(f"assignment.counts[{i}][{j}]", v, integer=True) for j, v in enumerate(r)] for i, r in enumerate(rows)],
            dtype=np.int64,
        )
        if np.any(counts < 0):
            raise _fail("assignment.counts", "must be non-negative")
        if np.any(counts.sum(axis=0) > sizes):
            raise _fail("assignment.counts", "column sums exceed group sizes")
        return counts
    mcs = _number("assignment.mcs", sec.get("mcs", m - 1), integer=True)
    if not 0 <= mcs < m:
        raise _fail("assignment.mcs", f"must be in 0..{m - 1}, got {mcs}")
    counts = np.zeros((m, g), dtype=np.int64)
    counts[mcs] = sizes
    return counts


def _json_float(v: float) -> float | str:
    return "inf" if math.isinf(v) else float(v)


def _resolved(
    scenario: Scenario, phy: PhyConfig, ack_payload: int, counts: np.ndarray, sim: SimSettings, grid: int
) -> dict:
    # every semantic value with defaults filled in; rates stored per mote
    pl = scenario.path_loss
    return {
        "groups": [
            {"name": g.name, "n_motes": g.n_motes, "rate_per_mote": float(g.rate_per_mote), "plr_target": float(g.plr_target)}
            for g in scenario.groups
        ],
        "phy": {
            **{k: (float(v) if isinstance(v, float) else v) for k, v in asdict(phy).items()},
            "payload_bytes": scenario.mcs_table.payload_bytes,
            "ack_payload_bytes": ack_payload,
            "m_count": scenario.m_count,
        },
        "geometry": {"c1": float(pl.c1), "c2": float(pl.c2), "radius": float(pl.radius), "q": _json_float(pl.q)},
        "timing": {k: (float(v) if isinstance(v, float) else v) for k, v in asdict(scenario.timing).items()},
        "network": {
            "f_main_channels": scenario.f_main_channels,
            "retry_limit": scenario.retry_limit,
            "acknowledged": scenario.acknowledged,
        },
        "assignment": {"counts": counts.tolist()},
        "simulation": {"duration": float(sim.duration), "seed": sim.seed, "bins": sim.bins},
        "solver": {"grid_points": grid},
    }


def config_digest(resolved: dict) -> str:
    """SHA-256 of the canonical JSON form; independent of key order."""
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canon.encode()).hexdigest()


def parse_json_text(text: str, source: str = "<string>") -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def load_experiment(path: str | Path) -> Experiment:
    p = Path(path)
    if not p.is_file():
        raise ScenarioError(f"{p}: scenario file not found")
    return parse_experiment(parse_json_text(p.read_text(), str(p)))


def load_scenario(path: str | Path) -> Scenario:
    return load_experiment(path).scenario


# ---------------------------------------------------------------- CSV

def _write(path: Path, header: Sequence[str], rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _fmt(v: float) -> str:
    return "nan" if v != v else repr(float(v))


def write_curve_csv(path: Path, profile: PlrProfile) -> Path:
    return _write(path, ("x_m", "plr"), ((_fmt(x), _fmt(y)) for x, y in zip(profile.x, profile.plr)))


def write_cdf_csv(path: Path, profile: PlrProfile) -> Path:
    v, c = profile.cdf_table()
    rows = [("0.0", "0.0")] if v[0] > 0 else []
    rows += [(_fmt(a), _fmt(b)) for a, b in zip(v, c)]
    return _write(path, ("plr", "cdf"), rows)


def write_motes_csv(path: Path, stats: SimStats) -> Path:
    rows = (
        (i, _fmt(d), int(g), int(dl), _fmt(p))
        for i, (d, g, dl, p) in enumerate(zip(stats.distance, stats.generated, stats.delivered, stats.plr))
    )
    return _write(path, ("mote_id", "distance_m", "generated", "delivered", "plr"), rows)


def write_binned_csv(path: Path, curve: BinnedCurve) -> Path:
    rows = (
        tuple(_fmt(v) for v in row) for row in zip(curve.centers, curve.plr_mean, curve.ci_low, curve.ci_high)
    )
    return _write(path, ("x_bin_center", "plr_mean", "ci_low", "ci_high"), rows)


def read_csv_columns(path: str | Path) -> dict[str, np.ndarray]:
    """Numeric columns of a CSV written by this module, keyed by header."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {h: np.array([float(r[j]) for r in body]) for j, h in enumerate(header)}


def format_table(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    cells = [[str(h) for h in header]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


# ---------------------------------------------------------------- manifest

@dataclass
class RunManifest:
    config_digest: str
    tool_version: str
    command: str
    argv: list[str]
    seeds: list[int]
    outputs: list[str]
    wall_clock_s: float
    started_at: str = ""
    python: str = field(default_factory=platform.python_version)

    def write(self, path: Path) -> Path:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
