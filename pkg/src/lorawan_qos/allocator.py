"""Per-group MCS capacities and the greedy QoS-aware MCS allocation.

Capacities are the largest per-MCS loads at which a group's PLR statistic
stays under its target.  The allocator fills MCSs from the slowest one,
strictest group first, and never lets a shared MCS exceed the smallest
capacity of the groups placed on it.  Loads are tracked as exact rationals.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import DEFAULT_GRID, GroupSpec, LoadVector, PlrProfile, Scenario, plr_profile

MAX_LOAD = 1000.0
BISECT_RTOL = 1e-9
LINEAR_SCAN_CAP = 100_000


class NonMonotoneWarning(RuntimeWarning):
    """The PLR statistic decreased somewhere along the searched load range."""


@dataclass(frozen=True)
class Criterion:
    """PLR statistic used for capacities: ``max``, ``average`` or ``percentile``."""

    kind: str = "max"
    p: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("max", "average", "percentile"):
            raise ValueError(f"unknown criterion {self.kind!r}")
        if self.kind == "percentile":
            if self.p is None or not 0 < self.p <= 1:
                raise ValueError("percentile criterion needs p in (0, 1]")
        elif self.p is not None:
            raise ValueError(f"criterion {self.kind!r} takes no parameter")

    @classmethod
    def parse(cls, text: str) -> "Criterion":
        """Accepts ``max``, ``average`` and ``percentile=<p>``."""
        text = text.strip()
        if text.startswith("percentile"):
            _, sep, value = text.partition("=")
            if not sep:
                raise ValueError("percentile criterion must be written percentile=<p>")
            try:
                p = float(value)
            except ValueError:
                raise ValueError(f"bad percentile value {value!r}") from None
            return cls("percentile", p)
        return cls(text)

    def statistic(self, profile: PlrProfile) -> float:
        if self.kind == "max":
            return profile.max_plr
        if self.kind == "average":
            return profile.average_plr
        return profile.percentile(self.p)

    def __str__(self) -> str:
        return f"percentile={self.p:g}" if self.kind == "percentile" else self.kind


def plr_statistic(
    load: float, mcs: int, group: GroupSpec, scenario: Scenario, criterion: Criterion, grid_points: int = DEFAULT_GRID
) -> float:
    """Statistic of a group's PLR profile when ``load`` frames/s share ``mcs``."""
    loads = LoadVector.single(mcs, load, scenario.m_count)
    return criterion.statistic(plr_profile(mcs, group, loads, scenario, grid_points))


def capacity(
    mcs: int,
    group: GroupSpec,
    scenario: Scenario,
    criterion: Criterion | str = "max",
    *,
    grid_points: int = DEFAULT_GRID,
    max_load: float = MAX_LOAD,
    statistic: Callable[[float], float] | None = None,
) -> float:
    """Largest load on ``mcs`` keeping ``group``'s PLR statistic under target.

    The search walks the lattice of multiples of the group's rate (doubling,
    then integer bisection) and refines the last admissible point by
    bisection on the continuous load.  If the statistic is seen to decrease
    somewhere, a :class:`NonMonotoneWarning` is issued and the lattice is
    scanned linearly for the first violation instead.  Returns ``max_load``
    when even that load is admissible.
    """
    crit = Criterion.parse(criterion) if isinstance(criterion, str) else criterion
    lam = group.rate_per_mote
    target = group.plr_target
    stat = statistic or (lambda load: plr_statistic(load, mcs, group, scenario, crit, grid_points))
    seen: dict[int, float] = {}

    def ok(n: int) -> bool:
        if n not in seen:
            seen[n] = stat(n * lam)
        return seen[n] <= target

    n_cap = max(int(math.floor(max_load / lam)), 1)
    if not ok(1):
        return 0.0
    lo, hi = 1, 2
    while hi <= n_cap and ok(hi):
        lo, hi = hi, hi * 2
    if hi > n_cap:
        if ok(n_cap):
            return float(max_load)
        hi = n_cap
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid

    ordered = [seen[n] for n in sorted(seen)]
    if any(b < a for a, b in zip(ordered, ordered[1:])):
        warnings.warn(
            f"PLR statistic is non-monotone in load for MCS {mcs}, group {group.name or '?'}; scanning linearly",
            NonMonotoneWarning,
            stacklevel=2,
        )
        lo = 1
        while lo < min(n_cap, LINEAR_SCAN_CAP) and ok(lo + 1):
            lo += 1
        hi = lo + 1

    # continuous refinement inside [lo*lam, hi*lam)
    a, b = lo * lam, hi * lam
    while b - a > BISECT_RTOL * b:
        mid = 0.5 * (a + b)
        if stat(mid) <= target:
            a = mid
        else:
            b = mid
    return a


@dataclass(frozen=True)
class CapacityTable:
    """``nu[i, g]``: capacity of group ``g`` on MCS ``i`` in frames/s."""

    nu: np.ndarray
    criterion: Criterion = field(default_factory=Criterion)
    group_names: tuple[str, ...] = ()
    # exact decimal text of each entry when the table was read from CSV
    text: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self) -> None:
        nu = np.asarray(self.nu, dtype=float)
        if nu.ndim != 2 or nu.size == 0:
            raise ValueError("capacity table must be a non-empty (mcs, group) matrix")
        if np.any(nu < 0) or not np.all(np.isfinite(nu)):
            raise ValueError("capacities must be finite and non-negative")
        object.__setattr__(self, "nu", nu)
        names = tuple(self.group_names) or tuple(str(g) for g in range(nu.shape[1]))
        if len(names) != nu.shape[1]:
            raise ValueError("one name per group column is required")
        object.__setattr__(self, "group_names", names)

    @property
    def shape(self) -> tuple[int, int]:
        return self.nu.shape

    def exact(self, mcs: int, group: int) -> Fraction:
        if self.text is not None:
            return Fraction(self.text[mcs][group])
        return Fraction(repr(float(self.nu[mcs, group])))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mcs", *self.group_names])
        for i, row in enumerate(self.nu):
            cells = self.text[i] if self.text is not None else [repr(float(v)) for v in row]
            w.writerow([i, *cells])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path: str | Path, criterion: Criterion | None = None) -> "CapacityTable":
        return cls.from_csv(Path(path).read_text(), criterion)

    @classmethod
    def from_csv(cls, text: str, criterion: Criterion | None = None) -> "CapacityTable":
        """Parse a table with a header of group ids and one row per MCS.

        A leading ``mcs`` column is optional.
        """
        rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
        if len(rows) < 2:
            raise ValueError("capacity CSV needs a header row and at least one MCS row")
        header = [c.strip() for c in rows[0]]
        has_index = header[0].lower() == "mcs"
        names = header[1:] if has_index else header
        cells: list[tuple[str, ...]] = []
        for line_no, row in enumerate(rows[1:], start=2):
            row = [c.strip() for c in row]
            if has_index:
                if row[0] != str(line_no - 2):
                    raise ValueError(f"capacity CSV line {line_no}: expected MCS {line_no - 2}, got {row[0]!r}")
                row = row[1:]
            if len(row) != len(names):
                raise ValueError(f"capacity CSV line {line_no}: expected {len(names)} values, got {len(row)}")
            for c in row:
                try:
                    Fraction(c)
                except ValueError:
                    raise ValueError(f"capacity CSV line {line_no}: {c!r} is not a number") from None
            cells.append(tuple(row))
        nu = np.array([[float(c) for c in r] for r in cells])
        return cls(nu, criterion or Criterion(), tuple(names), tuple(cells))


def capacity_table(
    scenario: Scenario,
    criterion: Criterion | str = "max",
    *,
    grid_points: int = DEFAULT_GRID,
    max_load: float = MAX_LOAD,
) -> CapacityTable:
    crit = Criterion.parse(criterion) if isinstance(criterion, str) else criterion
    nu = np.zeros((scenario.m_count, len(scenario.groups)))
    for g, group in enumerate(scenario.groups):
        for i in range(scenario.m_count):
            nu[i, g] = capacity(i, group, scenario, crit, grid_points=grid_points, max_load=max_load)
    names = tuple(gr.name or str(g) for g, gr in enumerate(scenario.groups))
    return CapacityTable(nu, crit, names)


@dataclass(frozen=True)
class AllocationFailure:
    """``group`` is the first group that ran out of MCSs; ``unplaced`` maps
    every group left short (that one and any not yet visited) to its
    number of unassigned motes."""

    group: int
    motes_left: int
    unplaced: dict[int, int]
    residual: tuple[Fraction, ...]

    def describe(self) -> str:
        res = ", ".join(f"MCS {i}: {float(r):.6g}" for i, r in enumerate(self.residual))
        short = ", ".join(f"group {g}: {n}" for g, n in self.unplaced.items())
        return (
            f"group {self.group} cannot be placed: {self.motes_left} motes left after the fastest MCS; "
            f"unplaced motes ({short}); residual capacity per MCS (frames/s): {res}"
        )


@dataclass(frozen=True)
class Allocation:
    counts: np.ndarray
    loads: tuple[Fraction, ...]
    failure: AllocationFailure | None = None

    @property
    def success(self) -> bool:
        return self.failure is None

    @property
    def status(self) -> str:
        return "success" if self.success else "failure"

    def load_vector(self, scenario: Scenario) -> LoadVector:
        return LoadVector.from_counts(self.counts, scenario)

    def to_csv(self, group_names: Sequence[str] | None = None) -> str:
        names = list(group_names) if group_names is not None else [str(g) for g in range(self.counts.shape[1])]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mcs", *names, "load"])
        for i, row in enumerate(self.counts):
            w.writerow([i, *(int(c) for c in row), str(self.loads[i])])
        return buf.getvalue()

    @staticmethod
    def counts_from_csv(text: str) -> np.ndarray:
        rows = list(csv.reader(io.StringIO(text)))[1:]
        return np.array([[int(c) for c in r[1:-1]] for r in rows if r], dtype=np.int64)


def allocation_order(groups: Sequence[GroupSpec]) -> list[int]:
    """Strictest PLR target first; ties keep the input order."""
    return sorted(range(len(groups)), key=lambda g: (groups[g].plr_target, g))


def allocate(groups: Sequence[GroupSpec], capacities: CapacityTable) -> Allocation:
    """Greedy slowest-MCS-first allocation.

    ``groups`` supplies sizes, rates and targets.  Failure is reported in
    the returned value, with the first group that could not be placed.
    """
    m_count, g_count = capacities.shape
    if g_count != len(groups):
        raise ValueError(f"capacity table has {g_count} group columns for {len(groups)} groups")
    nu = [[capacities.exact(i, g) for g in range(g_count)] for i in range(m_count)]
    rates = [Fraction(repr(float(gr.rate_per_mote))) for gr in groups]
    counts = np.zeros((m_count, g_count), dtype=np.int64)
    loads = [Fraction(0)] * m_count
    # tightest capacity among the groups already on each MCS
    ceiling: list[Fraction | None] = [None] * m_count

    cursor = 0
    order = allocation_order(groups)
    for pos, g in enumerate(order):
        left = groups[g].n_motes
        while left > 0:
            if cursor >= m_count:
                residual = tuple(
                    max((ceiling[i] if ceiling[i] is not None else Fraction(0)) - loads[i], Fraction(0))
                    for i in range(m_count)
                )
                unplaced = {g: left}
                unplaced.update({h: groups[h].n_motes for h in order[pos + 1 :] if groups[h].n_motes > 0})
                return Allocation(counts, tuple(loads), AllocationFailure(g, left, unplaced, residual))
            cap = nu[cursor][g] if ceiling[cursor] is None else min(nu[cursor][g], ceiling[cursor])
            room = cap - loads[cursor]
            extra = math.floor(room / rates[g]) if room > 0 else 0
            put = min(extra, left)
            if put > 0:
                counts[cursor, g] += put
                loads[cursor] += put * rates[g]
                ceiling[cursor] = cap
                left -= put
            if left > 0:
                cursor += 1
    return Allocation(counts, tuple(loads))


@dataclass(frozen=True)
class ComplianceReport:
    per_mcs_max: np.ndarray  # (mcs, group); NaN where the group is absent
    group_worst: np.ndarray
    targets: np.ndarray

    @property
    def compliant(self) -> np.ndarray:
        return self.group_worst <= self.targets

    @property
    def all_compliant(self) -> bool:
        return bool(self.compliant.all())

    @property
    def mcs_max(self) -> np.ndarray:
        m = np.where(np.isnan(self.per_mcs_max), 0.0, self.per_mcs_max)
        return m.max(axis=1)


def verify_allocation(allocation: Allocation, scenario: Scenario, grid_points: int = DEFAULT_GRID) -> ComplianceReport:
    """Worst positional PLR of every group under the allocation's loads."""
    loads = allocation.load_vector(scenario)
    m_count, g_count = allocation.counts.shape
    per = np.full((m_count, g_count), np.nan)
    for i in range(m_count):
        for g in range(g_count):
            if allocation.counts[i, g] > 0:
                per[i, g] = plr_profile(i, scenario.groups[g], loads, scenario, grid_points).max_plr
    worst = np.where(np.isnan(per), 0.0, per).max(axis=0)
    targets = np.array([gr.plr_target for gr in scenario.groups])
    return ComplianceReport(per, worst, targets)
