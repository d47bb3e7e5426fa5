"""Position-dependent packet loss rate of a class A LoRaWAN mote.

Every probability here is a function of the tagged mote's distance ``x``
from the gateway; functions accept scalars or numpy arrays of distances.
A single interfering frame is considered per attempt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import PathLossParams, ack_capture_prob, capture_kernels
from .phy import McsTable, RadioTiming

FP_RTOL = 1e-12
FP_MAX_ITER = 10_000
DEFAULT_GRID = 512


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class GroupSpec:
    n_motes: int
    rate_per_mote: float
    plr_target: float
    name: str = ""

    def __post_init__(self) -> None:
        if self.n_motes < 0:
            raise ValueError(f"n_motes must be >= 0, got {self.n_motes}")
        if not self.rate_per_mote > 0:
            raise ValueError(f"rate_per_mote must be > 0, got {self.rate_per_mote}")
        if not 0 < self.plr_target < 1:
            raise ValueError(f"plr_target must be in (0, 1), got {self.plr_target}")


@dataclass(frozen=True)
class Scenario:
    groups: tuple[GroupSpec, ...]
    mcs_table: McsTable
    path_loss: PathLossParams = field(default_factory=PathLossParams)
    timing: RadioTiming = field(default_factory=RadioTiming)
    f_main_channels: int = 1
    retry_limit: int = 7
    acknowledged: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "groups", tuple(self.groups))
        if not self.groups:
            raise ValueError("scenario needs at least one group")
        if self.f_main_channels < 1:
            raise ValueError(f"f_main_channels must be >= 1, got {self.f_main_channels}")
        if self.retry_limit < 0:
            raise ValueError(f"retry_limit must be >= 0, got {self.retry_limit}")
        if self.timing.delta_m >= self.m_count:
            raise ValueError(f"delta_m={self.timing.delta_m} must be below the MCS count {self.m_count}")

    @property
    def m_count(self) -> int:
        return len(self.mcs_table)

    @property
    def rates(self) -> np.ndarray:
        return np.array([g.rate_per_mote for g in self.groups])

    def with_groups(self, groups: Sequence[GroupSpec]) -> "Scenario":
        return Scenario(
            groups=tuple(groups),
            mcs_table=self.mcs_table,
            path_loss=self.path_loss,
            timing=self.timing,
            f_main_channels=self.f_main_channels,
            retry_limit=self.retry_limit,
            acknowledged=self.acknowledged,
        )


@dataclass(frozen=True)
class LoadVector:
    """Per-MCS offered load in frames/s, optionally backed by mote counts."""

    per_mcs_load: np.ndarray
    per_mcs_group_counts: np.ndarray | None = None

    def __post_init__(self) -> None:
        load = np.asarray(self.per_mcs_load, dtype=float)
        if np.any(load < 0):
            raise ValueError("loads must be non-negative")
        object.__setattr__(self, "per_mcs_load", load)

    @classmethod
    def from_counts(cls, counts, scenario: Scenario) -> "LoadVector":
        a = np.asarray(counts, dtype=np.int64)
        if a.shape != (scenario.m_count, len(scenario.groups)):
            raise ValueError(f"counts must have shape {(scenario.m_count, len(scenario.groups))}, got {a.shape}")
        if np.any(a < 0):
            raise ValueError("counts must be non-negative")
        if np.any(a.sum(axis=0) > [g.n_motes for g in scenario.groups]):
            raise ValueError("counts exceed group sizes")
        return cls(a @ scenario.rates, a)

    @classmethod
    def single(cls, mcs: int, load: float, m_count: int) -> "LoadVector":
        v = np.zeros(m_count)
        v[mcs] = load
        return cls(v)


@dataclass(frozen=True)
class AttemptProbabilities:
    """Per-attempt quantities along a vector of distances."""

    x: np.ndarray
    p_data: np.ndarray
    p_ack: np.ndarray
    p_first: np.ndarray
    p_retry: np.ndarray
    p_no_new: float
    fail_data: np.ndarray
    fail_first: np.ndarray


def p_no_new_frame(group: GroupSpec, attempt_span: float, is_retry: bool, timing: RadioTiming | None = None) -> float:
    """Probability that no new frame arrives while one attempt is pending.

    A retry attempt also spans the random backoff preceding it, so its
    value is averaged over the uniform delay.
    """
    return math.exp(-_log_no_new_neg(group.rate_per_mote, attempt_span, is_retry, timing or RadioTiming()))


def _log_no_new_neg(lam: float, span: float, is_retry: bool, timing: RadioTiming) -> float:
    # returns -log(P^G) so 1 - P^G can be formed with expm1
    if not span > 0:
        raise ValueError("attempt_span must be positive")
    val = lam * span
    if is_retry:
        lo, width = timing.retry_delay_min, timing.retry_delay_max - timing.retry_delay_min
        val += lam * lo
        if width > 0 and lam > 0:
            # E[exp(-lam*U)], U ~ Uniform(0, width)
            val -= math.log(-math.expm1(-lam * width) / (lam * width))
    return val


def attempt_span(mcs: int, scenario: Scenario) -> float:
    """From the start of an uplink to the end of its second receive window."""
    return scenario.mcs_table[mcs].t_data + scenario.timing.t2 + scenario.mcs_table.slowest.t_ack


def recollision_prob(t_data: float, timing: RadioTiming) -> float:
    """P(|D0 - D1| < t_data) for two independent uniform backoff delays."""
    width = timing.retry_delay_max - timing.retry_delay_min
    if width <= 0 or t_data >= width:
        return 1.0
    return 1.0 - (1.0 - t_data / width) ** 2


def solve_data_success(
    rate: float,
    t_data: float,
    t_ack: float,
    v_gw,
    *,
    rtol: float = FP_RTOL,
    max_iter: int = FP_MAX_ITER,
) -> np.ndarray:
    """Fixed point of P = exp(-(2T + P*Ta)*r) + 2rT exp(-2rT) * v_gw.

    ``rate`` is the competing load per channel.  Iterates from P = 1 and
    falls back to bisection for any entry that has not converged.
    """
    v = np.atleast_1d(np.asarray(v_gw, dtype=float))
    if rate == 0:
        return np.ones_like(v)
    capture = 2 * rate * t_data * math.exp(-2 * rate * t_data) * v

    def f(p: np.ndarray) -> np.ndarray:
        return np.exp(-(2 * t_data + p * t_ack) * rate) + capture

    p = np.ones_like(v)
    for _ in range(max_iter):
        nxt = f(p)
        done = np.abs(nxt - p) <= rtol * np.abs(nxt)
        p = nxt
        if done.all():
            return p
    # f is decreasing in p, so g(p) = f(p) - p has a single root in [0, 1]
    lo, hi = np.zeros_like(v), np.ones_like(v)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        pos = f(mid) - mid > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    p = 0.5 * (lo + hi)
    if np.any(np.abs(f(p) - p) > 1e-10):
        raise ConvergenceError("data-success fixed point did not converge")
    return p


def _competing(mcs: int, group: GroupSpec, loads: LoadVector, scenario: Scenario) -> float:
    return max(float(loads.per_mcs_load[mcs]) - group.rate_per_mote, 0.0)


def _mean_v_gw(pl: PathLossParams) -> float:
    k = pl.margin_ratio
    return 0.0 if math.isinf(k) else 1.0 / (2.0 * k * k)


def _outside_overlap(lo: float, hi: float, t_data: float) -> float:
    # length of (lo, hi) not inside (-t_data, t_data)
    cut = max(0.0, min(hi, t_data) - max(lo, -t_data))
    return (hi - lo) - cut


def downlink_busy(
    ack_rate: float, t_data: float, t_ack1: float, t_ack2: float, timing: RadioTiming, iters: int = 50
) -> tuple[float, float]:
    """Poisson exposure of the tagged mote's two ACKs to a busy gateway radio.

    ``ack_rate`` is the rate of competing frames that the gateway decoded.
    Returns the expected number of conflicting downlinks at the start of the
    first- and second-window ACK.  Competing frames that overlapped the
    tagged uplink are excluded (they were not decoded if the tagged one was),
    and competing ACKs are thinned by their own chance of being sent.
    """
    gap = timing.t2 - timing.t1
    # windows are offsets of the competing frame's end from the tagged frame's end
    w1_second = _outside_overlap(-gap - t_ack2, -gap, t_data)
    w1_first = _outside_overlap(-t_ack1, 0.0, t_data)
    w2_second = _outside_overlap(-t_ack2, 0.0, t_data)
    w2_first = _outside_overlap(gap - t_ack1, gap, t_data)
    sent1 = sent2 = 1.0
    b1 = b2 = 0.0
    for _ in range(iters):
        b1 = ack_rate * (w1_second * sent2 + w1_first * sent1)
        b2 = ack_rate * (w2_second * sent2 + w2_first * sent1)
        sent1, sent2 = math.exp(-b1), math.exp(-b2)
    return b1, b2


def attempt_probabilities(x, mcs: int, group: GroupSpec, loads: LoadVector, scenario: Scenario) -> AttemptProbabilities:
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if not 0 <= mcs < scenario.m_count:
        raise ValueError(f"mcs {mcs} outside 0..{scenario.m_count - 1}")
    table, timing, f_ch = scenario.mcs_table, scenario.timing, scenario.f_main_channels
    t_data = table[mcs].t_data
    ack_mcs = timing.ack1_mcs(mcs)
    t_ack1 = table[ack_mcs].t_ack
    t_ack2 = table.slowest.t_ack

    competing = _competing(mcs, group, loads, scenario)
    r = competing / f_ch
    v_gw, v_both, _ = capture_kernels(xs, scenario.path_loss)

    p_data = solve_data_success(r, t_data, t_ack1, v_gw)
    one_interferer = 2 * r * t_data * math.exp(-2 * r * t_data)
    fail_data = -np.expm1(-(2 * t_data + p_data * t_ack1) * r) - one_interferer * v_gw

    if scenario.acknowledged and competing > 0:
        p_bar = float(solve_data_success(r, t_data, t_ack1, _mean_v_gw(scenario.path_loss))[0])
        busy1, busy2 = downlink_busy(competing * p_bar, t_data, t_ack1, t_ack2, timing)
        # uplinks at the ACK's MCS on the same channel that overlap the first-window ACK
        up_ack = float(loads.per_mcs_load[ack_mcs])
        if ack_mcs == mcs:
            up_ack = competing
        w = (t_ack1 + table[ack_mcs].t_data) * up_ack / f_ch
        v_mote = ack_capture_prob(xs, scenario.path_loss) if w > 0 else np.ones_like(xs)
        p_ack1_link = math.exp(-w) * (1 + w * v_mote)
        fail_ack1 = -np.expm1(-busy1 + np.log(p_ack1_link))
        fail_ack2 = -math.expm1(-busy2)
        fail_ack = fail_ack1 * fail_ack2
    else:
        fail_ack = np.zeros_like(xs)
    p_ack = 1.0 - fail_ack
    fail_first = fail_data + p_data * fail_ack
    p_first = 1.0 - fail_first

    both_fail = one_interferer * v_both
    with np.errstate(invalid="ignore", divide="ignore"):
        w_both = np.where(fail_first > 0, np.minimum(both_fail / fail_first, 1.0), 0.0)
    p_overlap = recollision_prob(t_data, timing) / f_ch
    p_retry = p_first * (1.0 - w_both * p_overlap)

    g = p_no_new_frame(group, attempt_span(mcs, scenario), True, timing)
    return AttemptProbabilities(xs, p_data, p_ack, p_first, p_retry, g, fail_data, fail_first)


def _scalar_or_array(values: np.ndarray, x):
    return float(values[0]) if np.ndim(x) == 0 else values


def p_data_success(x, mcs: int, group: GroupSpec, loads: LoadVector, scenario: Scenario):
    return _scalar_or_array(attempt_probabilities(x, mcs, group, loads, scenario).p_data, x)


def p_first_attempt_success(x, mcs: int, group: GroupSpec, loads: LoadVector, scenario: Scenario):
    return _scalar_or_array(attempt_probabilities(x, mcs, group, loads, scenario).p_first, x)


def p_retry_success(x, mcs: int, group: GroupSpec, loads: LoadVector, scenario: Scenario, prior_outcome: str | None = None):
    """Success probability of a retransmission.

    ``prior_outcome`` conditions on how the previous attempt failed:
    ``"both"`` (both colliding frames lost, so the other mote retries too),
    ``"one"`` (only the tagged frame lost) or ``None`` for the mixture
    over failure causes.
    """
    ap = attempt_probabilities(x, mcs, group, loads, scenario)
    if prior_outcome is None:
        return _scalar_or_array(ap.p_retry, x)
    if prior_outcome == "both":
        t_data = scenario.mcs_table[mcs].t_data
        p = ap.p_first * (1.0 - recollision_prob(t_data, scenario.timing) / scenario.f_main_channels)
        return _scalar_or_array(p, x)
    if prior_outcome in ("one", "gw"):
        return _scalar_or_array(ap.p_first, x)
    raise ValueError(f"unknown prior outcome {prior_outcome!r}")


def plr_from_attempts(ap: AttemptProbabilities, group: GroupSpec, scenario: Scenario) -> np.ndarray:
    """Loss probability given per-attempt success and frame-discard terms.

    After a failed first attempt the frame is lost either to a newer frame
    (before any of the retries) or to ``retry_limit`` failed retries.
    """
    rl = scenario.retry_limit
    g = ap.p_no_new
    one_minus_g = 1.0 - g
    q = g * (1.0 - ap.p_retry)
    if rl == 0:
        after_fail = np.ones_like(q)
    else:
        geom = np.zeros_like(q)
        term = np.ones_like(q)
        for _ in range(rl):
            geom += term
            term = term * q
        after_fail = one_minus_g * geom + term
    return np.clip(ap.fail_first * after_fail, 0.0, 1.0)


def plr_at(x, mcs: int, group: GroupSpec, loads: LoadVector, scenario: Scenario):
    ap = attempt_probabilities(x, mcs, group, loads, scenario)
    return _scalar_or_array(plr_from_attempts(ap, group, scenario), x)


@dataclass(frozen=True)
class PlrProfile:
    x: np.ndarray
    plr: np.ndarray
    radius: float
    max_plr: float
    average_plr: float

    @property
    def _cells(self) -> tuple[np.ndarray, np.ndarray]:
        mass = np.diff(self.x**2) / self.radius**2
        value = 0.5 * (self.plr[1:] + self.plr[:-1])
        return value, mass

    def cdf(self, y) -> np.ndarray | float:
        """Share of motes whose PLR is below ``y``."""
        value, mass = self._cells
        ys = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.array([mass[value < v].sum() for v in ys])
        out = np.minimum(out, 1.0)
        return float(out[0]) if np.ndim(y) == 0 else out

    def cdf_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Step points ``(plr, P(PLR <= plr))`` of the distance-weighted distribution."""
        value, mass = self._cells
        order = np.argsort(value, kind="stable")
        v, cum = value[order], np.cumsum(mass[order])
        keep = np.append(v[1:] != v[:-1], True)
        return v[keep], np.minimum(cum[keep], 1.0)

    def percentile(self, p: float) -> float:
        if not 0 <= p <= 1:
            raise ValueError("percentile must be in [0, 1]")
        v, cum = self.cdf_table()
        idx = int(np.searchsorted(cum, p - 1e-15, side="left"))
        return float(v[min(idx, len(v) - 1)])

    def fraction_near_max(self, rel: float = 0.05) -> float:
        value, mass = self._cells
        return float(mass[value >= (1 - rel) * self.max_plr].sum())

    @property
    def argmax(self) -> float:
        return float(self.x[int(np.argmax(self.plr))])


def profile_grid(radius: float, grid_points: int, peak: float) -> np.ndarray:
    x = np.linspace(0.0, radius, grid_points + 1)
    if 0 < peak < radius:
        x = np.union1d(x, [peak])
    return x


def profile_from_curve(x: np.ndarray, plr: np.ndarray, radius: float) -> PlrProfile:
    rho = 2 * x / radius**2
    avg = float(np.trapezoid(plr * rho, x))
    return PlrProfile(x=x, plr=plr, radius=radius, max_plr=float(plr.max()), average_plr=avg)


def plr_profile(mcs: int, group: GroupSpec, loads: LoadVector, scenario: Scenario, grid_points: int = DEFAULT_GRID) -> PlrProfile:
    if grid_points < 64:
        raise ValueError("grid_points must be >= 64")
    pl = scenario.path_loss
    x = profile_grid(pl.radius, grid_points, pl.peak_distance)
    return profile_from_curve(x, plr_at(x, mcs, group, loads, scenario), pl.radius)


def average_plr(mcs: int, group: GroupSpec, loads: LoadVector, scenario: Scenario, grid_points: int = DEFAULT_GRID) -> float:
    return plr_profile(mcs, group, loads, scenario, grid_points).average_plr
