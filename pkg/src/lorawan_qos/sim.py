"""Event-driven simulator of a single-gateway class A LoRaWAN cell.

Gateway rules:

* same-MCS frames on the same channel interfere; a frame is received only
  if it beats every overlapping rival by more than ``q`` dB;
* an uplink whose preamble starts while the gateway transmits on that
  channel is lost;
* one downlink at a time; an ACK that cannot start on time is skipped.

Motes listen only at ``t1`` and ``t2`` after their uplink.  A first-window
ACK is heard if every uplink overlapping it at the ACK's MCS and channel is
weaker at the mote by more than ``q`` dB.
"""

from __future__ import annotations

import heapq
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .geometry import sample_disc
from .model import Scenario

ARRIVAL, TX_END, ACK1, ACK2, CLOSE, RETRY = range(6)
IDLE, BUSY, BACKOFF = range(3)
DEFAULT_BINS = 30


@dataclass
class SimConfig:
    scenario: Scenario
    duration: float
    seed: int = 0
    mote_mcs: np.ndarray | None = None
    mote_group: np.ndarray | None = None
    counts: np.ndarray | None = None
    positions: np.ndarray | None = None
    trace: bool = False

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.counts is not None:
            a = np.asarray(self.counts, dtype=int)
            mcs, grp = [], []
            for i in range(a.shape[0]):
                for g in range(a.shape[1]):
                    mcs += [i] * int(a[i, g])
                    grp += [g] * int(a[i, g])
            self.mote_mcs = np.array(mcs, dtype=int)
            self.mote_group = np.array(grp, dtype=int)
        if self.mote_mcs is None:
            raise ValueError("every mote needs an MCS: pass mote_mcs or counts")
        self.mote_mcs = np.asarray(self.mote_mcs, dtype=int)
        n = len(self.mote_mcs)
        if self.mote_group is None:
            self.mote_group = np.zeros(n, dtype=int)
        self.mote_group = np.asarray(self.mote_group, dtype=int)
        if len(self.mote_group) != n:
            raise ValueError("mote_group and mote_mcs lengths differ")
        m = self.scenario.m_count
        if n and (self.mote_mcs.min() < 0 or self.mote_mcs.max() >= m):
            raise ValueError(f"mote MCS outside 0..{m - 1}")
        if n and (self.mote_group.min() < 0 or self.mote_group.max() >= len(self.scenario.groups)):
            raise ValueError("mote group index out of range")
        if self.positions is not None:
            self.positions = np.asarray(self.positions, dtype=float).reshape(n, 2)
            if np.any(np.hypot(*self.positions.T) > self.scenario.path_loss.radius):
                raise ValueError("mote positions must lie within the cell radius")

    @property
    def n_motes(self) -> int:
        return len(self.mote_mcs)


@dataclass
class BinnedCurve:
    edges: np.ndarray
    generated: np.ndarray
    lost: np.ndarray
    plr_mean: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_reps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


@dataclass
class SimStats:
    distance: np.ndarray
    mcs: np.ndarray
    group: np.ndarray
    generated: np.ndarray
    delivered: np.ndarray
    discarded: np.ndarray
    dropped: np.ndarray
    retransmissions: np.ndarray
    first_attempts: np.ndarray
    first_successes: np.ndarray
    first_data_ok: np.ndarray
    radius: float
    seed: int = 0
    events: int = 0
    # (start, end, channel, mcs, mote, power, received) per uplink when tracing
    trace: list[tuple[float, float, int, int, int, float, bool]] | None = None

    @property
    def lost(self) -> np.ndarray:
        return self.discarded + self.dropped

    @property
    def plr(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.generated > 0, 1.0 - self.delivered / np.maximum(self.generated, 1), np.nan)

    def binned(self, bins: int = DEFAULT_BINS, mask: np.ndarray | None = None) -> BinnedCurve:
        edges = np.linspace(0.0, self.radius, bins + 1)
        sel = np.ones(len(self.distance), bool) if mask is None else mask
        idx = np.clip(np.searchsorted(edges, self.distance[sel], side="right") - 1, 0, bins - 1)
        gen = np.bincount(idx, weights=self.generated[sel], minlength=bins)
        lost = np.bincount(idx, weights=self.lost[sel], minlength=bins)
        lo, hi = wilson_interval(lost, gen)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(gen > 0, lost / np.maximum(gen, 1), np.nan)
        return BinnedCurve(edges, gen, lost, mean, lo, hi, (gen > 0).astype(int))


def wilson_interval(k, n, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    k = np.asarray(k, float)
    n = np.asarray(n, float)
    z = NormalDist().inv_cdf(0.5 + level / 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = k / n
        denom = 1 + z * z / n
        centre = (p + z * z / (2 * n)) / denom
        half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
        lo = np.where(n > 0, np.maximum(centre - half, 0.0), np.nan)
        hi = np.where(n > 0, np.minimum(centre + half, 1.0), np.nan)
    return lo, hi


class _Uplink:
    __slots__ = ("mote", "ch", "mcs", "end", "power", "rival", "blocked", "ack1", "ack1_d1", "ack2")

    def __init__(self, mote: int, ch: int, mcs: int, end: float, power: float, blocked: bool) -> None:
        self.mote = mote
        self.ch = ch
        self.mcs = mcs
        self.end = end
        self.power = power
        self.rival = -math.inf
        self.blocked = blocked
        self.ack1 = False
        self.ack1_d1 = math.inf
        self.ack2 = False


def _placement(config: SimConfig) -> np.ndarray:
    if config.positions is not None:
        return config.positions
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    return sample_disc(rng, config.n_motes, config.scenario.path_loss.radius)


def run(config: SimConfig) -> SimStats:
    """Simulate ``config.duration`` seconds of arrivals, then drain all frames."""
    sc = config.scenario
    pl = sc.path_loss
    table = sc.mcs_table
    timing = sc.timing
    n = config.n_motes
    n_ch = sc.f_main_channels
    rl = sc.retry_limit
    acked = sc.acknowledged
    q = pl.q
    k = pl.margin_ratio
    t1, t2 = timing.t1, timing.t2
    d_lo, d_hi = timing.retry_delay_min, timing.retry_delay_max
    ta_slow = table.slowest.t_ack

    pos = _placement(config)
    xs = pos[:, 0].tolist()
    ys = pos[:, 1].tolist()
    dist = np.hypot(pos[:, 0], pos[:, 1])
    with np.errstate(divide="ignore"):
        power = (pl.c1 - pl.c2 * np.log10(dist)).tolist()
    ack_reach = (dist * k).tolist() if not math.isinf(k) else [math.inf] * n
    mote_mcs = config.mote_mcs.tolist()
    t_data = [table[i].t_data for i in mote_mcs]
    ack_mcs = [timing.ack1_mcs(i) for i in mote_mcs]
    t_ack1 = [table[a].t_ack for a in ack_mcs]
    rates = sc.rates[config.mote_group]

    # independent per-mote streams: arrivals, channel choice, backoff
    root = np.random.SeedSequence([config.seed, 1])
    children = root.spawn(n)
    arrivals: list[list[float]] = []
    ch_rng: list[random.Random] = []
    delay_rng: list[random.Random] = []
    for m, child in enumerate(children):
        a_ss, c_ss, d_ss = child.spawn(3)
        g = np.random.default_rng(a_ss)
        count = g.poisson(rates[m] * config.duration)
        arrivals.append(np.sort(g.uniform(0.0, config.duration, count)).tolist()[::-1])
        ch_rng.append(random.Random(int(c_ss.generate_state(1)[0])))
        delay_rng.append(random.Random(int(d_ss.generate_state(1)[0])))

    generated = [0] * n
    delivered = [0] * n
    discarded = [0] * n
    dropped = [0] * n
    retrans = [0] * n
    first_att = [0] * n
    first_ok = [0] * n
    first_data = [0] * n
    state = [IDLE] * n
    pending = [False] * n
    retries = [0] * n
    token = [0] * n

    active_up: dict[tuple[int, int], list[_Uplink]] = {}
    active_ack: dict[tuple[int, int], list[tuple[float, _Uplink]]] = {}
    ch_tx_until = [-math.inf] * n_ch
    gw_busy_until = -math.inf

    trace: list | None = [] if config.trace else None
    heap: list = []
    seq = 0
    for m in range(n):
        if arrivals[m]:
            heap.append((arrivals[m].pop(), seq, ARRIVAL, m, None))
            seq += 1
    heapq.heapify(heap)
    push = heapq.heappush
    pop = heapq.heappop
    events = 0

    def transmit(m: int, t: float) -> None:
        nonlocal seq
        state[m] = BUSY
        ch = ch_rng[m].randrange(n_ch) if n_ch > 1 else 0
        mcs = mote_mcs[m]
        end = t + t_data[m]
        up = _Uplink(m, ch, mcs, end, power[m], ch_tx_until[ch] > t)
        key = (ch, mcs)
        lst = active_up.get(key)
        if lst is None:
            lst = active_up[key] = []
        pw = up.power
        for other in lst:
            if pw > other.rival:
                other.rival = pw
            if other.power > up.rival:
                up.rival = other.power
        lst.append(up)
        acks = active_ack.get(key)
        if acks:
            live = [(e, a) for e, a in acks if e > t]
            active_ack[key] = live
            mx, my = xs[m], ys[m]
            for _, a in live:
                d1 = math.hypot(mx - xs[a.mote], my - ys[a.mote])
                if d1 < a.ack1_d1:
                    a.ack1_d1 = d1
        push(heap, (end, seq, TX_END, m, up))
        seq += 1

    def start_frame(m: int, t: float) -> None:
        retries[m] = 0
        first_att[m] += 1
        transmit(m, t)

    while heap:
        t, _, kind, m, obj = pop(heap)
        events += 1
        if kind == ARRIVAL:
            generated[m] += 1
            if arrivals[m]:
                push(heap, (arrivals[m].pop(), seq, ARRIVAL, m, None))
                seq += 1
            st = state[m]
            if st == IDLE:
                start_frame(m, t)
            elif st == BUSY:
                if pending[m]:
                    discarded[m] += 1
                pending[m] = True
            else:
                discarded[m] += 1
                token[m] += 1
                start_frame(m, t)
        elif kind == TX_END:
            up = obj
            active_up[(up.ch, up.mcs)].remove(up)
            ok = not up.blocked and (up.rival == -math.inf or up.power - up.rival > q)
            if trace is not None:
                trace.append((up.end - t_data[m], up.end, up.ch, up.mcs, m, up.power, ok))
            if ok and retries[m] == 0:
                first_data[m] += 1
            if ok and acked:
                push(heap, (t + t1, seq, ACK1, m, up))
                push(heap, (t + t2, seq + 1, ACK2, m, up))
                seq += 2
            elif ok:
                up.ack2 = True
            push(heap, (t + t2 + ta_slow, seq, CLOSE, m, up))
            seq += 1
        elif kind == ACK1:
            if gw_busy_until <= t:
                up = obj
                dur = t_ack1[m]
                gw_busy_until = t + dur
                ch_tx_until[up.ch] = t + dur
                up.ack1 = True
                key = (up.ch, ack_mcs[m])
                lst = active_up.get(key)
                if lst:
                    mx, my = xs[m], ys[m]
                    for other in lst:
                        d1 = math.hypot(mx - xs[other.mote], my - ys[other.mote])
                        if d1 < up.ack1_d1:
                            up.ack1_d1 = d1
                active_ack.setdefault(key, []).append((t + dur, up))
        elif kind == ACK2:
            if gw_busy_until <= t:
                gw_busy_until = t + ta_slow
                obj.ack2 = True
        elif kind == CLOSE:
            up = obj
            got = up.ack2 or (up.ack1 and up.ack1_d1 > ack_reach[m])
            if got:
                delivered[m] += 1
                if retries[m] == 0:
                    first_ok[m] += 1
                if pending[m]:
                    pending[m] = False
                    start_frame(m, t)
                else:
                    state[m] = IDLE
            elif pending[m]:
                discarded[m] += 1
                pending[m] = False
                start_frame(m, t)
            elif retries[m] < rl:
                state[m] = BACKOFF
                push(heap, (t + delay_rng[m].uniform(d_lo, d_hi), seq, RETRY, m, token[m]))
                seq += 1
            else:
                dropped[m] += 1
                state[m] = IDLE
        else:
            if state[m] == BACKOFF and obj == token[m]:
                retries[m] += 1
                retrans[m] += 1
                transmit(m, t)

    arr = lambda v: np.asarray(v, dtype=np.int64)  # noqa: E731
    return SimStats(
        distance=dist,
        mcs=config.mote_mcs.copy(),
        group=config.mote_group.copy(),
        generated=arr(generated),
        delivered=arr(delivered),
        discarded=arr(discarded),
        dropped=arr(dropped),
        retransmissions=arr(retrans),
        first_attempts=arr(first_att),
        first_successes=arr(first_ok),
        first_data_ok=arr(first_data),
        radius=pl.radius,
        seed=config.seed,
        events=events,
        trace=trace,
    )


@dataclass
class Replication:
    runs: list[SimStats]
    curve: BinnedCurve

    @property
    def generated(self) -> int:
        return int(sum(r.generated.sum() for r in self.runs))

    @property
    def lost(self) -> int:
        return int(sum(r.lost.sum() for r in self.runs))

    @property
    def delivered(self) -> int:
        return int(sum(r.delivered.sum() for r in self.runs))


def aggregate(runs: list[SimStats], bins: int = DEFAULT_BINS, level: float = 0.95) -> BinnedCurve:
    """Per-bin mean of the replication PLRs with a Student-t interval.

    Bins where fewer than two replications have traffic, or whose
    replications all agree, fall back to a Wilson interval on pooled counts.
    """
    from scipy import stats

    curves = [r.binned(bins) for r in runs]
    edges = curves[0].edges
    gen = np.sum([c.generated for c in curves], axis=0)
    lost = np.sum([c.lost for c in curves], axis=0)
    per_rep = np.array([c.plr_mean for c in curves])
    have = ~np.isnan(per_rep)
    n_reps = have.sum(axis=0)
    w_lo, w_hi = wilson_interval(lost, gen, level)
    mean = np.full(bins, np.nan)
    lo = w_lo.copy()
    hi = w_hi.copy()
    for b in range(bins):
        vals = per_rep[have[:, b], b]
        if len(vals) == 0:
            continue
        mean[b] = vals.mean()
        if len(vals) >= 2:
            sd = vals.std(ddof=1)
            if sd > 0:
                half = stats.t.ppf(0.5 + level / 2, len(vals) - 1) * sd / math.sqrt(len(vals))
                lo[b] = max(mean[b] - half, 0.0)
                hi[b] = min(mean[b] + half, 1.0)
    return BinnedCurve(edges, gen, lost, mean, lo, hi, n_reps)


def replication_seeds(seed: int, n_seeds: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in ss.spawn(n_seeds)]


def replicate(
    config: SimConfig,
    n_seeds: int,
    *,
    seeds: list[int] | None = None,
    bins: int = DEFAULT_BINS,
    workers: int = 1,
) -> Replication:
    """Independent replications of ``config`` with fresh placements per seed."""
    if n_seeds < 2:
        raise ValueError("need at least two replications")
    if seeds is None:
        seeds = replication_seeds(config.seed, n_seeds)
    if len(seeds) != n_seeds:
        raise ValueError("len(seeds) must equal n_seeds")
    if len(set(seeds)) != len(seeds):
        raise ValueError("replication seeds must be distinct")
    configs = [
        SimConfig(
            scenario=config.scenario,
            duration=config.duration,
            seed=s,
            mote_mcs=config.mote_mcs,
            mote_group=config.mote_group,
            positions=config.positions,
        )
        for s in seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            runs = list(ex.map(run, configs))
    else:
        runs = [run(c) for c in configs]
    return Replication(runs, aggregate(runs, bins))
