"""Probing adversary: edge detection, the PnS timing attack, classifiers and advantage.

The adversary owns one probe on the bus and sees only the differential
voltage.  Everything here works from a :class:`~pnscan.bus.TraceWindow`
plus, for training, the ground-truth bit windows a rendered frame carries.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from .bus import TraceWindow
from .errors import InsufficientHeaderError, InvalidInputError
from .framing import HEADER_BITS, build_frame, stuffed_field_labels, FramingError
from .protocol import interleave_with_complement, pns_frame
from .seeding import rng_for

DEFAULT_TRIGGER_V = 0.9
# log-likelihood a second, distinct follower lag has to gain: a 4 sigma outlier
# (header statistics rest on a handful of edges, so such outliers do occur)
SEPARATE_LAG_PENALTY = 8.0
FEATURES = ("transition_offset", "steady_voltage", "transient_tau")
LN9 = math.log(9.0)


# ---------------------------------------------------------------------------
# edge detection


@dataclass(frozen=True)
class TransitionEvent:
    time_ns: float
    direction: str  # "rising" = recessive to dominant (voltage goes up)
    pre_level_v: float
    post_level_v: float
    index: int


def _state_track(v: np.ndarray, trigger_v: float, release_v: float) -> np.ndarray:
    """Hysteresis comparator, vectorised: 1 = dominant, 0 = recessive."""
    mark = np.full(v.size, -1, dtype=np.int8)
    mark[v > trigger_v] = 1
    mark[v < release_v] = 0
    if mark[0] < 0:
        mark[0] = 1 if v[0] > 0.5 * (trigger_v + release_v) else 0
    idx = np.where(mark >= 0, np.arange(v.size), 0)
    np.maximum.accumulate(idx, out=idx)
    return mark[idx]


def _crossing_time(trace: TraceWindow, i: int, level: float, rising: bool,
                   settle_v: float | None = None) -> float:
    """Time ``level`` is crossed near sample ``i``.

    With the settled level ``settle_v`` known, the two bracketing samples are
    interpolated in log distance to it, which is exact for a first-order
    edge; plain linear interpolation is biased by the curvature.
    """
    v = trace.samples
    sign = 1.0 if rising else -1.0
    above = sign * (v - level) >= 0
    j = i
    if above[j]:
        while j > 0 and above[j - 1]:
            j -= 1
        j -= 1
    else:
        while j + 1 < v.size and not above[j + 1]:
            j += 1
    if j < 0 or j + 1 >= v.size:
        return trace.t0_ns + i * trace.sample_period_ns
    v0, v1 = v[j], v[j + 1]
    gaps = (settle_v - v0, settle_v - v1, settle_v - level) if settle_v is not None else ()
    if gaps and (all(g > 0 for g in gaps) or all(g < 0 for g in gaps)) and gaps[0] != gaps[1]:
        a0, a1, al = (math.log(abs(g)) for g in gaps)
        frac = (al - a0) / (a1 - a0)
    else:
        frac = 0.0 if v1 == v0 else (level - v0) / (v1 - v0)
    return trace.t0_ns + (j + min(max(frac, 0.0), 1.0)) * trace.sample_period_ns


def detect_transitions(
    trace: TraceWindow, trigger_v: float = DEFAULT_TRIGGER_V, release_v: float | None = None
) -> list[TransitionEvent]:
    """Dominant/recessive transitions with linearly interpolated 50% crossings.

    A comparator with hysteresis (``trigger_v`` up, ``release_v`` down)
    finds candidate edges; states that do not persist for half a bit are
    discarded as glitches, so every reported edge is followed by a steady
    level.  Pre and post levels are medians over quiet parts of the
    neighbouring bits.
    """
    if release_v is None:
        release_v = trigger_v * 5.0 / 9.0
    if not release_v < trigger_v:
        raise InvalidInputError("release_v must be below trigger_v")
    v = trace.samples
    state = _state_track(v, trigger_v, release_v)
    change = np.flatnonzero(np.diff(state)) + 1
    T = trace.samples_per_bit
    min_len = T // 2
    # merge short segments: a glitch and its two neighbours become one segment
    bounds = [0, *change.tolist(), v.size]
    states = [int(state[0])] + [int(state[c]) for c in change]
    seg = list(zip(bounds[:-1], bounds[1:], states))
    k = 1
    while k < len(seg):
        s, e, st = seg[k]
        if e - s < min_len and k + 1 < len(seg):
            prev = seg[k - 1]
            nxt = seg[k + 1]
            seg[k - 1:k + 2] = [(prev[0], nxt[1], prev[2])]
            k = max(k - 1, 1)
        elif e - s < min_len and e == v.size:
            seg[k - 1:] = [(seg[k - 1][0], e, seg[k - 1][2])]
        else:
            k += 1
    events = []
    for s, _, st in seg[1:]:
        a, b = max(0, s - T // 2), max(1, s - T // 8)
        c, d = min(v.size - 1, s + T // 4), min(v.size, s + T // 2)
        if b <= a or d <= c:
            continue
        pre = float(np.median(v[a:b]))
        post = float(np.median(v[c:d]))
        rising = st == 1
        if (post - pre) * (1 if rising else -1) <= 0:
            continue
        t50 = _crossing_time(trace, s, 0.5 * (pre + post), rising, post)
        events.append(TransitionEvent(t50, "rising" if rising else "falling", pre, post, int(s)))
    return events


def transition_tau(trace: TraceWindow, event: TransitionEvent) -> float:
    """First-order time constant from the 10-90% transition time."""
    lo = event.pre_level_v + 0.1 * (event.post_level_v - event.pre_level_v)
    hi = event.pre_level_v + 0.9 * (event.post_level_v - event.pre_level_v)
    rising = event.post_level_v > event.pre_level_v
    i = trace.index_at(event.time_ns)
    t10 = _crossing_time(trace, i, lo, rising, event.post_level_v)
    t90 = _crossing_time(trace, i, hi, rising, event.post_level_v)
    return (t90 - t10) / LN9


def estimate_noise_sigma(trace: TraceWindow) -> float:
    """Robust per-sample noise estimate from first differences."""
    dv = np.diff(trace.samples)
    if dv.size == 0:
        return 0.0
    mad = np.median(np.abs(dv - np.median(dv)))
    return float(1.4826 * mad / math.sqrt(2.0))


# ---------------------------------------------------------------------------
# synchronisation


@dataclass(frozen=True)
class BitGrid:
    origin_ns: float
    bit_period_ns: float

    def start(self, k: int) -> float:
        return self.origin_ns + k * self.bit_period_ns


@dataclass(frozen=True)
class SyncParams:
    mu_p: float
    sigma_p: float
    tau: float

    def __post_init__(self):
        if self.sigma_p < 0 or not math.isfinite(self.tau):
            raise InvalidInputError("sigma_p must be >= 0 and tau finite")

    @property
    def band(self) -> float:
        return self.tau - self.mu_p

    def is_leader(self, offset_ns: float, follower_later: bool = True) -> bool:
        """Offsets beyond the threshold (on the follower's side) come from the follower."""
        if follower_later:
            return offset_ns <= self.tau
        return offset_ns >= self.mu_p - self.band


def estimate_sync_params(
    offsets_ns: Sequence[float],
    epsilon_ns: float = 1.0,
    threshold: Callable[[float, float], float] | None = None,
) -> SyncParams:
    """Mean, sample standard deviation and decision threshold of header offsets.

    ``threshold(mu, sigma)`` overrides the default ``mu + 3 * max(sigma, eps)``.
    """
    x = np.asarray([o.time_ns if isinstance(o, TransitionEvent) else o for o in offsets_ns], dtype=float)
    if x.size < 2:
        raise InsufficientHeaderError(f"need at least 2 header transitions, got {x.size}")
    mu = float(x.mean())
    sigma = float(x.std(ddof=1))
    tau = threshold(mu, sigma) if threshold else mu + 3.0 * max(sigma, epsilon_ns)
    return SyncParams(mu, sigma, float(tau))


@dataclass
class FrameView:
    """A PnS frame as reconstructed from the probe alone.

    Index 0 is the SOF bit.  ``starts`` is the adversary's bit grid, which
    re-anchors on every recessive-to-dominant edge the way a CAN controller
    resynchronises.
    """

    starts: np.ndarray
    bits: np.ndarray
    fields: list[str]
    rising: dict
    falling: dict
    offsets: dict
    levels: np.ndarray

    @property
    def payload_positions(self) -> np.ndarray:
        return np.array([k for k, f in enumerate(self.fields) if f == "payload"], dtype=int)


def _median_window(trace: TraceWindow, t_a: float, t_b: float) -> float:
    i, j = trace.index_at(t_a), trace.index_at(t_b)
    i, j = max(i, 0), min(j, trace.samples.size)
    if j <= i:
        return float("nan")
    return float(np.median(trace.samples[i:j]))


def decode_frame(
    trace: TraceWindow,
    events: list[TransitionEvent] | None = None,
    *,
    trigger_v: float = DEFAULT_TRIGGER_V,
    rise_mu_ns: float = 0.0,
    grid: BitGrid | None = None,
    anchor_bits=None,
) -> FrameView:
    """Recover logical bits, the bit grid and edge positions from a trace.

    The grid re-anchors on the rising edge of every bit, or only of the
    bits in ``anchor_bits`` when given.
    """
    if events is None:
        events = detect_transitions(trace, trigger_v)
    T = trace.bit_period_ns
    if grid is None:
        first = next((e for e in events if e.direction == "rising"), None)
        if first is None:
            raise InsufficientHeaderError("no start-of-frame edge in the trace")
        grid = BitGrid(first.time_ns - rise_mu_ns, T)
    anchor, k_anchor = grid.origin_ns, 0
    t_end = trace.t0_ns + trace.samples.size * trace.sample_period_ns
    decision = 0.5 * (trigger_v + trigger_v * 5.0 / 9.0)
    starts, bits, levels = [], [], []
    rising, falling, offsets = {}, {}, {}
    ptr = 0
    k = 0
    while True:
        g = anchor + (k - k_anchor) * T
        if g + T > t_end:
            break
        while ptr < len(events) and events[ptr].time_ns < g - T / 4:
            ptr += 1
        q = ptr
        while q < len(events) and events[q].time_ns < g + 3 * T / 4:
            ev = events[q]
            if ev.direction == "rising" and k not in rising:
                rising[k] = ev
            elif ev.direction == "falling" and k not in falling:
                falling[k] = ev
            q += 1
        starts.append(g)
        if k in rising:
            offsets[k] = rising[k].time_ns - g
            if anchor_bits is None or k in anchor_bits:
                anchor, k_anchor = rising[k].time_ns - rise_mu_ns, k
        level = _median_window(trace, g + T / 2, g + 7 * T / 8)
        levels.append(level)
        bits.append(0 if level > decision else 1)
        k += 1
    bits = np.array(bits, dtype=np.uint8)
    try:
        fields = stuffed_field_labels(bits.tolist())
    except FramingError:
        fields = ["unknown"] * bits.size
    fields = fields + ["trailer"] * (bits.size - len(fields))
    return FrameView(np.array(starts), bits, fields, rising, falling, offsets, np.array(levels))


def header_sync_params(view: FrameView, trace: TraceWindow, **kw) -> tuple[SyncParams, SyncParams]:
    """Rise and fall statistics from the header, where only the primary drives."""
    rise = [view.offsets[k] for k in range(1, HEADER_BITS) if k in view.offsets]
    fall = [view.falling[k].time_ns - view.starts[k] for k in range(1, HEADER_BITS + 1) if k in view.falling]
    return estimate_sync_params(rise, **kw), estimate_sync_params(fall, **kw)


# ---------------------------------------------------------------------------
# the timing attack


@dataclass
class AttackResult:
    """Outcome of attacking one or more PnS frames.

    ``labels[i]`` says which node drove the first bit of the i-th secret
    pair: 0 for the primary (the header transmitter), 1 for the secondary,
    -1 for an erasure.  Because the primary's chunk bit is 0 exactly when it
    drove that bit, ``bits`` (the estimated shared key bits) equal the labels.
    """

    labels: np.ndarray
    evidence: list = field(default_factory=list)
    frames: int = 1
    rise: SyncParams | None = None
    fall: SyncParams | None = None

    @property
    def bits(self) -> np.ndarray:
        return self.labels

    @property
    def erasures(self) -> int:
        return int((self.labels < 0).sum())

    @property
    def attempted(self) -> int:
        return int(self.labels.size)

    def accuracy(self, true_bits) -> float:
        """Fraction correct among the bits that were not erased."""
        true_bits = np.asarray(true_bits)
        self._check(true_bits)
        keep = self.labels >= 0
        return float((self.labels[keep] == true_bits[keep]).mean()) if keep.any() else float("nan")

    def recovered(self, true_bits) -> int:
        true_bits = np.asarray(true_bits)
        self._check(true_bits)
        return int((self.labels == true_bits).sum())

    def _check(self, true_bits):
        if true_bits.size != self.labels.size:
            raise InvalidInputError(
                f"attack saw {self.labels.size} secret pairs, ground truth has {true_bits.size}"
            )

    @staticmethod
    def concat(results: list["AttackResult"]) -> "AttackResult":
        if not results:
            return AttackResult(np.zeros(0, dtype=int), [], 0)
        return AttackResult(
            np.concatenate([r.labels for r in results]),
            [e for r in results for e in r.evidence],
            sum(r.frames for r in results),
            results[0].rise, results[0].fall,
        )


def _glitch(trace, view, ka, kb, rise: SyncParams, sigma_hat) -> int:
    """+1 for a dip at the a/b boundary, -1 for a bump, 0 if neither."""
    T = trace.bit_period_ns
    g = view.starts[kb]
    lo, hi = trace.index_at(g + rise.mu_p - T / 16), trace.index_at(g + rise.mu_p + T / 3)
    lo, hi = max(lo, 0), min(hi, trace.samples.size)
    if hi - lo < 3:
        return 0
    w = np.convolve(trace.samples[lo:hi], np.ones(3) / 3.0, mode="valid")
    level_a = _median_window(trace, view.starts[ka] + T / 2, view.starts[ka] + T)
    level_b = _median_window(trace, g + T / 2, g + T)
    thr = max(5.0 * sigma_hat / math.sqrt(3.0), 0.002)
    dip = min(level_a, level_b) - w.min()
    bump = w.max() - max(level_a, level_b)
    if dip > thr and dip >= bump:
        return 1
    if bump > thr:
        return -1
    return 0


def timing_attack(
    trace: TraceWindow,
    grid: BitGrid | None = None,
    params: tuple[SyncParams, SyncParams] | SyncParams | None = None,
    *,
    trigger_v: float = DEFAULT_TRIGGER_V,
    follower_later: bool = True,
    epsilon_ns: float = 1.0,
    threshold: Callable[[float, float], float] | None = None,
    resync: bool = True,
) -> AttackResult:
    """Label the driver of every secret bit pair of one PnS frame.

    Three cues are combined by majority vote (ties resolved in the order
    listed):

    1. an edge into the pair's first bit, timed against the synchronised
       grid, tells whether the current leader or follower drove it;
    2. a falling edge out of a single-driver bit identifies its driver the
       same way;
    3. at the boundary between the two bits of the pair, a dip means the
       first bit's driver let go before the other node took over (it is the
       earlier node at the probe), a bump means the reverse.

    A recessive-to-dominant edge timed as the follower means that node has
    just become the leader: the roles are swapped.  With ``resync=False``
    (the nodes keep their header synchronisation for the whole frame) the
    primary leads throughout, the grid follows the header alone and an edge
    into a pair is attributed by how late it lands.
    """
    events = detect_transitions(trace, trigger_v)
    mu0 = 0.0
    if isinstance(params, SyncParams):
        params = (params, params)
    if params is not None:
        mu0 = params[0].mu_p
    view = decode_frame(trace, events, trigger_v=trigger_v, rise_mu_ns=mu0, grid=grid)
    # A dominant payload bit outside a secret pair was sent by both nodes;
    # its edge is the leader's but the two-step rise moves the 50% point,
    # so the timing grid is re-anchored on header and single-driver edges only.
    payload = view.payload_positions
    single = set()
    for p in range(0, payload.size - 1, 2):
        if view.bits[payload[p]] == 0 and view.bits[payload[p + 1]] == 0:
            single.update((int(payload[p]), int(payload[p + 1])))
    anchors = set(range(HEADER_BITS)) if not resync else single | set(range(HEADER_BITS))
    view = decode_frame(trace, events, trigger_v=trigger_v, rise_mu_ns=mu0, grid=grid, anchor_bits=anchors)
    if params is None:
        params = header_sync_params(view, trace, epsilon_ns=epsilon_ns, threshold=threshold)
    rise, fall = params
    sigma_hat = estimate_noise_sigma(trace)
    early_is_leader = follower_later
    swaps = [k for k in sorted(single) if k in view.offsets]
    if resync:
        leaders, lag = _decode_roles([view.offsets[k] for k in swaps], rise, follower_later, epsilon_ns)
    else:
        leaders, lag = [0] * len(swaps), _fixed_follower_lag([view.offsets[k] for k in swaps], rise,
                                                            follower_later)
    role_at, leader, i = {}, 0, 0  # 0 = primary, 1 = secondary
    for k in range(view.bits.size):
        if i < len(swaps) and swaps[i] == k:
            leader = leaders[i]
            i += 1
        role_at[k] = leader
    labels, evidence = [], []
    for p in range(0, payload.size - 1, 2):
        ka, kb = payload[p], payload[p + 1]
        if view.bits[ka] or view.bits[kb]:
            continue
        votes = []
        # E1: edge into a; after any swap it triggered, the driver of a leads
        if ka in view.offsets and resync:
            votes.append(("edge_in", role_at[ka]))
        elif ka in view.offsets:
            off = view.offsets[ka]
            if np.isnan(lag[1]):
                late = (off - rise.mu_p if follower_later else rise.mu_p - off) > rise.band
            else:
                late = abs(off - lag[1]) < abs(off - rise.mu_p)
            votes.append(("edge_in", int(late)))
        # E3: falling edge out of b (or out of a when a stuff bit separates them)
        for kx, other in ((kb, True), (ka, False)):
            if kx + 1 < view.bits.size and view.bits[kx + 1] == 1 and (kx + 1) in view.falling:
                off = view.falling[kx + 1].time_ns - view.starts[kx + 1] - fall.mu_p
                follower = 1 - role_at[kx]
                if np.isnan(lag[follower]):
                    late = (off if follower_later else -off) > fall.band
                else:
                    # the follower releases one lag after the leader would have
                    late = abs(off - (lag[follower] - rise.mu_p)) < abs(off)
                driver = follower if late else role_at[kx]
                votes.append(("edge_out", 1 - driver if other else driver))
                break
        # E2: dip/bump at a directly adjacent boundary
        if kb == ka + 1:
            g = _glitch(trace, view, ka, kb, rise, sigma_hat)
            if g:
                earlier = role_at[kb] if early_is_leader else 1 - role_at[kb]
                votes.append(("boundary", earlier if g > 0 else 1 - earlier))
        labels.append(_vote(votes))
        evidence.append(votes)
    return AttackResult(np.array(labels, dtype=int), evidence, 1, rise, fall)


def _viterbi(x, mu, lag, s):
    """Best leader sequence for swap offsets ``x`` given each node's lag."""
    score = np.array([0.0, -np.inf])
    back = np.zeros((x.size, 2), dtype=int)
    for i, v in enumerate(x):
        stay = score - 0.5 * ((v - mu) / s) ** 2
        move = score[::-1] - 0.5 * ((v - lag) / s) ** 2
        back[i] = np.where(stay >= move, [0, 1], [1, 0])
        score = np.maximum(stay, move)
    cur = int(np.argmax(score))
    best = float(score[cur])
    path = [0] * x.size
    for i in range(x.size - 1, -1, -1):
        path[i] = cur
        cur = back[i, cur]
    return path, best


def _decode_roles(offsets, rise: SyncParams, follower_later: bool,
                  epsilon_ns: float) -> tuple[list[int], np.ndarray]:
    """Leader after each single-driver rising edge, decoded jointly.

    An edge from the current leader lands near ``mu_p``; an edge from the
    follower lands one follower lag later and hands it the lead.  The lag
    differs between the two nodes (it includes their distances to the
    probe), so every pair of lags suggested by the swap-like offsets is
    tried and the most likely two-state Viterbi path wins.  A single
    ambiguous edge therefore no longer inverts the rest of the frame.
    Returns the leaders and the estimated lag of each node as follower (NaN
    for a node that never took the lead).
    """
    x = np.asarray(offsets, dtype=float)
    sign = 1.0 if follower_later else -1.0
    s = max(rise.sigma_p, epsilon_ns)
    beyond = sign * (x - rise.mu_p)
    far = np.unique(np.round(x[beyond > rise.band], 1))
    if far.size == 0:
        return [0] * x.size, np.full(2, np.nan)
    best = (-np.inf, None, None)
    for lp in far:
        for ls in far:
            lag = np.array([lp, ls])
            path, score = _viterbi(x, rise.mu_p, lag, s)
            if lp != ls:
                # two distinct lags must earn their extra parameter, or one
                # outlier just past the band would pass for a second lag
                score -= SEPARATE_LAG_PENALTY
            if score > best[0]:
                best = (score, path, lag)
    _, path, lag = best
    # refine each lag on the swaps assigned to it, then decode once more
    prev = np.array([0] + path[:-1])
    cur = np.array(path)
    seen = np.zeros(2, dtype=bool)
    for node in (0, 1):
        hits = x[(cur != prev) & (cur == node)]
        if hits.size:
            lag[node] = float(np.mean(hits))
            seen[node] = True
    path, _ = _viterbi(x, rise.mu_p, lag, s)
    # a node that never took the lead has no measured lag
    return path, np.where(seen, lag, np.nan)


def _fixed_follower_lag(offsets, rise: SyncParams, follower_later: bool) -> np.ndarray:
    """Lags when the primary leads the whole frame: only the secondary can be late."""
    x = np.asarray(offsets, dtype=float)
    beyond = (x - rise.mu_p) if follower_later else (rise.mu_p - x)
    late = x[beyond > rise.band]
    return np.array([np.nan, float(np.median(late)) if late.size else np.nan])


def _vote(votes) -> int:
    if not votes:
        return -1
    ones = sum(v for _, v in votes)
    zeros = len(votes) - ones
    if ones != zeros:
        return int(ones > zeros)
    for name in ("edge_in", "edge_out", "boundary"):
        for n, v in votes:
            if n == name:
                return int(v)
    return -1


def true_secret_bits(record) -> np.ndarray:
    """Ground-truth key bits (the primary's chunk bits) of a frame's secret pairs."""
    return record.chunk_primary[record.secret_mask].astype(int)


def attack_session(traces, records, **kw) -> tuple[AttackResult, np.ndarray]:
    """Attack every frame of a session; returns the result and the truth."""
    results = [timing_attack(t, **kw) for t in traces]
    truth = np.concatenate([true_secret_bits(r) for r in records]) if records else np.zeros(0, int)
    return AttackResult.concat(results), truth


# ---------------------------------------------------------------------------
# training data and features


@dataclass
class SampleSet:
    """Labelled per-bit observations: raw samples plus scalar features."""

    label: str
    samples: np.ndarray
    transition_offset: np.ndarray
    steady_voltage: np.ndarray
    transient_tau: np.ndarray

    def __len__(self) -> int:
        return self.steady_voltage.size

    def feature(self, name: str) -> np.ndarray:
        if name not in FEATURES:
            raise InvalidInputError(f"unknown feature {name!r}; choose from {FEATURES}")
        x = getattr(self, name)
        return x[np.isfinite(x)]

    def split(self, fraction: float = 0.5) -> tuple["SampleSet", "SampleSet"]:
        cut = int(round(len(self) * fraction))
        a = lambda s: SampleSet(self.label, self.samples[s], self.transition_offset[s],
                                self.steady_voltage[s], self.transient_tau[s])
        return a(slice(0, cut)), a(slice(cut, None))

    @staticmethod
    def empty(label: str, k: int) -> "SampleSet":
        z = np.zeros(0)
        return SampleSet(label, np.zeros((0, k)), z, z.copy(), z.copy())

    @staticmethod
    def stack(label: str, parts: list["SampleSet"], k: int) -> "SampleSet":
        if not parts:
            return SampleSet.empty(label, k)
        return SampleSet(
            label,
            np.vstack([p.samples for p in parts]),
            np.concatenate([p.transition_offset for p in parts]),
            np.concatenate([p.steady_voltage for p in parts]),
            np.concatenate([p.transient_tau for p in parts]),
        )

    def head(self, n: int) -> "SampleSet":
        return self.split(n / len(self))[0] if len(self) else self

    def to_csv(self, path=None) -> str:
        k = self.samples.shape[1]
        rows = [["label", *FEATURES, *[f"s{i}" for i in range(k)]]]
        for r in range(len(self)):
            rows.append([self.label, *(f"{getattr(self, f)[r]:.6f}" for f in FEATURES),
                         *(f"{x:.6f}" for x in self.samples[r])])
        text = "".join(",".join(map(str, row)) + "\n" for row in rows)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "SampleSet":
        with open(path) as fh:
            rows = list(csv.reader(fh))
        body = rows[1:]
        k = len(rows[0]) - 1 - len(FEATURES)
        label = body[0][0] if body else ""
        num = np.array([[float(x) for x in r[1:]] for r in body]).reshape(len(body), -1)
        return cls(label, num[:, len(FEATURES):].reshape(len(body), k), num[:, 0], num[:, 1], num[:, 2])


def bit_features(trace: TraceWindow, starts, ks, events=None, trigger_v: float = DEFAULT_TRIGGER_V, label: str = ""):
    """Features of bits ``ks`` whose windows start at ``starts[k]``.

    The transition offset is the 50% crossing of a recessive-to-dominant
    edge in ``[start - T/4, start + 3T/4)`` measured from the window start;
    the steady voltage is the mean over the second half of the bit.
    """
    if events is None:
        events = detect_transitions(trace, trigger_v)
    rising = [e for e in events if e.direction == "rising"]
    rt = np.array([e.time_ns for e in rising])
    T = trace.bit_period_ns
    n = trace.samples_per_bit
    ks = list(ks)
    samples = np.full((len(ks), n), np.nan)
    offset = np.full(len(ks), np.nan)
    steady = np.full(len(ks), np.nan)
    tau = np.full(len(ks), np.nan)
    for r, k in enumerate(ks):
        s = starts[k]
        i0 = trace.index_at(s)
        seg = trace.samples[max(i0, 0):max(i0 + n, 0)]
        samples[r, :seg.size] = seg
        half = trace.samples[max(i0 + n // 2, 0):max(i0 + n, 0)]
        if half.size:
            steady[r] = half.mean()
        if rt.size:
            j = np.searchsorted(rt, s - T / 4)
            if j < rt.size and rt[j] < s + 3 * T / 4:
                offset[r] = rt[j] - s
                tau[r] = transition_tau(trace, rising[j])
    return SampleSet(label, samples, offset, steady, tau)


def collect_training_data(bus, ecu_id: str, n_bits: int, seed, *, identifier: int = 0x100,
                          trigger_v: float = DEFAULT_TRIGGER_V) -> SampleSet:
    """Observe ``ecu_id`` sending ordinary frames alone and keep its dominant bits.

    Bit windows are the transmitter's own bit grid, which every other node
    is hard-synchronised to, so offsets include the cable delay to the probe
    plus the transition's own 50% delay.
    """
    if ecu_id not in bus.nodes:
        raise InvalidInputError(f"node {ecu_id!r} is not on the bus")
    k = int(round(bus.bit_period_ns * bus.sample_rate_hz * 1e-9))
    if n_bits <= 0:
        return SampleSet.empty(ecu_id, k)
    rng = rng_for(seed, ecu_id)
    parts, have, f = [], 0, 0
    while have < n_bits:
        payload = rng.integers(0, 2, 64).tolist()
        rf = bus.render_frame(build_frame(identifier, payload), ecu_id,
                              seed=[seed, ecu_id, f])
        ks = [k_ for k_, name in enumerate(rf.fields)
              if name not in ("idle", "trailer", "ack") and rf.intents[ecu_id][k_] == 0]
        part = bit_features(rf.trace, rf.nominal[ecu_id], ks, trigger_v=trigger_v, label=ecu_id)
        parts.append(part)
        have += len(part)
        f += 1
    return SampleSet.stack(ecu_id, parts, k).head(n_bits)


def collect_pns_observations(bus, primary: str, secondary: str, n_frames: int, seed, *,
                             chunk_bits: int = 32, trigger_v: float = DEFAULT_TRIGGER_V,
                             rendered: list | None = None, context: dict | None = None) -> dict:
    """Single-driver payload bits of random PnS frames, labelled by driver.

    Windows are placed on the grid of whichever participant currently leads
    the bit timing, i.e. the grid a synchronised probe would recover.
    ``context`` is forwarded to the bus (group-chain information for
    system-level cooperation).  Returns ``{primary: SampleSet, secondary: SampleSet}``.
    """
    rng = rng_for(seed, 0x505)
    k = int(round(bus.bit_period_ns * bus.sample_rate_hz * 1e-9))
    parts = {primary: [], secondary: []}
    for f in range(n_frames):
        c1, c2 = rng.integers(0, 2, (2, chunk_bits))
        rec = pns_frame(interleave_with_complement(c1), interleave_with_complement(c2),
                        listeners=bus.has_listeners(primary, secondary))
        rf = bus.render_pns_frame(rec, primary, secondary, seed=[seed, f], context=context)
        if rendered is not None:
            rendered.append((rec, rf))
        events = detect_transitions(rf.trace, trigger_v)
        grid = np.array([rf.nominal[rf.leader[j]][j] for j in range(rf.n_bits)])
        for node in (primary, secondary):
            other = secondary if node == primary else primary
            ks = [j for j in range(rf.n_bits) if rf.fields[j] == "payload"
                  and rf.intents[node][j] == 0 and rf.intents[other][j] == 1]
            parts[node].append(bit_features(rf.trace, grid, ks, events, trigger_v, node))
    return {n: SampleSet.stack(n, p, k) for n, p in parts.items()}


# ---------------------------------------------------------------------------
# classifiers and advantage


@dataclass
class PairClassifier:
    """1-D threshold classifier: label 0 for ``node_i``, 1 for ``node_j``."""

    node_i: str
    node_j: str
    feature: str
    threshold: float
    orientation: int
    mean_i: float
    std_i: float
    mean_j: float
    std_j: float
    zero_margin: bool = False

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return ((x - self.threshold) * self.orientation > 0).astype(int)

    def log_likelihood(self, x) -> float:
        """Log-likelihood of ``x`` under an equal mixture of the two fitted classes."""
        x = np.asarray(x, dtype=float)
        x = x[np.isfinite(x)]
        floor = 1e-9 * max(1.0, abs(self.mean_i), abs(self.mean_j))
        li = norm.logpdf(x, self.mean_i, max(self.std_i, floor))
        lj = norm.logpdf(x, self.mean_j, max(self.std_j, floor))
        return float(np.sum(np.logaddexp(li, lj) + math.log(0.5)))


def _values(s, feature):
    if isinstance(s, SampleSet):
        return s.label, s.feature(feature)
    x = np.asarray(s, dtype=float)
    return None, x[np.isfinite(x)]


def train_pair_classifier(samples_i, samples_j, feature: str = "transition_offset",
                          node_i: str | None = None, node_j: str | None = None) -> PairClassifier:
    """Threshold halfway between the class means, oriented so ``node_i`` maps to 0."""
    if feature not in FEATURES:
        raise InvalidInputError(f"unknown feature {feature!r}")
    li, xi = _values(samples_i, feature)
    lj, xj = _values(samples_j, feature)
    if xi.size == 0 or xj.size == 0:
        raise InvalidInputError("both sample sets need at least one finite feature value")
    mi, mj = float(xi.mean()), float(xj.mean())
    si = float(xi.std(ddof=1)) if xi.size > 1 else 0.0
    sj = float(xj.std(ddof=1)) if xj.size > 1 else 0.0
    return PairClassifier(
        node_i or li or "i", node_j or lj or "j", feature, 0.5 * (mi + mj),
        1 if mi <= mj else -1, mi, si, mj, sj, zero_margin=mi == mj,
    )


def generalized_classifier(candidates: Sequence[PairClassifier], x) -> tuple[np.ndarray, PairClassifier]:
    """Pick the candidate pair that best explains ``x`` (maximum likelihood), then apply it."""
    if not candidates:
        raise InvalidInputError("at least one candidate classifier is required")
    x = np.asarray(x, dtype=float)
    best = max(candidates, key=lambda c: c.log_likelihood(x))
    return best.predict(x), best


def measure_advantage(classifier: PairClassifier, samples_i, samples_j) -> float:
    """Balanced per-observation accuracy of ``classifier`` on the two classes.

    This equals the four-pattern average when the two observations of a
    pattern are labelled against fixed node identities.
    """
    _, xi = _values(samples_i, classifier.feature)
    _, xj = _values(samples_j, classifier.feature)
    if xi.size == 0 or xj.size == 0:
        raise InvalidInputError("need at least one sample per class")
    return 0.5 * (float((classifier.predict(xi) == 0).mean()) + float((classifier.predict(xj) == 1).mean()))


def pattern_advantage(classifier: PairClassifier, samples_i, samples_j) -> float:
    """Four-pattern advantage with labels relative to the first observation.

    A two-observation pattern counts as correct when the classifier says
    "same" for two bits of one node and "different" for bits of distinct
    nodes.  Observations are independent draws, so the expectation is
    computed exactly from the per-class hit rates.
    """
    _, xi = _values(samples_i, classifier.feature)
    _, xj = _values(samples_j, classifier.feature)
    if xi.size == 0 or xj.size == 0:
        raise InvalidInputError("need at least one sample per class")
    pi = float((classifier.predict(xi) == 0).mean())
    pj = float((classifier.predict(xj) == 1).mean())
    same_i = pi * pi + (1 - pi) * (1 - pi)
    same_j = pj * pj + (1 - pj) * (1 - pj)
    cross = pi * pj + (1 - pi) * (1 - pj)
    return 0.25 * (same_i + 2 * cross + same_j)


def oriented_advantage(d: float) -> float:
    return max(d, 1.0 - d)


def generalized_advantage(candidates, samples_i, samples_j, node_i: str, node_j: str,
                          feature: str, batch: int = 16) -> float:
    """Balanced accuracy when the pair must first be picked by :func:`generalized_classifier`.

    Observations are taken in batches of ``batch`` bits from each node (one
    simulated session); a bit only counts as correct if the selected pair
    names its true node.
    """
    _, xi = _values(samples_i, feature)
    _, xj = _values(samples_j, feature)
    n = min(xi.size, xj.size) // batch
    if n == 0:
        raise InvalidInputError("not enough samples for one batch")
    hits_i = hits_j = 0
    for b in range(n):
        a = xi[b * batch:(b + 1) * batch]
        c = xj[b * batch:(b + 1) * batch]
        _, chosen = generalized_classifier(candidates, np.concatenate([a, c]))
        names = (chosen.node_i, chosen.node_j)
        hits_i += int(sum(names[int(l)] == node_i for l in chosen.predict(a)))
        hits_j += int(sum(names[int(l)] == node_j for l in chosen.predict(c)))
    return 0.5 * (hits_i + hits_j) / (n * batch)


@dataclass
class AdvantageGraph:
    """Complete symmetric graph of pairwise advantages over node ids."""

    nodes: list[str]
    weights: dict
    generalized: dict = field(default_factory=dict)

    def __post_init__(self):
        norm_w = {}
        for key, w in self.weights.items():
            a, b = tuple(key)
            if not 0.0 <= w <= 1.0:
                raise InvalidInputError(f"advantage {a}-{b} = {w} outside [0, 1]")
            norm_w[frozenset((a, b))] = float(w)
        self.weights = norm_w
        self.generalized = {frozenset(k): float(v) for k, v in self.generalized.items()}

    def weight(self, a: str, b: str) -> float:
        return self.weights[frozenset((a, b))]

    def edges(self):
        for k, a in enumerate(self.nodes):
            for b in self.nodes[k + 1:]:
                key = frozenset((a, b))
                if key in self.weights:
                    yield a, b, self.weights[key]

    def matrix(self) -> np.ndarray:
        n = len(self.nodes)
        m = np.full((n, n), np.nan)
        for i, a in enumerate(self.nodes):
            m[i, i] = 0.0
            for j, b in enumerate(self.nodes):
                if i != j and frozenset((a, b)) in self.weights:
                    m[i, j] = self.weights[frozenset((a, b))]
        return m

    def to_csv(self, path=None) -> str:
        m = self.matrix()
        lines = [",".join(["node", *self.nodes])]
        for i, a in enumerate(self.nodes):
            lines.append(",".join([a, *("" if np.isnan(v) else f"{v:.6f}" for v in m[i])]))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "AdvantageGraph":
        with open(path) as fh:
            rows = [r for r in csv.reader(fh) if r]
        nodes = rows[0][1:]
        weights = {}
        for r in rows[1:]:
            a = r[0]
            for b, cell in zip(nodes, r[1:]):
                if a != b and cell.strip():
                    key = frozenset((a, b))
                    w = float(cell)
                    if key in weights and abs(weights[key] - w) > 1e-9:
                        raise InvalidInputError(f"advantage matrix is not symmetric at {a},{b}")
                    weights[key] = w
        return cls(nodes, weights)


def measure_pair_advantage(bus, node_i: str, node_j: str, feature: str = "transition_offset",
                           n_bits: int = 2000, seed=0) -> float:
    """Offline advantage: train on one collection, score on a fresh one."""
    train_i = collect_training_data(bus, node_i, n_bits, [seed, 0])
    train_j = collect_training_data(bus, node_j, n_bits, [seed, 0])
    test_i = collect_training_data(bus, node_i, n_bits, [seed, 1])
    test_j = collect_training_data(bus, node_j, n_bits, [seed, 1])
    clf = train_pair_classifier(train_i, train_j, feature)
    return measure_advantage(clf, test_i, test_j)


# ---------------------------------------------------------------------------
# voltage attack


def voltage_attack(trace: TraceWindow, classifier: PairClassifier, *, trigger_v: float = DEFAULT_TRIGGER_V) -> tuple[AttackResult, str]:
    """Label secret pairs from the steady level of their two bits.

    The primary is whichever of the classifier's two nodes best explains
    the header's dominant levels.  Returns the result and that node id.
    """
    if classifier.feature != "steady_voltage":
        raise InvalidInputError("voltage_attack needs a steady_voltage classifier")
    view = decode_frame(trace, trigger_v=trigger_v)
    T = trace.bit_period_ns

    def level(k):
        return _median_window(trace, view.starts[k] + T / 2, view.starts[k] + T)

    floor = 1e-6
    def llr(v):  # > 0 favours node_i
        return (norm.logpdf(v, classifier.mean_i, max(classifier.std_i, floor))
                - norm.logpdf(v, classifier.mean_j, max(classifier.std_j, floor)))

    head = [level(k) for k in range(1, HEADER_BITS) if view.bits[k] == 0]
    primary = classifier.node_i if sum(llr(v) for v in head) >= 0 else classifier.node_j
    sign = 1.0 if primary == classifier.node_i else -1.0
    payload = view.payload_positions
    labels = []
    for p in range(0, payload.size - 1, 2):
        ka, kb = payload[p], payload[p + 1]
        if view.bits[ka] or view.bits[kb]:
            continue
        score = sign * (llr(level(ka)) - llr(level(kb)))
        labels.append(0 if score > 0 else 1 if score < 0 else -1)
    return AttackResult(np.array(labels, dtype=int), [], 1), primary
