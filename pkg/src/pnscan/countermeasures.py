"""Countermeasures: more transceivers, cooperating listeners and timing jitter.

Each countermeasure is a policy object that a :class:`~pnscan.network.CanBus`
applies while it renders a PnS frame.  ``prepare`` runs before the bit
timing is computed (and may switch off resynchronisation or add per-bit
start offsets); ``apply`` runs afterwards and rewrites transceiver states.
None of them changes a logical bus value, so keys are unaffected.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .bus import D, R, X, NodeSchedule, TraceWindow, simulate_frame
from .errors import (
    AuthorizationError,
    BudgetError,
    EstimationError,
    InvalidInputError,
    PolicyViolationError,
)
from .seeding import rng_for

ASSIST_SLOTS = 16
DEFAULT_JITTER_BUDGET_FRACTION = 0.10


# ---------------------------------------------------------------------------
# multiple transceivers


def dominant_vectors(n: int) -> list[tuple[int, ...]]:
    """All D/R/X vectors with at least one D: 3^n - 2^n of them."""
    if n < 1:
        raise InvalidInputError("at least one transceiver is required")
    return [v for v in itertools.product((int(D), int(R), int(X)), repeat=n) if int(D) in v]


def recessive_vectors(n: int) -> list[tuple[int, ...]]:
    """All R/X vectors with at least one R (the node keeps listening): 2^n - 1."""
    if n < 1:
        raise InvalidInputError("at least one transceiver is required")
    return [v for v in itertools.product((int(R), int(X)), repeat=n) if int(R) in v]


def multi_transceiver_states(n: int, intent: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Draw the transceiver states a node uses for one bit, uniformly."""
    options = dominant_vectors(n) if intent == 0 else recessive_vectors(n)
    return options[int(rng.integers(len(options)))]


def distinct_levels(solver, driving: list[str], partner: list[str], mode: str, others=()) -> int:
    """Count distinct probe levels as the node's transceivers vary.

    ``mode="dominant"``: the node's transceivers take every dominant vector
    while the partner listens.  ``"recessive"``: the node takes every
    listening vector while the partner drives.  ``"combined"``: the node
    drives with every dominant vector and the partner listens with every
    listening vector.  ``others`` stay recessive.
    """
    ids = solver.ids
    pos = {e: i for i, e in enumerate(ids)}
    base = [int(R)] * len(ids)
    levels = []
    if mode == "dominant":
        combos = ((v, (int(R),) * len(partner)) for v in dominant_vectors(len(driving)))
    elif mode == "recessive":
        combos = ((v, (int(D),) * len(partner)) for v in recessive_vectors(len(driving)))
    elif mode == "combined":
        combos = itertools.product(dominant_vectors(len(driving)), recessive_vectors(len(partner)))
    else:
        raise InvalidInputError(f"unknown mode {mode!r}")
    for mine, theirs in combos:
        state = list(base)
        for e, s in zip(driving, mine):
            state[pos[e]] = s
        for e, s in zip(partner, theirs):
            state[pos[e]] = s
        levels.append(solver.solve(state))
    return unique_levels(levels)


def unique_levels(levels, rel_tol: float = 1e-9) -> int:
    v = np.sort(np.asarray(levels, dtype=float))
    if v.size == 0:
        return 0
    scale = max(1.0, float(np.abs(v).max()))
    return int(1 + np.count_nonzero(np.diff(v) > rel_tol * scale))


# ---------------------------------------------------------------------------
# cooperation by other nodes


def passive_cooperation(nonparticipants, phase: str, n_bits: int, p_isolate: float,
                        rng: np.random.Generator) -> dict:
    """Per-bit isolation schedule for listeners during the payload phase."""
    if phase != "payload":
        raise PolicyViolationError(f"isolation is only allowed in the payload phase, not {phase!r}")
    _check_probability(p_isolate, "p_isolate")
    return {n: rng.random(n_bits) < p_isolate for n in nonparticipants}


def active_cooperation(edge_time_ns: float | None, bit_start_ns: float, bit_length_ns: float,
                       p_assist: float, rng: np.random.Generator,
                       slots: int = ASSIST_SLOTS) -> np.ndarray:
    """Sub-bit states of one listener for one bit.

    Once the listener has seen the recessive-to-dominant edge, it may (with
    probability ``p_assist``) toggle randomly between dominant and recessive
    for the remaining slots of the bit.  Returns ``slots`` states.
    """
    _check_probability(p_assist, "p_assist")
    out = np.full(slots, int(R), dtype=np.int8)
    if edge_time_ns is None or rng.random() >= p_assist:
        return out
    slot_len = bit_length_ns / slots
    first = max(1, int(math.ceil((edge_time_ns - bit_start_ns) / slot_len)))
    if first < slots:
        out[first:] = np.where(rng.random(slots - first) < 0.5, int(D), int(R))
    return out


def system_active_cooperation(chain, position: int, expected_bits, holders=None) -> dict:
    """Which earlier chain members may assist, and on which bits.

    ``position`` is the 1-based index of the active pair (the pair
    ``chain[position-1], chain[position]``).  Every member before the pair
    knows the running key, hence the primary's bits, and may drive a
    dominant bit exactly where the primary will.  Returns
    ``{predecessor: bool mask over expected_bits}``.
    """
    chain = list(chain)
    if not 1 <= position < len(chain):
        raise InvalidInputError(f"position {position} outside chain of {len(chain)}")
    expected = np.asarray(expected_bits)
    predecessors = chain[:position - 1]
    if holders is not None:
        missing = [p for p in predecessors if p not in holders]
        if missing:
            raise AuthorizationError(f"{missing} do not hold the running key")
    return {p: expected == 0 for p in predecessors}


def _check_probability(p, name):
    if not 0.0 <= p <= 1.0:
        raise InvalidInputError(f"{name} must lie in [0, 1]")


# ---------------------------------------------------------------------------
# timing jitter


@dataclass(frozen=True)
class JitterInterval:
    lo_ns: float
    hi_ns: float

    def __post_init__(self):
        if self.lo_ns > self.hi_ns:
            raise InvalidInputError("jitter interval needs lo_ns <= hi_ns")

    @property
    def width(self) -> float:
        return self.hi_ns - self.lo_ns

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo_ns, self.hi_ns, n) if self.width > 0 else np.full(n, self.lo_ns)


@dataclass(frozen=True)
class TimingGeometry:
    """Delays that decide when the probe sees each participant's edges.

    ``t_r1``/``t_r2`` are the nominal bit starts of the two nodes against a
    common reference; a secondary hard-synchronised to the primary has
    ``t_r2 - t_r1 = t_12``.
    """

    t_a1: float
    t_a2: float
    t_12: float
    t_r1: float = 0.0
    t_r2: float = 0.0
    t_ra: float = 0.0
    t_p2: float = 0.0

    def __post_init__(self):
        for name in ("t_a1", "t_a2", "t_12", "t_r1", "t_r2", "t_ra", "t_p2"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be non-negative")

    @classmethod
    def from_positions(cls, x1: float, x2: float, x_probe: float, ns_per_m: float = 5.0,
                       t_p2: float = 0.0) -> "TimingGeometry":
        """Linear bus geometry with node 2 synchronised to node 1."""
        t12 = abs(x1 - x2) * ns_per_m
        return cls(abs(x1 - x_probe) * ns_per_m, abs(x2 - x_probe) * ns_per_m, t12,
                   0.0, t12, 0.0, t_p2)


def observed_offset(geometry: TimingGeometry) -> float:
    g = geometry
    return (g.t_r2 - g.t_r1) + (g.t_a2 - g.t_a1) + g.t_p2


def default_alpha(t_12: float, budget_ns: float) -> float:
    return min(1.0, budget_ns / t_12)


def alpha_for_overlap(fraction: float) -> float:
    """Alpha giving the two (equal-width) supports this overlap fraction."""
    if not 0.0 <= fraction <= 1.0:
        raise InvalidInputError("overlap fraction must lie in [0, 1]")
    return 1.0 / (2.0 - fraction)


def compute_jitter_intervals(t_12: float, alpha: float | None = None, budget_ns: float | None = None,
                             bit_period_ns: float = 2000.0) -> tuple[JitterInterval, JitterInterval]:
    """Start-time intervals ``(0, a t12)`` for the primary and ``(-a t12, 0)`` for the secondary."""
    if not t_12 > 0:
        raise InvalidInputError("t_12 must be positive")
    if budget_ns is None:
        budget_ns = DEFAULT_JITTER_BUDGET_FRACTION * bit_period_ns
    if alpha is None:
        alpha = default_alpha(t_12, budget_ns)
    if alpha < 0:
        raise InvalidInputError("alpha must be non-negative")
    if alpha * t_12 > budget_ns + 1e-9:
        raise BudgetError(f"alpha*t_12 = {alpha * t_12:.1f} ns exceeds the {budget_ns:.1f} ns budget")
    return JitterInterval(0.0, alpha * t_12), JitterInterval(-alpha * t_12, 0.0)


def estimate_propagation_delay(trace: TraceWindow, launch_ns: float, transient_offset_ns: float = 0.0,
                               trigger_v: float = 0.9) -> float:
    """Delay of the first partner edge: its 50% point minus launch and transition delay."""
    from .adversary import detect_transitions

    rising = [e for e in detect_transitions(trace, trigger_v) if e.direction == "rising"]
    if not rising:
        raise EstimationError("no recessive-to-dominant transition in the trace")
    return rising[0].time_ns - launch_ns - transient_offset_ns


def measure_link_delay(bus, node: str, partner: str, seed=0) -> float:
    """What ``node`` measures for ``partner``'s edge arriving at its own position."""
    local = bus.moved_observer(bus.nodes[node].position_m)
    n_bits = 6
    schedules = {}
    for e in local.profiles:
        states = np.full(n_bits, int(R))
        if e in local.elements[partner]:
            states[2:4] = int(D)
        schedules[e] = NodeSchedule(states)
    trace = simulate_frame(schedules, local.profiles, local.topology, bus.noise_sigma_v,
                           rng_for(seed, node, partner), bit_period_ns=bus.bit_period_ns,
                           sample_rate_hz=bus.sample_rate_hz, solver=local.solver)
    tau = local.profiles[local.elements[partner][0]].rise_tau_ns
    return estimate_propagation_delay(trace, 2 * bus.bit_period_ns, tau * math.log(2.0))


# ---------------------------------------------------------------------------
# policy objects


class Policy:
    name = "none"

    def prepare(self, ctx):
        pass

    def apply(self, ctx):
        pass

    def describe(self) -> dict:
        return {"mode": self.name}


@dataclass
class MultiTransceiverPolicy(Policy):
    """Participants with several transceivers re-draw their states every payload bit."""

    name = "multi_transceiver"

    def apply(self, ctx):
        payload = np.flatnonzero(ctx.payload_mask)
        for node in ctx.participants:
            elems = ctx.bus.elements[node]
            n = len(elems)
            if n == 1:
                continue
            dom = np.array(dominant_vectors(n), dtype=np.int8)
            rec = np.array(recessive_vectors(n), dtype=np.int8)
            intent = ctx.intents[node][payload]
            pick_d = dom[ctx.rng.integers(len(dom), size=payload.size)]
            pick_r = rec[ctx.rng.integers(len(rec), size=payload.size)]
            chosen = np.where((intent == 0)[:, None], pick_d, pick_r)
            for col, e in enumerate(elems):
                ctx.element_states[e][payload, :] = chosen[:, col][:, None]

    def describe(self):
        return {"mode": self.name}


@dataclass
class PassiveCooperationPolicy(Policy):
    p_isolate: float = 0.5
    name = "passive"

    def __post_init__(self):
        _check_probability(self.p_isolate, "p_isolate")

    def apply(self, ctx):
        payload = np.flatnonzero(ctx.payload_mask)
        sched = passive_cooperation(ctx.listeners, "payload", payload.size, self.p_isolate, ctx.rng)
        for node, iso in sched.items():
            for e in ctx.bus.elements[node]:
                ctx.element_states[e][payload[iso], :] = int(X)

    def describe(self):
        return {"mode": self.name, "p_isolate": self.p_isolate}


@dataclass
class ActiveCooperationPolicy(Policy):
    p_assist: float = 0.5
    slots: int = ASSIST_SLOTS
    name = "active_controller"

    def __post_init__(self):
        _check_probability(self.p_assist, "p_assist")
        if self.slots < 2:
            raise InvalidInputError("need at least two sub-bit slots")

    def apply(self, ctx):
        if self.p_assist == 0:
            return
        ctx.upsample(self.slots)
        T = ctx.bus.bit_period_ns
        for k in np.flatnonzero(ctx.payload_mask):
            for node in ctx.listeners:
                edge = ctx.edge_seen_at(node, int(k))
                if edge is None:
                    continue
                seen = edge + ctx.bus.nodes[node].processing_ns
                states = active_cooperation(seen, ctx.starts[node][k], T, self.p_assist, ctx.rng, self.slots)
                for e in ctx.bus.elements[node]:
                    ctx.element_states[e][k, :] = states

    def describe(self):
        return {"mode": self.name, "p_assist": self.p_assist, "slots": self.slots}


@dataclass
class SystemCooperationPolicy(Policy):
    """Earlier members of a group chain drive along with the primary's dominant bits."""

    p_assist: float = 0.5
    name = "active_system"

    def __post_init__(self):
        _check_probability(self.p_assist, "p_assist")

    def apply(self, ctx):
        info = ctx.context
        if not info:
            return
        payload = np.flatnonzero(ctx.payload_mask)
        expected = ctx.intents[info["primary"]][payload]
        sched = system_active_cooperation(info["chain"], info["position"], expected, info.get("holders"))
        for node, mask in sched.items():
            pick = mask & (ctx.rng.random(payload.size) < self.p_assist)
            for e in ctx.bus.elements[node]:
                ctx.element_states[e][payload[pick], :] = int(D)

    def describe(self):
        return {"mode": self.name, "p_assist": self.p_assist}


@dataclass
class JitterPolicy(Policy):
    """Random bit-start jitter for the two participants, resynchronisation off.

    Each node first measures the partner's link delay ``t_12`` from one of
    its edges; the primary then starts every payload bit uniformly in
    ``(0, alpha t12)`` and the secondary in ``(-alpha t12, 0)``.
    """

    alpha: float | None = None
    budget_fraction: float = DEFAULT_JITTER_BUDGET_FRACTION
    name = "jitter"
    _cache: dict = field(default_factory=dict, repr=False)

    def link_delay(self, bus, primary, secondary) -> float:
        key = (id(bus.topology), primary, secondary)
        if key not in self._cache:
            self._cache[key] = measure_link_delay(bus, secondary, primary, seed=bus.seed)
        return self._cache[key]

    def intervals(self, bus, primary, secondary):
        t12 = max(self.link_delay(bus, primary, secondary), 0.0)
        budget = self.budget_fraction * bus.bit_period_ns
        if t12 <= 0:
            zero = JitterInterval(0.0, 0.0)
            return zero, zero
        return compute_jitter_intervals(t12, self.alpha, budget, bus.bit_period_ns)

    def prepare(self, ctx):
        ctx.resync = False
        i1, i2 = self.intervals(ctx.bus, ctx.primary, ctx.secondary)
        payload = ctx.payload_mask
        for node, interval in ((ctx.primary, i1), (ctx.secondary, i2)):
            off = np.zeros(ctx.n_bits)
            off[payload] = interval.sample(ctx.rng, int(payload.sum()))
            ctx.extra_offsets[node] = off

    def describe(self):
        return {"mode": self.name, "alpha": self.alpha, "budget_fraction": self.budget_fraction}


@dataclass
class CooperationPolicy:
    """Declarative description of one countermeasure (as found in scenario files)."""

    mode: str
    n_transceivers: int = 1
    p_isolate: float = 0.0
    p_assist: float = 0.0
    alpha: float | None = None
    budget_fraction: float = DEFAULT_JITTER_BUDGET_FRACTION

    def __post_init__(self):
        if self.mode not in POLICY_MODES:
            raise InvalidInputError(f"unknown countermeasure {self.mode!r}")
        if self.n_transceivers < 1:
            raise InvalidInputError("n_transceivers must be >= 1")
        _check_probability(self.p_isolate, "p_isolate")
        _check_probability(self.p_assist, "p_assist")

    def build(self) -> Policy | None:
        if self.mode == "none":
            return None
        if self.mode == "multi_transceiver":
            return MultiTransceiverPolicy()
        if self.mode == "passive":
            return PassiveCooperationPolicy(self.p_isolate)
        if self.mode == "active_controller":
            return ActiveCooperationPolicy(self.p_assist)
        if self.mode == "active_system":
            return SystemCooperationPolicy(self.p_assist)
        return JitterPolicy(self.alpha, self.budget_fraction)


POLICY_MODES = ("none", "multi_transceiver", "passive", "active_controller", "active_system", "jitter")
