"""A CAN segment with named nodes: bit timing, policies and trace rendering.

``CanBus`` ties the analog model in :mod:`pnscan.bus` to controller
behaviour.  Every node runs its own bit clock.  The transmitter of the SOF
bit defines time zero; every other node hard-synchronises on the SOF edge as
it arrives at its position, plus its processing delay.  With soft
resynchronisation enabled, a node that is sending recessive realigns its
clock to each recessive-to-dominant edge it sees, which is what makes the
two PnS participants swap the leader and follower roles.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .bus import (
    DEFAULT_BIT_PERIOD_NS,
    DEFAULT_NOISE_SIGMA_V,
    DEFAULT_SAMPLE_RATE_HZ,
    D,
    R,
    NodeSchedule,
    SteadyStateSolver,
    Topology,
    TraceWindow,
    TransceiverProfile,
    simulate_frame,
)
from .errors import InvalidInputError
from .seeding import seed_words
from .framing import TRAILER, CanFrame, stuffed_field_labels


@dataclass
class NodeConfig:
    id: str
    position_m: float
    profile: TransceiverProfile = field(default_factory=TransceiverProfile)
    transceivers: int = 1
    processing_ns: float = 40.0
    sync_jitter_ns: float = 0.0
    transceiver_profiles: list | None = None

    def __post_init__(self):
        if self.transceivers < 1:
            raise InvalidInputError(f"node {self.id}: at least one transceiver required")
        if self.processing_ns < 0 or self.sync_jitter_ns < 0:
            raise InvalidInputError(f"node {self.id}: timing parameters must be non-negative")
        if self.transceiver_profiles is not None and len(self.transceiver_profiles) != self.transceivers:
            raise InvalidInputError(f"node {self.id}: one profile per transceiver required")


@dataclass
class RenderContext:
    """Mutable state handed to countermeasure policies while a frame renders."""

    bus: "CanBus"
    kind: str
    fields: list[str]
    intents: dict
    bus_bits: np.ndarray
    primary: str
    secondary: str | None
    rng: np.random.Generator
    resync: bool
    extra_offsets: dict
    context: dict | None = None
    starts: dict | None = None
    nominal: dict | None = None
    element_states: dict | None = None

    @property
    def n_bits(self) -> int:
        return self.bus_bits.size

    @property
    def payload_mask(self) -> np.ndarray:
        return np.array([f == "payload" for f in self.fields])

    @property
    def participants(self) -> list[str]:
        return [n for n in (self.primary, self.secondary) if n is not None]

    @property
    def listeners(self) -> list[str]:
        return [n for n in self.bus.node_ids if n not in self.participants]

    def upsample(self, slots: int):
        """Split every bit of every transceiver into ``slots`` equal sub-slots."""
        for e, s in self.element_states.items():
            m = s.shape[1]
            if m == slots:
                continue
            if slots % m:
                raise InvalidInputError("slot counts must divide each other")
            self.element_states[e] = np.repeat(s, slots // m, axis=1)

    def edge_seen_at(self, node: str, k: int) -> float | None:
        """Time a recessive-to-dominant edge starting bit ``k`` reaches ``node``."""
        if k == 0 or self.bus_bits[k - 1] != 1 or self.bus_bits[k] != 0:
            return None
        drivers = [d for d, bits in self.intents.items() if bits[k] == 0]
        return min(self.starts[d][k] + self.bus.propagation_ns(d, node) for d in drivers)


@dataclass
class RenderedFrame:
    """Probe trace of one frame plus the ground truth that produced it."""

    trace: TraceWindow
    fields: list[str]
    bus_bits: np.ndarray
    intents: dict
    starts: dict
    nominal: dict
    arrivals: dict
    leader: np.ndarray
    primary: str
    secondary: str | None
    element_states: dict

    @property
    def n_bits(self) -> int:
        return self.bus_bits.size

    def follower(self, k: int) -> str:
        return self.secondary if self.leader[k] == self.primary else self.primary


class CanBus:
    """Bus handle used by the protocol, adversary and countermeasure code."""

    def __init__(
        self,
        nodes,
        observer_position_m: float,
        *,
        bit_period_ns: float = DEFAULT_BIT_PERIOD_NS,
        sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ,
        noise_sigma_v: float = DEFAULT_NOISE_SIGMA_V,
        propagation_ns_per_m: float = 5.0,
        cable_resistance_ohm_per_m: float = 0.05,
        termination_ohms: float | None = 120.0,
        bus_length_m: float | None = None,
        soft_resync: bool = True,
        policies=(),
        seed: int = 0,
        synthesize: bool = True,
    ):
        self.nodes = {n.id: n for n in nodes}
        if len(self.nodes) != len(nodes) or not nodes:
            raise InvalidInputError("node ids must be unique and non-empty")
        self.bit_period_ns = float(bit_period_ns)
        self.sample_rate_hz = float(sample_rate_hz)
        self.noise_sigma_v = float(noise_sigma_v)
        self.soft_resync = soft_resync
        self.policies = list(policies)
        self.seed = int(seed)
        self.synthesize = synthesize

        self.elements: dict[str, list[str]] = {}
        positions, profiles = {}, {}
        for idx, node in enumerate(nodes):
            if node.transceivers == 1:
                names = [node.id]
                profs = [node.profile if node.transceiver_profiles is None else node.transceiver_profiles[0]]
            else:
                names = [f"{node.id}#{k}" for k in range(node.transceivers)]
                if node.transceiver_profiles is not None:
                    profs = list(node.transceiver_profiles)
                else:
                    rng = np.random.default_rng([self.seed, idx, 0xC0])
                    profs = [node.profile.perturbed(rng) for _ in names]
            self.elements[node.id] = names
            for name, prof in zip(names, profs):
                positions[name] = node.position_m
                profiles[name] = prof
        self.profiles = profiles
        self.topology = Topology(
            positions, observer_position_m, propagation_ns_per_m,
            cable_resistance_ohm_per_m, termination_ohms, bus_length_m,
        )
        self.solver = SteadyStateSolver(profiles, self.topology)

    # -- small accessors -------------------------------------------------
    @property
    def node_ids(self) -> list[str]:
        return list(self.nodes)

    @property
    def observer_position_m(self) -> float:
        return self.topology.observer_position_m

    def propagation_ns(self, a: str, b: str) -> float:
        return abs(self.nodes[a].position_m - self.nodes[b].position_m) * self.topology.propagation_ns_per_m

    def observer_delay_ns(self, node: str) -> float:
        return abs(self.nodes[node].position_m - self.observer_position_m) * self.topology.propagation_ns_per_m

    def has_listeners(self, *participants) -> bool:
        return any(n not in participants for n in self.nodes)

    def replace(self, **changes) -> "CanBus":
        """Shallow copy with some run-time settings swapped (policies, noise, ...)."""
        allowed = {"policies", "noise_sigma_v", "soft_resync", "seed", "synthesize"}
        bad = set(changes) - allowed
        if bad:
            raise InvalidInputError(f"cannot replace {sorted(bad)}; build a new bus instead")
        other = copy.copy(self)
        for k, v in changes.items():
            setattr(other, k, list(v) if k == "policies" else v)
        return other

    def moved_observer(self, position_m: float) -> "CanBus":
        other = copy.copy(self)
        other.topology = self.topology.with_observer(position_m)
        other.solver = SteadyStateSolver(self.profiles, other.topology)
        return other

    # -- timing engine ---------------------------------------------------
    def _timing(self, ctx: RenderContext):
        T = self.bit_period_ns
        n = ctx.n_bits
        sof = ctx.fields.index("sof")
        phase = {}
        for node in self.nodes:
            phase[node] = 0.0 if node == ctx.primary else (
                self.propagation_ns(ctx.primary, node) + self.nodes[node].processing_ns
            )
        jitter = {}
        for node, cfg in self.nodes.items():
            j = ctx.rng.normal(0.0, cfg.sync_jitter_ns, n) if cfg.sync_jitter_ns > 0 else np.zeros(n)
            jitter[node] = j + ctx.extra_offsets.get(node, 0.0)
        starts = {node: np.empty(n) for node in self.nodes}
        nominal = {node: np.empty(n) for node in self.nodes}
        leader = np.empty(n, dtype=object)
        current = ctx.primary
        for k in range(n):
            for node in self.nodes:
                nominal[node][k] = k * T + phase[node]
                starts[node][k] = nominal[node][k] + jitter[node][k]
            if ctx.resync and k > sof and ctx.bus_bits[k - 1] == 1 and ctx.bus_bits[k] == 0:
                drivers = [d for d in self.nodes if ctx.intents[d][k] == 0]
                for node in self.nodes:
                    if ctx.intents[node][k] == 0:
                        continue
                    src = min(drivers, key=lambda d: starts[d][k] + self.propagation_ns(d, node))
                    edge = starts[src][k] + self.propagation_ns(src, node)
                    phase[node] = edge + self.nodes[node].processing_ns - k * T
                    nominal[node][k] = k * T + phase[node]
                    starts[node][k] = nominal[node][k] + jitter[node][k]
                    if node in ctx.participants and src in ctx.participants:
                        current = src
            leader[k] = current
        return starts, nominal, leader

    # -- rendering ---------------------------------------------------------
    def _render(self, kind, fields, intents, primary, secondary, seed, context) -> RenderedFrame:
        seeds = np.random.SeedSequence(seed_words([self.seed, seed])).spawn(2)
        bus_bits = np.ones(len(fields), dtype=np.uint8)
        for bits in intents.values():
            bus_bits &= bits
        ctx = RenderContext(
            self, kind, fields, intents, bus_bits, primary, secondary,
            np.random.default_rng(seeds[0]), self.soft_resync, {}, context,
        )
        active = self.policies if kind == "pns" else []
        for pol in active:
            pol.prepare(ctx)
        ctx.starts, ctx.nominal, leader = self._timing(ctx)
        ctx.element_states = {}
        for node, elems in self.elements.items():
            base = np.where(intents[node] == 0, int(D), int(R)).astype(np.int8)[:, None]
            for e in elems:
                ctx.element_states[e] = base.copy()
        for pol in active:
            pol.apply(ctx)
        T = self.bit_period_ns
        grid = np.arange(ctx.n_bits) * T
        # resynchronisation only ever delays clocks, so pad the window with
        # idle bits until the last node's final bit has fully reached the probe
        lag = max(ctx.starts[n][-1] - grid[-1] for n in self.nodes)
        pad = int(np.ceil(max(lag, 0.0) / T)) + 1
        schedules = {}
        for node, elems in self.elements.items():
            offsets = np.append(ctx.starts[node] - grid, np.full(pad, ctx.starts[node][-1] - grid[-1]))
            for e in elems:
                s = ctx.element_states[e]
                tail = np.full((pad, s.shape[1]), int(R), dtype=s.dtype)
                schedules[e] = NodeSchedule(np.vstack([s, tail]), offsets)
        trace = None
        if self.synthesize:
            trace = simulate_frame(
                schedules, self.profiles, self.topology, self.noise_sigma_v,
                np.random.default_rng(seeds[1]), bit_period_ns=T,
                sample_rate_hz=self.sample_rate_hz, solver=self.solver,
            )
        arrivals = {n: ctx.starts[n] + self.observer_delay_ns(n) for n in self.nodes}
        return RenderedFrame(
            trace, fields, bus_bits, intents, ctx.starts, ctx.nominal, arrivals,
            leader, primary, secondary, ctx.element_states,
        )

    def render_pns_frame(self, record, primary: str, secondary: str, seed=0, context=None) -> RenderedFrame:
        """Render a lock-step PnS frame (see :func:`pnscan.protocol.pns_frame`)."""
        for n in (primary, secondary):
            if n not in self.nodes:
                raise InvalidInputError(f"node {n!r} is not on the bus")
        intents = {}
        ack = record.fields.index("ack")
        for node in self.nodes:
            if node == primary:
                intents[node] = record.intent_primary.copy()
            elif node == secondary:
                intents[node] = record.intent_secondary.copy()
            else:
                bits = np.ones(record.n_bits, dtype=np.uint8)
                bits[ack] = 0
                intents[node] = bits
        return self._render("pns", list(record.fields), intents, primary, secondary, seed, context)

    def render_frame(self, frame: CanFrame, transmitter: str, seed=0, idle_bits: int = 2) -> RenderedFrame:
        """Render an ordinary frame sent by ``transmitter`` and ACKed by the rest."""
        if transmitter not in self.nodes:
            raise InvalidInputError(f"node {transmitter!r} is not on the bus")
        fields = ["idle"] * idle_bits + frame_fields(frame)
        wire = np.array([1] * idle_bits + frame.wire_bits, dtype=np.uint8)
        wire[fields.index("ack")] = 1
        intents = {}
        for node in self.nodes:
            if node == transmitter:
                intents[node] = wire.copy()
            else:
                bits = np.ones(wire.size, dtype=np.uint8)
                bits[fields.index("ack")] = 0
                intents[node] = bits
        return self._render("single", fields, intents, transmitter, None, seed, None)


def frame_fields(frame: CanFrame) -> list[str]:
    """Field name of every wire bit of an ordinary frame, stuff bits included."""
    labels = stuffed_field_labels(frame.stuffed_stream)
    return labels + [name for name, _ in TRAILER]
