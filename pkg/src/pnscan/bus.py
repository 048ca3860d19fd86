"""Analog model of a linear CAN bus as seen from a single probe point.

The steady-state part is a DC nodal analysis of a resistive ladder: every
transceiver attaches to the differential pair at its position, the cable
contributes a series resistance per metre, and the two ends carry the
termination resistors.  Transitions between steady levels follow a
first-order exponential with the time constant of the transceiver that
caused them, and the arrival of each transceiver's change at the probe is
delayed by the cable propagation time.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateNetworkError, InvalidInputError

DEFAULT_BIT_PERIOD_NS = 2000.0
DEFAULT_SAMPLE_RATE_HZ = 125e6
DEFAULT_NOISE_SIGMA_V = 0.010


class TransceiverState(IntEnum):
    """Electrical state of one transceiver during a bit (or sub-bit slot).

    The integer values double as the logical bit for the two driving states,
    so ``int(TransceiverState.DOMINANT) == 0``.
    """

    DOMINANT = 0
    RECESSIVE = 1
    ISOLATED = 2

    @property
    def logical(self) -> int:
        return 0 if self is TransceiverState.DOMINANT else 1


D, R, X = TransceiverState.DOMINANT, TransceiverState.RECESSIVE, TransceiverState.ISOLATED


@dataclass(frozen=True)
class TransceiverProfile:
    """Electrical parameters of one CAN driver.

    A dominant driver is a Thevenin source of ``canh - canl`` volts behind
    ``drive_conductance``; a listening (recessive) transceiver is a passive
    ``load_conductance`` across the pair.
    """

    canh_dominant_v: float = 3.75
    canl_dominant_v: float = 1.25
    drive_conductance: float = 1 / 15.0
    load_conductance: float = 1 / 30e3
    rise_tau_ns: float = 40.0
    fall_tau_ns: float = 60.0
    supply_v: float = 5.0

    def __post_init__(self):
        if not self.canh_dominant_v > self.canl_dominant_v:
            raise InvalidInputError("canh_dominant_v must exceed canl_dominant_v")
        if not self.drive_conductance > 0:
            raise InvalidInputError("drive_conductance must be positive")
        if self.load_conductance < 0:
            raise InvalidInputError("load_conductance must be non-negative")
        if not (self.rise_tau_ns > 0 and self.fall_tau_ns > 0):
            raise InvalidInputError("transient time constants must be positive")

    @property
    def differential_v(self) -> float:
        return self.canh_dominant_v - self.canl_dominant_v

    def perturbed(self, rng: np.random.Generator, spread: float = 0.1) -> "TransceiverProfile":
        """Copy with conductances scaled by independent factors in ``1 +/- spread``."""
        scale = 1.0 + spread * rng.uniform(-1.0, 1.0, size=2)
        return TransceiverProfile(
            canh_dominant_v=self.canh_dominant_v,
            canl_dominant_v=self.canl_dominant_v,
            drive_conductance=self.drive_conductance * scale[0],
            load_conductance=self.load_conductance * scale[1],
            rise_tau_ns=self.rise_tau_ns,
            fall_tau_ns=self.fall_tau_ns,
            supply_v=self.supply_v,
        )

    @classmethod
    def from_dict(cls, data: Mapping) -> "TransceiverProfile":
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class Topology:
    """Geometry of a linear bus.

    ``node_positions_m`` maps attachment ids (nodes or individual
    transceivers) to their distance from the start of the bus; insertion
    order is the canonical node order.  ``termination_ohms=None`` removes
    both terminations.
    """

    node_positions_m: Mapping[str, float]
    observer_position_m: float
    propagation_ns_per_m: float = 5.0
    cable_resistance_ohm_per_m: float = 0.05
    termination_ohms: float | None = 120.0
    bus_length_m: float | None = None

    def __post_init__(self):
        if not self.propagation_ns_per_m > 0:
            raise InvalidInputError("propagation_ns_per_m must be positive")
        if self.cable_resistance_ohm_per_m < 0:
            raise InvalidInputError("cable resistance must be non-negative")
        object.__setattr__(self, "node_positions_m", dict(self.node_positions_m))
        positions = list(self.node_positions_m.values()) + [self.observer_position_m]
        if min(positions) < 0:
            raise InvalidInputError("positions must be measured from the bus start (>= 0)")
        if self.bus_length_m is None:
            object.__setattr__(self, "bus_length_m", float(max(positions)))
        elif max(positions) > self.bus_length_m:
            raise InvalidInputError("a position lies beyond bus_length_m")

    @property
    def ids(self) -> list[str]:
        return list(self.node_positions_m)

    def propagation_ns(self, a: str, b: str) -> float:
        pos = self.node_positions_m
        return abs(pos[a] - pos[b]) * self.propagation_ns_per_m

    def observer_delay_ns(self, node: str) -> float:
        return abs(self.node_positions_m[node] - self.observer_position_m) * self.propagation_ns_per_m

    def with_observer(self, position_m: float) -> "Topology":
        return Topology(
            self.node_positions_m, position_m, self.propagation_ns_per_m,
            self.cable_resistance_ohm_per_m, self.termination_ohms, self.bus_length_m,
        )


@dataclass
class TraceWindow:
    """Sampled differential bus voltage at the probe."""

    sample_rate_hz: float
    samples: np.ndarray
    t0_ns: float = 0.0
    bit_period_ns: float = DEFAULT_BIT_PERIOD_NS

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise InvalidInputError("trace needs a non-empty 1-D sample array")
        if self.sample_rate_hz * self.bit_period_ns * 1e-9 < 2:
            raise InvalidInputError("sample rate must give at least two samples per bit")

    @property
    def sample_period_ns(self) -> float:
        return 1e9 / self.sample_rate_hz

    @property
    def samples_per_bit(self) -> int:
        return int(round(self.bit_period_ns / self.sample_period_ns))

    @property
    def times_ns(self) -> np.ndarray:
        return self.t0_ns + np.arange(self.samples.size) * self.sample_period_ns

    def index_at(self, t_ns: float) -> int:
        return int(round((t_ns - self.t0_ns) / self.sample_period_ns))

    def to_csv(self, path=None) -> str:
        """Write ``time_ns,volts`` rows (integer ns, six decimals); returns the text."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["time_ns", "volts"])
        for t, v in zip(np.rint(self.times_ns).astype(np.int64), self.samples):
            writer.writerow([int(t), f"{v:.6f}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, bit_period_ns: float = DEFAULT_BIT_PERIOD_NS) -> "TraceWindow":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t, v = data[:, 0], data[:, 1]
        dt = float(np.median(np.diff(t))) if t.size > 1 else 8.0
        return cls(1e9 / dt, v, float(t[0]), bit_period_ns)


def logical_bus_value(states: Sequence[TransceiverState]) -> int:
    """Wired-AND of the transceivers: 0 iff any of them drives dominant."""
    states = list(states)
    if not states:
        raise InvalidInputError("at least one transceiver state is required")
    return 0 if any(TransceiverState(s) is D for s in states) else 1


class SteadyStateSolver:
    """Nodal-analysis solver for a fixed set of transceivers on a topology.

    Results are memoised per state vector, which makes repeated frame
    synthesis cheap: a frame only visits a handful of distinct vectors.
    """

    def __init__(self, profiles: Mapping[str, TransceiverProfile], topology: Topology):
        missing = set(profiles) - set(topology.node_positions_m)
        if missing:
            raise InvalidInputError(f"no position for {sorted(missing)}")
        self.ids = [i for i in topology.node_positions_m if i in profiles]
        self.profiles = [profiles[i] for i in self.ids]
        self.topology = topology
        self._cache: dict[tuple, float] = {}

        r = topology.cable_resistance_ohm_per_m
        points = [topology.node_positions_m[i] for i in self.ids] + [topology.observer_position_m]
        if topology.termination_ohms is not None:
            points += [0.0, topology.bus_length_m]
        if r == 0:
            # zero cable resistance shorts every attachment point together
            self._xs = np.array([0.0])
            self._where = lambda x: 0
        else:
            self._xs = np.unique(np.asarray(points, dtype=float))
            self._where = lambda x: int(np.searchsorted(self._xs, x))
        n = self._xs.size
        base = np.zeros((n, n))
        for k in range(n - 1):
            g = 1.0 / (r * (self._xs[k + 1] - self._xs[k]))
            base[k, k] += g
            base[k + 1, k + 1] += g
            base[k, k + 1] -= g
            base[k + 1, k] -= g
        if topology.termination_ohms is not None:
            for x in (0.0, topology.bus_length_m):
                k = self._where(x)
                base[k, k] += 1.0 / topology.termination_ohms
        self._base = base
        self._terminated = topology.termination_ohms is not None
        self._elem_index = [self._where(topology.node_positions_m[i]) for i in self.ids]
        self._obs_index = self._where(topology.observer_position_m)

    def solve(self, states: Sequence[int]) -> float:
        key = tuple(int(s) for s in states)
        if len(key) != len(self.ids):
            raise InvalidInputError(f"expected {len(self.ids)} states, got {len(key)}")
        if key not in self._cache:
            self._cache[key] = self._solve(key)
        return self._cache[key]

    def _solve(self, key: tuple) -> float:
        G = self._base.copy()
        I = np.zeros(G.shape[0])
        shunt = self._terminated
        for state, prof, k in zip(key, self.profiles, self._elem_index):
            if state == D:
                G[k, k] += prof.drive_conductance
                I[k] += prof.drive_conductance * prof.differential_v
                shunt = True
            elif state == R and prof.load_conductance > 0:
                G[k, k] += prof.load_conductance
                shunt = True
        if not shunt:
            raise DegenerateNetworkError("no conductance path to reference; voltage undefined")
        # LAPACK gesv: Gaussian elimination with partial pivoting
        return float(np.linalg.solve(G, I)[self._obs_index])


def resolve_steady_state(states, profiles, topology: Topology) -> float:
    """Differential voltage at the observer for one configuration of states.

    ``states`` and ``profiles`` are either mappings keyed by topology id or
    sequences aligned with ``topology.node_positions_m`` order.  Isolated
    transceivers are removed from the network entirely.
    """
    ids = topology.ids
    if not isinstance(profiles, Mapping):
        profiles = list(profiles)
        if len(profiles) != len(ids):
            raise InvalidInputError("profiles and topology differ in length")
        profiles = dict(zip(ids, profiles))
    if isinstance(states, Mapping):
        states = [states[i] for i in ids if i in profiles]
    elif len(states) != len(profiles):
        raise InvalidInputError("states and profiles differ in length")
    return SteadyStateSolver(profiles, topology).solve(states)


def _approach(prev, target, t, t_start, tau):
    """First-order step response, held at ``prev`` before ``t_start``."""
    dt = np.maximum(t - t_start, 0.0)
    return target + (prev - target) * np.exp(-dt / tau)


def synthesize_bit_waveform(
    prev_level: float,
    target_level: float,
    transition_start_ns: float,
    tau_ns: float,
    *,
    t0_ns: float = 0.0,
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ,
    n_samples: int,
) -> np.ndarray:
    """Sample an exponential transition from ``prev_level`` to ``target_level``."""
    if not tau_ns > 0:
        raise InvalidInputError("tau_ns must be positive")
    t = t0_ns + np.arange(n_samples) * (1e9 / sample_rate_hz)
    if not t[0] <= transition_start_ns <= t[-1]:
        raise InvalidInputError("transition start lies outside the window")
    return _approach(prev_level, target_level, t, transition_start_ns, tau_ns)


@dataclass
class NodeSchedule:
    """Per-bit transmit states of one transceiver plus per-bit start offsets.

    ``states`` has shape ``(n_bits,)`` or ``(n_bits, m)``; the second form
    splits every bit into ``m`` equal slots (used for intra-bit toggling).
    ``offsets_ns[k]`` shifts the start of bit ``k`` at the transmitter; the
    bit then lasts until the (shifted) start of bit ``k + 1``.
    """

    states: np.ndarray
    offsets_ns: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int8)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        n = self.states.shape[0]
        if self.offsets_ns is None:
            self.offsets_ns = np.zeros(n)
        self.offsets_ns = np.broadcast_to(np.asarray(self.offsets_ns, dtype=float), (n,)).copy()

    @property
    def n_bits(self) -> int:
        return self.states.shape[0]

    def events(self, t0_ns: float, bit_period_ns: float, initial: int = R):
        """Times (at the transmitter) and new states of every state change."""
        n, m = self.states.shape
        starts = t0_ns + np.arange(n) * bit_period_ns + self.offsets_ns
        ends = np.append(starts[1:], t0_ns + n * bit_period_ns + self.offsets_ns[-1])
        slot = np.arange(m) / m
        times = (starts[:, None] + (ends - starts)[:, None] * slot[None, :]).ravel()
        flat = self.states.ravel()
        prev = np.concatenate(([initial], flat[:-1]))
        changed = flat != prev
        return times[changed], flat[changed], prev[changed]


def simulate_frame(
    schedules: Mapping[str, NodeSchedule],
    profiles: Mapping[str, TransceiverProfile],
    topology: Topology,
    noise_sigma_v: float = DEFAULT_NOISE_SIGMA_V,
    seed=0,
    *,
    bit_period_ns: float = DEFAULT_BIT_PERIOD_NS,
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ,
    t0_ns: float = 0.0,
    solver: SteadyStateSolver | None = None,
) -> TraceWindow:
    """Synthesize the probe waveform for a block of bits.

    Every transceiver's state changes reach the probe after the cable delay
    between its position and the observer.  Between changes the bus relaxes
    exponentially towards the nodal-analysis level of the current state
    vector; the time constant is that of the transceiver that changed
    (rise for a new dominant, fall otherwise).
    """
    if noise_sigma_v < 0:
        raise InvalidInputError("noise_sigma_v must be non-negative")
    ids = list(schedules)
    if not ids:
        raise InvalidInputError("no schedules given")
    n_bits = {schedules[i].n_bits for i in ids}
    if len(n_bits) != 1:
        raise InvalidInputError("all schedules must cover the same number of bits")
    n_bits = n_bits.pop()
    if solver is None:
        solver = SteadyStateSolver({i: profiles[i] for i in ids}, topology)
    order = {i: k for k, i in enumerate(solver.ids)}
    missing = [i for i in ids if i not in order]
    if missing:
        raise InvalidInputError(f"solver lacks transceivers {missing}")

    times, elems, new, taus = [], [], [], []
    for i in ids:
        t, s, prev = schedules[i].events(t0_ns, bit_period_ns)
        prof = profiles[i]
        times.append(t + topology.observer_delay_ns(i))
        elems.append(np.full(t.size, order[i]))
        new.append(s)
        taus.append(np.where((s == D) | ((s == R) & (prev == X)), prof.rise_tau_ns, prof.fall_tau_ns))
    times = np.concatenate(times)
    elems = np.concatenate(elems)
    new = np.concatenate(new)
    taus = np.concatenate(taus)
    perm = np.lexsort((elems, times))
    times, elems, new, taus = times[perm], elems[perm], new[perm], taus[perm]

    state = [int(R)] * len(solver.ids)
    v_init = solver.solve(state)
    seg_t, seg_v, seg_tau = [], [], []
    k = 0
    while k < times.size:
        j = k
        tau = 0.0
        while j < times.size and times[j] == times[k]:
            state[elems[j]] = int(new[j])
            tau = max(tau, taus[j])
            j += 1
        seg_t.append(times[k])
        seg_v.append(solver.solve(state))
        seg_tau.append(tau)
        k = j

    n_samples = int(round(n_bits * bit_period_ns * sample_rate_hz * 1e-9))
    t = t0_ns + np.arange(n_samples) * (1e9 / sample_rate_hz)
    if seg_t:
        seg_t = np.asarray(seg_t)
        seg_v = np.asarray(seg_v)
        seg_tau = np.asarray(seg_tau)
        start_v = np.empty_like(seg_v)
        v = v_init
        for s in range(seg_t.size):
            start_v[s] = v
            if s + 1 < seg_t.size:
                v = seg_v[s] + (v - seg_v[s]) * math.exp(-(seg_t[s + 1] - seg_t[s]) / seg_tau[s])
        idx = np.searchsorted(seg_t, t, side="right") - 1
        wave = np.full(n_samples, v_init)
        live = idx >= 0
        ii = idx[live]
        wave[live] = seg_v[ii] + (start_v[ii] - seg_v[ii]) * np.exp(-(t[live] - seg_t[ii]) / seg_tau[ii])
    else:
        wave = np.full(n_samples, v_init)

    if noise_sigma_v > 0:
        wave = wave + np.random.default_rng(seed).normal(0.0, noise_sigma_v, n_samples)
    return TraceWindow(sample_rate_hz, wave, t0_ns, bit_period_ns)


# Bench measurements of the dominant output with three transceiver families
# (MCP2551, TJA1040, TJA1041) on a three-node bus.  The column convention is
# ambiguous: the all-"1" row reads 0 V and the all-"0" row reads the highest
# level, i.e. the bits appear to mark which transceivers are *passive*.  Kept
# verbatim; never used numerically.
REFERENCE_MULTI_DOMINANT_V = {
    ("0", "0", "0"): 2.4230,
    ("0", "0", "1"): 2.1281,
    ("0", "1", "0"): 2.1197,
    ("0", "1", "1"): 1.8208,
    ("1", "0", "0"): 2.3400,
    ("1", "0", "1"): 1.7710,
    ("1", "1", "0"): 1.7629,
    ("1", "1", "1"): 0.0000,
}
REFERENCE_MULTI_DOMINANT_ISOLATED_V = {
    ("X", "0", "0"): 2.5842,
    ("X", "0", "1"): 2.1174,
    ("X", "1", "0"): 2.0923,
    ("0", "0", "X"): 2.3159,
    ("0", "1", "X"): 1.9647,
    ("1", "0", "X"): 2.1493,
    ("0", "X", "0"): 2.2957,
    ("0", "X", "1"): 1.9599,
    ("1", "X", "0"): 2.1415,
}
# Per-node delays (min, max, mean, std in ns) between the 16 test nodes and
# the probe, and the pairs with the smallest/largest delay-interval overlap.
REFERENCE_DELAYS_NS = {
    1: (138, 166, 151.8, 12.6), 2: (140, 168, 153.4, 12.5), 3: (140, 168, 153.8, 12.6),
    4: (140, 172, 156.2, 12.9), 5: (130, 162, 144.4, 14.2), 6: (130, 160, 144.8, 14.0),
    7: (132, 164, 147.1, 13.7), 8: (136, 164, 148.7, 12.4), 9: (118, 154, 135.2, 15.7),
    10: (118, 154, 135.0, 15.3), 11: (122, 156, 139.1, 14.7), 12: (124, 158, 140.9, 14.6),
    13: (116, 146, 130.6, 12.6), 14: (118, 146, 131.2, 12.3), 15: (118, 152, 135.4, 14.8),
    16: (122, 154, 137.2, 13.3),
}
REFERENCE_OVERLAPS_NS = [
    (6.0, 2, 13), (6.0, 2, 14), (6.0, 3, 13), (32.0, 11, 12),
    (34.0, 9, 15), (34.0, 10, 15), (36.0, 9, 10),
]
