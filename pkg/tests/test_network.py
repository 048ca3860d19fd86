import numpy as np
import pytest

from pnscan.errors import InvalidInputError
from pnscan.framing import build_frame
from pnscan.network import CanBus, NodeConfig
from pnscan.protocol import interleave_with_complement, pns_frame


def _frame(seed=0, listeners=False):
    rng = np.random.default_rng(seed)
    c1, c2 = rng.integers(0, 2, (2, 32))
    return pns_frame(interleave_with_complement(c1), interleave_with_complement(c2), listeners=listeners)


def test_secondary_hard_syncs_behind_the_primary():
    bus = CanBus([NodeConfig("A", 0.0), NodeConfig("B", 30.0, processing_ns=25.0)], 0.0, soft_resync=False)
    rf = bus.render_pns_frame(_frame(), "A", "B")
    assert np.allclose(rf.starts["A"], np.arange(rf.n_bits) * 2000.0)
    assert np.allclose(rf.starts["B"] - rf.starts["A"], 150.0 + 25.0)
    assert set(rf.leader) == {"A"}


def test_soft_resync_hands_the_lead_to_the_sole_driver():
    bus = CanBus([NodeConfig("A", 0.0), NodeConfig("B", 30.0)], 0.0, noise_sigma_v=0.0)
    rec = _frame(3)
    rf = bus.render_pns_frame(rec, "A", "B")
    swaps = [k for k in range(1, rf.n_bits) if rf.leader[k] != rf.leader[k - 1]]
    assert swaps, "random chunks always contain single-driver edges"
    for k in swaps:
        # the new leader drove the edge alone
        assert rf.bus_bits[k - 1] == 1 and rf.bus_bits[k] == 0
        new, old = rf.leader[k], rf.leader[k - 1]
        assert rf.intents[new][k] == 0 and rf.intents[old][k] == 1
        assert rf.starts[old][k] - rf.starts[new][k] == pytest.approx(150.0 + 40.0)


def test_render_is_deterministic_and_bus_bits_are_the_and():
    bus = CanBus([NodeConfig("A", 3.0), NodeConfig("B", 18.0), NodeConfig("C", 7.0)], 0.0, seed=4)
    rec = _frame(1, listeners=True)
    one = bus.render_pns_frame(rec, "A", "B", seed=9)
    two = bus.render_pns_frame(rec, "A", "B", seed=9)
    assert np.array_equal(one.trace.samples, two.trace.samples)
    assert np.array_equal(one.bus_bits, rec.bus)
    assert one.intents["C"].sum() == rec.n_bits - 1  # listener only ACKs


def test_ordinary_frame_has_one_transmitter():
    bus = CanBus([NodeConfig("A", 0.0), NodeConfig("B", 10.0)], 0.0)
    frame = build_frame(0x123, [1, 0, 1, 1, 0, 0, 1, 0])
    rf = bus.render_frame(frame, "B")
    assert rf.fields[:2] == ["idle", "idle"]
    assert rf.bus_bits[2:2 + len(frame.stuffed_stream)].tolist() == frame.stuffed_stream


def test_multi_transceiver_nodes_get_elements():
    bus = CanBus([NodeConfig("A", 0.0, transceivers=3), NodeConfig("B", 10.0)], 0.0)
    assert bus.elements["A"] == ["A#0", "A#1", "A#2"]
    assert bus.elements["B"] == ["B"]
    assert len(bus.solver.ids) == 4


def test_replace_and_moved_observer():
    bus = CanBus([NodeConfig("A", 0.0), NodeConfig("B", 10.0)], 0.0)
    quiet = bus.replace(noise_sigma_v=0.0)
    assert quiet.noise_sigma_v == 0.0 and bus.noise_sigma_v == 0.01
    with pytest.raises(InvalidInputError):
        bus.replace(nodes={})
    moved = bus.moved_observer(10.0)
    assert moved.observer_delay_ns("B") == 0.0 and bus.observer_delay_ns("B") == 50.0


def test_bus_validation():
    with pytest.raises(InvalidInputError):
        CanBus([NodeConfig("A", 0.0), NodeConfig("A", 1.0)], 0.0)
    with pytest.raises(InvalidInputError):
        NodeConfig("A", 0.0, transceivers=0)
    bus = CanBus([NodeConfig("A", 0.0), NodeConfig("B", 1.0)], 0.0)
    with pytest.raises(InvalidInputError):
        bus.render_pns_frame(_frame(), "A", "Z")
