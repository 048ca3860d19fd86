"""Two ECUs agree on a key; a probe on the bus reads it back from edge timing.

Run with ``python3 demos/attack_walkthrough.py``.
"""

import numpy as np

from pnscan.adversary import attack_session
from pnscan.network import CanBus, NodeConfig
from pnscan.protocol import PnSSession, run_pns_two_party

# ECU_A sits 26 m from the probe, ECU_B 30 m: about 21 ns apart at 5 ns/m.
bus = CanBus([NodeConfig("ECU_A", 26.12), NodeConfig("ECU_B", 30.36)], observer_position_m=0.0)

session = PnSSession("ECU_A", "ECU_B", b"seed held by A", b"seed held by B", target_key_bits=64)
result = run_pns_two_party(session, bus)
print("frames sent      :", len(result.frames))
print("keys agree       :", bool(np.array_equal(result.key_primary, result.key_secondary)))
print("shared key       :", "".join(map(str, result.key_primary)))

attack, truth = attack_session(result.traces, result.frames)
guess = attack.bits
print("probe's guess    :", "".join("?" if b < 0 else str(b) for b in guess[:64]))
print(f"recovered        : {attack.recovered(truth)} of {truth.size} secret bits, "
      f"{attack.erasures} erasures")

for name, node in bus.nodes.items():
    print(f"{name}: {bus.observer_delay_ns(name):6.1f} ns from the probe, processing {node.processing_ns:.0f} ns")
