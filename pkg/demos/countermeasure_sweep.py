"""How much each countermeasure leaves for the probe to work with.

Part one counts the distinct bus voltages when each ECU drives through
several transceivers.  Part two adds bit-start jitter to two identical ECUs
with the probe midway between them and measures the in-situ advantage.
"""

from pnscan.adversary import (
    collect_pns_observations, measure_advantage, oriented_advantage, train_pair_classifier,
)
from pnscan.countermeasures import JitterPolicy, distinct_levels
from pnscan.network import CanBus, NodeConfig
from pnscan.scenario import Scenario

print("transceivers  dominant  recessive  combined")
for n in (1, 2, 3, 4):
    bus = CanBus([NodeConfig("A", 5.0, transceivers=n), NodeConfig("B", 25.0, transceivers=n)], 0.0)
    a, b = bus.elements["A"], bus.elements["B"]
    row = [distinct_levels(bus.solver, a, b, m) for m in ("dominant", "recessive", "combined")]
    print(f"{n:>12}  {row[0]:>8}  {row[1]:>9}  {row[2]:>8}")

scenario = Scenario.load("equidistant")
print("\nalpha  d (in situ)")
for i, alpha in enumerate((0.0, 0.25, 0.5, 0.75, 1.0)):
    bus = scenario.build_bus([JitterPolicy(alpha=alpha)], processing_ns=0.0)
    obs = collect_pns_observations(bus, "L", "R", 300, [scenario.seed, "demo", i])
    train_l, test_l = obs["L"].split(0.5)
    train_r, test_r = obs["R"].split(0.5)
    clf = train_pair_classifier(train_l, train_r)
    print(f"{alpha:5.2f}  {oriented_advantage(measure_advantage(clf, test_l, test_r)):.3f}")
