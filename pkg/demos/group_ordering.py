"""Order a five-member group so that no session runs over a leaky link.

Five ECUs sit between 10 m and 12 m from the probe with 1.5 ns of sync
jitter, so how well the probe tells two of them apart depends on how far
apart they are.  The identity order A, B, C, D, E zig-zags between near and
far ECUs; the min-max spanning tree walks them in distance order instead.
The gateway then broadcasts the order masked under each member's own key.
"""

from pnscan import harness
from pnscan.ordering import chain_tree, mask_order, min_max_spanning_tree, unmask_rank
from pnscan.scenario import Scenario

positions = {"A": 10.0, "B": 12.0, "C": 10.4, "D": 11.6, "E": 10.8}
scenario = Scenario.from_dict({
    "schema_version": 1,
    "name": "five-ecu-group",
    "nodes": [{"id": k, "position_m": x, "sync_jitter_ns": 1.5} for k, x in positions.items()],
    "adversary": {"observer_position_m": 0.0, "advantage_bits": 400},
    "experiment": {"seed": 5},
})
members = list(positions)

graph = harness.measured_advantage_graph(scenario, members)
for a, b, w in sorted(graph.edges(), key=lambda e: e[2]):
    print(f"{a} - {b}  d = {w:.3f}")

tree = min_max_spanning_tree(graph)
print("\ntree sessions    :", ", ".join(f"{p}->{c}" for p, c in tree.sessions()))
print(f"tree max-edge d  : {tree.max_edge(graph):.3f}")
print(f"chain max-edge d : {chain_tree(members).max_edge(graph):.3f}  (A->B->C->D->E)")

keys = harness.gateway_keys(members, scenario.seed)
masked = mask_order(tree.order(), keys, bytes.fromhex("5eed0f0a11"))
print("\nbroadcast        :", masked.to_hex()[:42] + "...")
for m in members:
    print(f"{m} finds itself at position {unmask_rank(masked, keys[m])}")
