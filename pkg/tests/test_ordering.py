import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnscan.adversary import AdvantageGraph, attack_session
from pnscan.errors import IncompleteMapError, InvalidInputError, NoSpanningTreeError
from pnscan.network import CanBus, NodeConfig
from pnscan.ordering import (
    MaskedOrder, OrderTree, brute_force_min_max, build_advantage_graph, chain_tree,
    mask_order, min_max_spanning_tree, prufer_trees, run_group_key_tree, unmask_rank,
)
from pnscan.protocol import run_group_key_linear, run_group_session


def _graph(names, weights):
    return AdvantageGraph(list(names), {frozenset(k): w for k, w in weights.items()})


def _complete(names, rng):
    return _graph(names, {(a, b): float(rng.uniform(0.5, 1.0)) for a, b in itertools.combinations(names, 2)})


def test_induced_subgraph():
    g = _complete("ABCDE", np.random.default_rng(0))
    sub = build_advantage_graph(["A", "C"], g)
    assert list(sub.edges()) == [("A", "C", g.weight("A", "C"))]
    full = build_advantage_graph(list("ABCDE"), g)
    assert len(list(full.edges())) == 10
    assert build_advantage_graph(["A", "B"], lambda a, b: 0.7).weight("A", "B") == 0.7
    with pytest.raises(IncompleteMapError):
        build_advantage_graph(["A", "B", "C"], {frozenset("AB"): 0.6})
    with pytest.raises(InvalidInputError):
        build_advantage_graph(["A", "A"], g)


def test_two_nodes_single_edge():
    tree = min_max_spanning_tree(_graph("AB", {("A", "B"): 0.8}))
    assert tree.sessions() == [("A", "B")]
    assert tree.max_edge(_graph("AB", {("A", "B"): 0.8})) == 0.8


def test_triangle_keeps_the_two_light_edges():
    g = _graph("ABC", {("A", "B"): 0.9, ("B", "C"): 0.6, ("A", "C"): 0.55})
    tree = min_max_spanning_tree(g)
    assert sorted(map(sorted, tree.edges)) == [["A", "C"], ["B", "C"]]
    assert tree.max_edge(g) == 0.6
    assert brute_force_min_max(g) == 0.6


def test_prufer_enumeration_counts():
    for n in range(2, 7):
        trees = list(prufer_trees(n))
        assert len(trees) == n ** (n - 2)
        assert len({frozenset(map(frozenset, t)) for t in trees}) == len(trees)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_mst_is_min_max(n, seed):
    g = _complete([f"n{i}" for i in range(n)], np.random.default_rng(seed))
    assert min_max_spanning_tree(g).max_edge(g) == brute_force_min_max(g)


def test_tree_order_and_determinism():
    g = _complete("ABCDEF", np.random.default_rng(3))
    tree = min_max_spanning_tree(g)
    order = tree.order()
    assert sorted(order) == sorted("ABCDEF") and order[0] == tree.root
    seen = {tree.root}
    for par, child in tree.sessions():
        assert par in seen
        seen.add(child)
    assert min_max_spanning_tree(g).order() == order


def test_disconnected_graph():
    g = _graph("ABCD", {("A", "B"): 0.6, ("C", "D"): 0.7})
    with pytest.raises(NoSpanningTreeError):
        min_max_spanning_tree(g)
    with pytest.raises(NoSpanningTreeError):
        brute_force_min_max(g)
    with pytest.raises(InvalidInputError):
        min_max_spanning_tree(_graph("A", {}))


SEEDS = {n: f"seed-{n}".encode() for n in "ABCDE"}


def test_path_tree_matches_linear_protocol():
    keys_tree = run_group_key_tree(chain_tree(list("ABCD")), SEEDS)
    keys_linear = run_group_key_linear(list("ABCD"), SEEDS)
    assert all(np.array_equal(keys_tree[n], keys_linear[n]) for n in "ABCD")


def test_star_tree_shares_one_key():
    star = OrderTree("A", {n: "A" for n in "BCDE"}, [("A", n) for n in "BCDE"])
    assert len(star.sessions()) == 4
    keys = run_group_key_tree(star, SEEDS)
    assert set(keys) == set("ABCDE")
    assert all(np.array_equal(keys["A"], k) for k in keys.values())
    with pytest.raises(InvalidInputError):
        run_group_key_tree(OrderTree("A", {}), SEEDS)


def test_tree_ordering_avoids_the_leaky_pairs():
    # two clusters of co-located nodes, probe midway: pairs inside a cluster are
    # timing-identical, pairs across the 40 m gap are fully separable
    nodes = [NodeConfig(n, x, processing_ns=0.0) for n, x in (("A", 0.0), ("B", 40.0), ("C", 0.0), ("D", 40.0))]
    bus = CanBus(nodes, 20.0, seed=1)
    clusters = {"A": 0, "C": 0, "B": 1, "D": 1}
    g = _graph("ABCD", {(a, b): 1.0 if clusters[a] != clusters[b] else 0.5
                        for a, b in itertools.combinations("ABCD", 2)})
    tree = min_max_spanning_tree(g)
    naive = chain_tree(list("ABCD"))
    assert tree.max_edge(g) == 1.0 and naive.max_edge(g) == 1.0
    assert sum(g.weight(*e) == 1.0 for e in tree.sessions()) == 1
    assert sum(g.weight(*e) == 1.0 for e in naive.sessions()) == 3

    def leaked(sessions):
        running, holders, total = None, [sessions[0][0]], 0
        for par, child in sessions:
            holders = holders + [child]
            running, _, result = run_group_session(par, child, running, SEEDS, holders, bus=bus)
            res, truth = attack_session(result.traces, result.frames)
            total += res.recovered(truth)
        return total

    assert leaked(tree.sessions()) < leaked(naive.sessions())


def test_masked_rank_broadcast():
    keys = {n: f"gw-{n}".encode() * 2 for n in "ABCDE"}
    order = ["C", "A", "E", "B", "D"]
    masked = mask_order(order, keys, b"nonce-1")
    assert unmask_rank(masked, keys["E"]) == 3
    assert unmask_rank(masked, b"not a member key") is None
    assert masked.to_hex().startswith(b"nonce-1".hex())
    with pytest.raises(InvalidInputError):
        mask_order(order + ["Z"], keys, b"n")


def test_broadcast_tokens_do_not_repeat_across_nonces():
    keys = {n: bytes([i]) * 16 for i, n in enumerate("ABCDE")}
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(10_000):
        masked = mask_order("ABCDE", keys, rng.bytes(16))
        for t in masked.tokens:
            assert t not in seen
            seen.add(t)
