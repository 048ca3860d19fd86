"""Leakage-aware group ordering: min-max spanning trees and masked rank broadcast."""

from __future__ import annotations

import hashlib
import hmac
import itertools
from dataclasses import dataclass, field

import numpy as np

from .adversary import AdvantageGraph
from .errors import IncompleteMapError, InvalidInputError, NoSpanningTreeError
from .protocol import run_group_session

TOKEN_BYTES = 16


def build_advantage_graph(group, source) -> AdvantageGraph:
    """Induced subgraph of pairwise advantages over ``group``.

    ``source`` is an :class:`AdvantageGraph`, a mapping keyed by node pairs,
    or a callable ``source(a, b) -> d``.
    """
    group = list(group)
    if len(set(group)) != len(group):
        raise InvalidInputError("group members must be distinct")
    weights = {}
    for a, b in itertools.combinations(group, 2):
        try:
            if isinstance(source, AdvantageGraph):
                w = source.weight(a, b)
            elif callable(source):
                w = source(a, b)
            else:
                w = source[frozenset((a, b))] if frozenset((a, b)) in source else source[(a, b)]
        except KeyError:
            raise IncompleteMapError(f"no advantage known for pair {a}-{b}") from None
        weights[frozenset((a, b))] = float(w)
    generalized = {}
    if isinstance(source, AdvantageGraph):
        generalized = {k: v for k, v in source.generalized.items() if k <= set(group)}
    return AdvantageGraph(group, weights, generalized)


class _UnionFind:
    def __init__(self, items):
        self.parent = {i: i for i in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


@dataclass
class OrderTree:
    """A spanning tree over the group, rooted where the key agreement starts."""

    root: str
    parent: dict
    edges: list = field(default_factory=list)

    @property
    def members(self) -> list[str]:
        return [self.root] + [n for n in self.parent if n != self.root]

    def order(self) -> list[str]:
        """Breadth-first order: every node comes after its parent."""
        children = {}
        for child, par in self.parent.items():
            children.setdefault(par, []).append(child)
        out, queue = [], [self.root]
        while queue:
            n = queue.pop(0)
            out.append(n)
            queue.extend(sorted(children.get(n, [])))
        return out

    def sessions(self) -> list[tuple[str, str]]:
        """(already keyed parent, new child) pairs in execution order."""
        return [(self.parent[n], n) for n in self.order()[1:]]

    def max_edge(self, graph: AdvantageGraph) -> float:
        return max((graph.weight(a, b) for a, b in self.sessions()), default=0.0)


def _edge_key(a, b, w):
    return (w, *sorted((a, b)))


def min_max_spanning_tree(graph: AdvantageGraph) -> OrderTree:
    """Kruskal's MST (ties broken by node ids); every MST is also min-max."""
    nodes = list(graph.nodes)
    if len(nodes) < 2:
        raise InvalidInputError("a spanning tree needs at least two nodes")
    uf = _UnionFind(nodes)
    chosen = []
    for a, b, w in sorted(graph.edges(), key=lambda e: _edge_key(*e)):
        if uf.union(a, b):
            chosen.append((a, b, w))
    if len(chosen) != len(nodes) - 1:
        raise NoSpanningTreeError("the advantage graph is disconnected")
    load = {n: 0.0 for n in nodes}
    for a, b, w in chosen:
        load[a] += w
        load[b] += w
    root = min(nodes, key=lambda n: (load[n], n))
    adj = {n: [] for n in nodes}
    for a, b, _ in chosen:
        adj[a].append(b)
        adj[b].append(a)
    parent, stack = {}, [root]
    seen = {root}
    while stack:
        n = stack.pop()
        for m in sorted(adj[n]):
            if m not in seen:
                seen.add(m)
                parent[m] = n
                stack.append(m)
    return OrderTree(root, parent, [(a, b) for a, b, _ in chosen])


def chain_tree(order) -> OrderTree:
    """The linear chain ``order[0] - order[1] - ...`` as an OrderTree."""
    order = list(order)
    parent = {order[i + 1]: order[i] for i in range(len(order) - 1)}
    return OrderTree(order[0], parent, [(order[i], order[i + 1]) for i in range(len(order) - 1)])


def prufer_trees(n: int):
    """All labelled trees on ``range(n)`` as edge lists (Cayley: n^(n-2) of them)."""
    if n < 2:
        return
    if n == 2:
        yield [(0, 1)]
        return
    for seq in itertools.product(range(n), repeat=n - 2):
        degree = [1] * n
        for x in seq:
            degree[x] += 1
        edges = []
        for x in seq:
            leaf = min(i for i in range(n) if degree[i] == 1)
            edges.append((leaf, x))
            degree[leaf] -= 1
            degree[x] -= 1
        u, v = [i for i in range(n) if degree[i] == 1]
        edges.append((u, v))
        yield edges


def brute_force_min_max(graph: AdvantageGraph) -> float:
    """Smallest possible maximum edge weight over every spanning tree."""
    nodes = list(graph.nodes)
    best = np.inf
    for edges in prufer_trees(len(nodes)):
        try:
            worst = max(graph.weight(nodes[a], nodes[b]) for a, b in edges)
        except KeyError:
            continue
        best = min(best, worst)
    if not np.isfinite(best):
        raise NoSpanningTreeError("the advantage graph is disconnected")
    return float(best)


def run_group_key_tree(tree: OrderTree, seeds, bus=None, **kwargs) -> dict:
    """GroupKey-Tree: every non-root node runs PnS with its already-keyed parent.

    The root's seed starts the first session; each later session is
    primed with the running group key, so after K - 1 sessions every member
    holds the same key.
    """
    sessions = tree.sessions()
    if not sessions:
        raise InvalidInputError("tree has no edges")
    running = None
    holders = [tree.root]
    keys = {}
    for par, child in sessions:
        # earlier key holders first, then the active pair: the same shape a
        # linear chain presents to system-level cooperation
        chain = [h for h in holders if h != par] + [par, child]
        holders = holders + [child]
        running, keys, _ = run_group_session(par, child, running, seeds, holders, bus=bus,
                                             chain=chain, position=len(chain) - 1, **kwargs)
    return keys


@dataclass
class MaskedOrder:
    nonce: bytes
    tokens: list[bytes]

    def to_hex(self) -> str:
        return self.nonce.hex() + "".join(t.hex() for t in self.tokens)


def _token(key: bytes, nonce: bytes) -> bytes:
    return hmac.new(bytes(key), nonce, hashlib.sha256).digest()[:TOKEN_BYTES]


def mask_order(order, keys: dict, nonce: bytes) -> MaskedOrder:
    """Gateway broadcast ``nonce || f(k_1, nonce) || f(k_2, nonce) || ...``."""
    missing = [n for n in order if n not in keys]
    if missing:
        raise InvalidInputError(f"no gateway key for {missing}")
    return MaskedOrder(bytes(nonce), [_token(keys[n], nonce) for n in order])


def unmask_rank(masked: MaskedOrder, own_key: bytes) -> int | None:
    """1-based position of the holder of ``own_key``, or None if not in the group."""
    mine = _token(own_key, masked.nonce)
    for i, t in enumerate(masked.tokens):
        if hmac.compare_digest(t, mine):
            return i + 1
    return None
