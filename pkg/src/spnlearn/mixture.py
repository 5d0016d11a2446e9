"""Induced trees: exact counting, enumeration and per-tree monomial values.

A complete, decomposable SPN is a mixture of its induced trees. Each tree
picks one child at every sum node it reaches and keeps every child of every
product node, and its value is the product of the chosen edge weights times
its leaf indicators. These routines enumerate that mixture explicitly, which
is only feasible for small networks; they exist as an oracle for the
linear-time evaluator.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import StructureError, TooManyTreesError
from .graph import Node, SpnGraph, check_weights
from .inference import MARGINALIZED, as_assignments


@dataclass(frozen=True)
class Cardinality:
    exact: int
    log_approx: float

    @property
    def log10(self) -> float:
        return self.log_approx / math.log(10)


@dataclass(frozen=True)
class InducedTree:
    chosen_child: dict[int, int]
    edge_set: frozenset[tuple[int, int]]
    nodes: frozenset[int]

    @property
    def sum_edges(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(self.chosen_child.items()))

    def leaves(self, graph: SpnGraph) -> list[int]:
        return sorted(v for v in self.nodes if graph.nodes[v].is_leaf)


def cardinality(graph: SpnGraph) -> Cardinality:
    """Number of induced trees: f_S(1|1) with unit weights, in exact integers."""
    graph.require_valid()
    count = [0] * len(graph.nodes)
    for v in graph.topo_order:
        node = graph.nodes[v]
        if node.is_leaf:
            count[v] = 1
        elif node.is_sum:
            count[v] = sum(count[c] for c in node.children)
        else:
            count[v] = math.prod(count[c] for c in node.children)
    exact = count[graph.root]
    return Cardinality(exact, math.log(exact))


def _subtrees(graph: SpnGraph, v: int, memo: dict) -> list[tuple]:
    """All induced sub-trees under ``v`` as tuples of (sum node, chosen child)."""
    if v in memo:
        return memo[v]
    node = graph.nodes[v]
    if node.is_leaf:
        out = [()]
    elif node.is_sum:
        out = []
        for c in node.children:
            for sub in _subtrees(graph, c, memo):
                out.append(((v, c),) + sub)
    else:
        out = []
        for combo in itertools.product(*(_subtrees(graph, c, memo) for c in node.children)):
            out.append(tuple(e for part in combo for e in part))
    memo[v] = out
    return out


def _tree_from_choices(graph: SpnGraph, choices: tuple) -> InducedTree:
    chosen = dict(choices)
    nodes, edges = set(), set()
    stack = [graph.root]
    while stack:
        v = stack.pop()
        nodes.add(v)
        node = graph.nodes[v]
        kids = (chosen[v],) if node.is_sum else node.children
        for c in kids:
            edges.add((v, c))
            stack.append(c)
    return InducedTree(chosen, frozenset(edges), frozenset(nodes))


def enumerate_trees(graph: SpnGraph, limit: int = 10_000) -> Iterator[InducedTree]:
    """Yield every unique induced tree once, ordered lexicographically by child choice.

    Raises TooManyTreesError before yielding anything if the cardinality
    exceeds ``limit``.
    """
    card = cardinality(graph).exact
    if card > limit:
        raise TooManyTreesError(card, limit)
    seen: set[frozenset] = set()
    for choices in _subtrees(graph, graph.root, {}):
        tree = _tree_from_choices(graph, choices)
        if tree.edge_set in seen:
            continue
        seen.add(tree.edge_set)
        yield tree


def _check_tree(graph: SpnGraph, tree: InducedTree) -> None:
    for v, c in tree.chosen_child.items():
        if not (0 <= v < len(graph.nodes)) or c not in graph.nodes[v].children:
            raise StructureError(f"tree edge ({v}, {c}) is not a sum edge of the graph")


def tree_log_weight(graph: SpnGraph, tree: InducedTree, w) -> float:
    """Sum of log w over the tree's sum edges (the monomial's coefficient)."""
    w = check_weights(graph, w)
    _check_tree(graph, tree)
    total = 0.0
    for v, c in tree.chosen_child.items():
        d = graph.edge_offsets[v] + graph.nodes[v].children.index(c)
        total += math.log(w[d])
    return total


def tree_values(graph: SpnGraph, tree: InducedTree, w, X) -> np.ndarray:
    """Tree monomial at each assignment of a batch, in linear space."""
    X, _ = as_assignments(graph, X)
    coeff = math.exp(tree_log_weight(graph, tree, w))
    alive = np.ones(X.shape[0], dtype=bool)
    for v in tree.leaves(graph):
        leaf = graph.nodes[v]
        col = X[:, leaf.var]
        alive &= (col == MARGINALIZED) | (col == int(leaf.polarity))
    return np.where(alive, coeff, 0.0)


def tree_value(graph: SpnGraph, tree: InducedTree, w, x) -> float:
    """Product of the tree's edge weights and its leaf indicators at ``x``."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise StructureError("tree_value takes a single assignment; use tree_values")
    return float(tree_values(graph, tree, w, x[None, :])[0])


def tree_graph(graph: SpnGraph, tree: InducedTree) -> tuple[SpnGraph, np.ndarray]:
    """The induced tree as a standalone SPN, with its (single-child) sum weights' positions.

    Returns the new graph and, for each of its sum edges, the index of the
    corresponding edge in the parent graph, so that weights can be carried over
    via ``w[index]``.
    """
    keep = [v for v in graph.topo_order if v in tree.nodes]
    remap = {old: new for new, old in enumerate(keep)}
    nodes = []
    for v in keep:
        n = graph.nodes[v]
        if n.is_sum:
            nodes.append(Node.sum([remap[tree.chosen_child[v]]]))
        elif n.is_product:
            nodes.append(Node.product(remap[c] for c in n.children))
        else:
            nodes.append(n)
    sub = SpnGraph(nodes, remap[graph.root], graph.num_vars)
    index = []
    for v in sub.sum_nodes:
        old = keep[v]
        index.append(graph.edge_offsets[old] + graph.nodes[old].children.index(tree.chosen_child[old]))
    return sub, np.array(index, dtype=np.intp)
