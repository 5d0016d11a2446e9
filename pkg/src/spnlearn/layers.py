"""Height-layered index arrays for vectorised evaluation.

Nodes are grouped by height (leaves at 0). Every child of a node at height h
sits strictly below h, so one numpy pass per layer evaluates a whole batch.
Children lists are padded to the layer's widest fan-out; padding points at a
sentinel row (index ``num_nodes``) whose log-value is 0 and, for sums, at a
sentinel edge (index ``num_edges``) whose log-weight is -inf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse


@dataclass(frozen=True)
class SumLayer:
    nodes: np.ndarray        # (S,)
    children: np.ndarray     # (S, K) padded with the sentinel node
    edges: np.ndarray        # (S, K) padded with the sentinel edge


@dataclass(frozen=True)
class ProductLayer:
    nodes: np.ndarray        # (P,)
    children: np.ndarray     # (P, K) padded with the sentinel node


@dataclass(frozen=True)
class Scatter:
    """Grouping of flattened (parent, child-slot) contributions by target child."""

    gather: np.ndarray       # flattened slots of real children, sorted by target
    starts: np.ndarray       # segment starts in the gathered order
    targets: np.ndarray      # unique target node per segment
    matrix: sparse.csr_matrix  # (len(targets), num_slots) 0/1 slot-to-target map


@dataclass(frozen=True)
class Layer:
    sums: SumLayer | None
    sum_scatter: Scatter | None
    products: ProductLayer | None
    prod_scatter: Scatter | None


@dataclass(frozen=True)
class Layers:
    num_nodes: int
    num_edges: int
    leaf_nodes: np.ndarray
    leaf_vars: np.ndarray
    leaf_polarity: np.ndarray
    internal: tuple[Layer, ...]   # increasing height


def _pad(rows: list[tuple[int, ...]], fill: int) -> np.ndarray:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), fill, dtype=np.intp)
    for k, r in enumerate(rows):
        out[k, : len(r)] = r
    return out


def _scatter(children: np.ndarray, sentinel: int) -> Scatter:
    flat = children.ravel()
    slots = np.flatnonzero(flat != sentinel)
    slots = slots[np.argsort(flat[slots], kind="stable")]
    sorted_targets = flat[slots]
    starts = np.flatnonzero(np.r_[True, sorted_targets[1:] != sorted_targets[:-1]])
    targets = sorted_targets[starts]
    rows = np.searchsorted(targets, sorted_targets)
    matrix = sparse.csr_matrix(
        (np.ones(len(slots)), (rows, slots)), shape=(len(targets), flat.size)
    )
    return Scatter(slots, starts, targets, matrix)


def compile_layers(graph) -> Layers:
    nodes = graph.nodes
    n = len(nodes)
    sentinel_node, sentinel_edge = n, graph.num_edges

    height = [0] * n
    for v in graph.topo_order:
        ch = nodes[v].children
        if ch:
            height[v] = 1 + max(height[c] for c in ch)

    leaves = [v for v in graph.topo_order if nodes[v].is_leaf]
    by_height: dict[int, list[int]] = {}
    for v in graph.topo_order:
        if not nodes[v].is_leaf:
            by_height.setdefault(height[v], []).append(v)

    internal = []
    for h in sorted(by_height):
        vs = by_height[h]
        sums = [v for v in vs if nodes[v].is_sum]
        prods = [v for v in vs if nodes[v].is_product]
        sum_layer = sum_scatter = prod_layer = prod_scatter = None
        if sums:
            ch = _pad([nodes[v].children for v in sums], sentinel_node)
            ed = _pad([tuple(graph.edge_range(v)) for v in sums], sentinel_edge)
            sum_layer = SumLayer(np.array(sums, dtype=np.intp), ch, ed)
            sum_scatter = _scatter(ch, sentinel_node)
        if prods:
            ch = _pad([nodes[v].children for v in prods], sentinel_node)
            prod_layer = ProductLayer(np.array(prods, dtype=np.intp), ch)
            prod_scatter = _scatter(ch, sentinel_node)
        internal.append(Layer(sum_layer, sum_scatter, prod_layer, prod_scatter))

    return Layers(
        num_nodes=n,
        num_edges=graph.num_edges,
        leaf_nodes=np.array(leaves, dtype=np.intp),
        leaf_vars=np.array([nodes[v].var for v in leaves], dtype=np.intp),
        leaf_polarity=np.array([nodes[v].polarity for v in leaves], dtype=bool),
        internal=tuple(internal),
    )
