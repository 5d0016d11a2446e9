"""SPN structure: nodes, validation, scopes, topological order and edge indexing."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import (
    CompletenessError,
    CycleError,
    DecomposabilityError,
    SpnValidationError,
    StructureError,
)

if TYPE_CHECKING:
    from .layers import Layers


class Kind(enum.Enum):
    SUM = "sum"
    PRODUCT = "prod"
    INDICATOR = "leaf"


@dataclass(frozen=True)
class Node:
    kind: Kind
    children: tuple[int, ...] = ()
    var: int = -1
    polarity: bool = True

    @classmethod
    def sum(cls, children: Iterable[int]) -> "Node":
        return cls(Kind.SUM, tuple(int(c) for c in children))

    @classmethod
    def product(cls, children: Iterable[int]) -> "Node":
        return cls(Kind.PRODUCT, tuple(int(c) for c in children))

    @classmethod
    def indicator(cls, var: int, polarity: bool) -> "Node":
        return cls(Kind.INDICATOR, (), int(var), bool(polarity))

    @property
    def is_sum(self) -> bool:
        return self.kind is Kind.SUM

    @property
    def is_product(self) -> bool:
        return self.kind is Kind.PRODUCT

    @property
    def is_leaf(self) -> bool:
        return self.kind is Kind.INDICATOR


@dataclass(frozen=True)
class Violation:
    kind: str
    node: int | None
    message: str

    def __str__(self) -> str:
        where = "" if self.node is None else f"node {self.node}: "
        return f"{where}{self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def add(self, kind: str, node: int | None, message: str) -> None:
        self.violations.append(Violation(kind, node, message))

    def raise_if_invalid(self) -> None:
        if self.ok:
            return
        first = self.violations[0]
        exc_type = {
            "cycle": CycleError,
            "incomplete": CompletenessError,
            "non_decomposable": DecomposabilityError,
        }.get(first.kind, SpnValidationError)
        raise exc_type(self)


def _bits(mask: int) -> frozenset[int]:
    out = []
    n = 0
    while mask:
        if mask & 1:
            out.append(n)
        mask >>= 1
        n += 1
    return frozenset(out)


class SpnGraph:
    """Rooted DAG of sum, product and indicator nodes over ``num_vars`` binary variables.

    Construction only records the structure; derived data (topological order,
    scopes, sum-edge indexing, evaluation layers) is computed on first use and
    requires the graph to be valid. Use :func:`validate` to get a report
    instead of an exception.
    """

    def __init__(self, nodes: Sequence[Node], root: int, num_vars: int):
        self.nodes: tuple[Node, ...] = tuple(nodes)
        self.root = int(root)
        self.num_vars = int(num_vars)

    def __len__(self) -> int:
        return len(self.nodes)

    def __repr__(self) -> str:
        return (
            f"SpnGraph(num_nodes={len(self.nodes)}, num_vars={self.num_vars}, "
            f"root={self.root})"
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SpnGraph):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.root == other.root
            and self.num_vars == other.num_vars
        )

    def __hash__(self) -> int:
        return hash((self.nodes, self.root, self.num_vars))

    # -- validation ---------------------------------------------------------

    @cached_property
    def report(self) -> ValidationReport:
        return _validate(self)

    def require_valid(self) -> "SpnGraph":
        self.report.raise_if_invalid()
        return self

    # -- derived structure --------------------------------------------------

    @cached_property
    def topo_order(self) -> tuple[int, ...]:
        """Post-order DFS from the root: every child precedes its parents."""
        self.require_valid()
        return tuple(_postorder(self.nodes, self.root))

    @cached_property
    def _scope_masks(self) -> list[int]:
        self.require_valid()
        return _scope_masks(self.nodes, self.topo_order)

    @cached_property
    def scopes(self) -> tuple[frozenset[int], ...]:
        return tuple(_bits(m) for m in self._scope_masks)

    def scope_of(self, v: int) -> frozenset[int]:
        if not 0 <= v < len(self.nodes):
            raise KeyError(f"unknown node id {v}")
        return self.scopes[v]

    @cached_property
    def sum_nodes(self) -> tuple[int, ...]:
        return tuple(v for v in self.topo_order if self.nodes[v].is_sum)

    @cached_property
    def edge_offsets(self) -> dict[int, int]:
        """Index of the first sum edge of every sum node; its edges are contiguous."""
        offsets, d = {}, 0
        for v in self.sum_nodes:
            offsets[v] = d
            d += len(self.nodes[v].children)
        return offsets

    @cached_property
    def num_edges(self) -> int:
        return sum(len(self.nodes[v].children) for v in self.sum_nodes)

    @cached_property
    def sum_edges(self) -> tuple[tuple[int, int], ...]:
        """``(sum node, child)`` pair for every edge index ``d``."""
        return tuple(
            (v, c) for v in self.sum_nodes for c in self.nodes[v].children
        )

    @cached_property
    def edge_parent(self) -> np.ndarray:
        return np.array([p for p, _ in self.sum_edges], dtype=np.intp)

    @cached_property
    def edge_child(self) -> np.ndarray:
        return np.array([c for _, c in self.sum_edges], dtype=np.intp)

    @cached_property
    def edge_group(self) -> np.ndarray:
        """Position of each edge's sum node within :attr:`sum_nodes`."""
        pos = {v: k for k, v in enumerate(self.sum_nodes)}
        return np.array([pos[p] for p, _ in self.sum_edges], dtype=np.intp)

    @cached_property
    def group_starts(self) -> np.ndarray:
        """First edge index of each sum node, in :attr:`sum_nodes` order."""
        return np.array([self.edge_offsets[v] for v in self.sum_nodes], dtype=np.intp)

    def edge_range(self, v: int) -> range:
        start = self.edge_offsets[v]
        return range(start, start + len(self.nodes[v].children))

    @cached_property
    def parents(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in self.nodes]
        for v in self.topo_order:
            for c in self.nodes[v].children:
                out[c].append(v)
        return tuple(tuple(p) for p in out)

    @cached_property
    def layers(self) -> "Layers":
        from .layers import compile_layers

        return compile_layers(self)

    def with_root(self, root: int) -> "SpnGraph":
        """Sub-SPN rooted at ``root``, renumbered densely in topological order."""
        keep = _postorder(self.nodes, root)
        remap = {old: new for new, old in enumerate(keep)}
        nodes = [
            Node(n.kind, tuple(remap[c] for c in n.children), n.var, n.polarity)
            for n in (self.nodes[v] for v in keep)
        ]
        return SpnGraph(nodes, remap[root], self.num_vars)


def _postorder(nodes: Sequence[Node], root: int) -> list[int]:
    seen = set()
    order: list[int] = []
    stack: list[tuple[int, int]] = [(root, 0)]
    seen.add(root)
    while stack:
        v, i = stack[-1]
        children = nodes[v].children
        if i < len(children):
            stack[-1] = (v, i + 1)
            c = children[i]
            if c not in seen:
                seen.add(c)
                stack.append((c, 0))
        else:
            stack.pop()
            order.append(v)
    return order


def _scope_masks(nodes: Sequence[Node], order: Iterable[int]) -> list[int]:
    masks = [0] * len(nodes)
    for v in order:
        node = nodes[v]
        if node.is_leaf:
            masks[v] = 1 << node.var
        else:
            m = 0
            for c in node.children:
                m |= masks[c]
            masks[v] = m
    return masks


def _find_cycle(nodes: Sequence[Node]) -> int | None:
    """Return a node on a directed cycle, or None."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = [WHITE] * len(nodes)
    for start in range(len(nodes)):
        if color[start] != WHITE:
            continue
        stack = [(start, 0)]
        color[start] = GREY
        while stack:
            v, i = stack[-1]
            children = nodes[v].children
            if i < len(children):
                stack[-1] = (v, i + 1)
                c = children[i]
                if color[c] == GREY:
                    return c
                if color[c] == WHITE:
                    color[c] = GREY
                    stack.append((c, 0))
            else:
                color[v] = BLACK
                stack.pop()
    return None


def _validate(graph: SpnGraph) -> ValidationReport:
    report = ValidationReport()
    nodes, n_nodes, n_vars = graph.nodes, len(graph.nodes), graph.num_vars

    if n_nodes == 0:
        report.add("empty", None, "graph has no nodes")
        return report
    if not 0 <= graph.root < n_nodes:
        report.add("bad_root", graph.root, f"root {graph.root} out of range")
        return report
    if n_vars < 1:
        report.add("bad_num_vars", None, f"num_vars must be >= 1, got {n_vars}")

    structural = False
    for v, node in enumerate(nodes):
        if node.is_leaf:
            if node.children:
                report.add("leaf_children", v, "indicator node has children")
                structural = True
            if not 0 <= node.var < n_vars:
                report.add("bad_variable", v, f"variable {node.var} outside [0, {n_vars})")
                structural = True
            continue
        if not node.children:
            report.add("empty_children", v, f"{node.kind.value} node has no children")
            structural = True
        if node.is_sum and len(set(node.children)) != len(node.children):
            report.add("duplicate_child", v, "sum node lists the same child twice")
        for c in node.children:
            if c == v:
                report.add("self_loop", v, "node lists itself as a child")
                structural = True
            elif not 0 <= c < n_nodes:
                report.add("bad_child", v, f"child {c} out of range")
                structural = True
    if structural:
        return report

    cyc = _find_cycle(nodes)
    if cyc is not None:
        report.add("cycle", cyc, "node lies on a directed cycle")
        return report

    order = _postorder(nodes, graph.root)
    reachable = set(order)
    for v in range(n_nodes):
        if v not in reachable:
            report.add("unreachable", v, "node is not reachable from the root")

    masks = _scope_masks(nodes, order)
    for v in order:
        node = nodes[v]
        if node.is_sum:
            first = masks[node.children[0]]
            for c in node.children[1:]:
                if masks[c] != first:
                    report.add(
                        "incomplete", v,
                        f"children {node.children[0]} and {c} have different scopes "
                        f"{sorted(_bits(first))} vs {sorted(_bits(masks[c]))}",
                    )
                    break
        elif node.is_product:
            acc = 0
            for c in node.children:
                if acc & masks[c]:
                    report.add(
                        "non_decomposable", v,
                        f"child {c} shares variables {sorted(_bits(acc & masks[c]))} "
                        "with an earlier sibling",
                    )
                    break
                acc |= masks[c]

    full = (1 << n_vars) - 1 if n_vars > 0 else 0
    if masks[graph.root] != full:
        missing = sorted(_bits(full & ~masks[graph.root]))
        report.add("root_scope", graph.root, f"root scope is missing variables {missing}")
    return report


def validate(graph: SpnGraph) -> ValidationReport:
    """Check structure, acyclicity, reachability, completeness and decomposability."""
    return graph.report


def scope_of(graph: SpnGraph, v: int) -> frozenset[int]:
    return graph.scope_of(v)


def check_weights(graph: SpnGraph, w, strict: bool = False) -> np.ndarray:
    """Coerce ``w`` to a float array of length D.

    Evaluation tolerates exact zeros (CCCP without smoothing can produce
    them); ``strict`` demands every entry be positive.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (graph.num_edges,):
        raise StructureError(
            f"weight vector has shape {w.shape}, expected ({graph.num_edges},)"
        )
    if not np.all(np.isfinite(w)):
        raise StructureError("weights must be finite")
    if strict and not np.all(w > 0):
        raise StructureError("weights must be strictly positive")
    if not np.all(w >= 0):
        raise StructureError("weights must be nonnegative")
    return w

