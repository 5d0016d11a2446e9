"""Text formats, datasets, random structures and curve export.

SPN file grammar (one statement per line, ``#`` starts a comment)::

    spn <num_vars> <num_nodes>
    node <id> leaf <var> <0|1>          # 1 = I[x], 0 = I[not x]
    node <id> prod <child_id>+
    node <id> sum (<child_id>:<weight>)+
    root <id>

Ids are dense, 0-based and declared in increasing order; a node may only
reference ids declared before it. Weights are written as shortest
round-trip decimals, so parse(serialize(g, w)) is exact. Weights must be
nonnegative; training from a file needs them strictly positive.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, SpnValidationError, StructureError
from .graph import Kind, Node, SpnGraph, check_weights
from .learn import TrainRun, normalize_locally


# -- SPN text format ---------------------------------------------------------

def _tokens(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _int(tok: str, lineno: int, what: str) -> int:
    try:
        val = int(tok)
    except ValueError:
        raise ParseError(f"expected integer {what}, got {tok!r}", lineno) from None
    if val < 0:
        raise ParseError(f"{what} must be nonnegative, got {val}", lineno)
    return val


def _weight(tok: str, lineno: int) -> float:
    try:
        val = float(tok)
    except ValueError:
        raise ParseError(f"expected a decimal weight, got {tok!r}", lineno) from None
    # zero is allowed: unsmoothed CCCP can drive a weight to exactly 0
    if not (np.isfinite(val) and val >= 0):
        raise ParseError(f"weights must be nonnegative and finite, got {tok!r}", lineno)
    return val


def parse_spn(text: str) -> tuple[SpnGraph, np.ndarray]:
    """Parse and validate an SPN file; returns the graph and its weight vector."""
    lines = list(_tokens(text))
    if not lines:
        raise ParseError("empty SPN file", 1)

    lineno, head = lines[0]
    if head[0] != "spn" or len(head) != 3:
        raise ParseError("first statement must be 'spn <num_vars> <num_nodes>'", lineno)
    num_vars = _int(head[1], lineno, "num_vars")
    num_nodes = _int(head[2], lineno, "num_nodes")

    nodes: list[Node] = []
    node_weights: list[list[float]] = []
    node_line: dict[int, int] = {}
    root = None
    for lineno, toks in lines[1:]:
        if root is not None:
            raise ParseError("statements after 'root'", lineno)
        if toks[0] == "root":
            if len(toks) != 2:
                raise ParseError("expected 'root <id>'", lineno)
            root = _int(toks[1], lineno, "root id")
            if root >= len(nodes):
                raise ParseError(f"root {root} is not a declared node", lineno)
            continue
        if toks[0] != "node" or len(toks) < 3:
            raise ParseError(f"unknown statement {toks[0]!r}", lineno)
        nid = _int(toks[1], lineno, "node id")
        if nid != len(nodes):
            raise ParseError(f"expected node id {len(nodes)}, got {nid}", lineno)
        kind, args = toks[2], toks[3:]
        weights: list[float] = []
        if kind == "leaf":
            if len(args) != 2 or args[1] not in ("0", "1"):
                raise ParseError("expected 'leaf <var> <0|1>'", lineno)
            var = _int(args[0], lineno, "variable")
            if var >= num_vars:
                raise ParseError(f"variable {var} outside [0, {num_vars})", lineno)
            node = Node.indicator(var, args[1] == "1")
        elif kind in ("prod", "sum"):
            if not args:
                raise ParseError(f"{kind} node needs at least one child", lineno)
            children = []
            for tok in args:
                if kind == "sum":
                    cid, sep, wt = tok.partition(":")
                    if not sep:
                        raise ParseError(f"sum child must be '<id>:<weight>', got {tok!r}", lineno)
                    weights.append(_weight(wt, lineno))
                else:
                    cid = tok
                c = _int(cid, lineno, "child id")
                if c >= nid:
                    raise ParseError(f"child {c} is not declared before node {nid}", lineno)
                children.append(c)
            node = Node.sum(children) if kind == "sum" else Node.product(children)
        else:
            raise ParseError(f"unknown node kind {kind!r}", lineno)
        nodes.append(node)
        node_weights.append(weights)
        node_line[nid] = lineno

    if root is None:
        raise ParseError("missing 'root' statement", lines[-1][0])
    if len(nodes) != num_nodes:
        raise ParseError(f"header declares {num_nodes} nodes, file has {len(nodes)}", lines[0][0])

    graph = SpnGraph(nodes, root, num_vars)
    try:
        graph.require_valid()
    except SpnValidationError as exc:
        exc.line = node_line.get(exc.node)
        if exc.line is not None:
            exc.args = (f"line {exc.line}: {exc.args[0]}",)
        raise
    w = np.array([x for v in graph.sum_nodes for x in node_weights[v]], dtype=np.float64)
    return graph, w


def serialize_spn(graph: SpnGraph, w=None) -> str:
    """Write ``graph`` in file order (node ids as-is); ``w`` defaults to all ones."""
    graph.require_valid()
    w = np.ones(graph.num_edges) if w is None else check_weights(graph, w)
    if any(c > v for v, n in enumerate(graph.nodes) for c in n.children):
        raise StructureError("node ids must be topologically ordered to serialise; renumber first")
    out = [f"spn {graph.num_vars} {len(graph.nodes)}"]
    for v, node in enumerate(graph.nodes):
        if node.kind is Kind.INDICATOR:
            out.append(f"node {v} leaf {node.var} {int(node.polarity)}")
        elif node.kind is Kind.PRODUCT:
            out.append(f"node {v} prod " + " ".join(map(str, node.children)))
        else:
            start = graph.edge_offsets[v]
            parts = [f"{c}:{float(w[start + k])!r}" for k, c in enumerate(node.children)]
            out.append(f"node {v} sum " + " ".join(parts))
    out.append(f"root {graph.root}")
    return "\n".join(out) + "\n"


def load_spn(path) -> tuple[SpnGraph, np.ndarray]:
    return parse_spn(Path(path).read_text())


def save_spn(path, graph: SpnGraph, w=None) -> None:
    Path(path).write_text(serialize_spn(graph, w))


def parse_weights(text: str, graph: SpnGraph) -> np.ndarray:
    """Weights-only file: ``weights <D>`` then one decimal per line in edge order."""
    lines = list(_tokens(text))
    if not lines:
        raise ParseError("empty weights file", 1)
    lineno, head = lines[0]
    if head[0] != "weights" or len(head) != 2:
        raise ParseError("first statement must be 'weights <D>'", lineno)
    d = _int(head[1], lineno, "D")
    if d != graph.num_edges:
        raise ParseError(f"file has {d} weights, model has {graph.num_edges} sum edges", lineno)
    vals = []
    for lineno, toks in lines[1:]:
        if len(toks) != 1:
            raise ParseError("expected one weight per line", lineno)
        vals.append(_weight(toks[0], lineno))
    if len(vals) != d:
        raise ParseError(f"header declares {d} weights, found {len(vals)}", lines[-1][0])
    return np.array(vals)


def serialize_weights(w) -> str:
    w = np.asarray(w, dtype=np.float64)
    return "\n".join([f"weights {len(w)}"] + [repr(float(x)) for x in w]) + "\n"


# -- datasets ---------------------------------------------------------------

@dataclass
class Dataset:
    rows: np.ndarray
    source: str | None = None

    @property
    def num_vars(self) -> int:
        return self.rows.shape[1]

    @property
    def num_instances(self) -> int:
        return self.rows.shape[0]

    def __len__(self) -> int:
        return self.num_instances


def parse_dataset(text: str, source: str | None = None) -> Dataset:
    rows = []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        toks = line.split(",")
        for col, tok in enumerate(toks, start=1):
            if tok.strip() not in ("0", "1"):
                raise ParseError(f"non-binary token {tok.strip()!r}", lineno, col)
        if width is None:
            width = len(toks)
        elif len(toks) != width:
            raise ParseError(f"row has {len(toks)} values, expected {width}", lineno)
        rows.append([tok.strip() == "1" for tok in toks])
    if not rows:
        raise ParseError("dataset is empty", 1)
    return Dataset(np.array(rows, dtype=np.int8), source)


def load_dataset(path) -> Dataset:
    """Read comma-separated 0/1 rows, one instance per line, no header."""
    return parse_dataset(Path(path).read_text(), source=os.fspath(path))


def format_dataset(data) -> str:
    X = np.asarray(getattr(data, "rows", data))
    return "".join(",".join(str(int(v)) for v in row) + "\n" for row in X)


def write_dataset(data, path) -> None:
    Path(path).write_text(format_dataset(data))


# -- random structures and synthetic data -------------------------------------

def generate_random_spn(
    num_vars: int,
    depth: int,
    sum_fanout: int = 2,
    prod_fanout: int = 2,
    seed: int = 0,
) -> SpnGraph:
    """Alternating sum/product layers over a recursively partitioned scope.

    Each of the ``depth`` sum layers has ``sum_fanout`` product children;
    a product splits its scope into up to ``prod_fanout`` random disjoint
    parts. A single variable becomes a sum over its two indicators; when the
    depth runs out, a multi-variable scope contributes one such sum per
    variable to the enclosing product.
    Indicator leaves are shared across the whole network.
    """
    if num_vars < 1 or depth < 0 or sum_fanout < 1 or prod_fanout < 1:
        raise ValueError("need num_vars >= 1, depth >= 0 and fan-outs >= 1")
    rng = np.random.default_rng(seed)
    nodes: list[Node] = []
    leaf_ids: dict[tuple[int, bool], int] = {}

    def add(node: Node) -> int:
        nodes.append(node)
        return len(nodes) - 1

    def leaf(var: int, pol: bool) -> int:
        if (var, pol) not in leaf_ids:
            leaf_ids[(var, pol)] = add(Node.indicator(var, pol))
        return leaf_ids[(var, pol)]

    def univariate(var: int) -> int:
        return add(Node.sum([leaf(var, True), leaf(var, False)]))

    def region(scope: list[int], d: int) -> list[int]:
        # ids to place under the enclosing product; keeps layers strictly alternating
        if len(scope) == 1:
            return [univariate(scope[0])]
        if d == 0:
            return [univariate(v) for v in scope]
        prods = []
        for _ in range(sum_fanout):
            perm = [scope[i] for i in rng.permutation(len(scope))]
            k = min(prod_fanout, len(scope))
            cuts = np.sort(rng.choice(np.arange(1, len(scope)), size=k - 1, replace=False)) if k > 1 else []
            kids = []
            for part in np.split(np.array(perm), cuts):
                kids.extend(region(sorted(part.tolist()), d - 1))
            prods.append(add(Node.product(kids)))
        return [add(Node.sum(prods))]

    top = region(list(range(num_vars)), depth)
    root = top[0] if len(top) == 1 else add(Node.product(top))
    return SpnGraph(nodes, root, num_vars).require_valid()


def sample_instances(graph: SpnGraph, w, n: int, seed: int = 0) -> np.ndarray:
    """Draw ``n`` complete assignments from the distribution of (graph, w)."""
    wn = normalize_locally(graph, w)
    rng = np.random.default_rng(seed)
    cum = {v: np.cumsum(wn[graph.edge_range(v)]) for v in graph.sum_nodes}
    out = np.zeros((n, graph.num_vars), dtype=np.int8)
    for i in range(n):
        stack = [graph.root]
        while stack:
            v = stack.pop()
            node = graph.nodes[v]
            if node.is_leaf:
                out[i, node.var] = int(node.polarity)
            elif node.is_sum:
                c = cum[v]
                k = min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), len(c) - 1)
                stack.append(node.children[k])
            else:
                stack.extend(node.children)
    return out


# -- training curves ----------------------------------------------------------

CURVE_HEADER = ("iteration", "train_ll", "gamma_accepted", "wall_ms")


def export_curve(run: TrainRun, path, timing: bool = True) -> None:
    """CSV of the training curve; ``timing=False`` leaves wall_ms empty for reproducible output."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for k, (ll, gamma, ms) in enumerate(zip(run.ll_curve, run.gammas, run.wall_ms)):
            writer.writerow([
                k,
                repr(float(ll)),
                "" if gamma is None else repr(float(gamma)),
                f"{ms:.3f}" if timing else "",
            ])


def read_curve(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
