"""Random SPN factories and brute-force oracles for the test-suite.

The oracles deliberately share no code with the library's evaluator: they
walk ``graph.nodes`` with their own recursion, work in linear space, and
never touch the layered index arrays.
"""

from __future__ import annotations

import itertools

import numpy as np

from spnlearn.graph import Node, SpnGraph


# -- random structures ----------------------------------------------------------

def random_dag_spn(rng: np.random.Generator, num_vars: int, steps: int = 8, max_fan: int = 3) -> SpnGraph:
    """Random valid SPN with shared sub-DAGs, built bottom-up from a scope pool."""
    nodes: list[Node] = []
    by_scope: dict[frozenset, list[int]] = {}

    def add(node: Node, scope: frozenset) -> int:
        nodes.append(node)
        by_scope.setdefault(scope, []).append(len(nodes) - 1)
        return len(nodes) - 1

    for v in range(num_vars):
        for pol in (True, False):
            add(Node.indicator(v, pol), frozenset([v]))

    for _ in range(steps):
        scopes = list(by_scope)
        if rng.random() < 0.5:
            scope = scopes[rng.integers(len(scopes))]
            pool = by_scope[scope]
            k = int(rng.integers(1, min(max_fan, len(pool)) + 1))
            kids = rng.choice(pool, size=k, replace=False).tolist()
            add(Node.sum(kids), scope)
        else:
            order = rng.permutation(len(scopes))
            used: frozenset = frozenset()
            kids = []
            for i in order:
                s = scopes[i]
                if not (s & used):
                    pool = by_scope[s]
                    kids.append(int(pool[rng.integers(len(pool))]))
                    used |= s
                if len(kids) == max_fan or rng.random() < 0.3:
                    break
            if len(kids) >= 2:
                add(Node.product(kids), used)

    full = frozenset(range(num_vars))
    for _ in range(int(rng.integers(1, 3))):
        # cover every variable with disjoint pieces to get full-scope candidates
        used, kids = frozenset(), []
        for i in rng.permutation(len(by_scope)):
            s = list(by_scope)[i]
            if len(s) < num_vars and not (s & used) and rng.random() < 0.7:
                pool = by_scope[s]
                kids.append(int(pool[rng.integers(len(pool))]))
                used |= s
        for v in range(num_vars):
            if v not in used:
                pool = by_scope[frozenset([v])]
                kids.append(int(pool[rng.integers(len(pool))]))
                used |= {v}
        if len(kids) >= 2:
            add(Node.product(kids), full)
    pool = by_scope[full]
    k = int(rng.integers(1, min(max_fan, len(pool)) + 1))
    kids = rng.choice(pool, size=k, replace=False).tolist()
    root = add(Node.sum(kids), full)
    return SpnGraph(nodes, 0, num_vars).with_root(root)


def random_weights(rng: np.random.Generator, graph: SpnGraph, low: float = 0.05, high: float = 2.0) -> np.ndarray:
    return rng.uniform(low, high, size=graph.num_edges)


def all_assignments(n: int) -> np.ndarray:
    return np.array(list(itertools.product([0, 1], repeat=n)), dtype=np.int8)


# -- structural oracles -----------------------------------------------------------

def brute_scope(graph: SpnGraph, v: int) -> frozenset:
    node = graph.nodes[v]
    if node.is_leaf:
        return frozenset([node.var])
    return frozenset().union(*(brute_scope(graph, c) for c in node.children))


def brute_is_valid(graph: SpnGraph) -> bool:
    """Completeness and decomposability straight from the definitions (acyclic input)."""
    for v, node in enumerate(graph.nodes):
        scopes = [brute_scope(graph, c) for c in node.children]
        if node.is_sum and any(s != scopes[0] for s in scopes):
            return False
        if node.is_product:
            for a, b in itertools.combinations(scopes, 2):
                if a & b:
                    return False
    return brute_scope(graph, graph.root) == frozenset(range(graph.num_vars))


# -- numerical oracles --------------------------------------------------------------

def _edge_weight(graph: SpnGraph, w, v: int, k: int) -> float:
    # edge index of the k-th child of sum node v, recomputed from sum_edges
    return float(w[graph.sum_edges.index((v, graph.nodes[v].children[k]))])


def naive_value(graph: SpnGraph, w, x, override: dict | None = None) -> list[float]:
    """Linear-space f_v(x|w) for every node by memoised recursion.

    ``override`` maps node id -> value used in place of the computed value,
    which lets tests treat any node as a free input.
    """
    override = override or {}
    edge = {e: d for d, e in enumerate(graph.sum_edges)}
    memo: dict[int, float] = {}

    def f(v: int) -> float:
        if v in override:
            return override[v]
        if v in memo:
            return memo[v]
        node = graph.nodes[v]
        if node.is_leaf:
            xv = x[node.var]
            out = 1.0 if xv == -1 or xv == int(node.polarity) else 0.0
        elif node.is_sum:
            out = sum(float(w[edge[(v, c)]]) * f(c) for c in node.children)
        else:
            out = 1.0
            for c in node.children:
                out *= f(c)
        memo[v] = out
        return out

    root_val = f(graph.root)
    return [override.get(v, memo.get(v, np.nan)) if v != graph.root else root_val
            for v in range(len(graph.nodes))]


def naive_root(graph: SpnGraph, w, x, override: dict | None = None) -> float:
    return naive_value(graph, w, x, override)[graph.root]


def brute_partition(graph: SpnGraph, w) -> float:
    return sum(naive_root(graph, w, x) for x in all_assignments(graph.num_vars))


def fd_node_derivative(graph: SpnGraph, w, x, v: int, rel: float = 1e-6) -> float:
    """Central difference of f_S in the value of node v, with v held as a free input."""
    base = naive_value(graph, w, x)[v]
    h = rel * max(abs(base), 1.0)
    up = naive_root(graph, w, x, {v: base + h})
    dn = naive_root(graph, w, x, {v: base - h})
    return (up - dn) / (2 * h)


def _postorder(graph: SpnGraph) -> list[int]:
    seen, order = set(), []

    def visit(v):
        if v in seen:
            return
        seen.add(v)
        for c in graph.nodes[v].children:
            visit(c)
        order.append(v)

    visit(graph.root)
    return order


def linear_em_step(graph: SpnGraph, w, X, smoothing: float = 0.0) -> np.ndarray:
    """Textbook EM: posterior responsibilities of every sum-node child, summed and renormalised.

    Vectorised over instances but walked node by node in linear space with
    explicit parent-to-child derivative accumulation.
    """
    X = np.asarray(X)
    m = X.shape[0]
    order = _postorder(graph)
    edge = {e: d for d, e in enumerate(graph.sum_edges)}
    val: dict[int, np.ndarray] = {}
    for v in order:
        node = graph.nodes[v]
        if node.is_leaf:
            col = X[:, node.var]
            val[v] = ((col == -1) | (col == int(node.polarity))).astype(float)
        elif node.is_sum:
            val[v] = sum(w[edge[(v, c)]] * val[c] for c in node.children)
        else:
            acc = np.ones(m)
            for c in node.children:
                acc = acc * val[c]
            val[v] = acc
    der = {v: np.zeros(m) for v in order}
    der[graph.root] = np.ones(m)
    for v in reversed(order):
        node = graph.nodes[v]
        if node.is_sum:
            for c in node.children:
                der[c] = der[c] + w[edge[(v, c)]] * der[v]
        elif node.is_product:
            for c in node.children:
                others = np.ones(m)
                for h in node.children:
                    if h != c:
                        others = others * val[h]
                der[c] = der[c] + der[v] * others
    root = val[graph.root]
    counts = np.zeros(graph.num_edges)
    for (v, c), d in edge.items():
        counts[d] = np.sum(w[d] * val[c] * der[v] / root)
    counts = counts + smoothing
    out = np.empty_like(counts)
    for v in {p for p, _ in graph.sum_edges}:
        ds = [edge[(v, c)] for c in graph.nodes[v].children]
        total = counts[ds].sum()
        # a sum node no instance reaches keeps its (renormalised) weights
        out[ds] = counts[ds] / total if total > 0 else w[ds] / np.sum(w[ds])
    return out
