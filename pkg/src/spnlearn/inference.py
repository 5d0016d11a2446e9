"""Log-space evaluation and differentiation of the network polynomial.

Assignments are integer arrays over ``{0, 1, MARGINALIZED}``. A marginalised
variable sets both of its indicators to 1. Every function accepts a single
assignment of shape ``(N,)`` or a batch of shape ``(B, N)``; traces mirror
that shape as ``(num_nodes,)`` or ``(num_nodes, B)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StructureError
from .graph import SpnGraph, check_weights
from .layers import Layers, Scatter

MARGINALIZED = -1


@dataclass
class EvalTrace:
    log_value: np.ndarray
    log_deriv: np.ndarray | None = None
    root: int = 0

    @property
    def log_root(self):
        """log f_S(x|w); a float for a single assignment, an array for a batch."""
        v = self.log_value[self.root]
        return float(v) if np.ndim(v) == 0 else v


def as_assignments(graph: SpnGraph, x) -> tuple[np.ndarray, bool]:
    """Coerce ``x`` to a ``(B, N)`` int8 batch; the flag says whether it was 1-D."""
    arr = np.asarray(x)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != graph.num_vars:
        raise StructureError(
            f"assignment has shape {np.shape(x)}, expected (..., {graph.num_vars})"
        )
    if arr.dtype == bool:
        arr = arr.astype(np.int8)
    elif not np.all((arr == 0) | (arr == 1) | (arr == MARGINALIZED)):
        raise StructureError("assignment values must be 0, 1 or MARGINALIZED (-1)")
    return arr.astype(np.int8, copy=False), single


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _segment_logsumexp(c: np.ndarray, starts: np.ndarray) -> np.ndarray:
    m = np.maximum.reduceat(c, starts, axis=0)
    m = np.where(np.isfinite(m), m, 0.0)
    counts = np.diff(np.r_[starts, len(c)])
    with np.errstate(divide="ignore"):
        s = np.add.reduceat(np.exp(c - np.repeat(m, counts, axis=0)), starts, axis=0)
        return np.log(s) + m


def _extended_log_weights(w: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.append(np.log(w), -np.inf)


def _forward(layers: Layers, logw: np.ndarray, X: np.ndarray) -> np.ndarray:
    buf = np.zeros((layers.num_nodes + 1, X.shape[0]))
    xv = X[:, layers.leaf_vars].T
    on = (xv == MARGINALIZED) | (xv == layers.leaf_polarity[:, None])
    buf[layers.leaf_nodes] = np.where(on, 0.0, -np.inf)
    for layer in layers.internal:
        if layer.sums is not None:
            s = layer.sums
            terms = buf[s.children] + logw[s.edges][:, :, None]
            buf[s.nodes] = _logsumexp(terms, axis=1)
        if layer.products is not None:
            p = layer.products
            buf[p.nodes] = buf[p.children].sum(axis=1)
    return buf


def _sibling_products(vals: np.ndarray) -> np.ndarray:
    """For (P, K, B) child log-values, the sum over siblings excluding each slot.

    Built from exclusive prefix and suffix sums so no log-value is ever
    subtracted; a -inf sibling yields -inf without producing NaN.
    """
    zeros = np.zeros_like(vals[:, :1])
    prefix = np.concatenate([zeros, np.cumsum(vals, axis=1)[:, :-1]], axis=1)
    rev = np.cumsum(vals[:, ::-1], axis=1)[:, ::-1]
    suffix = np.concatenate([rev[:, 1:], zeros], axis=1)
    return prefix + suffix


def _push(deriv: np.ndarray, contrib: np.ndarray, sc: Scatter) -> None:
    flat = contrib.reshape(-1, contrib.shape[-1])[sc.gather]
    red = _segment_logsumexp(flat, sc.starts)
    deriv[sc.targets] = np.logaddexp(deriv[sc.targets], red)


def _backward(layers: Layers, logw: np.ndarray, buf: np.ndarray, root: int) -> np.ndarray:
    deriv = np.full_like(buf, -np.inf)
    deriv[root] = 0.0
    for layer in reversed(layers.internal):
        if layer.sums is not None:
            s = layer.sums
            contrib = deriv[s.nodes][:, None, :] + logw[s.edges][:, :, None]
            _push(deriv, contrib, layer.sum_scatter)
        if layer.products is not None:
            p = layer.products
            others = _sibling_products(buf[p.children])
            contrib = deriv[p.nodes][:, None, :] + others
            _push(deriv, contrib, layer.prod_scatter)
    return deriv


def _edge_flows(layers: Layers, logw: np.ndarray, buf: np.ndarray, root: int) -> np.ndarray:
    """Posterior edge usage w_ij f_j (df_S/df_i) / f_S, shape (D, B), in linear space.

    Node flows f_v (df_S/df_v) / f_S lie in [0, 1]: a sum node splits its flow
    in proportion to w_ij f_j / f_i, a product passes its flow to every child.
    Columns with f_S = 0 come out all zero.
    """
    flow = np.zeros_like(buf)
    flow[root] = np.where(np.isneginf(buf[root]), 0.0, 1.0)
    edges = np.zeros((layers.num_edges + 1, buf.shape[1]))
    for layer in reversed(layers.internal):
        if layer.sums is not None:
            s = layer.sums
            parent = buf[s.nodes][:, None, :]
            with np.errstate(invalid="ignore"):
                ratio = np.exp(logw[s.edges][:, :, None] + buf[s.children] - parent)
            ratio = np.where(np.isneginf(parent), 0.0, ratio)
            contrib = flow[s.nodes][:, None, :] * ratio
            edges[s.edges] = contrib
            sc = layer.sum_scatter
            flow[sc.targets] += sc.matrix @ contrib.reshape(-1, contrib.shape[-1])
        if layer.products is not None:
            p = layer.products
            sc = layer.prod_scatter
            k = p.children.shape[1]
            contrib = np.repeat(flow[p.nodes], k, axis=0)
            flow[sc.targets] += sc.matrix @ contrib
    return edges[:-1]


def evaluate_flows(graph: SpnGraph, w, x) -> tuple[np.ndarray, np.ndarray]:
    """log f_S(x|w) and the posterior edge usage w_ij f_j(x) (df_S/df_i)(x) / f_S(x).

    Returns arrays of shape ``(B,)`` and ``(D, B)`` (``()`` and ``(D,)`` for a
    single assignment). Edge flows of zero-probability assignments are 0.
    """
    graph.require_valid()
    w = check_weights(graph, w)
    X, single = as_assignments(graph, x)
    logw = _extended_log_weights(w)
    buf = _forward(graph.layers, logw, X)
    flows = _edge_flows(graph.layers, logw, buf, graph.root)
    logf = buf[graph.root]
    if single:
        return float(logf[0]), flows[:, 0]
    return logf, flows


def _trace(graph: SpnGraph, buf: np.ndarray, deriv: np.ndarray | None, single: bool) -> EvalTrace:
    n = len(graph.nodes)
    val = buf[:n]
    der = None if deriv is None else deriv[:n]
    if single:
        val = val[:, 0]
        der = None if der is None else der[:, 0]
    return EvalTrace(val, der, graph.root)


def evaluate(graph: SpnGraph, w, x) -> EvalTrace:
    """Bottom-up pass: per-node log f_v(x|w)."""
    graph.require_valid()
    w = check_weights(graph, w)
    X, single = as_assignments(graph, x)
    buf = _forward(graph.layers, _extended_log_weights(w), X)
    return _trace(graph, buf, None, single)


def evaluate_and_differentiate(graph: SpnGraph, w, x) -> EvalTrace:
    """Both passes at once: log f_v(x|w) and log df_S/df_v for every node."""
    graph.require_valid()
    w = check_weights(graph, w)
    X, single = as_assignments(graph, x)
    logw = _extended_log_weights(w)
    buf = _forward(graph.layers, logw, X)
    deriv = _backward(graph.layers, logw, buf, graph.root)
    return _trace(graph, buf, deriv, single)


def differentiate(graph: SpnGraph, w, trace: EvalTrace) -> EvalTrace:
    """Top-down pass filling ``trace.log_deriv`` from an existing evaluation."""
    w = check_weights(graph, w)
    n = len(graph.nodes)
    val = np.asarray(trace.log_value)
    if val.shape[0] != n:
        raise StructureError(f"trace covers {val.shape[0]} nodes, graph has {n}")
    single = val.ndim == 1
    buf = np.zeros((n + 1,) + (val.shape[1:] if not single else (1,)))
    buf[:n] = val[:, None] if single else val
    deriv = _backward(graph.layers, _extended_log_weights(w), buf, graph.root)
    trace.log_deriv = deriv[:n, 0] if single else deriv[:n]
    return trace


def evaluate_partition(graph: SpnGraph, w) -> float:
    """log f_S(1|w), the log normalisation constant."""
    x = np.full(graph.num_vars, MARGINALIZED, dtype=np.int8)
    return evaluate(graph, w, x).log_root


def log_weight_gradients(graph: SpnGraph, trace: EvalTrace) -> np.ndarray:
    """log df_S/dw_d = log df_S/df_parent + log f_child, per edge (and instance)."""
    if trace.log_deriv is None:
        raise StructureError("trace has no derivatives; call differentiate first")
    return trace.log_deriv[graph.edge_parent] + trace.log_value[graph.edge_child]


def log_probability(graph: SpnGraph, w, x) -> np.ndarray | float:
    """log Pr(x|w) = log f_S(x|w) - log f_S(1|w); marginalised entries allowed."""
    return evaluate(graph, w, x).log_root - evaluate_partition(graph, w)


def log_likelihood(graph: SpnGraph, w, data) -> float:
    """Total training log-likelihood; -inf when any instance has probability zero."""
    X = np.asarray(getattr(data, "rows", data))
    if X.ndim != 2 or X.shape[0] == 0:
        raise StructureError("log_likelihood needs a non-empty (M, N) dataset")
    logf = evaluate(graph, w, X).log_root
    if np.any(np.isneginf(logf)):
        return -np.inf
    return float(np.sum(logf) - X.shape[0] * evaluate_partition(graph, w))
