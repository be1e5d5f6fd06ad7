"""Shared fixtures and independent dense-math oracles.

The oracles here deliberately avoid the package's sparse kernels: adjacency
normalization, forward passes, and gradients are recomputed with plain dense
numpy so the CSR implementations are checked against a second opinion.
"""

from __future__ import annotations

import numpy as np
import pytest

from staleburner.graph import CsrGraph, csr_from_edges, normalize_adjacency, sbm_generate
from staleburner.model import GcnParams, full_forward, init_params
from staleburner.rng import Rng, derive_seed


def path_graph(n: int) -> CsrGraph:
    src = np.arange(n - 1, dtype=np.int64)
    return csr_from_edges(n, src, src + 1)


def star_graph(leaves: int) -> CsrGraph:
    src = np.zeros(leaves, dtype=np.int64)
    dst = np.arange(1, leaves + 1, dtype=np.int64)
    return csr_from_edges(leaves + 1, src, dst)


def clique_union(num_cliques: int, size: int) -> CsrGraph:
    src, dst = [], []
    for c in range(num_cliques):
        base = c * size
        for i in range(size):
            for j in range(i + 1, size):
                src.append(base + i)
                dst.append(base + j)
    return csr_from_edges(num_cliques * size,
                          np.array(src, dtype=np.int64),
                          np.array(dst, dtype=np.int64))


def dense_norm_adj(g: CsrGraph) -> np.ndarray:
    """Dense reference for the normalized propagation matrix."""
    n = g.num_nodes
    a = np.zeros((n, n), dtype=np.float64)
    for v in range(n):
        for u in g.neighbors(v):
            a[v, u] = 1.0
    a += np.eye(n)
    d_inv = 1.0 / np.sqrt(a.sum(axis=1))
    return d_inv[:, None] * a * d_inv[None, :]


def dense_forward(adj_dense: np.ndarray, feats: np.ndarray,
                  params: GcnParams) -> list[np.ndarray]:
    """Dense reference forward: relu(A H W + b) per layer, identity last."""
    h = np.asarray(feats, dtype=np.float64)
    out = []
    L = params.num_layers
    for l in range(L):
        z = adj_dense @ h @ params.weights[l] + params.biases[l]
        h = z if l == L - 1 else np.maximum(z, 0.0)
        out.append(h)
    return out


def fd_param_grads(loss_fn, params: GcnParams, step: float = 1e-4) -> list[np.ndarray]:
    """Central finite differences of loss_fn(params) over every entry."""
    grads = []
    for tensor in params.weights + params.biases:
        g = np.zeros_like(tensor)
        it = np.nditer(tensor, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = tensor[idx]
            tensor[idx] = orig + step
            up = loss_fn(params)
            tensor[idx] = orig - step
            down = loss_fn(params)
            tensor[idx] = orig
            g[idx] = (up - down) / (2.0 * step)
            it.iternext()
        grads.append(g)
    return grads


def max_rel_err(analytic: np.ndarray, reference: np.ndarray,
                floor: float = 1e-6) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(reference)), floor)
    return float((np.abs(analytic - reference) / scale).max())


def smooth_gradcheck_instance(tag: int, num_layers: int, margin: float = 1e-3):
    """Random (dataset, adjacency, params) whose hidden pre-activations all
    sit at least `margin` away from the ReLU kink.

    Central differences are only a valid derivative oracle where the loss is
    smooth around the evaluation point; an exactly-zero pre-activation (a
    dead unit with zero bias) makes the one-sided slopes differ while the
    subgradient convention returns 0. Filtering by margin keeps the oracle
    honest instead of weakening the tolerance.
    """
    ds = sbm_generate(3, 4 + (tag % 7), 0.5, 0.1, d_in=4,
                      seed=derive_seed(tag, "gradcheck"))
    adj = normalize_adjacency(ds.graph)
    dims = [4] + [5] * (num_layers - 1) + [ds.num_classes]
    for attempt in range(100):
        params = init_params(dims, seed=derive_seed(tag, "gradcheck-w", attempt))
        rng = Rng(derive_seed(tag, "gradcheck-b", attempt))
        for b in params.biases:
            b[:] = rng.uniforms(len(b), -0.3, 0.3)
        _, cache = full_forward(adj, ds.features, params)
        if all(np.abs(z).min() > margin for z in cache.zs[:-1]):
            return ds, adj, params
    raise RuntimeError(f"no kink-free instance for tag {tag}")


@pytest.fixture
def rng_np():
    return np.random.default_rng(12345)
