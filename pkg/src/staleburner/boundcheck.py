"""Numerical dominance harness for the gradient-error bound.

Each instance builds a small community graph, fills the memory table from a
perturbed parameter vector (synthetic staleness), recomputes every node's
output through the memory-filled batch path at the current parameters, and
compares the measured loss-gradient gap against the bound evaluated from
operator-norm envelopes. Ratios above 1 indicate a broken norm computation
or forward pass, not noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import normalize_adjacency, sbm_generate
from .history import HistoryTable
from .metrics import bound_constants, telescoped_output_bound, gradient_error_bound
from .model import full_forward, init_params, loss_and_grad
from .partition import make_batch, partition_graph
from .rng import Rng, derive_seed
from .trainer import batch_forward_with_history


@dataclass(frozen=True)
class BoundCheckResult:
    matrix_ratio: float
    node_ratio: float
    output_gap: float       # measured final-layer Frobenius gap
    output_bound: float     # telescoped bound on that gap


def _ratio(lhs: float, rhs: float) -> float:
    if rhs <= 0.0:
        return 0.0 if lhs < 1e-12 else float("inf")
    return lhs / rhs


def bound_check_instance(seed: int, n: int = 50, num_layers: int = 2,
                         perturb: float = 0.05, hidden: int = 12,
                         num_parts: int = 4) -> BoundCheckResult:
    blocks = 5
    ds = sbm_generate(blocks, max(1, n // blocks), 0.3, 0.05, d_in=8,
                      seed=derive_seed(seed, "graph"))
    g_norm = normalize_adjacency(ds.graph)
    n_actual = ds.graph.num_nodes
    dims = [ds.num_features] + [hidden] * (num_layers - 1) + [ds.num_classes]
    params = init_params(dims, derive_seed(seed, "params"))

    # synthetic staleness: the table holds embeddings of a nearby parameter
    # vector, as if several optimizer steps passed since the rows were written
    noise = Rng(derive_seed(seed, "perturb"))
    stale_params = params.copy()
    for w in stale_params.weights:
        w += perturb * noise.normals(w.size).reshape(w.shape)
    stale_hs, _ = full_forward(g_norm, ds.features, stale_params)
    table = HistoryTable(n_actual, dims[1:-1])
    all_ids = np.arange(n_actual)
    for l in range(1, num_layers):
        table.push(l, all_ids, stale_hs[l - 1], step=0)

    oracle_hs, _ = full_forward(g_norm, ds.features, params)
    part = partition_graph(ds.graph, min(num_parts, n_actual),
                           derive_seed(seed, "part"))
    run_logits = np.zeros_like(oracle_hs[-1])
    for c in range(part.num_parts):
        batch = make_batch(g_norm, part, [c])
        hs, _, _ = batch_forward_with_history(batch, ds.features, params, table,
                                              push=False, step=0)
        run_logits[batch.in_batch] = hs[-1]

    _, d_stale = loss_and_grad(run_logits, ds.labels, ds.train_mask)
    _, d_true = loss_and_grad(oracle_hs[-1], ds.labels, ds.train_mask)
    diff = d_stale - d_true

    # layer errors drive the bound: inputs are never stale, stored layers
    # measured table-versus-oracle in Frobenius norm
    errors = [0.0]
    for l in range(1, num_layers):
        errors.append(float(np.linalg.norm(
            table.layers[l - 1].astype(np.float64) - oracle_hs[l - 1])))

    consts = bound_constants(params, g_norm)
    consts.validate()
    lhs_matrix = float(np.linalg.norm(diff))
    rhs_matrix = gradient_error_bound(consts, errors, node=None)
    node_ratio = 0.0
    row_norms = np.linalg.norm(diff, axis=1)
    for v in range(n_actual):
        node_ratio = max(node_ratio,
                         _ratio(float(row_norms[v]), gradient_error_bound(consts, errors, node=v)))

    out_gap = float(np.linalg.norm(run_logits - oracle_hs[-1]))
    out_bound = telescoped_output_bound(consts, errors)
    return BoundCheckResult(matrix_ratio=_ratio(lhs_matrix, rhs_matrix),
                            node_ratio=node_ratio,
                            output_gap=out_gap, output_bound=out_bound)


def run_bound_check(seeds: int, n: int = 50,
                    layer_choices: tuple[int, ...] = (2, 3)) -> float:
    """Max LHS/RHS ratio over `seeds` instances per layer depth; values at or
    below 1.0 mean the bound dominated every measurement."""
    worst = 0.0
    for num_layers in layer_choices:
        for s in range(seeds):
            res = bound_check_instance(seed=s * 7919 + num_layers, n=n,
                                       num_layers=num_layers)
            worst = max(worst, res.matrix_ratio, res.node_ratio,
                        _ratio(res.output_gap, res.output_bound))
    return worst
