"""Training regimes over the history table.

Modes:
  full       one whole-graph gradient step per epoch, memory unused
  gas        mini-batch steps where out-of-batch neighbor rows come from the
             memory table; each step pushes its fresh in-batch rows
  rest       gas plus F gradient-free forward passes per step that refresh
             additional table rows before the gradient batch reads them
  rest_is    rest whose refresh set is the gradient batch's own halo, so the
             rows about to be read are refreshed first
  rest_bidir rest plus a gradient memory: the first F_tilde refresh batches
             also run backward (no parameter update) to store per-row loss
             gradients, which the gradient step uses to add halo nodes'
             parameter-gradient contributions

Reference semantics are strictly sequential: refresh batches in listed order,
then the gradient batch. All modes collapse to identical full-batch steps
when the partition has a single cluster.
"""

from __future__ import annotations

import logging
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .graph import Dataset, NormAdj, normalize_adjacency
from .history import HistoryTable, persistence_stats
from .metrics import MetricsRecord, approximation_error
from .model import (Adam, GcnParams, Grads, LayerCache, accuracy, backward,
                    full_forward, init_params, layer_apply, loss_and_grad)
from .partition import (MiniBatch, Partition, make_batch,
                        make_batch_from_nodes, schedule_epoch)
from .rng import Rng, derive_seed

log = logging.getLogger(__name__)

MODES = ("full", "gas", "rest", "rest_is", "rest_bidir")


@dataclass
class TrainConfig:
    mode: str = "rest"
    refresh_per_step: int = 1        # forward-only refresh batches per gradient step
    grad_refresh_per_step: int = 0   # of those, how many also refresh the gradient memory
    clusters_per_batch: int = 1
    refresh_mode: str = "same"       # same | half | full (refresh batch width)
    sampler: str = "round_robin"
    epochs: int = 1
    seed: int = 0
    lr: float = 0.001
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: int = 128
    num_layers: int = 2
    dropout: float = 0.0
    warmup_refresh: bool = False
    probe_every: int = 0             # 0 disables the approximation-error probe
    timing: bool = False             # wall_ms stays 0.0 unless enabled
    parallel_refresh: bool = False   # refresh pulls read the pre-pass snapshot

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.refresh_per_step < 0:
            raise ValueError("refresh_per_step must be >= 0")
        if not (0 <= self.grad_refresh_per_step <= self.refresh_per_step):
            raise ValueError("grad_refresh_per_step must be in [0, refresh_per_step]")
        if self.mode == "rest_is" and self.refresh_per_step < 1:
            raise ValueError("rest_is needs refresh_per_step >= 1")
        if self.refresh_mode not in ("same", "half", "full"):
            raise ValueError(f"unknown refresh_mode {self.refresh_mode!r}")
        if self.refresh_mode != "same" and self.mode not in ("rest", "rest_bidir"):
            raise ValueError("refresh_mode half/full applies to rest/rest_bidir only")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")
        if self.dropout > 0.0 and self.mode == "rest_bidir":
            raise ValueError("the gradient-memory correction does not support dropout")
        if self.parallel_refresh and self.mode == "rest_bidir":
            raise ValueError("rest_bidir refresh is reference-mode only")
        if self.epochs < 0 or self.num_layers < 1 or self.hidden < 1:
            raise ValueError("epochs, num_layers, hidden must be positive")


@dataclass
class TrainState:
    params: GcnParams
    adam: Adam
    history: HistoryTable
    grad_history: HistoryTable | None
    model_step: int = 0
    records: list[MetricsRecord] = field(default_factory=list)


def batch_forward_with_history(batch: MiniBatch, features: np.ndarray,
                               params: GcnParams, history: HistoryTable,
                               push: bool, step: int,
                               drop: tuple[float, np.random.Generator] | None = None,
                               keep_inputs: bool = False,
                               pull_from: HistoryTable | None = None
                               ) -> tuple[list[np.ndarray], LayerCache, int]:
    """Forward over a batch, memory rows standing in for halo neighbors.

    Layer 1 aggregates raw features for every local node (inputs are never
    stale); deeper layers aggregate the freshly computed in-batch rows plus
    table rows for the halo. With push=True each computed in-batch hidden
    layer is written back at `step`. Returns the per-layer in-batch outputs,
    the backward cache, and how many pulled rows were never written.

    pull_from redirects reads to another table (the pre-pass snapshot used by
    the concurrent-refresh semantics); pushes always hit `history`.
    """
    L = params.num_layers
    nb = len(batch.in_batch)
    reads = history if pull_from is None else pull_from
    cache = LayerCache(adj=batch.local_adj, num_in_batch=nb)
    if keep_inputs:
        cache.inputs = []
    cold_total = 0
    inputs = features[batch.global_map].astype(np.float64)
    h = None
    for l in range(L):
        if drop is not None and drop[0] > 0.0:
            rate, gen = drop
            keep = gen.random(inputs.shape) >= rate
            inputs = inputs * keep / (1.0 - rate)
        if keep_inputs:
            cache.inputs.append(inputs)
        agg, z, h = layer_apply(batch.local_adj, inputs, params.weights[l],
                                params.biases[l], last=(l == L - 1))
        cache.aggs.append(agg)
        cache.zs.append(z)
        cache.hs.append(h)
        if l < L - 1:
            if push:
                history.push(l + 1, batch.in_batch, h, step)
            if len(batch.halo):
                halo_rows, cold = reads.pull(l + 1, batch.halo)
                cold_total += cold
                inputs = np.vstack([h, halo_rows.astype(np.float64)])
            else:
                inputs = h
    if not np.all(np.isfinite(h)):
        raise FloatingPointError("non-finite output in batch forward")
    return cache.hs, cache, cold_total


def train_step_gas(batch: MiniBatch, state: TrainState, ds: Dataset,
                   push: bool = True,
                   drop: tuple[float, np.random.Generator] | None = None,
                   extra_grads: Grads | None = None) -> float:
    """One gradient step on a batch: forward with memory fill, masked loss,
    backward treating pulled rows as constants, optimizer update."""
    mask = ds.train_mask[batch.in_batch]
    if not mask.any():
        raise ValueError(
            f"no training nodes in batch of {len(batch.in_batch)} nodes "
            f"(first id {batch.in_batch[0]})")
    hs, cache, _ = batch_forward_with_history(
        batch, ds.features, state.params, state.history,
        push=push, step=state.model_step, drop=drop)
    loss, dlogits = loss_and_grad(hs[-1], ds.labels[batch.in_batch], mask)
    grads, _ = backward(cache, dlogits, state.params)
    if extra_grads is not None:
        for gw, xw in zip(grads.weights, extra_grads.weights):
            gw += xw
        for gb, xb in zip(grads.biases, extra_grads.biases):
            gb += xb
    state.adam.step(state.params, grads)
    state.model_step += 1
    return loss


def rest_refresh_pass(batches: list[MiniBatch], state: TrainState, ds: Dataset,
                      drop: tuple[float, np.random.Generator] | None = None,
                      snapshot_reads: bool = False) -> None:
    """Gradient-free forwards that only rewrite table rows; parameters and the
    step counter are untouched.

    snapshot_reads gives the pass the semantics of running its batches
    concurrently: every pull sees the table as it was when the pass started,
    and writes land last-writer-wins. The default (reference mode) is strictly
    sequential, each batch seeing the previous one's pushes.
    """
    pull_from = None
    if snapshot_reads and len(batches) > 1:
        pull_from = HistoryTable(state.history.num_nodes, state.history.dims)
        for li, mat in enumerate(state.history.layers):
            pull_from.layers[li][:] = mat
        pull_from.last_update[:] = state.history.last_update
    for batch in batches:
        batch_forward_with_history(batch, ds.features, state.params, state.history,
                                   push=True, step=state.model_step, drop=drop,
                                   pull_from=pull_from)


def train_step_rest(refresh: list[MiniBatch], grad_batch: MiniBatch,
                    state: TrainState, ds: Dataset,
                    drop: tuple[float, np.random.Generator] | None = None,
                    snapshot_reads: bool = False) -> float:
    rest_refresh_pass(refresh, state, ds, drop=drop, snapshot_reads=snapshot_reads)
    return train_step_gas(grad_batch, state, ds, drop=drop)


def rest_is_refresh_selection(grad_batch: MiniBatch, g_norm: NormAdj,
                              refresh_per_step: int, rng: Rng) -> list[MiniBatch]:
    """Refresh batches covering exactly the gradient batch's halo.

    The nodes whose rows the upcoming gradient step will read become the
    in-batch nodes of the refresh batches (split into refresh_per_step
    seeded, balanced chunks), so they are recomputed from their own
    neighborhoods and pushed before being read. With no halo (single-cluster
    partition) there is nothing to refresh.
    """
    if refresh_per_step < 1:
        raise ValueError("refresh_per_step must be >= 1")
    halo = grad_batch.halo
    if len(halo) == 0:
        log.warning("gradient batch has no out-of-batch neighbors; "
                    "importance refresh degenerates to plain history fill")
        return []
    order = list(range(len(halo)))
    rng.shuffle(order)
    shuffled = halo[np.array(order, dtype=np.int64)]
    chunks = np.array_split(shuffled, min(refresh_per_step, len(halo)))
    return [make_batch_from_nodes(g_norm, chunk) for chunk in chunks if len(chunk)]


def _halo_rows_local(g_norm: NormAdj, batch: MiniBatch) -> NormAdj:
    """Adjacency rows of the halo nodes restricted to the batch's local
    columns; neighbors outside the batch are dropped (the locality
    approximation of the gradient-memory correction)."""
    local_of = np.full(g_norm.num_cols, -1, dtype=np.int64)
    local_of[batch.global_map] = np.arange(len(batch.global_map))
    cols_list, vals_list, lengths = [], [], []
    for u in batch.halo:
        cols, vals = g_norm.row(int(u))
        keep = local_of[cols] >= 0
        cols_list.append(local_of[cols[keep]])
        vals_list.append(vals[keep])
        lengths.append(int(keep.sum()))
    row_ptr = np.zeros(len(batch.halo) + 1, dtype=np.int64)
    np.cumsum(np.array(lengths, dtype=np.int64), out=row_ptr[1:])
    return NormAdj(num_rows=len(batch.halo), num_cols=len(batch.global_map),
                   row_ptr=row_ptr,
                   col_idx=np.concatenate(cols_list) if cols_list else np.empty(0, np.int64),
                   values=np.concatenate(vals_list) if vals_list else np.empty(0, np.float64))


def _grad_memory_refresh(batches: list[MiniBatch], state: TrainState,
                         ds: Dataset) -> None:
    """Backward passes that only rewrite the gradient memory.

    Each batch runs the usual forward (also refreshing embeddings), then
    backward from its masked loss; the per-layer loss gradients of its
    in-batch rows are stored. Parameters are not updated. Batches without
    training nodes refresh embeddings only.
    """
    for batch in batches:
        hs, cache, _ = batch_forward_with_history(
            batch, ds.features, state.params, state.history,
            push=True, step=state.model_step)
        mask = ds.train_mask[batch.in_batch]
        if not mask.any():
            continue
        _, dlogits = loss_and_grad(hs[-1], ds.labels[batch.in_batch], mask)
        _, d_hidden = backward(cache, dlogits, state.params)
        for l in range(state.params.num_layers):
            state.grad_history.push(l + 1, batch.in_batch, d_hidden[l],
                                    state.model_step)


def _halo_grad_correction(grad_batch: MiniBatch, state: TrainState, ds: Dataset,
                          g_norm: NormAdj) -> Grads | None:
    """Parameter-gradient contributions of halo nodes, reconstructed from the
    gradient memory.

    For each halo node u with a stored loss-gradient row at layer l, its
    layer-l pre-activation is recomputed from the rows available inside the
    batch (own adjacency row truncated to local columns), and the chain rule
    adds agg_u^T (g_u * act') to the layer's parameter gradients. Rows never
    stored contribute nothing; with no halo the correction vanishes (None, so
    the gradient step stays bit-identical to the plain one).
    """
    params = state.params
    gh = state.grad_history
    if len(grad_batch.halo) == 0:
        return None
    extra = Grads(weights=[np.zeros_like(w) for w in params.weights],
                  biases=[np.zeros_like(b) for b in params.biases])
    halo_adj = _halo_rows_local(g_norm, grad_batch)
    _, cache, _ = batch_forward_with_history(
        grad_batch, ds.features, params, state.history,
        push=False, step=state.model_step, keep_inputs=True)
    L = params.num_layers
    touched = False
    for l in range(L):
        warm = gh.last_update[grad_batch.halo, l] != -1
        if not warm.any():
            continue
        touched = True
        stored, _ = gh.pull(l + 1, grad_batch.halo)
        agg = halo_adj.matmul(cache.inputs[l])
        z = agg @ params.weights[l] + params.biases[l]
        g = stored.astype(np.float64)
        if l < L - 1:
            g = g * (z > 0.0)
        g[~warm] = 0.0
        extra.weights[l] += agg.T @ g
        extra.biases[l] += g.sum(axis=0)
    return extra if touched else None


def train_step_bidir(refresh: list[MiniBatch], grad_batch: MiniBatch,
                     state: TrainState, ds: Dataset, g_norm: NormAdj,
                     grad_refresh_per_step: int) -> float:
    """Refresh pass where the first grad_refresh_per_step batches also update
    the gradient memory, then a gradient step carrying the halo correction."""
    if state.grad_history is None:
        raise ValueError("bidirectional mode needs an allocated gradient memory")
    k = grad_refresh_per_step
    if k > len(refresh):
        raise ValueError("grad_refresh_per_step exceeds refresh batch count")
    _grad_memory_refresh(refresh[:k], state, ds)
    rest_refresh_pass(refresh[k:], state, ds)
    extra = _halo_grad_correction(grad_batch, state, ds, g_norm)
    return train_step_gas(grad_batch, state, ds, extra_grads=extra)


def evaluate(g_norm: NormAdj, ds: Dataset, params: GcnParams
             ) -> tuple[float, float, float]:
    """Whole-graph accuracies at current parameters; no staleness in the
    reported numbers regardless of training mode."""
    hs, _ = full_forward(g_norm, ds.features, params)
    return (accuracy(hs[-1], ds.labels, ds.train_mask),
            accuracy(hs[-1], ds.labels, ds.val_mask),
            accuracy(hs[-1], ds.labels, ds.test_mask))


def _probe_apx_errors(g_norm: NormAdj, ds: Dataset, state: TrainState,
                      chunk_batches: list[MiniBatch], mode: str
                      ) -> tuple[float, ...]:
    """Per-layer mean distance between memory/run embeddings and a fresh
    whole-graph forward: stored layers come straight from the table, the final
    layer from re-running every batch against the current table."""
    oracle_hs, _ = full_forward(g_norm, ds.features, state.params)
    L = state.params.num_layers
    if mode == "full":
        return tuple(0.0 for _ in range(L))
    table_errs = approximation_error(state.history, oracle_hs)
    run_logits = np.zeros_like(oracle_hs[-1])
    for batch in chunk_batches:
        hs, _, _ = batch_forward_with_history(
            batch, ds.features, state.params, state.history,
            push=False, step=state.model_step)
        run_logits[batch.in_batch] = hs[-1]
    final_err = approximation_error(run_logits, oracle_hs[-1])
    return tuple(table_errs) + (final_err,)


def save_checkpoint(params: GcnParams, path: str) -> None:
    """Little-endian binary: uint32 layer count, uint32 dims[0..L], then per
    layer the float32 weight matrix (row-major) and bias vector."""
    dims = params.dims
    with open(path, "wb") as f:
        f.write(struct.pack("<I", params.num_layers))
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        for w, b in zip(params.weights, params.biases):
            f.write(w.astype("<f4").tobytes(order="C"))
            f.write(b.astype("<f4").tobytes(order="C"))


def load_checkpoint(path: str) -> GcnParams:
    with open(path, "rb") as f:
        (L,) = struct.unpack("<I", f.read(4))
        dims = list(struct.unpack(f"<{L + 1}I", f.read(4 * (L + 1))))
        weights, biases = [], []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            w = np.frombuffer(f.read(4 * d_in * d_out), dtype="<f4")
            weights.append(w.reshape(d_in, d_out).astype(np.float64))
            b = np.frombuffer(f.read(4 * d_out), dtype="<f4")
            biases.append(b.astype(np.float64))
    return GcnParams(weights=weights, biases=biases)


def run_training(cfg: TrainConfig, ds: Dataset, part: Partition,
                 dump_prefix: str | None = None,
                 on_step=None,
                 checkpoint_path: str | None = None
                 ) -> tuple[list[MetricsRecord], GcnParams]:
    """Drive epochs of scheduled steps; returns the metrics series and final
    parameters. Deterministic for a fixed config (wall_ms stays 0.0 unless
    cfg.timing is set)."""
    cfg.validate()
    ds.validate()
    g_norm = normalize_adjacency(ds.graph)
    n = ds.graph.num_nodes
    dims = ([ds.num_features]
            + [cfg.hidden] * (cfg.num_layers - 1)
            + [ds.num_classes])
    state = TrainState(
        params=init_params(dims, derive_seed(cfg.seed, "init")),
        adam=Adam(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                  eps=cfg.adam_eps, weight_decay=cfg.weight_decay),
        history=HistoryTable(n, dims[1:-1]),
        grad_history=HistoryTable(n, dims[1:]) if cfg.mode == "rest_bidir" else None,
    )
    drop = None
    if cfg.dropout > 0.0:
        drop = (cfg.dropout,
                np.random.Generator(np.random.PCG64(derive_seed(cfg.seed, "dropout"))))
    is_rng = Rng(derive_seed(cfg.seed, "importance"))
    sched_seed = derive_seed(cfg.seed, "schedule")
    sampler = "importance" if cfg.mode == "rest_is" else cfg.sampler

    batch_cache: dict[tuple[int, ...], MiniBatch] = {}

    def cluster_batch(ids: tuple[int, ...]) -> MiniBatch:
        key = tuple(sorted(ids))
        if key not in batch_cache:
            batch_cache[key] = make_batch(g_norm, part, list(key))
        return batch_cache[key]

    whole = make_batch(g_norm, part, list(range(part.num_parts)))
    if cfg.warmup_refresh and cfg.mode != "full":
        # gradient-free whole-graph refresh so no pull ever reads the zero init
        batch_forward_with_history(whole, ds.features, state.params, state.history,
                                   push=True, step=0)

    def record_step(epoch: int, loss: float, pstats, apx, wall_ms: float) -> None:
        acc_tr, acc_val, acc_te = evaluate(g_norm, ds, state.params)
        state.records.append(MetricsRecord(
            step=state.model_step, epoch=epoch, loss=loss,
            acc_train=acc_tr, acc_val=acc_val, acc_test=acc_te,
            persist_mean=tuple(p.mean for p in pstats),
            persist_max=tuple(p.max for p in pstats),
            cold_rows=sum(p.cold for p in pstats),
            apx_err=apx, wall_ms=wall_ms))
        if on_step is not None:
            on_step(state)

    def probe_due() -> bool:
        return cfg.probe_every > 0 and state.model_step % cfg.probe_every == 0

    for epoch in range(cfg.epochs):
        if cfg.mode == "full":
            t0 = time.perf_counter()
            pstats = persistence_stats(state.history, state.model_step)
            apx = (_probe_apx_errors(g_norm, ds, state, [], "full")
                   if probe_due() else tuple([float("nan")] * cfg.num_layers))
            loss = train_step_gas(whole, state, ds, push=False, drop=drop)
            wall = (time.perf_counter() - t0) * 1e3 if cfg.timing else 0.0
            record_step(epoch, loss, pstats, apx, wall)
        else:
            steps = schedule_epoch(part, cfg.clusters_per_batch,
                                   cfg.refresh_per_step, sampler, sched_seed,
                                   epoch=epoch, refresh_mode=cfg.refresh_mode)
            chunk_ids = [st.grad for st in steps]
            for st in steps:
                t0 = time.perf_counter()
                pstats = persistence_stats(state.history, state.model_step)
                apx = (_probe_apx_errors(g_norm, ds, state,
                                         [cluster_batch(c) for c in chunk_ids],
                                         cfg.mode)
                       if probe_due() else tuple([float("nan")] * cfg.num_layers))
                grad_batch = cluster_batch(st.grad)
                try:
                    if cfg.mode == "gas":
                        loss = train_step_gas(grad_batch, state, ds, drop=drop)
                    elif cfg.mode == "rest":
                        refresh = [cluster_batch(c) for c in st.refresh]
                        loss = train_step_rest(refresh, grad_batch, state, ds,
                                               drop=drop,
                                               snapshot_reads=cfg.parallel_refresh)
                    elif cfg.mode == "rest_is":
                        refresh = rest_is_refresh_selection(
                            grad_batch, g_norm, cfg.refresh_per_step, is_rng)
                        loss = train_step_rest(refresh, grad_batch, state, ds,
                                               drop=drop,
                                               snapshot_reads=cfg.parallel_refresh)
                    else:  # rest_bidir
                        refresh = [cluster_batch(c) for c in st.refresh]
                        loss = train_step_bidir(refresh, grad_batch, state, ds,
                                                g_norm, cfg.grad_refresh_per_step)
                except FloatingPointError:
                    if dump_prefix is not None:
                        save_checkpoint(state.params, dump_prefix + "_diverged.ckpt")
                        state.history.dump(dump_prefix + "_history")
                    raise
                wall = (time.perf_counter() - t0) * 1e3 if cfg.timing else 0.0
                record_step(epoch, loss, pstats, apx, wall)
        if checkpoint_path is not None:
            save_checkpoint(state.params, checkpoint_path)
    return state.records, state.params
