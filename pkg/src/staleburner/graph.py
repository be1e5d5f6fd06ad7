"""Graph storage, dataset synthesis/IO, and the normalized propagation operator.

Graphs are undirected, stored in CSR form without self-loops. The propagation
operator adds self-loops and symmetric degree normalization, so its spectral
norm is exactly 1 regardless of the input graph.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .rng import Rng, derive_seed


class DatasetError(ValueError):
    """Raised when dataset files violate the on-disk contract."""


@dataclass(frozen=True)
class CsrGraph:
    """Undirected graph in CSR form. col_idx is sorted within each row,
    contains no duplicates and no self-loops; adjacency is symmetric."""

    num_nodes: int
    row_ptr: np.ndarray  # int64, shape (num_nodes + 1,)
    col_idx: np.ndarray  # int64, shape (num_edges_directed,)

    @property
    def num_edges(self) -> int:
        """Undirected edge count."""
        return len(self.col_idx) // 2

    def degrees(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.col_idx[self.row_ptr[v]:self.row_ptr[v + 1]]

    def validate(self) -> None:
        n = self.num_nodes
        if self.row_ptr.shape != (n + 1,) or self.row_ptr[0] != 0:
            raise ValueError("row_ptr must have length num_nodes+1 and start at 0")
        if np.any(np.diff(self.row_ptr) < 0) or self.row_ptr[-1] != len(self.col_idx):
            raise ValueError("row_ptr must be nondecreasing and end at len(col_idx)")
        if len(self.col_idx) and (self.col_idx.min() < 0 or self.col_idx.max() >= n):
            raise ValueError("col_idx out of range")
        for v in range(n):
            row = self.neighbors(v)
            if np.any(np.diff(row) <= 0):
                raise ValueError(f"row {v} is unsorted or has duplicates")
            if np.any(row == v):
                raise ValueError(f"self-loop on node {v}")
        # symmetry: the multiset of (u, v) pairs equals the multiset of (v, u)
        rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(self.row_ptr))
        fwd = rows * n + self.col_idx
        rev = self.col_idx * n + rows
        if not np.array_equal(np.sort(fwd), np.sort(rev)):
            raise ValueError("adjacency is not symmetric")


def csr_from_edges(num_nodes: int, src: np.ndarray, dst: np.ndarray) -> CsrGraph:
    """Build a CsrGraph from directed edge endpoints.

    Edges are symmetrized (both directions stored), duplicates collapsed.
    Self-loops are rejected.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if len(src) and (src.min() < 0 or dst.min() < 0 or
                     src.max() >= num_nodes or dst.max() >= num_nodes):
        raise ValueError("edge endpoint out of range")
    if np.any(src == dst):
        bad = int(np.flatnonzero(src == dst)[0])
        raise ValueError(f"self-loop edge at position {bad}")
    u = np.concatenate([src, dst])
    v = np.concatenate([dst, src])
    keys = np.unique(u * np.int64(num_nodes) + v)
    rows = keys // num_nodes
    cols = keys % num_nodes
    row_ptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(row_ptr, rows + 1, 1)
    np.cumsum(row_ptr, out=row_ptr)
    return CsrGraph(num_nodes=num_nodes, row_ptr=row_ptr, col_idx=cols)


@dataclass(frozen=True)
class Dataset:
    """Node-classification dataset: graph, features, labels, split masks."""

    graph: CsrGraph
    features: np.ndarray  # float32, (n, d_in)
    labels: np.ndarray    # int64, (n,), values in [0, num_classes)
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def validate(self) -> None:
        n = self.graph.num_nodes
        if self.features.shape[0] != n:
            raise ValueError("feature row count != num_nodes")
        if self.labels.shape != (n,) or self.labels.min() < 0:
            raise ValueError("labels must be nonnegative with one entry per node")
        for name, m in (("train", self.train_mask), ("val", self.val_mask),
                        ("test", self.test_mask)):
            if m.shape != (n,) or m.dtype != np.bool_:
                raise ValueError(f"{name} mask must be a boolean vector of length n")
        if np.any(self.train_mask & self.val_mask) or \
           np.any(self.train_mask & self.test_mask) or \
           np.any(self.val_mask & self.test_mask):
            raise ValueError("masks overlap")


@dataclass(frozen=True)
class NormAdj:
    """Symmetric degree-normalized adjacency with self-loops, CSR.

    Square when built by normalize_adjacency; batch construction reuses the
    type for rectangular row restrictions (rows = batch targets, columns =
    batch plus halo), values copied bit-exactly from the square operator.
    """

    num_rows: int
    num_cols: int
    row_ptr: np.ndarray  # int64
    col_idx: np.ndarray  # int64
    values: np.ndarray   # float64

    def matmul(self, dense: np.ndarray) -> np.ndarray:
        """Row-wise sparse product, float64 accumulation.

        Every row must be nonempty (guaranteed by the self-loop), which keeps
        np.add.reduceat segment semantics exact.
        """
        contrib = self.values[:, None] * dense[self.col_idx].astype(np.float64, copy=False)
        return np.add.reduceat(contrib, self.row_ptr[:-1], axis=0)

    def t_matmul(self, dense: np.ndarray) -> np.ndarray:
        """Transpose product: (num_cols, d) result from (num_rows, d) input."""
        rows = np.repeat(np.arange(self.num_rows, dtype=np.int64),
                         np.diff(self.row_ptr))
        out = np.zeros((self.num_cols, dense.shape[1]), dtype=np.float64)
        np.add.at(out, self.col_idx, self.values[:, None] * dense[rows])
        return out

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]

    def row_norms(self) -> np.ndarray:
        """Per-row Euclidean norm of the operator rows."""
        sq = np.zeros(self.num_rows, dtype=np.float64)
        rows = np.repeat(np.arange(self.num_rows, dtype=np.int64),
                         np.diff(self.row_ptr))
        np.add.at(sq, rows, self.values * self.values)
        return np.sqrt(sq)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.num_rows, self.num_cols), dtype=np.float64)
        rows = np.repeat(np.arange(self.num_rows, dtype=np.int64),
                         np.diff(self.row_ptr))
        out[rows, self.col_idx] = self.values
        return out


def normalize_adjacency(g: CsrGraph) -> NormAdj:
    """Self-loops plus symmetric normalization: entry (u, v) is
    1/sqrt((deg_u + 1) * (deg_v + 1)). Isolated nodes get the single value 1."""
    n = g.num_nodes
    deg_tilde = g.degrees().astype(np.float64) + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg_tilde)
    counts = np.diff(g.row_ptr) + 1
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    nnz = int(row_ptr[-1])
    col_idx = np.empty(nnz, dtype=np.int64)
    values = np.empty(nnz, dtype=np.float64)
    for v in range(n):
        nbrs = g.neighbors(v)
        pos = np.searchsorted(nbrs, v)  # keep columns sorted after inserting v
        out = np.insert(nbrs, pos, v)
        lo = row_ptr[v]
        col_idx[lo:lo + len(out)] = out
        values[lo:lo + len(out)] = inv_sqrt[v] * inv_sqrt[out]
    return NormAdj(num_rows=n, num_cols=n, row_ptr=row_ptr,
                   col_idx=col_idx, values=values)


def spectral_norm_upper(m, iters: int = 200, tol: float = 1e-3) -> tuple[float, bool]:
    """Power-iteration upper envelope for the 2-norm of a matrix.

    Accepts a NormAdj or a dense ndarray. Iterates on the Gram operator
    M^T M from a fixed all-ones start, so the result is deterministic and
    sign-oscillation-free. Returns (estimate * (1 + tol), converged); on
    non-convergence the last estimate is still inflated and returned.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if isinstance(m, NormAdj):
        fwd = m.matmul
        bwd = m.t_matmul
        ncols = m.num_cols
    else:
        dense = np.asarray(m, dtype=np.float64)
        fwd = lambda x: dense @ x
        bwd = lambda x: dense.T @ x
        ncols = dense.shape[1]
    v = np.ones((ncols, 1), dtype=np.float64)
    v /= math.sqrt(ncols)
    sigma = 0.0
    converged = False
    for _ in range(iters):
        w = fwd(v)
        new_sigma = float(np.linalg.norm(w))
        if new_sigma == 0.0:
            return 0.0, True
        v = bwd(w)
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return new_sigma * (1.0 + tol), True
        v /= nv
        if abs(new_sigma - sigma) <= tol * max(new_sigma, 1e-30):
            sigma = new_sigma
            converged = True
            break
        sigma = new_sigma
    return sigma * (1.0 + tol), converged


def sbm_generate(blocks: int, nodes_per_block: int, p_in: float, p_out: float,
                 d_in: int = 0, seed: int = 0) -> Dataset:
    """Planted-partition graph with block labels and noisy one-hot features.

    Nodes of block b occupy the contiguous id range [b*npb, (b+1)*npb). Each
    intra-block pair is an edge with probability p_in, cross-block with p_out;
    sparse regimes are sampled with geometric skipping so cost is O(edges).
    Features are one-hot block indicators plus N(0, 0.5^2) noise; masks split
    60/20/20 per class. Bitwise-deterministic in (arguments, seed).
    """
    if blocks < 1:
        raise ValueError("blocks must be >= 1")
    if nodes_per_block < 1:
        raise ValueError("nodes_per_block must be >= 1")
    if not (0.0 <= p_out < p_in <= 1.0):
        raise ValueError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in} p_out={p_out}")
    if d_in <= 0:
        d_in = blocks
    n = blocks * nodes_per_block
    npb = nodes_per_block
    rng = Rng(derive_seed(seed, "sbm-edges"))

    src: list[int] = []
    dst: list[int] = []

    def sample_ranges(range_start: np.ndarray, range_len: np.ndarray, p: float) -> None:
        # Bernoulli(p) over the concatenation of per-node candidate ranges:
        # node u pairs with v = range_start[u] + offset for offset < range_len[u].
        # Geometric skipping visits only the sampled pairs.
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(range_len, out=offsets[1:])
        total = int(offsets[-1])
        if p <= 0.0 or total == 0:
            return
        if p >= 1.0:
            hits = range(total)
        else:
            hits = []
            t = rng.geometric_skip(p)
            while t < total:
                hits.append(t)
                t += 1 + rng.geometric_skip(p)
        for t in hits:
            u = int(np.searchsorted(offsets, t, side="right")) - 1
            src.append(u)
            dst.append(int(range_start[u]) + (t - int(offsets[u])))

    block_end = (np.arange(n, dtype=np.int64) // npb + 1) * npb
    ids = np.arange(n, dtype=np.int64)
    # intra-block: v in (u, block_end)
    sample_ranges(ids + 1, block_end - (ids + 1), p_in)
    # cross-block: v in [block_end, n)
    sample_ranges(block_end, n - block_end, p_out)

    graph = csr_from_edges(n, np.array(src, dtype=np.int64),
                           np.array(dst, dtype=np.int64))

    labels = np.repeat(np.arange(blocks, dtype=np.int64), npb)
    feat_rng = Rng(derive_seed(seed, "sbm-features"))
    features = (0.5 * feat_rng.normals(n * d_in)).reshape(n, d_in)
    features[np.arange(n), labels % d_in] += 1.0
    features = features.astype(np.float32)

    mask_rng = Rng(derive_seed(seed, "sbm-masks"))
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    for c in range(blocks):
        ids = np.flatnonzero(labels == c).tolist()
        mask_rng.shuffle(ids)
        k = len(ids)
        n_tr = max(1, int(0.6 * k))
        n_val = int(0.2 * k)
        train[ids[:n_tr]] = True
        val[ids[n_tr:n_tr + n_val]] = True
        test[ids[n_tr + n_val:]] = True

    ds = Dataset(graph=graph, features=features, labels=labels,
                 train_mask=train, val_mask=val, test_mask=test)
    ds.validate()
    return ds


# ---------------------------------------------------------------------------
# on-disk dataset format: edges.tsv, features.csv, labels.csv, masks.csv
# (plain text, LF-terminated, no headers)

_MASK_NAMES = ("train", "val", "test")


def save_dataset(ds: Dataset, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    g = ds.graph
    with open(os.path.join(path, "edges.tsv"), "w") as f:
        for v in range(g.num_nodes):
            for u in g.neighbors(v):
                if v < u:  # store each undirected edge once
                    f.write(f"{v}\t{u}\n")
    with open(os.path.join(path, "features.csv"), "w") as f:
        for row in ds.features:
            f.write(",".join(f"{x:.9g}" for x in row) + "\n")
    with open(os.path.join(path, "labels.csv"), "w") as f:
        for y in ds.labels:
            f.write(f"{y}\n")
    with open(os.path.join(path, "masks.csv"), "w") as f:
        for i in range(g.num_nodes):
            name = "train" if ds.train_mask[i] else ("val" if ds.val_mask[i] else "test")
            f.write(name + "\n")


def load_dataset(path: str) -> Dataset:
    """Load and validate a dataset directory.

    Errors carry the file name and 1-based line number of the offense.
    Edges are symmetrized and duplicates collapsed, so a file listing both
    directions of an edge loads identically to one listing a single direction.
    """
    for fname in ("edges.tsv", "features.csv", "labels.csv", "masks.csv"):
        if not os.path.isfile(os.path.join(path, fname)):
            raise DatasetError(f"{fname}: missing from {path}")

    feats: list[list[float]] = []
    width = -1
    with open(os.path.join(path, "features.csv")) as f:
        for ln, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split(",")
            try:
                row = [float(x) for x in parts]
            except ValueError:
                raise DatasetError(f"features.csv:{ln}: non-numeric value") from None
            if width < 0:
                width = len(row)
            elif len(row) != width:
                raise DatasetError(
                    f"features.csv:{ln}: ragged row ({len(row)} values, expected {width})")
            feats.append(row)
    if not feats:
        raise DatasetError("features.csv: empty")
    features = np.array(feats, dtype=np.float32)
    n = len(feats)

    labels = np.empty(n, dtype=np.int64)
    with open(os.path.join(path, "labels.csv")) as f:
        ln = 0
        for ln, line in enumerate(f, start=1):
            if ln > n:
                raise DatasetError(f"labels.csv:{ln}: more labels than nodes")
            try:
                labels[ln - 1] = int(line.strip())
            except ValueError:
                raise DatasetError(f"labels.csv:{ln}: not an integer") from None
        if ln != n:
            raise DatasetError(f"labels.csv: {ln} labels for {n} nodes")
    if labels.min() < 0:
        bad = int(np.flatnonzero(labels < 0)[0]) + 1
        raise DatasetError(f"labels.csv:{bad}: negative label")
    num_classes = len(np.unique(labels))
    if labels.max() >= num_classes:
        # classes must form the contiguous range 0..C-1
        bad = int(np.flatnonzero(labels >= num_classes)[0]) + 1
        raise DatasetError(
            f"labels.csv:{bad}: label {labels[bad - 1]} out of range [0,{num_classes})")

    masks = {name: np.zeros(n, dtype=bool) for name in _MASK_NAMES}
    with open(os.path.join(path, "masks.csv")) as f:
        ln = 0
        for ln, line in enumerate(f, start=1):
            if ln > n:
                raise DatasetError(f"masks.csv:{ln}: more rows than nodes")
            name = line.strip()
            if name not in masks:
                raise DatasetError(f"masks.csv:{ln}: expected train|val|test, got {name!r}")
            masks[name][ln - 1] = True
        if ln != n:
            raise DatasetError(f"masks.csv: {ln} rows for {n} nodes")

    srcs: list[int] = []
    dsts: list[int] = []
    with open(os.path.join(path, "edges.tsv")) as f:
        for ln, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise DatasetError(f"edges.tsv:{ln}: expected 'u<TAB>v'")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise DatasetError(f"edges.tsv:{ln}: non-integer endpoint") from None
            if not (0 <= u < n and 0 <= v < n):
                raise DatasetError(f"edges.tsv:{ln}: endpoint out of range [0,{n})")
            if u == v:
                raise DatasetError(f"edges.tsv:{ln}: self-loop not allowed")
            srcs.append(u)
            dsts.append(v)

    graph = csr_from_edges(n, np.array(srcs, dtype=np.int64),
                           np.array(dsts, dtype=np.int64))
    ds = Dataset(graph=graph, features=features, labels=labels,
                 train_mask=masks["train"], val_mask=masks["val"],
                 test_mask=masks["test"])
    ds.validate()
    return ds
