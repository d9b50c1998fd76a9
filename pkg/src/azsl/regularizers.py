"""Distribution regularizers the server evaluates on uploaded batches.

Both kinds compare generated rows against statistics of the real features,
per conditioning class, and return an analytic gradient w.r.t. the batch.
Real rows themselves never leave this module: KL keeps only mean/variance,
MMD keeps a reference subsample that is used server-side only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, SplitBundle

REG_NONE = "none"
REG_KL = "kl"
REG_MMD = "mmd"
REG_KINDS = (REG_NONE, REG_KL, REG_MMD)

VAR_FLOOR = 1e-6
MMD_REF_CAP = 256  # rows kept per class
MMD_POOL_CAP = 512  # rows used for the bandwidth median


@dataclass
class RegularizerState:
    """Frozen per-class statistics of the real features plus the weight alpha."""

    kind: str
    alpha: float
    # kl
    class_means: dict[int, np.ndarray] = field(default_factory=dict)
    class_vars: dict[int, np.ndarray] = field(default_factory=dict)
    global_mean: np.ndarray | None = None
    global_var: np.ndarray | None = None
    # mmd
    class_refs: dict[int, np.ndarray] = field(default_factory=dict)
    global_ref: np.ndarray | None = None
    bandwidth_sq: float = 1.0


def fit_regularizer(dataset: Dataset, split: SplitBundle, kind: str, alpha: float) -> RegularizerState:
    """Fit per-class statistics over the teacher training rows."""
    if kind not in REG_KINDS:
        raise ValueError(f"unknown regularizer kind {kind!r}")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    state = RegularizerState(kind=kind, alpha=alpha)
    if kind == REG_NONE:
        return state
    rows = split.teacher_train
    if rows.size == 0:
        raise ValueError("empty teacher training set")
    feats = dataset.features[rows]
    labels = dataset.labels[rows]

    if kind == REG_KL:
        state.global_mean = feats.mean(axis=0)
        state.global_var = np.maximum(feats.var(axis=0), VAR_FLOOR)
        for c in np.unique(labels):
            cls = feats[labels == c]
            if len(cls) < 2:
                continue  # global stats act as the fallback
            state.class_means[int(c)] = cls.mean(axis=0)
            state.class_vars[int(c)] = np.maximum(cls.var(axis=0), VAR_FLOOR)
        return state

    # mmd: teacher_train row order is already a seeded shuffle, take heads
    state.global_ref = feats[:MMD_REF_CAP].copy()
    pool = []
    for c in np.unique(labels):
        ref = feats[labels == c][:MMD_REF_CAP].copy()
        state.class_refs[int(c)] = ref
        pool.append(ref)
    pooled = np.concatenate(pool)[:MMD_POOL_CAP]
    sq = _pairwise_sq_dists(pooled, pooled)
    off_diag = sq[~np.eye(len(pooled), dtype=bool)]
    state.bandwidth_sq = float(max(np.median(off_diag), 1e-12)) if off_diag.size else 1.0
    return state


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = (a * a).sum(axis=1)[:, None]
    bb = (b * b).sum(axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)


def _kl_class(rows: np.ndarray, mu: np.ndarray, var: np.ndarray) -> tuple[float, np.ndarray]:
    """KL( N(batch stats) || N(real stats) ) with diagonal covariances."""
    n = len(rows)
    m = rows.mean(axis=0)
    v_raw = rows.var(axis=0)
    v = np.maximum(v_raw, VAR_FLOOR)
    value = 0.5 * np.sum(np.log(var / v) + (v + (m - mu) ** 2) / var - 1.0)
    # d value / dv vanishes where the floor is active
    dv = 0.5 * (1.0 / var - 1.0 / v) * (v_raw > VAR_FLOOR)
    dm = (m - mu) / var
    grad = (dm + (rows - m) * (2.0 * dv)) / n
    return float(value), grad


def _mmd_class(rows: np.ndarray, ref: np.ndarray, h2: float) -> tuple[float, np.ndarray]:
    """Biased (V-statistic) squared MMD with k(x,y)=exp(-||x-y||^2/h2); always >= 0."""
    n, m = len(rows), len(ref)
    k_xx = np.exp(-_pairwise_sq_dists(rows, rows) / h2)
    k_yy = np.exp(-_pairwise_sq_dists(ref, ref) / h2)
    k_xy = np.exp(-_pairwise_sq_dists(rows, ref) / h2)
    value = k_xx.mean() + k_yy.mean() - 2.0 * k_xy.mean()

    # d/dx_i of sum_ab k(x_a,x_b): both index slots hit row i, so
    # grad_i = -4/h2 [ (sum_j k_ij) x_i - (K rows)_i ] / n^2, likewise for K_xy
    grad = (-4.0 / (n * n * h2)) * (k_xx.sum(axis=1, keepdims=True) * rows - k_xx @ rows)
    grad += (4.0 / (n * m * h2)) * (k_xy.sum(axis=1, keepdims=True) * rows - k_xy @ ref)
    return float(value), grad


def reg_value_grad(
    state: RegularizerState, batch: np.ndarray, cond_labels
) -> tuple[float, np.ndarray]:
    """Regularizer value (averaged over classes present) and gradient w.r.t. batch."""
    batch = np.asarray(batch, dtype=np.float64)
    labels = np.asarray(cond_labels, dtype=np.int64)
    if batch.ndim != 2 or labels.shape != (batch.shape[0],):
        raise ValueError("batch rows and conditioning labels must align")
    if state.kind == REG_NONE:
        return 0.0, np.zeros_like(batch)

    grad = np.zeros_like(batch)
    classes = np.unique(labels)
    total = 0.0
    for c in classes:
        mask = labels == c
        rows = batch[mask]
        if state.kind == REG_KL:
            mu = state.class_means.get(int(c), state.global_mean)
            var = state.class_vars.get(int(c), state.global_var)
            if mu is None:
                raise ValueError(f"no statistics for class {c} and no global fallback")
            value_c, grad_c = _kl_class(rows, mu, var)
        else:
            ref = state.class_refs.get(int(c), state.global_ref)
            if ref is None:
                raise ValueError(f"no reference rows for class {c} and no global fallback")
            value_c, grad_c = _mmd_class(rows, ref, state.bandwidth_sq)
        total += value_c
        grad[mask] = grad_c
    k = len(classes)
    return total / k, grad / k
