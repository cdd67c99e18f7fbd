"""Small numeric substrate shared by the detectors.

Everything here works on plain 2-D float arrays (rows x features).  All
randomness goes through :func:`make_rng`, which derives an independent
Philox stream from an integer seed plus a tuple of stream names, so two
modules that use the same seed never consume each other's draws.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .errors import InvalidInputError, SplitError


def _stream_key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Return a Philox-backed generator for ``(seed, *stream)``.

    Philox is a counter-based 64-bit generator; the stream names are hashed
    with CRC-32 into the seed sequence's spawn key.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_stream_key(p) for p in stream))
    return np.random.Generator(np.random.Philox(ss))


def as_feature_matrix(values) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1) if x.size else x.reshape(0, 0)
    if x.ndim != 2:
        raise InvalidInputError(f"expected a 2-D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("feature matrix contains non-finite values")
    return x


# --------------------------------------------------------------------------
# standardization


@dataclass(frozen=True)
class StandardizeParams:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float))


def standardize_fit_transform(train) -> tuple[np.ndarray, StandardizeParams]:
    x = as_feature_matrix(train)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    # constant columns keep their scale
    std = np.where(std < 1e-12, 1.0, std)
    params = StandardizeParams(mean, std)
    return standardize_apply(x, params), params


def standardize_apply(data, params: StandardizeParams) -> np.ndarray:
    x = as_feature_matrix(data)
    if x.shape[0] == 0:
        return x.reshape(0, params.mean.shape[0])
    return (x - params.mean) / params.std


# --------------------------------------------------------------------------
# PCA via cyclic Jacobi


def jacobi_eigh(matrix, tol: float = 1e-15, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` sorted by descending eigenvalue,
    eigenvectors as columns with the largest-magnitude entry made positive.
    """
    a = np.array(matrix, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError("jacobi_eigh needs a square matrix")
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12):
        raise InvalidInputError("jacobi_eigh needs a symmetric matrix")
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.linalg.norm(a), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.triu(a, 1) ** 2)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    flip = v[np.argmax(np.abs(v), axis=0), np.arange(n)] < 0
    v[:, flip] *= -1.0
    return w, v


@dataclass(frozen=True)
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray  # (cols, k), orthonormal columns
    explained_variance: np.ndarray  # top-k eigenvalues of the sample covariance
    explained_variance_ratio: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[1]

    def to_dict(self):
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        mean = np.asarray(d["mean"], float)
        comps = np.asarray(d["components"], float).reshape(mean.shape[0], -1)
        return cls(mean, comps, np.asarray(d["explained_variance"], float),
                   np.asarray(d["explained_variance_ratio"], float))


def pca_fit(data, k: int) -> PcaBasis:
    x = as_feature_matrix(data)
    rows, cols = x.shape
    if k < 0 or k > cols:
        raise InvalidInputError(f"k={k} outside [0, {cols}]")
    if rows < 2:
        raise InvalidInputError("PCA needs at least 2 rows")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (rows - 1)
    cov = 0.5 * (cov + cov.T)
    w, v = jacobi_eigh(cov)
    w = np.clip(w, 0.0, None)
    total = w.sum()
    ratio = w / total if total > 0 else np.zeros_like(w)
    return PcaBasis(mean, v[:, :k].copy(), w[:k].copy(), ratio[:k].copy())


def pca_project(basis: PcaBasis, data) -> np.ndarray:
    x = as_feature_matrix(data)
    if x.shape[0] == 0:
        return np.zeros((0, basis.k))
    return (x - basis.mean) @ basis.components


def pca_reconstruct(basis: PcaBasis, projected) -> np.ndarray:
    return np.asarray(projected, float) @ basis.components.T + basis.mean


# --------------------------------------------------------------------------
# splitting and metrics


def stratified_split(labels: Sequence[Hashable], test_fraction: float, seed: int):
    """Split row indices per class, returning sorted ``(train_idx, test_idx)``.

    Each class contributes ``round(test_fraction * n_class)`` rows to the
    test side (halves round up).
    """
    if not 0.0 <= test_fraction < 1.0:
        raise SplitError(f"test_fraction {test_fraction} outside [0, 1)")
    y = np.asarray(labels)
    rng = make_rng(seed, "stratified_split")
    train, test = [], []
    for cls in sorted(set(y.tolist())):
        idx = np.flatnonzero(y == cls)
        if idx.size < 2:
            raise SplitError(f"class {cls!r} has {idx.size} row(s); need at least 2")
        n_test = int(math.floor(test_fraction * idx.size + 0.5))
        perm = rng.permutation(idx)
        test.append(perm[:n_test])
        train.append(perm[n_test:])
    if not train:
        return np.zeros(0, int), np.zeros(0, int)
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


@dataclass(frozen=True)
class ClassificationMetrics:
    precision: float
    recall: float
    f1: float
    error_rates: dict  # class -> misclassified / total for that class
    tp: int
    fp: int
    fn: int
    tn: int


def compute_metrics(predicted, truth, positive) -> ClassificationMetrics:
    pred = np.asarray(predicted)
    true = np.asarray(truth)
    if pred.shape != true.shape:
        raise InvalidInputError(f"length mismatch: {pred.shape} vs {true.shape}")
    p_pos, t_pos = pred == positive, true == positive
    tp = int(np.sum(p_pos & t_pos))
    fp = int(np.sum(p_pos & ~t_pos))
    fn = int(np.sum(~p_pos & t_pos))
    tn = int(np.sum(~p_pos & ~t_pos))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    error_rates = {}
    for cls in sorted(set(true.tolist()), key=str):
        mask = true == cls
        error_rates[cls] = float(np.mean(pred[mask] != cls))
    return ClassificationMetrics(precision, recall, f1, error_rates, tp, fp, fn, tn)
