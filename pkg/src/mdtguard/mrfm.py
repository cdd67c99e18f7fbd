"""Malicious Reports Filtering Module.

Real outages are geographically collocated; forged ones are scattered.
Two density mechanisms separate them among the reports the detector
flagged: a Local Outlier Factor frontier learnt from genuine outage
reports, and a count rule on how many other UEs flag trouble nearby.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .adversary import AttackSpec, inject_count
from .errors import FitError, InvalidInputError, StateError
from .learn_core import (PcaBasis, StandardizeParams, as_feature_matrix, pca_fit, pca_project, standardize_apply,
                         standardize_fit_transform, stratified_split)
from .scenario import Dataset, Label, ScenarioConfig, generate_reports

REACH_FLOOR = 1e-12

# --------------------------------------------------------------------------
# Local Outlier Factor


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", d, d))


def _knn(dist: np.ndarray, k: int):
    """Indices and distances of the k smallest entries per row (stable order)."""
    idx = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return idx, np.take_along_axis(dist, idx, axis=1)


@dataclass(frozen=True)
class _Reference:
    points: np.ndarray
    k: int
    k_distance: np.ndarray
    lrd: np.ndarray
    self_neighbors: np.ndarray


def _lrd(neighbor_dist, neighbor_idx, k_distance):
    reach = np.maximum(neighbor_dist, k_distance[neighbor_idx])
    return 1.0 / np.maximum(reach.mean(axis=1), REACH_FLOOR)


def _reference(points: np.ndarray, k: int, chunk: int = 512) -> _Reference:
    n = points.shape[0]
    if not 1 <= k < n:
        raise InvalidInputError(f"need 1 <= k < {n} reference points, got k={k}")
    nbr_idx = np.empty((n, k), dtype=int)
    nbr_dist = np.empty((n, k))
    for s in range(0, n, chunk):
        d = _pairwise(points[s:s + chunk], points)
        rows = np.arange(d.shape[0])
        d[rows, s + rows] = np.inf  # a point is not its own neighbour
        nbr_idx[s:s + chunk], nbr_dist[s:s + chunk] = _knn(d, k)
    k_distance = nbr_dist[:, -1]
    return _Reference(points, k, k_distance, _lrd(nbr_dist, nbr_idx, k_distance), nbr_idx)


def _score_queries(ref: _Reference, queries: np.ndarray, chunk: int = 512) -> np.ndarray:
    out = np.empty(queries.shape[0])
    for s in range(0, queries.shape[0], chunk):
        d = _pairwise(queries[s:s + chunk], ref.points)
        idx, dist = _knn(d, ref.k)
        lrd_q = _lrd(dist, idx, ref.k_distance)
        out[s:s + chunk] = ref.lrd[idx].mean(axis=1) / lrd_q
    return out


def _self_scores(ref: _Reference) -> np.ndarray:
    return ref.lrd[ref.self_neighbors].mean(axis=1) / ref.lrd


def _check_points(points, name):
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if not np.all(np.isfinite(p)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return p


def lof_scores(reference, queries, k: int) -> np.ndarray:
    """LOF of each query with respect to ``reference``.

    A query's k nearest neighbours are taken from the reference set; each
    reference point's k-distance and local reachability density are
    computed within the reference set, excluding the point itself.
    Neighbourhoods hold exactly k points (ties broken by reference order).
    Mean reachability distances are floored at 1e-12, so a cloud of
    identical points scores exactly 1.
    """
    ref = _reference(_check_points(reference, "reference"), int(k))
    q = _check_points(queries, "queries")
    if q.shape[0] == 0:
        return np.zeros(0)
    return _score_queries(ref, q)


def lof_score(reference, query, k: int) -> float:
    return float(lof_scores(reference, np.asarray(query, dtype=float)[None, :], k)[0])


def lof_training_scores(reference, k: int) -> np.ndarray:
    """Leave-self-out LOF of every reference point against the others."""
    return _self_scores(_reference(_check_points(reference, "reference"), int(k)))


# --------------------------------------------------------------------------
# frontier model


@dataclass(frozen=True)
class MrfmParams:
    n_neighbors: int = 15
    contamination: float = 0.15
    pca_k: int = 2

    def __post_init__(self):
        if self.n_neighbors < 1:
            raise InvalidInputError("n_neighbors must be >= 1")
        if not 0.0 < self.contamination < 0.5:
            raise InvalidInputError("contamination must be in (0, 0.5)")
        if not 0 <= self.pca_k <= 14:
            raise InvalidInputError("pca_k must be in [0, 14]")


@dataclass
class LofModel:
    params: MrfmParams
    position_mean: np.ndarray
    position_std: np.ndarray
    position_scale: float
    measurement_standardize: StandardizeParams
    pca: PcaBasis
    reference: np.ndarray
    decision_threshold: float
    training_scores: np.ndarray

    def embed(self, rows) -> np.ndarray:
        """Map 16-column report features to the LOF space."""
        x = as_feature_matrix(rows)
        pos = (x[:, :2] - self.position_mean) / self.position_std * self.position_scale
        if self.pca.k == 0:
            return pos
        meas = standardize_apply(x[:, 2:], self.measurement_standardize)
        return np.hstack([pos, pca_project(self.pca, meas)])

    def scores(self, rows) -> np.ndarray:
        x = as_feature_matrix(rows)
        if x.shape[0] == 0:
            return np.zeros(0)
        return _score_queries(self._ref(), self.embed(x))

    def _ref(self) -> _Reference:
        ref = self.__dict__.get("_cached_ref")
        if ref is None:
            ref = _reference(self.reference, self.params.n_neighbors)
            self.__dict__["_cached_ref"] = ref
        return ref

    @property
    def outside_fraction(self) -> float:
        return float(np.mean(self.training_scores > self.decision_threshold))

    def to_dict(self):
        return {
            "params": vars(self.params).copy(),
            "position_mean": self.position_mean.tolist(),
            "position_std": self.position_std.tolist(),
            "position_scale": self.position_scale,
            "measurement_standardize": self.measurement_standardize.to_dict(),
            "pca": self.pca.to_dict(),
            "reference": self.reference.tolist(),
            "decision_threshold": self.decision_threshold,
            "training_scores": self.training_scores.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(MrfmParams(**d["params"]), np.asarray(d["position_mean"], float),
                   np.asarray(d["position_std"], float), float(d["position_scale"]),
                   StandardizeParams.from_dict(d["measurement_standardize"]), PcaBasis.from_dict(d["pca"]),
                   np.asarray(d["reference"], float).reshape(-1, 2 + PcaBasis.from_dict(d["pca"]).k),
                   float(d["decision_threshold"]), np.asarray(d["training_scores"], float))


def mrfm_fit(real_outage_rows, params: MrfmParams = MrfmParams()) -> LofModel:
    """Learn the frontier of genuine outage reports.

    Space: (x, y) standardized and then scaled to the mean standard
    deviation of the kept principal components, followed by the top
    ``pca_k`` components of the standardized 14 measurement columns.
    The decision threshold is the (1 - contamination) quantile of the
    leave-self-out training scores.
    """
    x = as_feature_matrix(real_outage_rows)
    if x.shape[1] != 16:
        raise InvalidInputError(f"expected 16 feature columns, got {x.shape[1]}")
    if x.shape[0] < params.n_neighbors + 1:
        raise FitError(f"need >= {params.n_neighbors + 1} real-outage reports, got {x.shape[0]}")
    pos = x[:, :2]
    p_mean = pos.mean(axis=0)
    p_std = pos.std(axis=0)
    p_std = np.where(p_std < 1e-12, 1.0, p_std)
    meas, mparams = standardize_fit_transform(x[:, 2:])
    basis = pca_fit(meas, params.pca_k)
    scale = float(np.sqrt(np.mean(basis.explained_variance))) if basis.k else 1.0
    if not scale > 1e-12:
        scale = 1.0
    model = LofModel(params, p_mean, p_std, scale, mparams, basis, np.zeros((0, 2 + basis.k)), 0.0, np.zeros(0))
    model.reference = model.embed(x)
    ref = _reference(model.reference, params.n_neighbors)
    model.__dict__["_cached_ref"] = ref
    model.training_scores = _self_scores(ref)
    model.decision_threshold = float(np.quantile(model.training_scores, 1.0 - params.contamination))
    return model


def mrfm_classify(model: LofModel | None, flagged_rows) -> np.ndarray:
    """Labels (REAL_OUTAGE or MALICIOUS) for flagged rows: malicious iff LOF > threshold."""
    if model is None:
        raise StateError("MRFM model is not fitted")
    s = model.scores(flagged_rows)
    return np.where(s > model.decision_threshold, Label.MALICIOUS, Label.REAL_OUTAGE).astype(int)


# --------------------------------------------------------------------------
# regional count rule


@dataclass(frozen=True)
class RegionalRule:
    eta: int = 10
    region_radius_m: float = 100.0

    def __post_init__(self):
        if self.eta < 1:
            raise InvalidInputError("eta must be >= 1")
        if not self.region_radius_m > 0:
            raise InvalidInputError("region radius must be > 0")


def regional_counts(positions, rule: RegionalRule = RegionalRule(), ue_ids=None) -> np.ndarray:
    """Per flagged report, the number of distinct other UEs flagged within the radius.

    Without ``ue_ids`` every report counts as its own UE.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = pos.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int)
    ids = np.arange(n) if ue_ids is None else np.asarray(ue_ids)
    uniq, inv = np.unique(ids, return_inverse=True)
    counts = np.empty(n, dtype=int)
    for s in range(0, n, 512):
        near = _pairwise(pos[s:s + 512], pos) <= rule.region_radius_m
        for r in range(near.shape[0]):
            ues = np.zeros(uniq.size, dtype=bool)
            ues[inv[near[r]]] = True
            ues[inv[s + r]] = False
            counts[s + r] = int(ues.sum())
    return counts


def regional_count_rule(positions, rule: RegionalRule = RegionalRule(), ue_ids=None) -> np.ndarray:
    """REAL_OUTAGE where at least ``eta`` other UEs flag trouble nearby, else MALICIOUS."""
    c = regional_counts(positions, rule, ue_ids)
    return np.where(c >= rule.eta, Label.REAL_OUTAGE, Label.MALICIOUS).astype(int)


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class SeparationResult:
    real_accuracy: float
    fake_accuracy: float
    n_real: int
    n_fake: int


def _accuracies(pred_real, pred_fake) -> SeparationResult:
    ra = float(np.mean(pred_real == Label.REAL_OUTAGE)) if pred_real.size else float("nan")
    fa = float(np.mean(pred_fake == Label.MALICIOUS)) if pred_fake.size else float("nan")
    return SeparationResult(ra, fa, int(pred_real.size), int(pred_fake.size))


def mrfm_evaluate(dataset: Dataset, params: MrfmParams = MrfmParams(), test_fraction: float = 0.3,
                  seed: int = 0) -> SeparationResult:
    """Fit on training real outages, then separate held-out real outages from held-out forgeries."""
    y = dataset.labels()
    x = dataset.features()
    train, test = stratified_split(y, test_fraction, seed)
    model = mrfm_fit(x[train][y[train] == Label.REAL_OUTAGE], params)
    yt, xt = y[test], x[test]
    return _accuracies(mrfm_classify(model, xt[yt == Label.REAL_OUTAGE]),
                       mrfm_classify(model, xt[yt == Label.MALICIOUS]))


@dataclass(frozen=True)
class SweepRow:
    fake_rate: float
    real_error_rate: float
    fake_error_rate: float


SWEEP_HEADER = ["fake_rate", "real_error_rate", "fake_error_rate"]


def parse_rate_range(text: str) -> list[float]:
    """'A:B:STEP' -> [A, A+STEP, ..., B] (inclusive, rounded to 10 decimals)."""
    try:
        a, b, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise InvalidInputError(f"rate range must be A:B:STEP, got {text!r}") from None
    if step <= 0 or b < a:
        raise InvalidInputError(f"empty rate range {text!r}")
    n = int(math.floor((b - a) / step + 1e-9)) + 1
    return [round(a + i * step, 10) for i in range(n)]


def mrfm_sweep(base: ScenarioConfig, rates: Sequence[float], attack: AttackSpec = AttackSpec(),
               params: MrfmParams = MrfmParams(), test_fraction: float = 0.3) -> list[SweepRow]:
    """Per-class error rates while the volume of forged outages grows.

    One scenario is generated and split once; the frontier is fitted on the
    training real outages.  For each rate, ``ceil(rate * n_real_test)``
    held-out normal reports are forged and classified together with the
    held-out real outages.
    """
    ds = generate_reports(replace(base, malicious_fraction=0.0))
    y = ds.labels()
    train, test = stratified_split(y, test_fraction, base.rng_seed)
    model = mrfm_fit(ds.features()[train][y[train] == Label.REAL_OUTAGE], params)
    test_ds = ds.subset(test)
    yt = test_ds.labels()
    real_pred = mrfm_classify(model, test_ds.features()[yt == Label.REAL_OUTAGE])
    n_real = int(real_pred.size)
    rows = []
    for rate in rates:
        if not 0.0 < rate <= 0.95:
            raise InvalidInputError(f"fake rate {rate} outside (0, 0.95]")
        count = int(math.ceil(round(rate * n_real, 9)))
        forged = inject_count(test_ds, replace(attack, malicious_fraction=float(rate)), count, stream="sweep")
        fy = forged.labels()
        fake_pred = mrfm_classify(model, forged.features()[fy == Label.MALICIOUS])
        acc = _accuracies(real_pred, fake_pred)
        rows.append(SweepRow(float(rate), 1.0 - acc.real_accuracy, 1.0 - acc.fake_accuracy))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([f"{r.fake_rate:.4f}", f"{r.real_error_rate:.6f}", f"{r.fake_error_rate:.6f}"])
