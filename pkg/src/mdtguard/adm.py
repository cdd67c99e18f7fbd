"""Anomaly Detection Module: autoencoder with a quantile threshold, and a
gradient-boosted tree ensemble used as the supervised comparator.

Both models are plain numpy.  The autoencoder uses tanh hidden layers and a
linear output layer trained with Adam on mean squared reconstruction error.
The tree ensemble minimises logistic loss with second-order (Newton) leaf
values on quantile-binned features.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .adversary import AttackSpec, inject_malicious
from .errors import ConfigurationError, InvalidInputError, StateError, TrainingError
from .learn_core import (StandardizeParams, as_feature_matrix, compute_metrics, make_rng, standardize_apply,
                         standardize_fit_transform, stratified_split)
from .scenario import ScenarioConfig, generate_reports

# --------------------------------------------------------------------------
# autoencoder


@dataclass(frozen=True)
class AeConfig:
    widths: tuple[int, ...] = (16, 8, 4, 8, 16)
    epochs: int = 60
    learning_rate: float = 0.005
    batch_size: int = 64
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        w = tuple(int(v) for v in self.widths)
        object.__setattr__(self, "widths", w)
        if len(w) < 3 or w != w[::-1]:
            raise InvalidInputError(f"widths {w} must be mirror-symmetric with a bottleneck")


@dataclass
class AutoencoderModel:
    config: AeConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    threshold: float | None = None
    loss_history: list[float] = field(default_factory=list)

    @property
    def calibrated(self) -> bool:
        return self.threshold is not None

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def to_dict(self):
        return {
            "config": {**vars(self.config), "widths": list(self.config.widths)},
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "threshold": self.threshold,
            "loss_history": list(self.loss_history),
        }

    @classmethod
    def from_dict(cls, d):
        cfg = AeConfig(**{**d["config"], "widths": tuple(d["config"]["widths"])})
        return cls(cfg, [np.asarray(w, float) for w in d["weights"]],
                   [np.asarray(b, float) for b in d["biases"]], d.get("threshold"),
                   list(d.get("loss_history", [])))


def ae_init(config: AeConfig) -> AutoencoderModel:
    rng = make_rng(config.seed, "ae-init")
    weights, biases = [], []
    for fan_in, fan_out in zip(config.widths[:-1], config.widths[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return AutoencoderModel(config, weights, biases)


def _forward(weights, biases, x):
    acts = [x]
    h = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return acts


def ae_reconstruct(model: AutoencoderModel, rows) -> np.ndarray:
    x = as_feature_matrix(rows)
    return _forward(model.weights, model.biases, x)[-1]


def ae_loss_and_grads(weights, biases, x):
    """Mean squared reconstruction error over all entries, and its gradients."""
    acts = _forward(weights, biases, x)
    out = acts[-1]
    n = x.size
    diff = out - x
    loss = float(np.sum(diff * diff) / n)
    delta = 2.0 * diff / n
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ weights[i].T) * (1.0 - acts[i] ** 2)
    return loss, gw, gb


def ae_mse(model: AutoencoderModel, rows) -> float:
    x = as_feature_matrix(rows)
    return ae_loss_and_grads(model.weights, model.biases, x)[0]


def ae_train(normal_rows, config: AeConfig = AeConfig(), min_rows: int = 100) -> AutoencoderModel:
    """Mini-batch Adam on the reconstruction error of (standardized) normal rows.

    ``loss_history[0]`` is the full-data loss at initialisation and entry
    ``e`` the full-data loss after epoch ``e``.
    """
    x = as_feature_matrix(normal_rows)
    if x.shape[0] < min_rows:
        raise TrainingError(f"autoencoder needs >= {min_rows} rows, got {x.shape[0]}")
    if x.shape[1] != config.widths[0]:
        raise InvalidInputError(f"rows have {x.shape[1]} features, network expects {config.widths[0]}")
    model = ae_init(config)
    params = model.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    n_layers = len(model.weights)
    rng = make_rng(config.seed, "ae-batches")
    # overflow shows up as a non-finite loss, which is reported below
    with np.errstate(over="ignore", invalid="ignore"):
        history = [ae_mse(model, x)]
        step = 0
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(x.shape[0]) if config.shuffle else np.arange(x.shape[0])
            for start in range(0, x.shape[0], config.batch_size):
                batch = x[order[start:start + config.batch_size]]
                _, gw, gb = ae_loss_and_grads(params[:n_layers], params[n_layers:], batch)
                step += 1
                for i, g in enumerate([*gw, *gb]):
                    m[i] = b1 * m[i] + (1 - b1) * g
                    v[i] = b2 * v[i] + (1 - b2) * g * g
                    mhat = m[i] / (1 - b1 ** step)
                    vhat = v[i] / (1 - b2 ** step)
                    params[i] = params[i] - config.learning_rate * mhat / (np.sqrt(vhat) + eps)
            loss = ae_loss_and_grads(params[:n_layers], params[n_layers:], x)[0]
            if not math.isfinite(loss):
                raise TrainingError(f"autoencoder loss diverged at epoch {epoch}")
            history.append(loss)
    return AutoencoderModel(config, params[:n_layers], params[n_layers:], None, history)


def ae_reconstruction_error(model: AutoencoderModel, rows) -> np.ndarray:
    """Per-row mean squared error between input and reconstruction."""
    x = as_feature_matrix(rows)
    if x.shape[0] == 0:
        return np.zeros(0)
    out = _forward(model.weights, model.biases, x)[-1]
    return np.mean((out - x) ** 2, axis=1)


def ae_calibrate_threshold(errors, outage_ratio: float) -> float:
    """The (1 - outage_ratio) quantile of ``errors``, linearly interpolated."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise InvalidInputError("no errors to calibrate on")
    if not 0.0 < outage_ratio <= 0.5:
        raise InvalidInputError(f"outage_ratio {outage_ratio} outside (0, 0.5]")
    return float(np.quantile(e, 1.0 - outage_ratio, method="linear"))


def ae_calibrate(model: AutoencoderModel, rows, outage_ratio: float) -> AutoencoderModel:
    thr = ae_calibrate_threshold(ae_reconstruction_error(model, rows), outage_ratio)
    return replace(model, threshold=thr)


def ae_classify(model: AutoencoderModel, rows) -> np.ndarray:
    """True where a row is anomalous, i.e. its error is strictly above the threshold."""
    if not model.calibrated:
        raise StateError("autoencoder threshold is not calibrated")
    return ae_reconstruction_error(model, rows) > model.threshold


# --------------------------------------------------------------------------
# gradient-boosted trees


@dataclass(frozen=True)
class GbtConfig:
    n_rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    n_bins: int = 32
    reg_lambda: float = 1.0
    min_child_hessian: float = 1e-3


@dataclass
class RegressionTree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray  # go left when x <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=int)
        for _ in range(64):
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            idx = np.flatnonzero(inner)
            go_left = x[idx, f[idx]] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
        return self.value[node]

    def scaled(self, factor: float) -> "RegressionTree":
        return replace(self, value=self.value * factor)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["feature"], int), np.asarray(d["threshold"], float),
                   np.asarray(d["left"], int), np.asarray(d["right"], int), np.asarray(d["value"], float))


@dataclass
class GbtModel:
    config: GbtConfig
    base_score: float
    trees: list[RegressionTree]
    loss_history: list[float] = field(default_factory=list)

    def to_dict(self):
        return {"config": vars(self.config).copy(), "base_score": self.base_score,
                "trees": [t.to_dict() for t in self.trees], "loss_history": list(self.loss_history)}

    @classmethod
    def from_dict(cls, d):
        return cls(GbtConfig(**d["config"]), float(d["base_score"]),
                   [RegressionTree.from_dict(t) for t in d["trees"]], list(d.get("loss_history", [])))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _log_loss(y, margin):
    # log(1 + exp(-m)) for y=1 and log(1 + exp(m)) for y=0, computed stably
    s = np.where(y > 0, -margin, margin)
    return float(np.mean(np.logaddexp(0.0, s)))


def _bin_edges(x: np.ndarray, n_bins: int) -> list[np.ndarray]:
    qs = np.linspace(0.0, 1.0, n_bins + 1)[1:-1]
    return [np.unique(np.quantile(x[:, j], qs)) for j in range(x.shape[1])]


def _grow_tree(binned, edges, g, h, cfg: GbtConfig) -> RegressionTree:
    feature, threshold, left, right, value = [], [], [], [], []
    lam = cfg.reg_lambda

    def new_node():
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0.0)):
            lst.append(v)
        return len(feature) - 1

    def build(rows, depth):
        node = new_node()
        G, H = g[rows].sum(), h[rows].sum()
        value[node] = -G / (H + lam)
        if depth == cfg.max_depth or rows.size < 2:
            return node
        parent = G * G / (H + lam)
        best = (1e-12, -1, -1)
        for j, e in enumerate(edges):
            nb = e.size + 1
            if nb < 2:
                continue
            b = binned[rows, j]
            gl = np.cumsum(np.bincount(b, weights=g[rows], minlength=nb))[:-1]
            hl = np.cumsum(np.bincount(b, weights=h[rows], minlength=nb))[:-1]
            gr, hr = G - gl, H - hl
            ok = (hl >= cfg.min_child_hessian) & (hr >= cfg.min_child_hessian)
            gain = np.where(ok, gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent, -np.inf)
            k = int(np.argmax(gain))
            if gain[k] > best[0]:
                best = (float(gain[k]), j, k)
        _, j, k = best
        if j < 0:
            return node
        mask = binned[rows, j] <= k
        feature[node], threshold[node] = j, float(edges[j][k])
        left[node] = build(rows[mask], depth + 1)
        right[node] = build(rows[~mask], depth + 1)
        return node

    build(np.arange(binned.shape[0]), 0)
    return RegressionTree(np.array(feature, int), np.array(threshold, float), np.array(left, int),
                          np.array(right, int), np.array(value, float))


def gbt_train(rows, labels, config: GbtConfig = GbtConfig()) -> GbtModel:
    """Boost depth-limited trees on the logistic loss.

    Each round fits the Newton step of the loss (gradient p - y, hessian
    p(1 - p)).  If the shrunken tree would raise the training loss its
    leaves are halved until it does not, so the training loss never
    increases from one round to the next.
    """
    x = as_feature_matrix(rows)
    y = np.asarray(labels, dtype=float).ravel()
    if y.shape[0] != x.shape[0]:
        raise InvalidInputError("rows and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInputError("labels must be 0/1")
    if y.size == 0 or y.min() == y.max():
        raise TrainingError("gradient boosting needs both classes in the training labels")
    prior = y.mean()
    base = math.log(prior / (1.0 - prior))
    edges = _bin_edges(x, config.n_bins)
    binned = np.column_stack([np.searchsorted(e, x[:, j], side="left") for j, e in enumerate(edges)]) \
        if x.shape[1] else np.zeros((x.shape[0], 0), int)
    margin = np.full(y.size, base)
    history = [_log_loss(y, margin)]
    trees = []
    for _ in range(config.n_rounds):
        p = _sigmoid(margin)
        tree = _grow_tree(binned, edges, p - y, p * (1.0 - p), config).scaled(config.learning_rate)
        step = tree.predict(x)
        loss = _log_loss(y, margin + step)
        for _ in range(40):
            if loss <= history[-1]:
                break
            tree, step = tree.scaled(0.5), step * 0.5
            loss = _log_loss(y, margin + step)
        else:
            tree, step, loss = tree.scaled(0.0), step * 0.0, history[-1]
        margin = margin + step
        trees.append(tree)
        history.append(loss)
    return GbtModel(config, base, trees, history)


def gbt_margin(model: GbtModel, rows) -> np.ndarray:
    x = as_feature_matrix(rows)
    m = np.full(x.shape[0], model.base_score)
    for t in model.trees:
        m += t.predict(x)
    return m


def gbt_predict(model: GbtModel, rows) -> np.ndarray:
    """Probability of the positive class for each row."""
    return _sigmoid(gbt_margin(model, rows))


# --------------------------------------------------------------------------
# fitted detector and the size x severity grid

# outage cell sets per severity on the 3x3 grid: a growing corner cluster
SEVERITY_CELLS = {1: (0,), 2: (0, 1), 3: (0, 1, 3)}


@dataclass
class AdmModel:
    standardize: StandardizeParams
    ae: AutoencoderModel
    gbt: GbtModel | None = None
    gbt_standardized: bool = False

    def anomalous(self, rows) -> np.ndarray:
        return ae_classify(self.ae, standardize_apply(rows, self.standardize))

    def errors(self, rows) -> np.ndarray:
        return ae_reconstruction_error(self.ae, standardize_apply(rows, self.standardize))

    def gbt_anomalous(self, rows) -> np.ndarray:
        if self.gbt is None:
            raise StateError("no gradient-boosted model in this detector")
        x = standardize_apply(rows, self.standardize) if self.gbt_standardized else as_feature_matrix(rows)
        return gbt_predict(self.gbt, x) > 0.5

    def to_dict(self):
        return {"standardize": self.standardize.to_dict(), "ae": self.ae.to_dict(),
                "gbt": None if self.gbt is None else self.gbt.to_dict(),
                "gbt_standardized": self.gbt_standardized}

    @classmethod
    def from_dict(cls, d):
        return cls(StandardizeParams.from_dict(d["standardize"]), AutoencoderModel.from_dict(d["ae"]),
                   None if d.get("gbt") is None else GbtModel.from_dict(d["gbt"]),
                   bool(d.get("gbt_standardized", False)))


def adm_fit(rows, labels, ae_config: AeConfig = AeConfig(), gbt_config: GbtConfig | None = GbtConfig(),
            outage_ratio: float | None = None, gbt_standardized: bool = False) -> AdmModel:
    """Fit the detector on labelled training rows (label 0 = normal).

    Standardization and the autoencoder see only the normal rows.  The
    threshold is calibrated on all training rows, with ``outage_ratio``
    defaulting to their non-normal fraction.  Pass ``gbt_config=None`` to
    skip the supervised comparator.
    """
    x = as_feature_matrix(rows)
    y = np.asarray(labels).ravel()
    normal = y == 0
    z, params = standardize_fit_transform(x[normal])
    ae = ae_train(z, ae_config)
    if outage_ratio is None:
        outage_ratio = float(np.mean(~normal))
    if outage_ratio <= 0:
        raise TrainingError("training rows contain no anomalies; outage_ratio must be given")
    ae = ae_calibrate(ae, standardize_apply(x, params), min(outage_ratio, 0.5))
    gbt = None
    if gbt_config is not None:
        gx = standardize_apply(x, params) if gbt_standardized else x
        gbt = gbt_train(gx, (~normal).astype(float), gbt_config)
    return AdmModel(params, ae, gbt, gbt_standardized)


@dataclass(frozen=True)
class GridRow:
    size: int
    severity: int
    method: str
    f1: float


GRID_HEADER = ["size", "severity", "method", "f1"]


def grid_cell_seed(base_seed: int, size: int, severity: int, replicate: int) -> int:
    return int(make_rng(base_seed, "grid", size, severity, replicate).integers(2**31 - 1))


def adm_evaluate_grid(base: ScenarioConfig, attack: AttackSpec, sizes: Sequence[int] = (2500, 5000, 7500),
                      severities: Sequence[int] = (1, 2, 3), severity_cells: dict | None = None,
                      ae_config: AeConfig = AeConfig(), gbt_config: GbtConfig = GbtConfig(),
                      test_fraction: float = 0.3, replicates: int = 1,
                      gbt_standardized: bool = False) -> list[GridRow]:
    """Outage-class F1 of both detectors for every (size, severity) cell.

    Each cell generates its own dataset with an independent seed, forges
    ``attack.malicious_fraction`` of it, splits it stratified by label and
    scores the held-out part.  Positive class = any non-normal report.  With
    ``replicates > 1`` the F1 is averaged over that many independent seeds.
    """
    cells = SEVERITY_CELLS if severity_cells is None else {int(k): tuple(v) for k, v in severity_cells.items()}
    rows = []
    for size in sizes:
        for sev in severities:
            if sev not in cells:
                raise ConfigurationError(f"no outage cell set defined for severity {sev}")
            f_ae, f_gbt = [], []
            for rep in range(replicates):
                seed = grid_cell_seed(base.rng_seed, size, sev, rep)
                cfg = replace(base, n_reports=int(size), outage_cells=cells[sev], rng_seed=seed)
                ds = inject_malicious(generate_reports(cfg), replace(attack, seed=seed))
                x, y = ds.features(), ds.labels()
                train, test = stratified_split(y, test_fraction, seed)
                model = adm_fit(x[train], y[train], ae_config, gbt_config, gbt_standardized=gbt_standardized)
                truth = y[test] != 0
                f_ae.append(compute_metrics(model.anomalous(x[test]), truth, True).f1)
                f_gbt.append(compute_metrics(model.gbt_anomalous(x[test]), truth, True).f1)
            rows.append(GridRow(int(size), int(sev), "AE", float(np.mean(f_ae))))
            rows.append(GridRow(int(size), int(sev), "GBT", float(np.mean(f_gbt))))
    return rows


def write_grid_csv(rows: Sequence[GridRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_HEADER)
        for r in rows:
            w.writerow([r.size, r.severity, r.method, f"{r.f1:.6f}"])


def read_grid_csv(path) -> list[GridRow]:
    with open(path, newline="") as fh:
        return [GridRow(int(r["size"]), int(r["severity"]), r["method"], float(r["f1"]))
                for r in csv.DictReader(fh)]
