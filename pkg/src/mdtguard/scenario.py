"""UE deployment, MDT report generation and dataset serialization."""
from __future__ import annotations

import csv
import enum
import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, IntegrityError, InvalidInputError, ParseError
from .learn_core import make_rng
from .radio_model import NetworkLayout, ShadowingField, grid_layout, radio_quantities, rsrp_matrix

N_NEIGHBORS = 6
RSRP_SENTINEL_DBM = -160.0
RSRQ_SENTINEL_DB = -30.0
# bottom of the 3GPP measurement reporting ranges; a serving cell that
# radiates nothing is reported at these values
RSRP_REPORT_FLOOR_DBM = -140.0
RSRQ_REPORT_FLOOR_DB = -19.5

FEATURE_COLUMNS = (
    ["x_m", "y_m", "serving_rsrp_dbm", "serving_rsrq_db"]
    + [f"n{i}_rsrp" for i in range(1, N_NEIGHBORS + 1)]
    + [f"n{i}_rsrq" for i in range(1, N_NEIGHBORS + 1)]
)
CSV_HEADER = (
    ["ue_id", "tick", "x_m", "y_m", "serving_cell", "serving_rsrp_dbm", "serving_rsrq_db"]
    + [f"n{i}_rsrp" for i in range(1, N_NEIGHBORS + 1)]
    + [f"n{i}_rsrq" for i in range(1, N_NEIGHBORS + 1)]
    + ["label"]
)


class Label(enum.IntEnum):
    NORMAL = 0
    REAL_OUTAGE = 1
    MALICIOUS = 2


@dataclass(frozen=True)
class MdtReport:
    ue_id: int
    tick: int
    x_m: float
    y_m: float
    serving_cell: int
    serving_rsrp_dbm: float
    serving_rsrq_db: float
    neighbor_rsrp_dbm: tuple[float, ...]
    neighbor_rsrq_db: tuple[float, ...]
    label: Label = Label.NORMAL

    @property
    def position(self) -> tuple[float, float]:
        return (self.x_m, self.y_m)

    def features(self) -> list[float]:
        return [self.x_m, self.y_m, self.serving_rsrp_dbm, self.serving_rsrq_db,
                *self.neighbor_rsrp_dbm, *self.neighbor_rsrq_db]


REPORTING_MODES = ("immediate", "logged")
OUTAGE_REPORTING = ("camped", "reselect")


@dataclass(frozen=True)
class ScenarioConfig:
    layout: NetworkLayout = field(default_factory=lambda: grid_layout(tx_power_dbm=33.0))
    n_ues: int = 1000
    n_reports: int = 7500
    outage_cells: tuple[int, ...] = ()
    malicious_fraction: float = 0.01
    reporting_mode: str = "immediate"
    logged_period: int = 4
    rng_seed: int = 0
    # per-report RSRP measurement error (dB, Gaussian, independent per cell)
    measurement_noise_db: float = 1.0
    # "camped": UEs of a failed cell keep reporting it at the reporting floor;
    # "reselect": they report whatever the next-best active cell delivers
    outage_reporting: str = "camped"
    max_ticks: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "outage_cells", tuple(int(c) for c in self.outage_cells))
        if self.n_ues < 1:
            raise ConfigurationError("n_ues must be >= 1")
        if self.n_reports < 0:
            raise ConfigurationError("n_reports must be >= 0")
        if not 0.0 <= self.malicious_fraction <= 0.95:
            raise ConfigurationError("malicious_fraction must be in [0, 0.95]")
        unknown = set(self.outage_cells) - set(self.layout.site_ids)
        if unknown:
            raise ConfigurationError(f"outage cells {sorted(unknown)} not in layout")
        if self.reporting_mode not in REPORTING_MODES:
            raise ConfigurationError(f"reporting_mode must be one of {REPORTING_MODES}")
        if self.logged_period < 1:
            raise ConfigurationError("logged_period must be >= 1")
        if self.outage_reporting not in OUTAGE_REPORTING:
            raise ConfigurationError(f"outage_reporting must be one of {OUTAGE_REPORTING}")
        if self.measurement_noise_db < 0:
            raise ConfigurationError("measurement_noise_db must be >= 0")

    def to_dict(self):
        return {
            "layout": self.layout.to_dict(),
            "n_ues": self.n_ues,
            "n_reports": self.n_reports,
            "outage_cells": list(self.outage_cells),
            "malicious_fraction": self.malicious_fraction,
            "reporting_mode": self.reporting_mode,
            "logged_period": self.logged_period,
            "rng_seed": self.rng_seed,
            "measurement_noise_db": self.measurement_noise_db,
            "outage_reporting": self.outage_reporting,
            "max_ticks": self.max_ticks,
        }

    @classmethod
    def from_dict(cls, d) -> "ScenarioConfig":
        d = dict(d)
        if "layout" in d:
            d["layout"] = NetworkLayout.from_dict(d["layout"])
        if "outage_cells" in d:
            d["outage_cells"] = tuple(d["outage_cells"])
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Dataset:
    reports: tuple[MdtReport, ...]
    config_digest: str = ""

    def __post_init__(self):
        object.__setattr__(self, "reports", tuple(self.reports))

    def __len__(self):
        return len(self.reports)

    def features(self) -> np.ndarray:
        """16-column feature matrix in FEATURE_COLUMNS order; labels are never included."""
        if not self.reports:
            return np.zeros((0, len(FEATURE_COLUMNS)))
        return np.array([r.features() for r in self.reports], dtype=float)

    def labels(self) -> np.ndarray:
        return np.array([int(r.label) for r in self.reports], dtype=int)

    def positions(self) -> np.ndarray:
        return np.array([r.position for r in self.reports], dtype=float).reshape(-1, 2)

    def ue_ids(self) -> np.ndarray:
        return np.array([r.ue_id for r in self.reports], dtype=int)

    def serving_cells(self) -> np.ndarray:
        return np.array([r.serving_cell for r in self.reports], dtype=int)

    def subset(self, indices) -> "Dataset":
        return Dataset(tuple(self.reports[int(i)] for i in indices), self.config_digest)

    def with_reports(self, reports) -> "Dataset":
        return Dataset(tuple(reports), self.config_digest)


# --------------------------------------------------------------------------
# generation


def deploy_ues(n: int, area, seed: int) -> np.ndarray:
    """``n`` positions i.i.d. uniform over the area, shape (n, 2)."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    w, h = area
    return make_rng(seed, "deploy_ues").uniform([0.0, 0.0], [w, h], size=(n, 2))


def _round(v) -> float:
    return round(float(v), 6)


def _pad(values, sentinel):
    vals = [sentinel if not np.isfinite(v) else _round(v) for v in values[:N_NEIGHBORS]]
    return tuple(vals + [sentinel] * (N_NEIGHBORS - len(vals)))


def _measurement_rows(rsrp, layout, camped_on):
    """Build (serving_cell, s_rsrp, s_rsrq, n_rsrp, n_rsrq) per UE for one tick.

    ``camped_on[u]`` is the failed site index UE ``u`` still reports, or -1.
    """
    _, _, rsrq = radio_quantities(rsrp, layout)
    order = np.argsort(-rsrp, axis=1, kind="stable")
    ids = layout.site_ids
    rows = []
    for u in range(rsrp.shape[0]):
        o = order[u]
        if camped_on[u] >= 0:
            serving = ids[camped_on[u]]
            s_rsrp, s_rsrq = RSRP_REPORT_FLOOR_DBM, RSRQ_REPORT_FLOOR_DB
            nb = o
        else:
            s = o[0]
            serving = ids[s]
            s_rsrp, s_rsrq = _round(rsrp[u, s]), _round(rsrq[u, s])
            nb = o[1:]
        rows.append((serving, s_rsrp, s_rsrq,
                     _pad(rsrp[u, nb], RSRP_SENTINEL_DBM), _pad(rsrq[u, nb], RSRQ_SENTINEL_DB)))
    return rows


class ScenarioState:
    """Everything about a generated scenario that downstream stages re-use."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        layout = config.layout
        self.layout = layout
        self.outage_layout = layout.with_sites(
            replace(s, active=s.active and s.id not in config.outage_cells) for s in layout.sites)
        self.field = ShadowingField(layout, config.rng_seed)
        self.ue_positions = np.round(deploy_ues(config.n_ues, layout.area, config.rng_seed), 6)
        self.ue_shadowing = self.field(self.ue_positions)
        healthy = rsrp_matrix(self.ue_positions, layout, self.ue_shadowing)
        self.true_serving_index = np.argmax(healthy, axis=1)
        ids = np.array(layout.site_ids)
        self.true_serving_id = ids[self.true_serving_index]
        self.in_outage = np.isin(self.true_serving_id, config.outage_cells)
        self.base_rsrp = rsrp_matrix(self.ue_positions, self.outage_layout, self.ue_shadowing)

    def measure(self, tick: int):
        cfg = self.config
        rsrp = self.base_rsrp.copy()
        if cfg.measurement_noise_db > 0:
            rsrp += make_rng(cfg.rng_seed, "measurement", tick).normal(
                0.0, cfg.measurement_noise_db, size=rsrp.shape)
        if cfg.outage_reporting == "camped":
            camped = np.where(self.in_outage, self.true_serving_index, -1)
        else:
            camped = np.full(rsrp.shape[0], -1)
        return _measurement_rows(rsrp, self.outage_layout, camped)


def _ticks_needed(cfg: ScenarioConfig) -> int:
    per_tick = math.ceil(cfg.n_reports / cfg.n_ues) if cfg.n_reports else 0
    if cfg.reporting_mode == "logged":
        return math.ceil(per_tick / cfg.logged_period) * cfg.logged_period
    return per_tick


def generate_reports(config: ScenarioConfig, state: ScenarioState | None = None) -> Dataset:
    """Simulate MDT reporting until exactly ``n_reports`` reports exist.

    Immediate mode emits one report per UE per tick.  Logged mode buffers
    ``logged_period`` ticks per UE and delivers them at the flush tick,
    keeping the original measurement values.  Labels are ground truth:
    a report is ``REAL_OUTAGE`` when the UE's serving cell in the healthy
    network is one of ``outage_cells``.
    """
    cfg = config
    if not any(s.active for s in cfg.layout.sites):
        raise ConfigurationError("layout has no active site")
    needed = _ticks_needed(cfg)
    if needed > cfg.max_ticks:
        raise ConfigurationError(
            f"{cfg.n_reports} reports need {needed} ticks with {cfg.n_ues} UEs; budget is {cfg.max_ticks}")
    state = state or ScenarioState(cfg)
    if cfg.n_reports and not any(s.active for s in state.outage_layout.sites):
        raise ConfigurationError("every cell is in outage; no report can be measured")
    labels = np.where(state.in_outage, Label.REAL_OUTAGE, Label.NORMAL)

    def make(u, deliver_tick, row):
        serving, s_rsrp, s_rsrq, n_rsrp, n_rsrq = row
        x, y = state.ue_positions[u]
        return MdtReport(u, deliver_tick, float(x), float(y), int(serving), s_rsrp, s_rsrq,
                         n_rsrp, n_rsrq, Label(int(labels[u])))

    reports: list[MdtReport] = []
    period = cfg.logged_period if cfg.reporting_mode == "logged" else 1
    tick = 0
    while len(reports) < cfg.n_reports:
        batch = [state.measure(t) for t in range(tick, tick + period)]
        flush = tick + period - 1
        for u in range(cfg.n_ues):
            for rows in batch:
                if len(reports) == cfg.n_reports:
                    break
                reports.append(make(u, flush, rows[u]))
        tick += period
    return Dataset(tuple(reports), cfg.digest())


# --------------------------------------------------------------------------
# CSV round trip


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def _row(r: MdtReport) -> list[str]:
    return ([str(r.ue_id), str(r.tick), _fmt(r.x_m), _fmt(r.y_m), str(r.serving_cell),
             _fmt(r.serving_rsrp_dbm), _fmt(r.serving_rsrq_db)]
            + [_fmt(v) for v in r.neighbor_rsrp_dbm]
            + [_fmt(v) for v in r.neighbor_rsrq_db]
            + [str(int(r.label))])


def _meta_path(path) -> str:
    return os.fspath(path) + ".meta.json"


def write_dataset(dataset: Dataset, path) -> None:
    """Write the fixed-header CSV plus a ``.meta.json`` sidecar holding the config digest."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in dataset.reports:
            w.writerow(_row(r))
    with open(path, "rb") as fh:
        content = hashlib.sha256(fh.read()).hexdigest()
    with open(_meta_path(path), "w") as fh:
        json.dump({"config_digest": dataset.config_digest, "n_reports": len(dataset),
                   "sha256": content}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_row(fields: Sequence[str], line: int) -> MdtReport:
    if len(fields) != len(CSV_HEADER):
        raise ParseError(f"expected {len(CSV_HEADER)} fields, got {len(fields)}; last good line {line - 1}",
                         line=line)
    try:
        floats = [float(v) for v in fields[5:19]]
        label = Label(int(fields[19]))
        report = MdtReport(int(fields[0]), int(fields[1]), float(fields[2]), float(fields[3]),
                           int(fields[4]), floats[0], floats[1], tuple(floats[2:8]),
                           tuple(floats[8:14]), label)
    except ValueError as exc:
        raise ParseError(f"{exc}; last good line {line - 1}", line=line) from None
    return report


def read_dataset(path, strict: bool = False, expected_digest: str | None = None) -> Dataset:
    meta = None
    if os.path.exists(_meta_path(path)):
        with open(_meta_path(path)) as fh:
            meta = json.load(fh)
    elif strict:
        raise IntegrityError(f"{path}: no metadata sidecar")
    with open(path, newline="") as fh:
        raw = fh.read()
    lines = raw.split("\n")
    if not lines or lines[0].strip() == "":
        raise ParseError("missing header", line=1)
    header = next(csv.reader([lines[0]]))
    if header != CSV_HEADER:
        raise ParseError("unexpected header", line=1)
    reports = []
    for i, text in enumerate(lines[1:], start=2):
        if text == "" and i == len(lines):
            break
        reports.append(_parse_row(next(csv.reader([text])) if text else [], i))
    if lines[-1] != "":
        # the file did not end with a newline: the final row was cut short
        raise ParseError(f"truncated final row; last good line {len(lines) - 1}", line=len(lines))
    digest = meta.get("config_digest", "") if meta else ""
    if strict:
        if hashlib.sha256(raw.encode()).hexdigest() != meta.get("sha256"):
            raise IntegrityError(f"{path}: content hash does not match metadata")
        if expected_digest is not None and digest != expected_digest:
            raise IntegrityError(f"{path}: config digest {digest} != expected {expected_digest}")
    return Dataset(tuple(reports), digest)
