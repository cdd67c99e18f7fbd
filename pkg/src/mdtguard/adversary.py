"""Cell outages and forged MDT reports from compromised UEs."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import InjectionError, InvalidInputError
from .learn_core import make_rng
from .radio_model import NetworkLayout
from .scenario import (N_NEIGHBORS, RSRP_SENTINEL_DBM, RSRQ_SENTINEL_DB, Dataset, Label, MdtReport)

STRATEGIES = ("forge_low_rsrp", "mimic_outage_distribution")


@dataclass(frozen=True)
class AttackSpec:
    strategy: str = "forge_low_rsrp"
    malicious_fraction: float = 0.01
    # (center_x, center_y, radius_m) restricting which reports are forged
    target_region: Optional[tuple[float, float, float]] = None
    seed: int = 0
    forge_band_dbm: tuple[float, float] = (-140.0, -120.0)
    neighbor_margin_db: float = 3.0
    # eligible reports must measure this far above the coverage floor, which
    # absorbs per-report measurement noise
    coverage_margin_db: float = 5.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InvalidInputError(f"strategy must be one of {STRATEGIES}")
        if not 0.0 <= self.malicious_fraction <= 0.95:
            raise InvalidInputError("malicious_fraction must be in [0, 0.95]")
        lo, hi = self.forge_band_dbm
        if not lo <= hi:
            raise InvalidInputError("forge band must be (low, high)")
        if self.target_region is not None:
            object.__setattr__(self, "target_region", tuple(float(v) for v in self.target_region))

    @property
    def coverage_floor_dbm(self) -> float:
        """Compromised UEs must truly see better than this (the top of the forged band)."""
        return self.forge_band_dbm[1]

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "malicious_fraction": self.malicious_fraction,
            "target_region": list(self.target_region) if self.target_region else None,
            "seed": self.seed,
            "forge_band_dbm": list(self.forge_band_dbm),
            "neighbor_margin_db": self.neighbor_margin_db,
            "coverage_margin_db": self.coverage_margin_db,
        }

    @classmethod
    def from_dict(cls, d) -> "AttackSpec":
        d = dict(d)
        if d.get("forge_band_dbm") is not None:
            d["forge_band_dbm"] = tuple(d["forge_band_dbm"])
        if d.get("target_region") is not None:
            d["target_region"] = tuple(d["target_region"])
        return cls(**d)


def apply_outage(layout: NetworkLayout, cells: Sequence[int]) -> NetworkLayout:
    """Copy of ``layout`` with the listed sites switched off (zero transmit power)."""
    cells = set(int(c) for c in cells)
    unknown = cells - set(layout.site_ids)
    if unknown:
        raise InvalidInputError(f"unknown cell ids {sorted(unknown)}")
    return layout.with_sites(replace(s, active=False) if s.id in cells else s for s in layout.sites)


@dataclass(frozen=True)
class OutageValueModel:
    """Per-field empirical distributions of genuine real-outage reports."""

    serving_rsrp: np.ndarray
    serving_rsrq: np.ndarray
    neighbor_rsrp: np.ndarray  # (n, 6)
    neighbor_rsrq: np.ndarray

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "OutageValueModel":
        real = [r for r in dataset.reports if r.label == Label.REAL_OUTAGE]
        if len(real) < 10:
            raise InjectionError(f"mimic strategy needs >= 10 real-outage reports, found {len(real)}")
        return cls(
            np.array([r.serving_rsrp_dbm for r in real]),
            np.array([r.serving_rsrq_db for r in real]),
            np.array([r.neighbor_rsrp_dbm for r in real]),
            np.array([r.neighbor_rsrq_db for r in real]),
        )

    def draw(self, rng: np.random.Generator):
        """Serving RSRP, serving RSRQ and the neighbour block drawn independently.

        The six neighbour slots come from one genuine report so each slot keeps
        its own marginal and the descending order survives.
        """
        n = self.serving_rsrp.size
        s_rsrp = float(self.serving_rsrp[rng.integers(n)])
        s_rsrq = float(self.serving_rsrq[rng.integers(n)])
        j = rng.integers(n)
        n_rsrp = [float(v) for v in self.neighbor_rsrp[j]]
        n_rsrq = [float(v) for v in self.neighbor_rsrq[j]]
        return s_rsrp, s_rsrq, n_rsrp, n_rsrq


def malicious_count(fraction: float, n_reports: int) -> int:
    # rounding guards against 0.07 * 100 = 7.000000000000001
    return int(math.ceil(round(fraction * n_reports, 9)))


def _forge_low(report: MdtReport, spec: AttackSpec, rng: np.random.Generator):
    lo, hi = spec.forge_band_dbm
    s_rsrp = float(rng.uniform(lo, hi))
    s_rsrq = float(rng.uniform(-20.0, -12.0))
    n_rsrp, n_rsrq = [], []
    for v in report.neighbor_rsrp_dbm:
        if v == RSRP_SENTINEL_DBM:
            continue
        n_rsrp.append(s_rsrp + float(rng.uniform(-20.0, spec.neighbor_margin_db)))
    n_rsrp.sort(reverse=True)
    # neighbours share the serving cell's RSSI, so RSRQ offsets equal RSRP offsets
    n_rsrq = [s_rsrq + (v - s_rsrp) for v in n_rsrp]
    return s_rsrp, s_rsrq, n_rsrp, n_rsrq


def _forged(report: MdtReport, values) -> MdtReport:
    s_rsrp, s_rsrq, n_rsrp, n_rsrq = values
    pad = N_NEIGHBORS - len(n_rsrp)
    r6 = lambda v: round(float(v), 6)
    return replace(
        report,
        serving_rsrp_dbm=r6(s_rsrp),
        serving_rsrq_db=r6(s_rsrq),
        neighbor_rsrp_dbm=tuple(r6(v) for v in n_rsrp) + (RSRP_SENTINEL_DBM,) * pad,
        neighbor_rsrq_db=tuple(r6(v) for v in n_rsrq) + (RSRQ_SENTINEL_DB,) * pad,
        label=Label.MALICIOUS,
    )


def inject_count(dataset: Dataset, spec: AttackSpec, count: int,
                 outage_value_model: OutageValueModel | None = None,
                 stream: str = "inject") -> Dataset:
    """Forge exactly ``count`` normal reports (see :func:`inject_malicious`)."""
    if count == 0:
        return dataset
    if spec.strategy == "mimic_outage_distribution" and outage_value_model is None:
        outage_value_model = OutageValueModel.from_dataset(dataset)
    floor = spec.coverage_floor_dbm + spec.coverage_margin_db
    candidates = []
    for i, r in enumerate(dataset.reports):
        if r.label != Label.NORMAL or r.serving_rsrp_dbm <= floor:
            continue
        if spec.target_region is not None:
            cx, cy, rad = spec.target_region
            if math.hypot(r.x_m - cx, r.y_m - cy) > rad:
                continue
        candidates.append(i)
    if len(candidates) < count:
        raise InjectionError(f"need {count} normal reports with coverage above {floor} dBm, "
                             f"only {len(candidates)} available")
    rng = make_rng(spec.seed, stream, count)
    chosen = np.sort(rng.choice(np.array(candidates), size=count, replace=False))
    reports = list(dataset.reports)
    for i in chosen:
        if spec.strategy == "forge_low_rsrp":
            values = _forge_low(reports[i], spec, rng)
        else:
            values = outage_value_model.draw(rng)
        reports[i] = _forged(reports[i], values)
    return dataset.with_reports(reports)


def inject_malicious(dataset: Dataset, spec: AttackSpec,
                     outage_value_model: OutageValueModel | None = None) -> Dataset:
    """Overwrite the measurements of ceil(fraction * n) normal reports and label them malicious.

    Positions and serving-cell ids are kept: the adversary forges radio
    values, not GPS.  Only reports whose true serving RSRP sits above the
    forged band are eligible, so every lie is exposed by re-measurement.
    """
    count = malicious_count(spec.malicious_fraction, len(dataset))
    if count and not any(r.label == Label.NORMAL for r in dataset.reports):
        raise InjectionError("dataset has no normal report to forge")
    return inject_count(dataset, spec, count, outage_value_model)


def sweep_malicious_rate(dataset: Dataset, rates: Sequence[float], spec: AttackSpec,
                         outage_value_model: OutageValueModel | None = None) -> list[Dataset]:
    """One independently injected copy of ``dataset`` per rate."""
    out = []
    for rate in rates:
        if not 0.05 - 1e-12 <= rate <= 0.90 + 1e-12:
            raise InvalidInputError(f"rate {rate} outside [0.05, 0.90]")
        out.append(inject_malicious(dataset, replace(spec, malicious_fraction=float(rate)),
                                    outage_value_model))
    return out
