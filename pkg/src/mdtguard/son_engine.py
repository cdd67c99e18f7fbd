"""A deliberately trusting SON engine: outage trigger plus Cell Outage Compensation.

The engine believes whatever reports reach it.  A report filter can be
plugged in front of the trigger; with the identity filter it is the naive
engine an adversary can steer, with the MRIF verdict filter it is the
guarded one.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import EvaluationError, InvalidActionError
from .radio_model import NetworkLayout, ShadowingField, radio_quantities, rsrp_matrix
from .scenario import MdtReport

DEFAULT_RSRP_FLOOR_DBM = -120.0
DEFAULT_MIN_REPORTS = 5
DEFAULT_POWER_BOOST_DB = 3.0
DEFAULT_COVERAGE_SINR_DB = -6.0


@dataclass(frozen=True)
class CocAction:
    outage_cell: int
    compensating_cells: tuple[int, ...]
    power_boost_db: float = DEFAULT_POWER_BOOST_DB

    def __post_init__(self):
        object.__setattr__(self, "compensating_cells", tuple(int(c) for c in self.compensating_cells))
        if self.outage_cell in self.compensating_cells:
            raise InvalidActionError("a cell cannot compensate for itself")
        if not 0.0 <= self.power_boost_db <= 10.0:
            raise InvalidActionError("power boost must be within [0, 10] dB")


@dataclass(frozen=True)
class KpiSummary:
    mean_sinr_db: float
    p05_sinr_db: float
    coverage_ratio: float
    report_counts: dict = field(default_factory=dict)


def trigger_outage_detection(reports: Sequence[MdtReport], layout: NetworkLayout,
                             rsrp_floor_dbm: float = DEFAULT_RSRP_FLOOR_DBM,
                             min_reports: int = DEFAULT_MIN_REPORTS) -> list[int]:
    """Cells named as serving by at least ``min_reports`` sub-floor reports.

    A UE whose cell fails keeps naming its pre-outage best server, so the
    claimed serving cell is the attribution.  Cells unknown to ``layout``
    are ignored.
    """
    if not reports:
        return []
    known = set(layout.site_ids)
    counts: dict[int, int] = {}
    for r in reports:
        if r.serving_rsrp_dbm < rsrp_floor_dbm and r.serving_cell in known:
            counts[r.serving_cell] = counts.get(r.serving_cell, 0) + 1
    return sorted(c for c, n in counts.items() if n >= min_reports)


def compensating_neighbors(layout: NetworkLayout, cell: int, k: int = 3) -> tuple[int, ...]:
    """The ``k`` geographically nearest active sites to ``cell`` (ties to the lower id)."""
    centre = np.asarray(layout.site(cell).position)
    cands = [s for s in layout.sites if s.active and s.id != cell]
    cands.sort(key=lambda s: (float(np.hypot(*(np.asarray(s.position) - centre))), s.id))
    return tuple(s.id for s in cands[:k])


def apply_coc(layout: NetworkLayout, action: CocAction) -> NetworkLayout:
    """Raise each compensating site's transmit power by the action's boost."""
    for cid in action.compensating_cells:
        if not layout.site(cid).active:
            raise InvalidActionError(f"cannot compensate with inactive cell {cid}")
    if action.power_boost_db == 0 or not action.compensating_cells:
        return layout
    boosted = set(action.compensating_cells)
    return layout.with_sites(
        replace(s, tx_power_dbm=s.tx_power_dbm + action.power_boost_db) if s.id in boosted else s
        for s in layout.sites)


def sinr_at(layout: NetworkLayout, points, field: ShadowingField) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if not any(s.active for s in layout.sites):
        raise EvaluationError("no coverage at any evaluation point")
    _, sinr, _ = radio_quantities(rsrp_matrix(pts, layout, field(pts)), layout)
    return sinr


def evaluate_kpis(layout: NetworkLayout, eval_points, seed: int | None = None,
                  field: ShadowingField | None = None,
                  coverage_sinr_db: float = DEFAULT_COVERAGE_SINR_DB,
                  reports: Iterable[MdtReport] = ()) -> KpiSummary:
    """SINR statistics over the evaluation points under the scenario's shadowing."""
    pts = np.asarray(eval_points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise EvaluationError("no evaluation points")
    if field is None:
        field = ShadowingField(layout, 0 if seed is None else seed)
    sinr = sinr_at(layout, pts, field)
    counts: dict[int, int] = {}
    for r in reports:
        counts[r.serving_cell] = counts.get(r.serving_cell, 0) + 1
    return KpiSummary(float(np.mean(sinr)), float(np.percentile(sinr, 5)),
                      float(np.mean(sinr >= coverage_sinr_db)), dict(sorted(counts.items())))


ReportFilter = Callable[[Sequence[MdtReport]], Sequence[MdtReport]]


def _trust_everything(reports):
    return reports


class SonEngine:
    """Outage trigger + COC with a pluggable report filter.

    The engine records every action and refuses to compensate the same
    outage cell twice.
    """

    def __init__(self, layout: NetworkLayout, report_filter: ReportFilter = _trust_everything,
                 rsrp_floor_dbm: float = DEFAULT_RSRP_FLOOR_DBM, min_reports: int = DEFAULT_MIN_REPORTS,
                 power_boost_db: float = DEFAULT_POWER_BOOST_DB, n_compensating: int = 3):
        self.planned_layout = layout
        self.layout = layout
        self.report_filter = report_filter
        self.rsrp_floor_dbm = rsrp_floor_dbm
        self.min_reports = min_reports
        self.power_boost_db = power_boost_db
        self.n_compensating = n_compensating
        self.actions: list[CocAction] = []

    def apply(self, action: CocAction) -> None:
        if any(a.outage_cell == action.outage_cell for a in self.actions):
            raise InvalidActionError(f"cell {action.outage_cell} is already compensated")
        self.layout = apply_coc(self.layout, action)
        self.actions.append(action)

    def process(self, reports: Sequence[MdtReport]) -> list[CocAction]:
        """Run the trigger on the (filtered) reports and compensate each new suspect."""
        trusted = list(self.report_filter(reports))
        suspects = trigger_outage_detection(trusted, self.planned_layout, self.rsrp_floor_dbm,
                                            self.min_reports)
        new = []
        done = {a.outage_cell for a in self.actions}
        for cell in suspects:
            if cell in done:
                continue
            action = CocAction(cell, compensating_neighbors(self.layout, cell, self.n_compensating),
                               self.power_boost_db)
            self.apply(action)
            new.append(action)
        return new


KPI_LOG_HEADER = ["scenario", "variant", "mean_sinr_db", "p05_sinr_db", "coverage_ratio"]


def append_kpi_log(path, scenario: str, variant: str, kpis: KpiSummary) -> None:
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if fresh:
            w.writerow(KPI_LOG_HEADER)
        w.writerow([scenario, variant, f"{kpis.mean_sinr_db:.6f}", f"{kpis.p05_sinr_db:.6f}",
                    f"{kpis.coverage_ratio:.6f}"])
