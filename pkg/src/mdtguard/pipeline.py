"""MRIF: detector, then density filter, then optional drone verification.

Each report gets a stage-1 verdict from the anomaly detector.  Flagged
reports get a stage-2 verdict from the density filter: malicious when the
report lies outside the learnt outage frontier and too few other UEs flag
trouble around it.  With drone verification enabled, cells where only a
sparse fraction of reports is flagged are visited and the re-measurement
overrides stage 2 for that cell.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .adm import AdmModel, AeConfig, GbtConfig, adm_fit
from .errors import CompatibilityError, TrainingError
from .fdt import ATTACK_CONFIRMED, DEFAULT_CONFIRMATION_FLOOR_DBM, FdtFleet, VerificationResult, verify_at
from .learn_core import stratified_split
from .mrfm import LofModel, MrfmParams, RegionalRule, mrfm_fit, regional_counts
from .radio_model import NetworkLayout, ShadowingField
from .scenario import FEATURE_COLUMNS, Dataset, Label, MdtReport
from .son_engine import (DEFAULT_MIN_REPORTS, DEFAULT_POWER_BOOST_DB, DEFAULT_RSRP_FLOOR_DBM, CocAction, KpiSummary, SonEngine,
                         evaluate_kpis)

BUNDLE_FORMAT = "mdtguard-bundle/1"
FEATURE_SCHEMA_DIGEST = hashlib.sha256(",".join(FEATURE_COLUMNS).encode()).hexdigest()[:16]

STAGE1_NORMAL = "normal"
STAGE1_ANOMALOUS = "anomalous"
FINAL_NAMES = {Label.NORMAL: "normal", Label.REAL_OUTAGE: "real_outage", Label.MALICIOUS: "malicious"}


# --------------------------------------------------------------------------
# model bundle


@dataclass
class ModelBundle:
    adm: AdmModel
    mrfm: LofModel
    rule: RegionalRule = RegionalRule()
    schema_digest: str = FEATURE_SCHEMA_DIGEST
    training_digest: str = ""
    report: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "format": BUNDLE_FORMAT,
            "schema_digest": self.schema_digest,
            "training_digest": self.training_digest,
            "rule": {"eta": self.rule.eta, "region_radius_m": self.rule.region_radius_m},
            "adm": self.adm.to_dict(),
            "mrfm": self.mrfm.to_dict(),
            "report": self.report,
        }

    @classmethod
    def from_dict(cls, d) -> "ModelBundle":
        if d.get("format") != BUNDLE_FORMAT:
            raise CompatibilityError(f"unsupported bundle format {d.get('format')!r}")
        return cls(AdmModel.from_dict(d["adm"]), LofModel.from_dict(d["mrfm"]), RegionalRule(**d["rule"]),
                   d["schema_digest"], d.get("training_digest", ""), d.get("report", {}))

    def digest(self) -> str:
        blob = json.dumps({k: v for k, v in self.to_dict().items() if k != "report"}, sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_bundle(bundle: ModelBundle, path) -> str:
    d = bundle.to_dict()
    d["digest"] = bundle.digest()
    with open(path, "w") as fh:
        json.dump(d, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    return d["digest"]


def load_bundle(path) -> ModelBundle:
    with open(path) as fh:
        d = json.load(fh)
    bundle = ModelBundle.from_dict(d)
    if "digest" in d and d["digest"] != bundle.digest():
        raise CompatibilityError(f"bundle {path} fails its digest check")
    return bundle


def train_bundle(dataset: Dataset, ae_config: AeConfig = AeConfig(), gbt_config: GbtConfig | None = GbtConfig(),
                 mrfm_params: MrfmParams = MrfmParams(), rule: RegionalRule = RegionalRule(),
                 test_fraction: float = 0.3, seed: int = 0, gbt_standardized: bool = False) -> ModelBundle:
    """Fit detector and frontier on the training split of ``dataset``."""
    y = dataset.labels()
    x = dataset.features()
    train, _ = stratified_split(y, test_fraction, seed) if test_fraction > 0 else (np.arange(len(y)), None)
    xt, yt = x[train], y[train]
    adm = adm_fit(xt, yt, ae_config, gbt_config, gbt_standardized=gbt_standardized)
    mrfm = mrfm_fit(xt[yt == Label.REAL_OUTAGE], mrfm_params)
    report = {
        "train_rows": int(train.size),
        "ae_initial_loss": adm.ae.loss_history[0],
        "ae_final_loss": adm.ae.loss_history[-1],
        "ae_threshold": adm.ae.threshold,
        "gbt_final_loss": None if adm.gbt is None else adm.gbt.loss_history[-1],
        "lof_threshold": mrfm.decision_threshold,
        "lof_reference_points": int(mrfm.reference.shape[0]),
        "lof_outside_fraction": mrfm.outside_fraction,
    }
    return ModelBundle(adm, mrfm, rule, FEATURE_SCHEMA_DIGEST, dataset.config_digest, report)


# --------------------------------------------------------------------------
# verdicts


@dataclass(frozen=True)
class VerdictRecord:
    report: MdtReport
    stage1: str
    reconstruction_error: float
    stage2: Label | None = None
    lof_score: float | None = None
    region_count: int | None = None
    stage3: VerificationResult | None = None
    final: Label = Label.NORMAL


@dataclass(frozen=True)
class ClassCounts:
    total: int
    as_normal: int
    as_real: int
    as_malicious: int


@dataclass(frozen=True)
class MetricsSummary:
    by_class: dict
    detected_malicious: int
    missed_malicious: int
    false_malicious: int
    malicious_recall: float
    real_misflag_rate: float
    ue_detected_malicious: int
    ue_missed_malicious: int
    ue_false_malicious: int
    fdt_visits: int = 0
    fdt_malicious_only_cells: int = 0
    fdt_malicious_only_corrected: int = 0


def _summarize(verdicts: Sequence[VerdictRecord], visits) -> MetricsSummary:
    truth = np.array([int(v.report.label) for v in verdicts], dtype=int)
    final = np.array([int(v.final) for v in verdicts], dtype=int)
    by_class = {}
    for lab in Label:
        m = truth == lab
        by_class[FINAL_NAMES[lab]] = ClassCounts(int(m.sum()), int(np.sum(final[m] == Label.NORMAL)),
                                                 int(np.sum(final[m] == Label.REAL_OUTAGE)),
                                                 int(np.sum(final[m] == Label.MALICIOUS)))
    mal, flagged = truth == Label.MALICIOUS, final == Label.MALICIOUS
    real = truth == Label.REAL_OUTAGE
    ue_truth: dict[int, bool] = {}
    ue_flag: dict[int, bool] = {}
    for v, t, f in zip(verdicts, mal, flagged):
        ue_truth[v.report.ue_id] = ue_truth.get(v.report.ue_id, False) or bool(t)
        ue_flag[v.report.ue_id] = ue_flag.get(v.report.ue_id, False) or bool(f)
    ue_t = np.array(list(ue_truth.values()), bool)
    ue_f = np.array([ue_flag[u] for u in ue_truth], bool)
    only_mal = [cells for cells in visits if cells[1]]
    return MetricsSummary(
        by_class,
        int(np.sum(mal & flagged)), int(np.sum(mal & ~flagged)), int(np.sum(~mal & flagged)),
        float(np.mean(flagged[mal])) if mal.any() else float("nan"),
        float(np.mean(flagged[real])) if real.any() else float("nan"),
        int(np.sum(ue_t & ue_f)), int(np.sum(ue_t & ~ue_f)), int(np.sum(~ue_t & ue_f)),
        len(visits), len(only_mal), sum(1 for c in only_mal if c[2]),
    )


@dataclass(frozen=True)
class FdtOptions:
    layout: NetworkLayout
    field: ShadowingField
    fleet: FdtFleet | None = None
    floor_dbm: float = DEFAULT_CONFIRMATION_FLOOR_DBM


def run_mrif(dataset: Dataset, models: ModelBundle, use_fdt: bool = False, fdt_threshold_fraction: float = 0.05,
             fdt: FdtOptions | None = None) -> tuple[list[VerdictRecord], MetricsSummary]:
    """Final verdict for every report, plus metrics against the ground-truth labels.

    ``fdt`` supplies the true network state for re-measurement and is
    required when ``use_fdt`` is set.  A cell (by claimed serving cell) is
    visited when some but fewer than ``fdt_threshold_fraction`` of its
    reports are flagged; the drone flies to the centroid of the flagged
    reports and its verdict replaces stage 2 for all of them.
    """
    if len(dataset) == 0:
        return [], _summarize([], [])
    if models.schema_digest != FEATURE_SCHEMA_DIGEST:
        raise CompatibilityError(f"model schema {models.schema_digest} != data schema {FEATURE_SCHEMA_DIGEST}")
    if use_fdt and fdt is None:
        raise CompatibilityError("drone verification needs the true layout and shadowing field")
    reports = dataset.reports
    n = len(reports)
    x = dataset.features()
    errors = models.adm.errors(x)
    flagged = errors > models.adm.ae.threshold
    idx = np.flatnonzero(flagged)
    stage2 = np.full(n, -1)
    lof = np.full(n, np.nan)
    counts = np.full(n, -1)
    if idx.size:
        lof[idx] = models.mrfm.scores(x[idx])
        counts[idx] = regional_counts(x[idx, :2], models.rule, dataset.ue_ids()[idx])
        outside = lof[idx] > models.mrfm.decision_threshold
        isolated = counts[idx] < models.rule.eta
        stage2[idx] = np.where(outside & isolated, Label.MALICIOUS, Label.REAL_OUTAGE)
    stage3: dict[int, VerificationResult] = {}
    visits = []
    if use_fdt and idx.size:
        cells = dataset.serving_cells()
        for cell in np.unique(cells):
            in_cell = cells == cell
            hit = np.flatnonzero(in_cell & flagged)
            if hit.size == 0 or hit.size / in_cell.sum() >= fdt_threshold_fraction:
                continue
            centroid = x[hit, :2].mean(axis=0)
            res = verify_at(centroid, [reports[i] for i in hit], fdt.layout, fdt.field, fdt.floor_dbm, fdt.fleet)
            for i in hit:
                stage3[int(i)] = res
            malicious_only = all(reports[i].label == Label.MALICIOUS for i in hit)
            visits.append((int(cell), malicious_only, res.verdict == ATTACK_CONFIRMED))
    verdicts = []
    for i, r in enumerate(reports):
        if not flagged[i]:
            verdicts.append(VerdictRecord(r, STAGE1_NORMAL, float(errors[i])))
            continue
        s2 = Label(int(stage2[i]))
        s3 = stage3.get(i)
        final = s2 if s3 is None else (Label.MALICIOUS if s3.verdict == ATTACK_CONFIRMED else Label.REAL_OUTAGE)
        verdicts.append(VerdictRecord(r, STAGE1_ANOMALOUS, float(errors[i]), s2, float(lof[i]), int(counts[i]),
                                      s3, final))
    return verdicts, _summarize(verdicts, visits)


VERDICT_HEADER = ["ue_id", "tick", "stage1", "stage2", "final"]


def write_verdicts_csv(verdicts: Sequence[VerdictRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VERDICT_HEADER)
        for v in verdicts:
            w.writerow([v.report.ue_id, v.report.tick, v.stage1,
                        "" if v.stage2 is None else FINAL_NAMES[v.stage2], FINAL_NAMES[v.final]])


def mrif_filter(models: ModelBundle, **run_kwargs):
    """A SON report filter that drops every report MRIF calls malicious."""

    def keep(reports):
        if not reports:
            return []
        verdicts, _ = run_mrif(Dataset(tuple(reports), ""), models, **run_kwargs)
        return [v.report for v in verdicts if v.final != Label.MALICIOUS]

    return keep


# --------------------------------------------------------------------------
# guarded SON


GUARDS = ("none", "mrif")


@dataclass(frozen=True)
class GuardedSonResult:
    before: KpiSummary
    after: KpiSummary
    actions: tuple[CocAction, ...]
    layout: NetworkLayout


def run_guarded_son(reports: Sequence[MdtReport], layout: NetworkLayout, field: ShadowingField, eval_points,
                    models: ModelBundle | None = None, guard: str = "none",
                    rsrp_floor_dbm: float = DEFAULT_RSRP_FLOOR_DBM, min_reports: int = DEFAULT_MIN_REPORTS,
                    power_boost_db: float = DEFAULT_POWER_BOOST_DB, n_compensating: int = 3,
                    **run_kwargs) -> GuardedSonResult:
    """KPIs of the true network before and after the SON engine acts on ``reports``.

    ``layout`` is the network as it really is (failed sites switched off);
    compensation is applied on top of it.
    """
    if guard not in GUARDS:
        raise ValueError(f"guard must be one of {GUARDS}")
    if guard == "mrif" and models is None:
        raise TrainingError("guard 'mrif' needs a trained model bundle")
    filt = (lambda rs: rs) if guard == "none" else mrif_filter(models, **run_kwargs)
    engine = SonEngine(layout, filt, rsrp_floor_dbm, min_reports, power_boost_db, n_compensating)
    before = evaluate_kpis(layout, eval_points, field=field, reports=reports)
    actions = engine.process(list(reports))
    after = evaluate_kpis(engine.layout, eval_points, field=field, reports=reports)
    return GuardedSonResult(before, after, tuple(actions), engine.layout)


SUMMARY_HEADER = ["scenario", "guard", "detected_malicious", "missed_malicious", "false_malicious", "coc_fired",
                  "mean_sinr_db", "p05_sinr_db"]


def append_summary(path, scenario: str, guard: str, metrics: MetricsSummary | None, result: GuardedSonResult):
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if fresh:
            w.writerow(SUMMARY_HEADER)
        m = metrics
        w.writerow([scenario, guard, "" if m is None else m.detected_malicious,
                    "" if m is None else m.missed_malicious, "" if m is None else m.false_malicious,
                    int(bool(result.actions)), f"{result.after.mean_sinr_db:.6f}", f"{result.after.p05_sinr_db:.6f}"])
