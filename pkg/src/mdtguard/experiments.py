"""End-to-end experiment runners shared by the CLI, the scripts and the acceptance suite."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .adm import AdmModel, GridRow, adm_evaluate_grid, adm_fit
from .adversary import OutageValueModel, apply_outage, inject_malicious
from .config import ExperimentConfig
from .errors import FitError, TrainingError
from .fdt import area_grid, place_fdts, write_verification_log
from .learn_core import make_rng, stratified_split
from .mrfm import SweepRow, mrfm_fit, mrfm_sweep, parse_rate_range
from .pipeline import (FdtOptions, MetricsSummary, ModelBundle, append_summary, run_guarded_son, run_mrif,
                       train_bundle, write_verdicts_csv)
from .radio_model import ShadowingField, coverage_map, nearest_site_ids
from .scenario import Dataset, Label, ScenarioState, generate_reports
from .son_engine import append_kpi_log, evaluate_kpis


def derived_seed(seed: int, *stream) -> int:
    return int(make_rng(seed, *stream).integers(2**31 - 1))


def generate(cfg: ExperimentConfig, **scenario_overrides) -> tuple[ScenarioState, Dataset]:
    """Scenario state plus its reports with the configured attack applied."""
    sc = cfg.scenario(**scenario_overrides)
    state = ScenarioState(sc)
    ds = generate_reports(sc, state)
    attack = cfg.attack(malicious_fraction=sc.malicious_fraction)
    if attack.malicious_fraction > 0 and len(ds):
        ds = inject_malicious(ds, attack)
    return state, ds


def fdt_options(cfg: ExperimentConfig, state: ScenarioState) -> FdtOptions:
    f = cfg.doc["fdt"]
    fleet = place_fdts(state.layout.positions, min(f["k"], len(state.layout.sites)), state.layout.area,
                       f["grid_resolution_m"], f["speed_mps"])
    return FdtOptions(state.outage_layout, state.field, fleet, f["floor_dbm"])


def fit_bundle(cfg: ExperimentConfig, dataset: Dataset) -> ModelBundle:
    return train_bundle(dataset, cfg.ae(), cfg.gbt(), cfg.mrfm(), cfg.rule(), cfg.test_fraction, cfg.seed,
                        cfg.gbt_standardized)


@dataclass
class TrainOutcome:
    bundle: ModelBundle | None
    adm: AdmModel | None
    problems: list[str]


def train(cfg: ExperimentConfig, dataset: Dataset) -> TrainOutcome:
    """Train detector and frontier; components that cannot be trained are reported, not fatal."""
    try:
        bundle = fit_bundle(cfg, dataset)
        return TrainOutcome(bundle, bundle.adm, [])
    except (TrainingError, FitError) as exc:
        first = str(exc)
    problems = [first]
    y = dataset.labels()
    x = dataset.features()
    train_idx, _ = stratified_split(y, cfg.test_fraction, cfg.seed)
    xt, yt = x[train_idx], y[train_idx]
    adm = None
    try:
        adm = adm_fit(xt, yt, cfg.ae(), cfg.gbt(), gbt_standardized=cfg.gbt_standardized)
    except TrainingError as exc:
        if str(exc) != first:
            problems.append(str(exc))
        try:
            # without any anomalous training rows the threshold falls back to the nominal attack rate
            ratio = None if np.any(yt != Label.NORMAL) else (cfg.scenario().malicious_fraction or 0.01)
            adm = adm_fit(xt, yt, cfg.ae(), None, outage_ratio=ratio)
        except TrainingError as exc2:
            problems.append(str(exc2))
    if adm is not None:
        try:
            mrfm_fit(xt[yt == Label.REAL_OUTAGE], cfg.mrfm())
        except FitError as exc:
            if str(exc) not in problems:
                problems.append(str(exc))
    return TrainOutcome(None, adm, problems)


@dataclass
class EvaluationOutcome:
    verdicts: list
    metrics: MetricsSummary
    verifications: list


def evaluate(cfg: ExperimentConfig, dataset: Dataset, bundle: ModelBundle, use_fdt: bool = False,
             state: ScenarioState | None = None) -> EvaluationOutcome:
    opts = None
    if use_fdt:
        opts = fdt_options(cfg, state or ScenarioState(cfg.scenario()))
    verdicts, metrics = run_mrif(dataset, bundle, use_fdt, cfg.doc["fdt"]["threshold_fraction"], opts)
    seen, visits = set(), []
    for v in verdicts:
        if v.stage3 is not None and id(v.stage3) not in seen:
            seen.add(id(v.stage3))
            visits.append(v.stage3)
    return EvaluationOutcome(verdicts, metrics, visits)


def empty_outcome() -> EvaluationOutcome:
    return EvaluationOutcome([], run_mrif(Dataset((), ""), None)[1], [])


def holdout_evaluation(cfg: ExperimentConfig, use_fdt: bool = False) -> EvaluationOutcome:
    """Generate, train on the training split, evaluate on the held-out split."""
    state, ds = generate(cfg)
    bundle = fit_bundle(cfg, ds)
    _, test = stratified_split(ds.labels(), cfg.test_fraction, cfg.seed)
    return evaluate(cfg, ds.subset(test), bundle, use_fdt, state)


def metrics_to_dict(m: MetricsSummary) -> dict:
    d = {k: v for k, v in vars(m).items() if k != "by_class"}
    d["by_class"] = {k: vars(c) for k, c in m.by_class.items()}
    return {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in d.items()}


def write_evaluation(out_dir, outcome: EvaluationOutcome) -> None:
    write_verdicts_csv(outcome.verdicts, os.path.join(out_dir, "verdicts.csv"))
    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        json.dump(metrics_to_dict(outcome.metrics), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if outcome.verifications:
        write_verification_log(outcome.verifications, os.path.join(out_dir, "verification_log.csv"))


def run_grid(cfg: ExperimentConfig) -> list[GridRow]:
    g = cfg.doc["grid"]
    return adm_evaluate_grid(cfg.scenario(), cfg.attack(), g["sizes"], g["severities"], cfg.severity_cells(),
                             cfg.ae(), cfg.gbt(), cfg.test_fraction, g["replicates"], cfg.gbt_standardized)


def run_sweep(cfg: ExperimentConfig, rates=None) -> list[SweepRow]:
    rates = parse_rate_range(cfg.doc["sweep"]["rates"]) if rates is None else list(rates)
    return mrfm_sweep(cfg.scenario(), rates, cfg.attack(), cfg.mrfm(), cfg.test_fraction)


# --------------------------------------------------------------------------
# SON laboratory (coverage before/after compensation, with and without the guard)

SONLAB_VARIANTS = ("baseline", "real_outage", "real_coc", "fake_view", "fake_coc", "guarded")


@dataclass
class SonlabResult:
    kpis: dict  # variant -> KpiSummary over the whole area
    region_kpis: dict  # variant -> KpiSummary over the real outage cells' area
    runs: dict  # (scenario, guard) -> GuardedSonResult
    metrics: dict  # scenario -> MetricsSummary of the guard on that scenario's reports
    layouts: dict
    field: ShadowingField


def run_sonlab(cfg: ExperimentConfig, guards=("none", "mrif"), use_fdt: bool = False,
               out_dir: str | None = None) -> SonlabResult:
    """Real outage vs forged outage under the trusting and the guarded SON engine.

    The guard's models are trained on a separate historical scenario of the
    same network in which ``training_outage_cells`` failed.
    """
    s = cfg.doc["sonlab"]
    seed = cfg.seed
    layout = cfg.layout()
    son_kw = dict(rsrp_floor_dbm=s["rsrp_floor_dbm"], min_reports=s["min_reports"],
                  power_boost_db=s["power_boost_db"], n_compensating=s["n_compensating"])

    hist_cfg = cfg.scenario(outage_cells=tuple(s["training_outage_cells"]),
                            rng_seed=derived_seed(seed, "sonlab", "history"))
    hist = generate_reports(hist_cfg)
    ovm = OutageValueModel.from_dataset(hist)
    hist = inject_malicious(hist, cfg.attack(strategy="mimic_outage_distribution",
                                             malicious_fraction=hist_cfg.malicious_fraction), ovm)
    bundle = fit_bundle(cfg, hist)

    healthy_state = ScenarioState(cfg.scenario(outage_cells=(), malicious_fraction=0.0))
    fake_attack = cfg.attack(strategy=s["fake_strategy"], malicious_fraction=s["fake_fraction"],
                             target_region=tuple(s["fake_target_region"]))
    fake = inject_malicious(generate_reports(healthy_state.config, healthy_state), fake_attack, ovm)
    real_state = ScenarioState(cfg.scenario(outage_cells=tuple(s["real_outage_cells"]), malicious_fraction=0.0))
    real = generate_reports(real_state.config, real_state)

    field = healthy_state.field
    pts = area_grid(layout.area, s["resolution_m"])
    region = np.isin(nearest_site_ids(pts, layout), s["real_outage_cells"])

    runs, metrics = {}, {}
    for name, ds, st in (("real", real, real_state), ("fake", fake, healthy_state)):
        kw = {}
        if use_fdt:
            kw = dict(use_fdt=True, fdt_threshold_fraction=cfg.doc["fdt"]["threshold_fraction"],
                      fdt=fdt_options(cfg, st))
        for guard in guards:
            runs[(name, guard)] = run_guarded_son(ds.reports, st.outage_layout, field, pts,
                                                  bundle if guard == "mrif" else None, guard, **son_kw, **kw)
        metrics[name] = run_mrif(ds, bundle, **kw)[1]

    naive_fake = runs.get(("fake", "none")) or run_guarded_son(fake.reports, layout, field, pts, None, "none",
                                                               **son_kw)
    naive_real = runs.get(("real", "none")) or run_guarded_son(real.reports, real_state.outage_layout, field,
                                                               pts, None, "none", **son_kw)
    guarded_fake = runs.get(("fake", "mrif")) or run_guarded_son(fake.reports, layout, field, pts, bundle,
                                                                 "mrif", **son_kw)
    suspected = [a.outage_cell for a in naive_fake.actions]
    layouts = {
        "baseline": layout,
        "real_outage": real_state.outage_layout,
        "real_coc": naive_real.layout,
        "fake_view": apply_outage(layout, suspected),
        "fake_coc": naive_fake.layout,
        "guarded": guarded_fake.layout,
    }
    kpis = {v: evaluate_kpis(lay, pts, field=field) for v, lay in layouts.items()}
    region_kpis = {v: evaluate_kpis(lay, pts[region], field=field) for v, lay in layouts.items()}
    result = SonlabResult(kpis, region_kpis, runs, metrics, layouts, field)
    if out_dir is not None:
        _write_sonlab(out_dir, cfg, result)
    return result


def _write_sonlab(out_dir, cfg: ExperimentConfig, res: SonlabResult) -> None:
    s = cfg.doc["sonlab"]
    for variant in SONLAB_VARIANTS:
        cmap = coverage_map(res.layouts[variant], s["resolution_m"], cfg.seed, field=res.field)
        cmap.write_csv(os.path.join(out_dir, f"coverage_{variant}.csv"))
    log = os.path.join(out_dir, "kpi_log.csv")
    if os.path.exists(log):
        os.remove(log)
    for variant in SONLAB_VARIANTS:
        append_kpi_log(log, "network", variant, res.kpis[variant])
    for variant in SONLAB_VARIANTS:
        append_kpi_log(log, "outage_region", variant, res.region_kpis[variant])
    summary = os.path.join(out_dir, "summary.csv")
    if os.path.exists(summary):
        os.remove(summary)
    for (scenario, guard), run in sorted(res.runs.items()):
        append_summary(summary, scenario, guard, res.metrics[scenario] if guard == "mrif" else None, run)

