"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line that is printed in the terminal
summary.  Preset outputs come from the command-line front end, run twice
into separate directories, so the determinism criterion compares the very
files the other criteria read.
"""
import csv
import filecmp
import functools
import os
import time

import numpy as np
import pytest

from mdtguard import cli
from mdtguard import config as configmod
from mdtguard.config import ExperimentConfig
from mdtguard.experiments import generate, holdout_evaluation
from mdtguard.mrfm import mrfm_evaluate

import test_adm
import test_fdt
import test_learn_core
import test_mrfm
import test_radio_model
from conftest import ACCEPTANCE

SEEDS = range(5)


def record(name, ok, detail):
    ACCEPTANCE.append((name, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


@functools.lru_cache(maxsize=None)
def preset_run(preset, *flags):
    """Run a preset command twice; returns (first out dir, second out dir, seconds for one run)."""
    root = os.path.join(os.environ.get("PYTEST_ACCEPTANCE_DIR", "/tmp/mdtguard-acceptance"), preset, *flags)
    dirs = []
    took = 0.0
    for attempt in ("a", "b"):
        out = os.path.join(root.replace("--", ""), attempt)
        t0 = time.perf_counter()
        code = cli.main([flags[0], "--config", preset, "--out", out, *flags[1:]])
        took = time.perf_counter() - t0
        assert code == 0, f"{preset} {' '.join(flags)} exited {code}"
        dirs.append(out)
    return dirs[0], dirs[1], took


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def grid_table():
    out, _, took = preset_run("fig5c-grid", "evaluate", "--grid")
    f1 = {(r["method"], int(r["size"]), int(r["severity"])): float(r["f1"])
          for r in read_rows(os.path.join(out, "grid.csv"))}
    return f1, took


# ---------------------------------------------------------------- 1, 2: detector grid


def test_criterion_1_detector_band():
    f1, took = grid_table()
    worst = min(f1, key=f1.get)
    ok = len(f1) == 18 and f1[worst] >= 0.90 and took < 600
    record("1 detector F1 band", ok, f"18 cells, min F1 {f1[worst]:.4f} at {worst}, grid run {took:.0f} s")


def test_criterion_2_detector_trends():
    f1, _ = grid_table()
    problems = []
    for method in ("AE", "GBT"):
        rises = []
        for size in (2500, 5000, 7500):
            for sev in (1, 2):
                step = f1[(method, size, sev + 1)] - f1[(method, size, sev)]
                if step > 0:
                    rises.append((size, sev, step))
        if len(rises) > 1 or any(step > 0.01 for *_, step in rises):
            problems.append(f"{method} rises with severity at " +
                            ", ".join(f"size {s} sev {v}->{v + 1} (+{d:.4f})" for s, v, d in rises))
        for sev in (1, 2, 3):
            if f1[(method, 7500, sev)] < f1[(method, 2500, sev)] - 0.01:
                problems.append(f"{method} sev {sev}: 7500 below 2500 by more than 0.01")
    record("2 detector trends", not problems, "; ".join(problems) or "severity and size trends hold")


# ---------------------------------------------------------------- 3, 4: filter


def test_criterion_3_filter_anchor():
    cfg = ExperimentConfig(configmod.load("fig5e-sweep"))
    real, fake = [], []
    for seed in SEEDS:
        c = cfg.with_seed(seed)
        _, ds = generate(c)
        res = mrfm_evaluate(ds, c.mrfm(), c.test_fraction, seed)
        real.append(res.real_accuracy)
        fake.append(res.fake_accuracy)
    r, f = float(np.mean(real)), float(np.mean(fake))
    record("3 filter anchor", r >= 0.80 and f >= 0.80,
           f"mean real accuracy {r:.3f}, mean fake accuracy {f:.3f} over seeds 0-4")


def test_criterion_4_filter_sweep():
    out, _, _ = preset_run("fig5e-sweep", "evaluate", "--sweep-fake-rate", "0.05:0.90:0.05")
    rows = read_rows(os.path.join(out, "sweep.csv"))
    rates = [float(r["fake_rate"]) for r in rows]
    real = [float(r["real_error_rate"]) for r in rows]
    fake = [float(r["fake_error_rate"]) for r in rows]
    spread = max(real) - min(real)
    worst_fake = max(e for rate, e in zip(rates, fake) if rate <= 0.5 + 1e-9)
    ok = len(rows) == 18 and spread <= 0.1 and worst_fake <= 0.25
    record("4 filter sweep", ok,
           f"{len(rows)} rates, real error spread {spread:.4f}, worst fake error (rate <= 0.5) {worst_fake:.4f}")


# ---------------------------------------------------------------- 5: SON laboratory


def test_criterion_5_son_laboratory():
    out, _, _ = preset_run("fig2-coc", "sonlab")
    kpi = {(r["scenario"], r["variant"]): r for r in read_rows(os.path.join(out, "kpi_log.csv"))}
    p05 = lambda v: float(kpi[("outage_region", v)]["p05_sinr_db"])  # noqa: E731
    mean = lambda v: float(kpi[("network", v)]["mean_sinr_db"])  # noqa: E731
    a = p05("real_coc") > p05("real_outage")
    b = mean("fake_coc") < mean("baseline")
    c = all(kpi[("network", "guarded")][k] == kpi[("network", "baseline")][k]
            for k in ("mean_sinr_db", "p05_sinr_db", "coverage_ratio"))
    record("5 SON laboratory", a and b and c,
           f"(a) region p05 {p05('real_outage'):.3f} -> {p05('real_coc'):.3f} dB; "
           f"(b) mean {mean('baseline'):.3f} -> {mean('fake_coc'):.3f} dB; (c) guarded equals baseline: {c}")


# ---------------------------------------------------------------- 6: numeric property suites


def test_criterion_6_numeric_properties():
    checks = {
        "AE gradients vs central differences": test_adm.test_gradients_match_central_differences,
        "LOF vs brute force": lambda: [test_mrfm.test_lof_matches_brute_force(*a)
                                       for a in [(12, 3, 2, 0), (60, 5, 3, 1), (200, 15, 4, 2)]],
        "PCA eigenvalues vs oracle": lambda: (test_learn_core.test_jacobi_matches_independent_eigensolver(),
                                              test_learn_core.test_pca_explained_variance_matches_oracle_50x16()),
        "shadowing covariance": test_radio_model.test_shadowing_empirical_covariance_within_three_standard_errors,
        "greedy k-center vs exhaustive": test_fdt.test_greedy_within_twice_optimum,
    }
    failed = []
    for name, check in checks.items():
        try:
            check()
        except AssertionError as exc:
            failed.append(f"{name} ({exc})")
    record("6 numeric property suites", not failed, "; ".join(failed) or f"{len(checks)} suites agree with oracles")


# ---------------------------------------------------------------- 7: end to end


def test_criterion_7_end_to_end():
    cfg = ExperimentConfig(configmod.load("paper-baseline"))
    recall, misflag, visited, corrected = [], [], 0, 0
    for seed in SEEDS:
        m = holdout_evaluation(cfg.with_seed(seed)).metrics
        recall.append(m.malicious_recall)
        misflag.append(m.real_misflag_rate)
        f = holdout_evaluation(cfg.with_seed(seed), use_fdt=True).metrics
        visited += f.fdt_malicious_only_cells
        corrected += f.fdt_malicious_only_corrected
    r, mf = float(np.mean(recall)), float(np.mean(misflag))
    ok = r >= 0.90 and mf <= 0.10 and corrected == visited
    record("7 end-to-end", ok, f"malicious recall {r:.3f}, real misflag {mf:.3f} over seeds 0-4; "
                               f"drone corrected {corrected}/{visited} malicious-only cells")


# ---------------------------------------------------------------- 8: determinism


PRESET_COMMANDS = [
    ("paper-baseline", "generate"),
    ("paper-baseline", "evaluate", "--use-fdt"),
    ("fig2-coc", "sonlab"),
    ("fig5c-grid", "evaluate", "--grid"),
    ("fig5e-sweep", "evaluate", "--sweep-fake-rate", "0.05:0.90:0.05"),
]


def test_criterion_8_determinism():
    differing, compared = [], 0
    for cmd in PRESET_COMMANDS:
        a, b, _ = preset_run(*cmd)
        files = sorted(f for f in os.listdir(a) if f.endswith((".csv", ".json")))
        assert any(f.endswith(".csv") for f in files), cmd
        for name in files:
            compared += 1
            if not filecmp.cmp(os.path.join(a, name), os.path.join(b, name), shallow=False):
                differing.append(f"{cmd[0]}/{name}")
    record("8 determinism", not differing,
           f"{compared} output files over {len(PRESET_COMMANDS)} preset commands, differing: {differing or 'none'}")
