"""Command-line front end.

Exit codes: 0 success, 1 runtime failure (including partial training),
2 configuration error, 3 compatibility error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import config as configmod
from .adm import write_grid_csv
from .config import ExperimentConfig
from .errors import CompatibilityError, ConfigurationError, MdtGuardError, ParseError
from .experiments import (empty_outcome, evaluate, fit_bundle, generate, holdout_evaluation, run_grid, run_sonlab,
                          run_sweep, train, write_evaluation)
from .learn_core import stratified_split
from .mrfm import parse_rate_range, write_sweep_csv
from .pipeline import FEATURE_SCHEMA_DIGEST, load_bundle, save_bundle
from .scenario import read_dataset, write_dataset

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_COMPAT = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "MDTGUARD_OUT"


def _prepare(args, command: str) -> tuple[ExperimentConfig, str]:
    doc = configmod.load(args.config)
    if args.seed is not None:
        doc["seed"] = int(args.seed)
    cfg = ExperimentConfig(doc)
    out = args.out or doc.get("output_dir") or os.path.join(os.environ.get(OUTPUT_ROOT_ENV, "runs"),
                                                            doc["name"], command)
    os.makedirs(out, exist_ok=True)
    configmod.dump(doc, os.path.join(out, "resolved_config.json"))
    return cfg, out


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_generate(args) -> int:
    cfg, out = _prepare(args, "generate")
    _, ds = generate(cfg)
    path = os.path.join(out, "dataset.csv")
    write_dataset(ds, path)
    _say(f"wrote {len(ds)} reports to {path}")
    return EXIT_OK


def _load_or_generate(cfg: ExperimentConfig, path: str | None):
    if path:
        return None, read_dataset(path)
    return generate(cfg)


def cmd_train(args) -> int:
    cfg, out = _prepare(args, "train")
    _, ds = _load_or_generate(cfg, args.dataset)
    outcome = train(cfg, ds)
    report = {"problems": outcome.problems}
    if outcome.bundle is not None:
        digest = save_bundle(outcome.bundle, os.path.join(out, "bundle.json"))
        report.update(outcome.bundle.report, bundle_digest=digest, status="complete")
        code = EXIT_OK
    else:
        report["status"] = "partial" if outcome.adm is not None else "failed"
        if outcome.adm is not None:
            with open(os.path.join(out, "adm_model.json"), "w") as fh:
                json.dump(outcome.adm.to_dict(), fh, sort_keys=True, separators=(",", ":"))
                fh.write("\n")
            report.update(ae_threshold=outcome.adm.ae.threshold, ae_final_loss=outcome.adm.ae.loss_history[-1])
        for p in outcome.problems:
            _say(f"training: {p}")
        code = EXIT_RUNTIME
    with open(os.path.join(out, "training_report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return code


def cmd_evaluate(args) -> int:
    cfg, out = _prepare(args, "evaluate")
    did_something = False
    if args.grid:
        rows = run_grid(cfg)
        write_grid_csv(rows, os.path.join(out, "grid.csv"))
        did_something = True
    if args.sweep_fake_rate:
        rows = run_sweep(cfg, parse_rate_range(args.sweep_fake_rate))
        write_sweep_csv(rows, os.path.join(out, "sweep.csv"))
        did_something = True
    if did_something and not (args.bundle or args.dataset):
        return EXIT_OK
    if args.bundle:
        bundle = load_bundle(args.bundle)
        if bundle.schema_digest != FEATURE_SCHEMA_DIGEST:
            raise CompatibilityError(f"bundle schema {bundle.schema_digest} does not match {FEATURE_SCHEMA_DIGEST}")
        state, ds = _load_or_generate(cfg, args.dataset)
        if args.use_fdt and args.dataset and ds.config_digest != cfg.scenario().digest():
            raise CompatibilityError("drone verification needs the scenario the dataset was generated from; "
                                     "the dataset digest does not match the config")
        outcome = evaluate(cfg, ds, bundle, args.use_fdt, state)
    elif args.dataset:
        ds = read_dataset(args.dataset)
        if len(ds) == 0:
            write_evaluation(out, empty_outcome())
            _say("dataset is empty; wrote empty outputs")
            return EXIT_OK
        bundle = fit_bundle(cfg, ds)
        _, test = stratified_split(ds.labels(), cfg.test_fraction, cfg.seed)
        outcome = evaluate(cfg, ds.subset(test), bundle, args.use_fdt)
    else:
        outcome = holdout_evaluation(cfg, args.use_fdt)
    write_evaluation(out, outcome)
    m = outcome.metrics
    _say(f"malicious detected {m.detected_malicious}, missed {m.missed_malicious}, "
         f"false {m.false_malicious}; FDT visits {m.fdt_visits}")
    return EXIT_OK


def cmd_sonlab(args) -> int:
    cfg, out = _prepare(args, "sonlab")
    guards = ("none", "mrif") if args.guard is None else (args.guard,)
    res = run_sonlab(cfg, guards, args.use_fdt, out)
    for (scenario, guard), run in sorted(res.runs.items()):
        fired = [a.outage_cell for a in run.actions]
        _say(f"{scenario:5s} guard={guard:4s} COC on {fired or 'nothing'}; "
             f"mean SINR {run.before.mean_sinr_db:.3f} -> {run.after.mean_sinr_db:.3f} dB")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mdtguard",
        description="Simulate MDT reporting, forge outage reports, and detect/filter them before SON acts.",
        epilog=f"--config takes a JSON file or a bundled preset ({', '.join(configmod.preset_names())}). "
               f"Outputs go to --out, else the config's output_dir, else ${OUTPUT_ROOT_ENV}/<name>/<command> "
               f"(default root ./runs). Exit codes: 0 ok, 1 runtime failure, 2 config error, 3 compatibility error.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="config JSON path or preset name")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output directory")

    g = sub.add_parser("generate", help="write a labelled MDT dataset CSV")
    common(g)
    t = sub.add_parser("train", help="train detector and filter, write a model bundle")
    common(t)
    t.add_argument("--dataset", help="dataset CSV (default: generate from the config)")
    e = sub.add_parser("evaluate", help="run the MRIF pipeline and write verdicts and metrics")
    common(e)
    e.add_argument("--dataset", help="dataset CSV (default: generate from the config)")
    e.add_argument("--bundle", help="model bundle (default: train on the training split)")
    e.add_argument("--grid", action="store_true", help="also run the size x severity F1 grid")
    e.add_argument("--sweep-fake-rate", metavar="A:B:STEP", help="also sweep the forged-outage rate")
    e.add_argument("--use-fdt", action="store_true", help="verify sparse anomalous cells with drones")
    s = sub.add_parser("sonlab", help="coverage grids and KPIs for real vs forged outages under COC")
    common(s)
    s.add_argument("--guard", choices=("none", "mrif"), help="only run this guard (default: both)")
    s.add_argument("--use-fdt", action="store_true", help="let the guard verify sparse cells with drones")
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate, "sonlab": cmd_sonlab}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, ParseError) as exc:
        _say(f"config error: {exc}")
        return EXIT_CONFIG
    except CompatibilityError as exc:
        _say(f"compatibility error: {exc}")
        return EXIT_COMPAT
    except (MdtGuardError, OSError, ValueError) as exc:
        _say(f"error: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
