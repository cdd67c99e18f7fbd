"""Detector F1 grid under both outage-reporting models.

"camped": UEs of a failed cell keep naming it and report floor values.
"reselect": they report the next-best server at ordinary levels.
"""
from __future__ import annotations

import argparse
from dataclasses import replace

from mdtguard import config as configmod
from mdtguard.adm import adm_evaluate_grid
from mdtguard.config import ExperimentConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="fig5c-grid")
    ap.add_argument("--replicates", type=int, default=1)
    args = ap.parse_args(argv)
    cfg = ExperimentConfig(configmod.load(args.config))
    g = cfg.doc["grid"]

    print("reporting,size,severity,method,f1")
    for mode in ("camped", "reselect"):
        base = replace(cfg.scenario(), outage_reporting=mode)
        rows = adm_evaluate_grid(base, cfg.attack(), g["sizes"], g["severities"], cfg.severity_cells(), cfg.ae(),
                                 cfg.gbt(), cfg.test_fraction, args.replicates, cfg.gbt_standardized)
        for r in rows:
            print(f"{mode},{r.size},{r.severity},{r.method},{r.f1:.4f}", flush=True)


if __name__ == "__main__":
    main()
