"""Per-seed end-to-end numbers on a preset: detector, filter and drone verification."""
from __future__ import annotations

import argparse

import numpy as np

from mdtguard import config as configmod
from mdtguard.config import ExperimentConfig
from mdtguard.experiments import generate, holdout_evaluation
from mdtguard.mrfm import mrfm_evaluate


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="paper-baseline")
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args(argv)
    cfg = ExperimentConfig(configmod.load(args.config))

    print("seed,malicious_recall,real_misflag,filter_real_acc,filter_fake_acc,fdt_cells,fdt_corrected")
    cols = []
    for seed in range(args.seeds):
        c = cfg.with_seed(seed)
        plain = holdout_evaluation(c).metrics
        drone = holdout_evaluation(c, use_fdt=True).metrics
        _, ds = generate(c)
        sep = mrfm_evaluate(ds, c.mrfm(), c.test_fraction, seed)
        row = [plain.malicious_recall, plain.real_misflag_rate, sep.real_accuracy, sep.fake_accuracy,
               drone.fdt_malicious_only_cells, drone.fdt_malicious_only_corrected]
        cols.append(row)
        print(f"{seed}," + ",".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in row))
    m = np.asarray(cols, dtype=float).mean(axis=0)
    print("mean," + ",".join(f"{v:.4f}" for v in m))


if __name__ == "__main__":
    main()
