#!/usr/bin/env python3
"""Dense-sparse-dense training vs plain dense training on Gaussian blobs,
followed by a per-layer pruning sensitivity scan and rate selection.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

try:
    import locallearn  # noqa: F401
except ImportError:
    sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from locallearn.dsd import (
    TrainerConfig,
    dsd_train,
    init_mlp,
    parse_schedule,
    select_rates,
    sensitivity_scan,
)
from locallearn.synth import gaussian_blobs


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--schedule", default="D30,S10@0.3,D10")
    parser.add_argument("--plain-epochs", type=int, default=50)
    parser.add_argument("--hidden", type=int, default=16)
    parser.add_argument("--spread", type=float, default=1.6)
    parser.add_argument("--lr", type=float, default=0.1)
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--seeds", type=int, default=5)
    args = parser.parse_args()

    dsd_sched = parse_schedule(args.schedule)
    plain_sched = parse_schedule(f"D{args.plain_epochs}")
    dsd_accs, plain_accs = [], []
    model = None
    val = None
    for s in range(args.seeds):
        Xtr, ytr = gaussian_blobs(150, 4, spread=args.spread, seed=300 + s)
        Xv, yv = gaussian_blobs(150, 4, spread=args.spread, seed=400 + s)
        cfg = TrainerConfig(lr=args.lr, batch_size=args.batch, seed=s)
        model = init_mlp([2, args.hidden, 4], seed=s)
        logs = dsd_train(model, (Xtr, ytr), (Xv, yv), dsd_sched, cfg)
        dsd_accs.append(logs[-1].val_acc)
        plain = init_mlp([2, args.hidden, 4], seed=s)
        plain_logs = dsd_train(plain, (Xtr, ytr), (Xv, yv), plain_sched, cfg)
        plain_accs.append(plain_logs[-1].val_acc)
        val = (Xv, yv)
        print(f"seed {s}: dsd {dsd_accs[-1]:.4f}  plain {plain_accs[-1]:.4f}")
    print(
        f"\nmedians over {args.seeds} seeds: dsd {np.median(dsd_accs):.4f}  "
        f"plain {np.median(plain_accs):.4f}"
    )

    table = sensitivity_scan(model, *val)
    print(f"\nsensitivity scan (baseline {table.baseline:.4f}):")
    print(f"{'layer':<8}" + "".join(f"{r:>8}" for r in table.rates))
    for layer, row in table.acc.items():
        print(f"{layer:<8}" + "".join(f"{row[r]:>8.4f}" for r in table.rates))
    print("selected rates:", select_rates(table))
    return 0


if __name__ == "__main__":
    sys.exit(main())
