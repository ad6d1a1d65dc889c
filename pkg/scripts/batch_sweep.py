"""Batch-size sweep on the synthetic set; writes CSV to stdout or --out."""

import argparse
import sys

from inception_capsule.data import balanced_counts, synth_dataset
from inception_capsule.report import render_sweep_csv
from inception_capsule.training import DEFAULT_SWEEP, TrainConfig, sweep_batch_size


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--drop-rate", type=float, default=0.2)
    ap.add_argument("--sizes", default=",".join(map(str, DEFAULT_SWEEP)))
    ap.add_argument("--out")
    args = ap.parse_args()

    samples = synth_dataset(3, balanced_counts(args.samples, 3))
    cfg = TrainConfig(epochs=args.epochs, drop_rate=args.drop_rate)
    rows = sweep_batch_size(cfg, samples, [int(s) for s in args.sizes.split(",")])
    text = render_sweep_csv(rows)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
