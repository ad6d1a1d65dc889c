"""Train with and without self-attention on the synthetic set and print both rows."""

import argparse

from inception_capsule.data import balanced_counts, synth_dataset
from inception_capsule.report import WITH_ATTENTION, WITHOUT_ATTENTION, render_table
from inception_capsule.training import TrainConfig, evaluate, replay_split, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--drop-rate", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--layout", default="ablation", choices=["ablation", "full"])
    args = ap.parse_args()

    samples = synth_dataset(3, balanced_counts(args.samples, 3), seed=args.seed)
    rows = []
    for attention, name in ((True, WITH_ATTENTION), (False, WITHOUT_ATTENTION)):
        cfg = TrainConfig(epochs=args.epochs, seed=args.seed, drop_rate=args.drop_rate, attention=attention)
        params, log = train(cfg, samples)
        model_cfg = cfg.model_config(samples[0].image.shape, 3)
        rows.append((name, evaluate(params, model_cfg, replay_split(cfg, model_cfg, samples))))
        print(f"{name}: best epoch {log.best_epoch}, {log.wall_time:.1f}s")
    print(render_table(rows, args.layout), end="")


if __name__ == "__main__":
    main()
