"""Test accuracy on the synthetic set as a function of the dropout rate."""

import argparse

from inception_capsule.data import balanced_counts, synth_dataset
from inception_capsule.training import TrainConfig, evaluate, replay_split, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rates", default="0.0,0.2,0.5,0.8")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--attention", choices=["on", "off"], default="on")
    args = ap.parse_args()

    samples = synth_dataset(3, balanced_counts(args.samples, 3))
    print("drop_rate\tbest_epoch\ttrain_acc\ttest_acc")
    for rate in (float(r) for r in args.rates.split(",")):
        cfg = TrainConfig(epochs=args.epochs, drop_rate=rate, attention=args.attention == "on")
        params, log = train(cfg, samples)
        model_cfg = cfg.model_config(samples[0].image.shape, 3)
        report = evaluate(params, model_cfg, replay_split(cfg, model_cfg, samples))
        print(f"{rate}\t{log.best_epoch}\t{log.records[-1].train_accuracy:.4f}\t{report.accuracy:.4f}", flush=True)


if __name__ == "__main__":
    main()
