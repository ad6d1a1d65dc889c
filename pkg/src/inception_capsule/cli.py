"""Command-line entry point: ``train``, ``eval``, ``sweep``, ``gradcheck``, ``report``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric divergence
(or a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .data import balanced_counts, load_image_folder, split_manifest, synth_dataset, SYNTH_CLASSES
from .errors import ConfigError, ContractError, DataError, NumericError
from .model import ModelConfig
from .report import (
    FORMATS,
    LAYOUTS,
    WITH_ATTENTION,
    WITHOUT_ATTENTION,
    emit_report,
    load_records,
    render_sweep_csv,
    render_table,
)
from .training import DEFAULT_SWEEP, TrainConfig, evaluate, infer_shape, replay_split, sweep_batch_size, train

log = logging.getLogger("inception_capsule")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

# option -> (TrainConfig field, parser) for everything a config file may also set
TRAIN_KEYS = {
    "epochs": ("epochs", int),
    "batch_size": ("batch_size", int),
    "lr": ("learning_rate", float),
    "learning_rate": ("learning_rate", float),
    "seed": ("seed", int),
    "routing_iters": ("routing_iters", int),
    "attention": ("attention", lambda v: _on_off(v)),
    "drop_rate": ("drop_rate", float),
    "split": ("split", str),
    "optimizer": ("optimizer", str),
    "softmax_sign": ("softmax_sign", int),
}
DATA_KEYS = {"data": str, "synthetic": lambda v: _on_off(v), "synthetic_samples": int,
             "data_seed": int, "target_size": lambda v: _size(v), "skip_bad": lambda v: _on_off(v),
             "out": str, "sizes": lambda v: _sizes(v)}


def _on_off(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("on", "true", "yes", "1"):
        return True
    if s in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"expected on/off, got {v!r}")


def _size(v) -> tuple[int, int]:
    if isinstance(v, tuple):
        return v
    try:
        h, w = (int(p) for p in str(v).lower().split("x"))
    except ValueError:
        raise ConfigError(f"target size must look like 16x16, got {v!r}") from None
    return h, w


def _sizes(v) -> list[int]:
    if isinstance(v, list):
        return v
    try:
        return [int(p) for p in str(v).split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"sizes must be comma-separated integers, got {v!r}") from None


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment, keys may use dashes."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in TRAIN_KEYS and key not in DATA_KEYS:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        out[key] = value
    return out


def merged_settings(args: argparse.Namespace) -> dict:
    """Config-file values overlaid by explicitly given flags, all parsed."""
    raw = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key in (*TRAIN_KEYS, *DATA_KEYS):
        v = getattr(args, key, None)
        if v is not None:
            raw[key] = v
    parsed = {}
    for key, value in raw.items():
        conv = TRAIN_KEYS[key][1] if key in TRAIN_KEYS else DATA_KEYS[key]
        try:
            parsed[key] = conv(value)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {value!r}") from None
    return parsed


def build_train_config(settings: dict) -> TrainConfig:
    if "epochs" not in settings:
        raise ConfigError("--epochs is required (no default number of epochs)")
    fields = {TRAIN_KEYS[k][0]: v for k, v in settings.items() if k in TRAIN_KEYS}
    return TrainConfig(**fields)


def load_samples(settings: dict):
    if settings.get("synthetic"):
        total = settings.get("synthetic_samples", 1000)
        samples = synth_dataset(3, balanced_counts(total, 3), size=settings.get("target_size", (16, 16)),
                                seed=settings.get("data_seed", 0))
        names = list(SYNTH_CLASSES)
    elif settings.get("data"):
        samples, manifest = load_image_folder(settings["data"], settings.get("target_size", (16, 16)),
                                              skip_bad=settings.get("skip_bad", False))
        names = manifest.class_names
    else:
        raise ConfigError("give --data DIR or --synthetic")
    return samples, names


def _data_record(settings: dict) -> dict:
    keys = ("data", "synthetic", "synthetic_samples", "data_seed", "target_size", "skip_bad")
    return {k: settings[k] for k in keys if k in settings}


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e


def _out_dir(settings: dict) -> Path:
    if not settings.get("out"):
        raise ConfigError("--out DIR is required")
    out = Path(settings["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {out}: {e}") from e
    return out


def cmd_train(args) -> int:
    settings = merged_settings(args)
    cfg = build_train_config(settings)
    out = _out_dir(settings)
    samples, names = load_samples(settings)
    shape, seen = infer_shape(samples)
    model_cfg = cfg.model_config(shape, len(names))
    split = replay_split(cfg, model_cfg, samples)
    manifest = split_manifest(split, names, cfg.seed, cfg.split)

    params, tlog = train(cfg, samples, model_cfg)
    save_checkpoint(params, out / "checkpoint.icap")
    meta = {"model": model_cfg.to_dict(), "train": asdict(cfg), "data": _data_record(settings),
            "class_names": names}
    _write(out / "model.json", json.dumps(meta, indent=1, sort_keys=True) + "\n")
    _write(out / "manifest.json", json.dumps(manifest.to_dict(), indent=1, sort_keys=True) + "\n")
    _write(out / "train_log.jsonl", tlog.to_jsonl())
    _write(out / "timing.json", json.dumps({"wall_time": tlog.wall_time}) + "\n")
    if tlog.records and any(s.split == "test" for s in split):
        report = evaluate(params, model_cfg, split, "test")
        name = WITH_ATTENTION if cfg.attention else WITHOUT_ATTENTION
        # timing.json carries the wall time so report.json stays byte-stable across reruns
        emit_report(report, replace(tlog, wall_time=0.0), "records", out / "report.json")
        emit_report(report, tlog, "text", out / "report.txt", model_name=name)
        sys.stdout.write(render_table([(name, report)]))
    return 0


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    meta_path = Path(args.model_config) if args.model_config else ckpt.with_name("model.json")
    try:
        meta = json.loads(meta_path.read_text())
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read model description {meta_path}: {e}") from e
    model_cfg = ModelConfig.from_dict(meta["model"])
    cfg = TrainConfig.from_dict(meta["train"])
    settings = {**meta.get("data", {}), **{k: v for k, v in merged_settings(args).items() if k in DATA_KEYS}}
    if "target_size" in settings:
        settings["target_size"] = tuple(settings["target_size"])
    samples, _ = load_samples(settings)
    split = replay_split(cfg, model_cfg, samples)
    params = load_checkpoint(ckpt)
    report = evaluate(params, model_cfg, split, args.split)
    name = WITH_ATTENTION if model_cfg.attention else WITHOUT_ATTENTION
    sys.stdout.write(render_table([(name, report)]))
    if settings.get("out"):
        out = _out_dir(settings)
        emit_report(report, None, "records", out / f"eval_{args.split}.json")
    return 0


def cmd_sweep(args) -> int:
    settings = merged_settings(args)
    settings.setdefault("epochs", None)
    if settings["epochs"] is None:
        raise ConfigError("--epochs is required (no default number of epochs)")
    cfg = build_train_config(settings)
    out = _out_dir(settings)
    samples, names = load_samples(settings)
    rows = sweep_batch_size(cfg, samples, settings.get("sizes", list(DEFAULT_SWEEP)), len(names))
    _write(out / "sweep.csv", render_sweep_csv(rows))
    sys.stdout.write(render_table([(f"batch size {r.batch_size}", r.report) for r in rows]))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import CASES, TOLERANCE, run_case

    names = args.case or list(CASES)
    unknown = [n for n in names if n not in CASES]
    if unknown:
        raise ConfigError(f"unknown gradcheck case(s) {unknown}")
    failed = 0
    for n in names:
        r = run_case(n, range(args.seeds))
        failed += not r.passed
        print(f"{'PASS' if r.passed else 'FAIL'} {n:28s} max rel err {r.worst:.3e} "
              f"(< {TOLERANCE:g}) {r.seconds:.2f}s")
    return EXIT_NUMERIC if failed else 0


def cmd_report(args) -> int:
    report, tlog = load_records(args.input)
    emit_report(report, tlog, args.format, args.out, model_name=args.model_name, layout=args.layout)
    return 0


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="image folder <root>/<class>/*.pgm|*.ppm")
    src.add_argument("--synthetic", action="store_const", const=True, default=None,
                     help="use the built-in 3-class bars-and-blob dataset")
    p.add_argument("--synthetic-samples", type=int, help="total synthetic samples (default 1000)")
    p.add_argument("--data-seed", type=int, help="seed of the synthetic generator (default 0)")
    p.add_argument("--target-size", help="resize folder images to HxW (default 16x16)")
    p.add_argument("--skip-bad", action="store_const", const=True, default=None,
                   help="skip undecodable files instead of failing")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="learning rate (default 0.001)")
    p.add_argument("--seed", type=int)
    p.add_argument("--routing-iters", type=int)
    p.add_argument("--attention", choices=("on", "off"))
    p.add_argument("--drop-rate", type=float, help="dropout drop probability (default 0.8)")
    p.add_argument("--split", choices=("70/10/20", "80/20"))
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--softmax-sign", type=int, choices=(1, -1))
    p.add_argument("--out", help="output directory")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint, logs and test report")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model-config", help="model.json written by train (default: next to checkpoint)")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data")
    src.add_argument("--synthetic", action="store_const", const=True, default=None)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train one model per batch size")
    _add_train_flags(p)
    p.add_argument("--sizes", help="comma-separated batch sizes (default 8,16,32,64,128,256)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of every operation and the model")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--case", action="append", help="run only this case (repeatable)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="render a records file")
    p.add_argument("--input", required=True, help="records file (report.json)")
    p.add_argument("--format", required=True, choices=FORMATS)
    p.add_argument("--layout", default="ablation", choices=sorted(LAYOUTS))
    p.add_argument("--model-name", default=WITH_ATTENTION)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def _limit_threads():
    n = os.environ.get("ICAP_THREADS")
    if not n:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(limits=max(1, int(n)))


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _limit_threads()
    try:
        return args.func(args)
    except (ConfigError, ContractError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
