"""Image ingestion (binary netpbm), the synthetic dataset and stratified splits."""

from __future__ import annotations

import logging
import os
import re
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, PnmMagicError, PnmMaxvalError, PnmTruncatedError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
SPLIT_MODES = {"70/10/20": (0.7, 0.1, 0.2), "80/20": (0.8, 0.0, 0.2)}
IMAGE_SUFFIXES = (".pgm", ".ppm")
MIN_PER_CLASS = 10


@dataclass(frozen=True)
class Sample:
    image: np.ndarray  # C x H x W in [0, 1]
    label: int
    split: str | None = None
    source: str = ""


@dataclass
class DatasetManifest:
    class_names: list[str]
    counts: dict[str, dict[str, int]] = field(default_factory=dict)  # class -> split -> count
    seed: int | None = None
    split_mode: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# netpbm

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_pnm(buf: bytes) -> np.ndarray:
    """Decode binary P5 (gray) or P6 (RGB) with maxval <= 255 to ``C x H x W`` floats."""
    if buf[:2] not in (b"P5", b"P6"):
        raise PnmMagicError(f"not a binary PGM/PPM file (magic {bytes(buf[:2])!r})")
    channels = 1 if buf[:2] == b"P5" else 3
    pos = 2
    fields = []
    for what in ("width", "height", "maxval"):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise PnmTruncatedError(f"header ends before {what}")
        try:
            fields.append(int(m.group(1)))
        except ValueError:
            raise PnmMagicError(f"malformed header field {what}: {m.group(1)!r}") from None
        pos = m.end()
    width, height, maxval = fields
    if maxval > 255:
        raise PnmMaxvalError(f"maxval {maxval} > 255 is not supported")
    if maxval < 1 or width < 1 or height < 1:
        raise PnmMagicError(f"invalid header values {width}x{height} maxval {maxval}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise PnmTruncatedError("missing whitespace after header")
    pos += 1
    need = width * height * channels
    raw = buf[pos:pos + need]
    if len(raw) < need:
        raise PnmTruncatedError(f"pixel data has {len(raw)} of {need} bytes")
    px = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, channels)
    return np.transpose(px, (2, 0, 1)).astype(np.float64) / maxval


def encode_pnm(image: np.ndarray) -> bytes:
    """Quantise a ``C x H x W`` image in [0, 1] to 8-bit P5/P6."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise DataError(f"encode_pnm: expected 1 or 3 channel image, got {img.shape}")
    c, h, w = img.shape
    px = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n255\n".encode() + np.transpose(px, (1, 2, 0)).tobytes()


def resize_nearest(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = image.shape[-2:]
    th, tw = size
    rows = (np.arange(th) * h) // th
    cols = (np.arange(tw) * w) // tw
    return image[..., rows[:, None], cols[None, :]]


def _match_channels(image: np.ndarray, channels: int) -> np.ndarray:
    if image.shape[0] == channels:
        return image
    if channels == 3:
        return np.repeat(image, 3, axis=0)
    return image.mean(axis=0, keepdims=True)


def load_image_folder(root: str | os.PathLike, target_size: tuple[int, int],
                      channels: int | None = None,
                      skip_bad: bool = False) -> tuple[list[Sample], DatasetManifest]:
    """Read ``<root>/<class>/*.pgm|*.ppm``; labels follow sorted class directory names.

    Without an explicit ``channels``, the first decoded image decides, and the
    rest are converted (gray replicated to RGB, RGB averaged to gray).
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"{root}: no class subdirectories")
    samples: list[Sample] = []
    for label, cdir in enumerate(class_dirs):
        files = sorted(p for p in cdir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        kept = 0
        for path in files:
            try:
                img = decode_pnm(path.read_bytes())
            except DataError as e:
                if not skip_bad:
                    raise DataError(f"{path}: {e}") from e
                log.warning("skipping undecodable file %s: %s", path, e)
                continue
            if channels is None:
                channels = img.shape[0]
            img = resize_nearest(_match_channels(img, channels), target_size)
            samples.append(Sample(img, label, None, str(path.relative_to(root))))
            kept += 1
        if kept == 0:
            raise DataError(f"{cdir}: class directory has no decodable images")
    manifest = DatasetManifest(class_names=[d.name for d in class_dirs])
    manifest.counts = _count(samples, manifest.class_names)
    return samples, manifest


def _count(samples: Iterable[Sample], class_names: Sequence[str]) -> dict[str, dict[str, int]]:
    tally = Counter((s.label, s.split or "unassigned") for s in samples)
    out = {}
    for k, name in enumerate(class_names):
        out[name] = {sp: tally[(k, sp)] for sp in (*SPLITS, "unassigned") if tally[(k, sp)]}
    return out


# ---------------------------------------------------------------------------
# splitting


def split_counts(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; ties go to the earlier split."""
    quotas = [n * f for f in fractions]
    counts = [int(np.floor(q + 1e-9)) for q in quotas]
    rest = n - int(np.sum(counts))
    order = sorted(range(len(quotas)), key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in order[:rest]:
        counts[k] += 1
    return counts


def split_dataset(samples: Sequence[Sample], seed: int | np.random.Generator,
                  mode: str = "70/10/20") -> list[Sample]:
    """Stratified shuffle-and-cut per class; returns new samples with ``split`` set."""
    if mode not in SPLIT_MODES:
        raise ConfigError(f"unknown split mode {mode!r}; choose one of {sorted(SPLIT_MODES)}")
    fractions = SPLIT_MODES[mode]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    by_class: dict[int, list[int]] = {}
    for idx, s in enumerate(samples):
        by_class.setdefault(s.label, []).append(idx)
    out = list(samples)
    for label in sorted(by_class):
        members = by_class[label]
        if len(members) < MIN_PER_CLASS:
            raise ConfigError(f"class {label} has {len(members)} samples; at least {MIN_PER_CLASS} needed to split")
        perm = rng.permutation(len(members))
        counts = split_counts(len(members), fractions)
        cut = 0
        for name, c in zip(SPLITS, counts):
            for p in perm[cut:cut + c]:
                idx = members[p]
                out[idx] = replace(out[idx], split=name)
            cut += c
    return out


def split_manifest(samples: Sequence[Sample], class_names: Sequence[str], seed: int | None,
                   mode: str) -> DatasetManifest:
    return DatasetManifest(list(class_names), _count(samples, class_names), seed, mode)


def stack(samples: Sequence[Sample], split: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    chosen = [s for s in samples if split is None or s.split == split]
    if not chosen:
        return np.zeros((0,)), np.zeros((0,), dtype=np.int64)
    return (np.stack([s.image for s in chosen]).astype(np.float64),
            np.array([s.label for s in chosen], dtype=np.int64))


# ---------------------------------------------------------------------------
# synthetic stand-in dataset

SYNTH_CLASSES = ("horizontal_bar", "vertical_bar", "blob")


def balanced_counts(total: int, n_classes: int) -> list[int]:
    base, extra = divmod(total, n_classes)
    return [base + (k < extra) for k in range(n_classes)]


def _synth_image(label: int, size: tuple[int, int], dy: int, dx: int) -> np.ndarray:
    h, w = size
    img = np.full((h, w), 0.1)
    cy, cx = h // 2 + dy, w // 2 + dx
    if label == 0:
        img[max(cy - 2, 0):cy + 3, 1:w - 1] = 0.9
    elif label == 1:
        img[1:h - 1, max(cx - 2, 0):cx + 3] = 0.9
    else:
        yy, xx = np.mgrid[:h, :w]
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= 9] = 0.9
    return img


def synth_dataset(n_classes: int = 3, per_class: int | Sequence[int] = 334,
                  size: tuple[int, int] = (16, 16), seed: int = 0, noise: float = 0.1,
                  jitter: int = 2) -> list[Sample]:
    """Bars and blobs: class 0 horizontal bar, 1 vertical bar, 2 centred disc.

    Each image gets an independent position jitter in ``[-jitter, jitter]`` and
    additive uniform noise in ``[-noise, noise]``, clamped to [0, 1].
    ``per_class`` may also list one count per class.
    """
    if not 1 <= n_classes <= len(SYNTH_CLASSES):
        raise ConfigError(f"synthetic data supports 1..{len(SYNTH_CLASSES)} classes, got {n_classes}")
    counts = [per_class] * n_classes if isinstance(per_class, int) else list(per_class)
    if len(counts) != n_classes or min(counts) < 1:
        raise ConfigError(f"per_class must give >= 1 sample for each of {n_classes} classes, got {per_class}")
    rng = np.random.default_rng(seed)
    samples = []
    for label in range(n_classes):
        for k in range(counts[label]):
            dy, dx = rng.integers(-jitter, jitter + 1, size=2) if jitter else (0, 0)
            img = _synth_image(label, size, int(dy), int(dx))
            if noise:
                img = img + rng.uniform(-noise, noise, size=img.shape)
            samples.append(Sample(np.clip(img, 0.0, 1.0)[None], label, None,
                                  f"synthetic/{SYNTH_CLASSES[label]}/{k:05d}"))
    return samples
