"""Synthetic desk-scale dataset and the on-disk image-folder layout.

Class identity is carried jointly by a hue band, a lightness band, and a
shape (disc / bar / ring).  Hue centers sit at least 2x the +-10 degree hue
jitter apart; classes sharing a hue band differ in lightness by at least 2x
the +-0.10 lightness jitter, so classes stay separable under per-image jitter
of position, scale, hue, lightness, and pixel noise.  Train/val/test class
splits are disjoint.

Disk layout (written by save_dataset, read by load_dataset):
    root/{train,val,test}/<class_name>/<index>.png
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

HUE_JITTER_DEG = 10.0
LIGHT_JITTER = 0.10
_LIGHT_LEVELS = (0.25, 0.75)
_MAX_HUES = 18  # 20 degree spacing = 2x hue jitter
_SHAPES = ("disc", "bar", "ring")
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class Split:
    class_ids: list[int]
    class_images: list[np.ndarray]  # each [n, 3, H, W] float32 in [0,1]


@dataclass
class Dataset:
    splits: dict[str, Split]
    class_names: dict[int, str]
    class_attrs: dict[int, tuple[float, float, str]] = field(default_factory=dict)

    def split(self, name: str) -> Split:
        if name not in self.splits:
            raise ValueError(f"unknown split {name!r}; have {sorted(self.splits)}")
        return self.splits[name]


def _class_attributes(classes: int, rng: np.random.Generator):
    """Assign each class a (hue_deg, lightness) pair with guaranteed margins."""
    n_hue = min(_MAX_HUES, max(2, (classes + 1) // 2))
    n_light = -(-classes // n_hue)
    if n_light > len(_LIGHT_LEVELS):
        raise ValueError(
            f"synthetic generator supports at most {_MAX_HUES * len(_LIGHT_LEVELS)} "
            f"classes, got {classes}"
        )
    combos = [(h * 360.0 / n_hue, _LIGHT_LEVELS[l])
              for l in range(n_light) for h in range(n_hue)]
    order = rng.permutation(len(combos))[:classes]
    return {c: combos[order[c]] for c in range(classes)}


def _assign_shapes(attrs, split_classes):
    """Give classes shapes band-round-robin within each split.

    Splits with at most 3 classes per lightness band (val/test at default
    sizes) get a unique (band, shape) pair per class, so they stay separable
    through the lightness-only channels; the larger train split necessarily
    repeats (band, shape) pairs, which forces hue discrimination to be
    learned.
    """
    shapes = {}
    for cids in split_classes.values():
        by_band: dict[float, int] = {}
        for c in sorted(cids, key=lambda c: (attrs[c][1], attrs[c][0])):
            k = by_band.get(attrs[c][1], 0)
            shapes[c] = _SHAPES[k % len(_SHAPES)]
            by_band[attrs[c][1]] = k + 1
    return shapes


def _render(attr, size: int, rng: np.random.Generator) -> np.ndarray:
    hue, light, shape = attr
    hue_j = (hue + rng.uniform(-HUE_JITTER_DEG, HUE_JITTER_DEG)) % 360.0
    light_j = float(np.clip(light + rng.uniform(-LIGHT_JITTER, LIGHT_JITTER), 0.05, 0.95))
    r, g, b = colorsys.hls_to_rgb(hue_j / 360.0, light_j, 0.9)

    cy = size / 2.0 + rng.uniform(-0.1, 0.1) * size
    cx = size / 2.0 + rng.uniform(-0.1, 0.1) * size
    radius = 0.32 * size * rng.uniform(0.9, 1.1)
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    if shape == "disc":
        mask = dy * dy + dx * dx <= radius * radius
    elif shape == "ring":
        r2 = dy * dy + dx * dx
        mask = (r2 <= radius * radius) & (r2 >= (0.55 * radius) ** 2)
    else:  # bar
        mask = (np.abs(dx) <= 0.4 * radius) & (np.abs(dy) <= radius)

    img = np.full((3, size, size), 0.5, dtype=np.float64)
    img[0][mask] = r
    img[1][mask] = g
    img[2][mask] = b
    img += rng.normal(0.0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _split_sizes(classes: int) -> tuple[int, int, int]:
    n_val = max(3, round(classes / 4))
    n_test = max(3, round(classes / 4))
    n_train = classes - n_val - n_test
    if n_train < 2:
        raise ValueError(f"{classes} classes leave too few for the train split")
    return n_train, n_val, n_test


def _stratified_split(attrs, sizes: dict[str, int]) -> dict[str, list[int]]:
    """Deal classes to disjoint splits so difficulty is comparable across them.

    Classes are sorted by hue; evenly spaced picks from that order feed val
    and test alternately (the two eval splits are then statistically
    interchangeable, so validation accuracy tracks test accuracy), and the
    remainder trains.  Every split spans the color wheel and both lightness
    bands.
    """
    order = sorted(attrs, key=lambda c: (attrs[c][0], attrs[c][1]))
    n = len(order)
    k_eval = sizes["val"] + sizes["test"]
    positions = sorted(set(int(round(p)) for p in np.linspace(0, n - 1, k_eval)))
    spare = (i for i in range(n) if i not in positions)
    while len(positions) < k_eval:  # linspace collisions on tiny grids
        positions.append(next(spare))
    eval_stream = [order[p] for p in sorted(positions)]
    val, test = [], []
    for i, c in enumerate(eval_stream):
        if (i % 2 == 0 and len(val) < sizes["val"]) or len(test) >= sizes["test"]:
            val.append(c)
        else:
            test.append(c)
    taken = set(val) | set(test)
    train = [c for c in order if c not in taken]
    return {"train": train, "val": val, "test": test}


def make_synthetic_dataset(classes: int = 20, per_class: int = 50, size: int = 84,
                           seed: int = 0, n_val: int | None = None,
                           n_test: int | None = None) -> Dataset:
    """Render the full dataset in memory with disjoint class splits."""
    if classes < 10:
        raise ValueError("need at least 10 classes for disjoint splits")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC01]))
    hue_light = _class_attributes(classes, rng)

    d_train, d_val, d_test = _split_sizes(classes)
    if n_val is not None or n_test is not None:
        d_val = n_val if n_val is not None else d_val
        d_test = n_test if n_test is not None else d_test
        d_train = classes - d_val - d_test
        if d_train < 2:
            raise ValueError("split sizes leave too few training classes")
    split_classes = _stratified_split(hue_light, {"train": d_train, "val": d_val,
                                                  "test": d_test})
    shapes = _assign_shapes(hue_light, split_classes)
    attrs = {c: (hue_light[c][0], hue_light[c][1], shapes[c]) for c in hue_light}
    names = {
        c: f"c{c:03d}_{attrs[c][2]}_h{int(round(attrs[c][0])):03d}_l{int(attrs[c][1] * 100):02d}"
        for c in range(classes)
    }
    images = {}
    for c in range(classes):
        crng = np.random.default_rng(np.random.SeedSequence([seed, 0xC02, c]))
        images[c] = np.stack([_render(attrs[c], size, crng) for _ in range(per_class)])
    splits = {
        name: Split(class_ids=cids, class_images=[images[c] for c in cids])
        for name, cids in split_classes.items()
    }
    return Dataset(splits=splits, class_names=names, class_attrs=attrs)


def save_dataset(ds: Dataset, root) -> None:
    root = Path(root)
    for split_name, split in ds.splits.items():
        for cid, imgs in zip(split.class_ids, split.class_images):
            cdir = root / split_name / ds.class_names[cid]
            cdir.mkdir(parents=True, exist_ok=True)
            for i, img in enumerate(imgs):
                arr = (np.clip(img, 0, 1).transpose(1, 2, 0) * 255).round().astype(np.uint8)
                Image.fromarray(arr).save(cdir / f"{i:04d}.png")


def load_dataset(root) -> Dataset:
    """Read a root/{train,val,test}/<class>/<image>.png tree back into memory."""
    root = Path(root)
    splits = {}
    class_names: dict[int, str] = {}
    next_id = 0
    for split_name in SPLIT_NAMES:
        sdir = root / split_name
        if not sdir.is_dir():
            raise ValueError(f"missing split directory: {sdir}")
        cids, imgs = [], []
        for cdir in sorted(p for p in sdir.iterdir() if p.is_dir()):
            files = sorted(cdir.glob("*.png"))
            if not files:
                continue
            stack = np.stack([
                np.asarray(Image.open(f).convert("RGB"), dtype=np.float32).transpose(2, 0, 1)
                / 255.0
                for f in files
            ])
            class_names[next_id] = cdir.name
            cids.append(next_id)
            imgs.append(stack)
            next_id += 1
        splits[split_name] = Split(class_ids=cids, class_images=imgs)
    return Dataset(splits=splits, class_names=class_names)
