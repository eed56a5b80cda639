"""Synthetic pixel-aligned visible/infrared pairs with complementary objects.

Class 0 objects show in both modalities, class 1 only in the visible image
and class 2 only in the infrared image. In the modality where an object is
"hidden" it is drawn at a contrast far below the noise level, so a detector
fed a single modality cannot find it.

On disk::

    root/images/visible/<name>.png     8-bit RGB
    root/images/infrared/<name>.png    8-bit RGB, the three channels equal
    root/labels/<name>.txt             "class cx cy w h" per line, normalized
    root/manifest.json                 split membership and class names
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .nd import numpy_rng

CLASS_NAMES = ("both", "visible_only", "infrared_only")
SHAPES = ("disc", "rectangle")
SPLITS = ("train", "val", "test")

VISIBLE_CONTRAST = (0.3, 0.55)
INFRARED_CONTRAST = (0.4, 0.6)
HIDDEN_CONTRAST = 0.0
MAX_PAIR_IOU = 0.2
PLACEMENT_ATTEMPTS = 100


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 128
    min_objects: int = 1
    max_objects: int = 4
    illumination: tuple[float, float] = (0.05, 0.3)
    size_fraction: tuple[float, float] = (0.08, 0.3)
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.min_objects <= self.max_objects:
            raise ValueError("object count range is empty")
        lo, hi = self.illumination
        if not 0 <= lo <= hi <= 1:
            raise ValueError("illumination range is empty or outside [0, 1]")
        lo, hi = self.size_fraction
        if not 0 < lo <= hi <= 1:
            raise ValueError("size range is empty")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


@dataclass(frozen=True)
class ObjectSpec:
    class_id: int
    shape: str
    box: tuple[float, float, float, float]  # normalized xyxy
    visible_contrast: float
    infrared_contrast: float
    color: tuple[float, float, float]
    texture_period: float
    texture_angle: float


@dataclass
class Layout:
    illumination: float
    objects: list[ObjectSpec]
    bg_seed: int


@dataclass
class PairedSample:
    visible: np.ndarray   # 3 x H x W float32, multiples of 1/255
    infrared: np.ndarray  # 3 x H x W float32, channels identical
    labels: list[tuple[int, tuple[float, float, float, float]]] = field(default_factory=list)
    name: str = ""


def box_iou(a, b) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def _snap(frac: float, bounds: tuple[float, float], n: int) -> float:
    lo, hi = math.ceil(bounds[0] * n), max(math.floor(bounds[1] * n), 1)
    return min(max(round(frac * n), lo), hi) / n


def sample_layout(rng: np.random.Generator, cfg: SceneConfig) -> Layout:
    n_px = cfg.image_size
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    objects: list[ObjectSpec] = []
    for _ in range(n):
        for _attempt in range(PLACEMENT_ATTEMPTS):
            # snap to whole pixels so the rendered extent equals the label
            w, h = (_snap(rng.uniform(*cfg.size_fraction), cfg.size_fraction, n_px) for _ in range(2))
            x1 = round(rng.uniform(0, 1 - w) * n_px) / n_px
            y1 = round(rng.uniform(0, 1 - h) * n_px) / n_px
            box = (x1, y1, x1 + w, y1 + h)
            if all(box_iou(box, o.box) < MAX_PAIR_IOU for o in objects):
                break
        else:
            continue  # give up on this object rather than overlap
        cls = int(rng.integers(0, 3))
        objects.append(ObjectSpec(
            class_id=cls,
            shape=SHAPES[int(rng.integers(0, 2))],
            box=box,
            visible_contrast=HIDDEN_CONTRAST if cls == 2 else rng.uniform(*VISIBLE_CONTRAST),
            infrared_contrast=HIDDEN_CONTRAST if cls == 1 else rng.uniform(*INFRARED_CONTRAST),
            color=tuple(rng.uniform(0.4, 1.0, 3)),
            texture_period=rng.uniform(3.0, 7.0),
            texture_angle=rng.uniform(0, np.pi),
        ))
    return Layout(float(rng.uniform(*cfg.illumination)), objects, int(rng.integers(0, 2**31)))


def _mask(obj: ObjectSpec, n: int) -> np.ndarray:
    x1, y1, x2, y2 = (round(v * n) for v in obj.box)
    m = np.zeros((n, n), dtype=bool)
    if obj.shape == "rectangle":
        m[y1:y2, x1:x2] = True
        return m
    yy, xx = np.mgrid[0:n, 0:n] + 0.5
    cx, cy, rx, ry = (x1 + x2) / 2, (y1 + y2) / 2, (x2 - x1) / 2, (y2 - y1) / 2
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def render(layout: Layout, cfg: SceneConfig, noise_rng: np.random.Generator | None = None,
           skip: Sequence[int] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Float images in [0, 1] (3 x H x W each), before 8-bit quantization.

    Noise is added only when ``noise_rng`` is given. Objects whose index is in
    ``skip`` are left out, which lets tests measure an object's footprint.
    """
    n = cfg.image_size
    bg_rng = np.random.default_rng(layout.bg_seed)
    lum = layout.illumination
    tint = bg_rng.uniform(0.7, 1.0, 3)
    texture = gaussian_filter(bg_rng.standard_normal((n, n)), 1.5)
    texture /= max(np.abs(texture).max(), 1e-12)
    vis = (lum * (1.0 + 0.3 * texture))[None] * tint[:, None, None]

    yy, xx = np.mgrid[0:n, 0:n] / n
    gx, gy = bg_rng.uniform(-1, 1, 2)
    ir = 0.25 + 0.05 * (gx * (xx - 0.5) + gy * (yy - 0.5))
    ir = ir + 0.03 * gaussian_filter(bg_rng.standard_normal((n, n)), 12.0) * 12.0

    py, px = np.mgrid[0:n, 0:n]
    for k, obj in enumerate(layout.objects):
        if k in skip:
            continue
        m = _mask(obj, n)
        if obj.class_id == 2:
            vis[:, m] += obj.visible_contrast
        else:
            phase = (px * np.cos(obj.texture_angle) + py * np.sin(obj.texture_angle)) / obj.texture_period
            stripes = 0.5 + 0.5 * np.sign(np.sin(2 * np.pi * phase))
            for ch in range(3):
                shade = obj.visible_contrast * obj.color[ch] / max(obj.color)
                vis[ch][m] += shade * (1.0 + 0.5 * stripes[m])
        ir[m] += obj.infrared_contrast

    if noise_rng is not None and cfg.noise_sigma > 0:
        vis = vis + noise_rng.normal(0, cfg.noise_sigma, vis.shape)
        ir = ir + noise_rng.normal(0, cfg.noise_sigma, ir.shape)
    ir = np.repeat(ir[None], 3, axis=0)
    return np.clip(vis, 0, 1), np.clip(ir, 0, 1)


def quantize(img: np.ndarray) -> np.ndarray:
    return (np.round(img * 255.0) / 255.0).astype(np.float32)


def gen_scene(rng: np.random.Generator, cfg: SceneConfig, name: str = "") -> PairedSample:
    layout = sample_layout(rng, cfg)
    vis, ir = render(layout, cfg, rng)
    labels = [(o.class_id, o.box) for o in layout.objects]
    return PairedSample(quantize(vis), quantize(ir), labels, name)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return numpy_rng(seed, index)


def generate(cfg: SceneConfig, n: int, start: int = 0) -> list[PairedSample]:
    """Samples ``start .. start + n - 1``; sample i uses its own stream of the master seed."""
    return [gen_scene(sample_rng(cfg.seed, i), cfg, f"{i:06d}") for i in range(start, start + n)]


# --------------------------------------------------------------------------
# YOLO-style layout

def xyxy_to_cxcywh(b):
    x1, y1, x2, y2 = b
    return ((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


def cxcywh_to_xyxy(b):
    cx, cy, w, h = b
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def format_label(class_id: int, box) -> str:
    return " ".join([str(int(class_id))] + [repr(float(v)) for v in xyxy_to_cxcywh(box)])


def parse_label_file(path: Path) -> list[tuple[int, tuple[float, float, float, float]]]:
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        try:
            if len(parts) != 5:
                raise ValueError(f"expected 5 fields, got {len(parts)}")
            cls = int(parts[0])
            vals = [float(p) for p in parts[1:]]
            if not all(0.0 <= v <= 1.0 for v in vals) or vals[2] <= 0 or vals[3] <= 0:
                raise ValueError("values must be normalized to [0, 1] with positive size")
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: malformed label line {line!r} ({exc})") from None
        out.append((cls, cxcywh_to_xyxy(vals)))
    return out


def _to_png(img: np.ndarray, path: Path) -> None:
    arr = np.round(np.transpose(img, (1, 2, 0)) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, optimize=False)


def _from_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(np.transpose(arr, (2, 0, 1)))


def write_dataset(samples: Sequence[PairedSample], root, splits: dict[str, list[str]] | None = None,
                  extra: dict | None = None) -> None:
    root = Path(root)
    for sub in ("images/visible", "images/infrared", "labels"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        name = s.name or f"{i:06d}"
        _to_png(s.visible, root / "images" / "visible" / f"{name}.png")
        _to_png(s.infrared, root / "images" / "infrared" / f"{name}.png")
        text = "".join(format_label(c, b) + "\n" for c, b in s.labels)
        (root / "labels" / f"{name}.txt").write_text(text)
    names = [s.name or f"{i:06d}" for i, s in enumerate(samples)]
    manifest = {"classes": list(CLASS_NAMES),
                "splits": splits if splits is not None else {"train": names}}
    if extra:
        manifest.update(extra)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise DatasetError(f"no manifest at {path}")
    return json.loads(path.read_text())


def read_dataset(root, split: str | None = None) -> list[PairedSample]:
    """Samples of one split (all names under images/visible when ``split`` is None)."""
    root = Path(root)
    vis_dir, ir_dir, lab_dir = root / "images" / "visible", root / "images" / "infrared", root / "labels"
    if not vis_dir.is_dir():
        raise DatasetError(f"no dataset at {root} (missing {vis_dir})")
    vis_names = {p.stem for p in vis_dir.glob("*.png")}
    ir_names = {p.stem for p in ir_dir.glob("*.png")} if ir_dir.is_dir() else set()
    for orphan in sorted(vis_names ^ ir_names):
        side, mate = ("visible", "infrared") if orphan in vis_names else ("infrared", "visible")
        raise DatasetError(f"{root / 'images' / side / (orphan + '.png')} has no {mate} counterpart")
    if split is None:
        names = sorted(vis_names)
    else:
        splits = read_manifest(root)["splits"]
        if split not in splits:
            raise DatasetError(f"split {split!r} not in manifest of {root}")
        names = list(splits[split])
    out = []
    for name in names:
        if name not in vis_names:
            raise DatasetError(f"manifest lists {name!r} but {vis_dir / (name + '.png')} is missing")
        lab = lab_dir / f"{name}.txt"
        if not lab.is_file():
            raise DatasetError(f"missing label file {lab}")
        out.append(PairedSample(_from_png(vis_dir / f"{name}.png"), _from_png(ir_dir / f"{name}.png"),
                                parse_label_file(lab), name))
    return out


def split_counts(n_total: int) -> tuple[int, int, int]:
    """3:1:1 train/val/test split sizes."""
    n_val = n_total // 5
    n_test = n_total // 5
    return n_total - n_val - n_test, n_val, n_test


def make_splits(n_train: int, n_val: int, n_test: int) -> dict[str, list[str]]:
    names = [f"{i:06d}" for i in range(n_train + n_val + n_test)]
    return {"train": names[:n_train], "val": names[n_train:n_train + n_val],
            "test": names[n_train + n_val:]}
