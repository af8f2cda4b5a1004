"""Synthetic registered RGB + IR scenes with small targets, and their on-disk layout.

Targets carry a class-specific RGB texture and a warm IR blob. Clutter objects
copy a target texture in RGB but are cold in IR, so only the thermal channel
separates them. Ground-truth boxes are taken from the IR footprint.

Disk layout, one directory per scene::

    scene_00000/rgb.ppm   scene_00000/ir.ppm   scene_00000/boxes.txt

``boxes.txt`` holds one ``class cx cy w h`` line per target (pixels, floats).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

MODES = ("day", "night", "overexposed")
MAX_CLASSES = 5
SMALL_RATIO = 0.1

# base colour and texture id per class
_PALETTE = np.array([
    [0.85, 0.20, 0.15],
    [0.15, 0.30, 0.85],
    [0.90, 0.85, 0.15],
    [0.15, 0.85, 0.85],
    [0.85, 0.20, 0.80],
], dtype=np.float32)


class PlacementError(RuntimeError):
    """Objects could not be placed without overlap within the retry budget."""


@dataclass
class DetectionBox:
    cx: float
    cy: float
    w: float
    h: float
    class_id: int
    score: float = 1.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box size must be positive, got w={self.w} h={self.h}")

    def xyxy(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)

    def clamped(self, width: int, height: int) -> DetectionBox:
        x1, y1, x2, y2 = self.xyxy()
        x1, x2 = min(max(x1, 0.0), width), min(max(x2, 0.0), width)
        y1, y2 = min(max(y1, 0.0), height), min(max(y2, 0.0), height)
        w, h = max(x2 - x1, 1e-3), max(y2 - y1, 1e-3)
        return DetectionBox((x1 + x2) / 2, (y1 + y2) / 2, w, h, self.class_id, self.score)


@dataclass
class SceneSpec:
    size: int = 128
    num_classes: int = 3
    density: int = 4          # targets per scene
    clutter: int = 2          # IR-cold distractors per scene
    mode: str = "day"         # day | night | overexposed | mixed
    small_targets: bool = True
    max_retries: int = 200

    def validate(self) -> None:
        if self.size < 64 or self.size % 32:
            raise ValueError(f"image size {self.size} must be >= 64 and divisible by 32")
        if not 2 <= self.num_classes <= MAX_CLASSES:
            raise ValueError(f"num_classes={self.num_classes} must lie in [2, {MAX_CLASSES}]")
        if self.density < 0 or self.clutter < 0:
            raise ValueError("density and clutter must be non-negative")
        if self.mode not in MODES + ("mixed",):
            raise ValueError(f"unknown illumination mode {self.mode!r}")

    def side_range(self) -> tuple[int, int]:
        if self.small_targets:
            # strictly below the ratio bound
            return 4, max(4, math.ceil(SMALL_RATIO * self.size) - 1)
        return 8, self.size // 4


@dataclass
class SyntheticScene:
    rgb: np.ndarray               # (3, h, w) float32 in [0, 1]
    ir: np.ndarray                # (3, h, w), grey replicated
    boxes: list[DetectionBox]
    mode: str = "day"
    clutter: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> tuple[int, int]:
        return self.rgb.shape[1], self.rgb.shape[2]

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.rgb, self.ir], axis=0)


def luminance(rgb: np.ndarray) -> np.ndarray:
    return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]


def _smooth_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    coarse = rng.random((cells, cells))
    return np.clip(ndimage.zoom(coarse, size / cells, order=1, mode="nearest")[:size, :size], 0, 1)


def _texture(class_id: int, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    pattern = [
        (yy // 2) % 2,              # horizontal stripes
        (yy // 2 + xx // 2) % 2,    # checker
        np.zeros((h, w), int),      # flat
        (xx // 2) % 2,              # vertical stripes
        ((yy % 3 == 1) & (xx % 3 == 1)).astype(int),  # dots
    ][class_id]
    return _PALETTE[class_id][:, None, None] * (0.7 + 0.3 * pattern[None].astype(np.float32))


def _shape_mask(class_id: int, h: int, w: int) -> np.ndarray:
    if class_id % 2 == 0:
        return np.ones((h, w), bool)
    yy, xx = np.mgrid[0:h, 0:w]
    ny = (yy + 0.5 - h / 2) / (h / 2)
    nx = (xx + 0.5 - w / 2) / (w / 2)
    m = nx ** 2 + ny ** 2 <= 1.0
    # keep the bounding box tight: the ellipse touches all four sides
    m[h // 2, :] = True
    m[:, w // 2] = True
    return m


def _place(rng, occupied: np.ndarray, lo: int, hi: int, retries: int):
    size = occupied.shape[0]
    for _ in range(retries):
        w, h = int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))
        x0, y0 = int(rng.integers(0, size - w + 1)), int(rng.integers(0, size - h + 1))
        ys, xs = slice(max(y0 - 2, 0), y0 + h + 2), slice(max(x0 - 2, 0), x0 + w + 2)
        if not occupied[ys, xs].any():
            occupied[y0:y0 + h, x0:x0 + w] = True
            return x0, y0, w, h
    raise PlacementError(f"no free {lo}-{hi} px slot after {retries} tries")


def generate_scene(seed: int, spec: SceneSpec | None = None) -> SyntheticScene:
    """Deterministic scene for ``seed``.

    Layout, RGB and IR each draw from their own child stream, so the IR image
    of a seed does not depend on the illumination mode.
    """
    spec = spec or SceneSpec()
    spec.validate()
    layout_rng, rgb_rng, ir_rng = (np.random.default_rng(s)
                                   for s in np.random.SeedSequence(seed).spawn(3))
    S = spec.size
    mode = spec.mode
    if mode == "mixed":
        mode = MODES[int(layout_rng.choice(3, p=[0.5, 0.3, 0.2]))]

    base = np.array([0.35, 0.45, 0.30], np.float32)[:, None, None]
    rgb = base * (0.6 + 0.8 * _smooth_noise(rgb_rng, S, 8)[None]).astype(np.float32)
    rgb += 0.05 * rgb_rng.standard_normal((3, S, S)).astype(np.float32)
    ir = (0.15 + 0.15 * _smooth_noise(ir_rng, S, 6)).astype(np.float32)
    ir += 0.02 * ir_rng.standard_normal((S, S)).astype(np.float32)

    lo, hi = spec.side_range()
    occupied = np.zeros((S, S), bool)
    boxes = []
    for _ in range(spec.density):
        cls = int(layout_rng.integers(spec.num_classes))
        x0, y0, w, h = _place(layout_rng, occupied, lo, hi, spec.max_retries)
        mask = _shape_mask(cls, h, w)
        region = rgb[:, y0:y0 + h, x0:x0 + w]
        region[:, mask] = _texture(cls, h, w)[:, mask]
        yy, xx = np.mgrid[0:h, 0:w]
        r2 = ((yy + 0.5 - h / 2) / (h / 2)) ** 2 + ((xx + 0.5 - w / 2) / (w / 2)) ** 2
        blob = 0.6 + 0.35 * np.exp(-r2)
        ir[y0:y0 + h, x0:x0 + w][mask] = blob[mask]
        # the label comes from the thermal footprint
        ys, xs = np.nonzero(mask)
        bx0, bx1 = x0 + xs.min(), x0 + xs.max() + 1
        by0, by1 = y0 + ys.min(), y0 + ys.max() + 1
        boxes.append(DetectionBox(float(bx0 + bx1) / 2, float(by0 + by1) / 2, float(bx1 - bx0),
                                  float(by1 - by0), cls))
    for _ in range(spec.clutter):
        cls = int(layout_rng.integers(spec.num_classes))
        x0, y0, w, h = _place(layout_rng, occupied, lo, hi, spec.max_retries)
        mask = _shape_mask(cls, h, w)
        region = rgb[:, y0:y0 + h, x0:x0 + w]
        region[:, mask] = _texture(cls, h, w)[:, mask]
        ir[y0:y0 + h, x0:x0 + w][mask] = 0.08

    rgb = np.clip(rgb, 0, 1)
    if mode == "night":
        # dark frame with one uneven light pool
        cy, cx = rgb_rng.uniform(0, S, 2)
        yy, xx = np.mgrid[0:S, 0:S]
        pool = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * (S / 5) ** 2))
        rgb = rgb * (0.08 + 0.25 * pool).astype(np.float32)[None]
    elif mode == "overexposed":
        rgb = np.clip(0.45 + 0.8 * rgb, 0, 1)
    ir = np.clip(ir, 0, 1)
    return SyntheticScene(rgb.astype(np.float32), np.repeat(ir[None], 3, 0).astype(np.float32),
                          boxes, mode, spec.clutter, {"seed": seed})


# ---------------------------------------------------------------- disk I/O

def write_ppm(path, img: np.ndarray) -> None:
    """(3, h, w) float image in [0, 1] -> binary PPM."""
    arr = np.clip(np.round(np.asarray(img).transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path, format="PPM")


def write_pgm(path, img: np.ndarray) -> None:
    """(h, w) float image in [0, 1] -> binary PGM."""
    arr = np.clip(np.round(np.asarray(img) * 255), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "L").save(path, format="PPM")


def read_ppm(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1).copy()


def write_boxes(path, boxes: list[DetectionBox]) -> None:
    lines = [f"{b.class_id} {b.cx:.6g} {b.cy:.6g} {b.w:.6g} {b.h:.6g}" for b in boxes]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_boxes(path) -> list[DetectionBox]:
    boxes = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"{path}:{n}: expected 'class cx cy w h', got {line!r}")
        boxes.append(DetectionBox(*map(float, parts[1:]), class_id=int(parts[0])))
    return boxes


def write_scene(directory, scene: SyntheticScene) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_ppm(d / "rgb.ppm", scene.rgb)
    write_ppm(d / "ir.ppm", scene.ir)
    write_boxes(d / "boxes.txt", scene.boxes)


def read_scene(directory) -> SyntheticScene:
    d = Path(directory)
    rgb, ir = read_ppm(d / "rgb.ppm"), read_ppm(d / "ir.ppm")
    if rgb.shape != ir.shape:
        raise ValueError(f"{d}: rgb {rgb.shape} and ir {ir.shape} are not registered")
    return SyntheticScene(rgb, ir, read_boxes(d / "boxes.txt"), meta={"path": str(d)})


def generate_dataset(out, n: int, seed: int = 0, spec: SceneSpec | None = None) -> list[Path]:
    """Write ``n`` scenes to ``out/scene_XXXXX``; scene i uses seed ``seed * 1_000_003 + i``."""
    out = Path(out)
    dirs = []
    for i in range(n):
        d = out / f"scene_{i:05d}"
        write_scene(d, generate_scene(seed * 1_000_003 + i, spec))
        dirs.append(d)
    return dirs


def scene_dirs(root) -> list[Path]:
    root = Path(root)
    return sorted(p for p in root.iterdir() if (p / "boxes.txt").is_file())


@dataclass
class Dataset:
    images: np.ndarray                     # (n, 6, h, w) float32
    boxes: list[list[DetectionBox]]

    def __len__(self) -> int:
        return len(self.boxes)

    @classmethod
    def from_scenes(cls, scenes: list[SyntheticScene]) -> Dataset:
        if not scenes:
            raise ValueError("empty dataset")
        return cls(np.stack([s.stacked() for s in scenes]).astype(np.float32),
                   [list(s.boxes) for s in scenes])

    @classmethod
    def load(cls, root) -> Dataset:
        dirs = scene_dirs(root)
        if not dirs:
            raise FileNotFoundError(f"no scene directories under {root}")
        return cls.from_scenes([read_scene(d) for d in dirs])
