"""Procedural perspective scenes with exact vanishing-point labels.

Each scene has two long "main" segments lying on rays out of the vp, a few
distractor segments that do not point at it, and a smooth noisy background.
Images are quantized to 8-bit levels so a PNG round trip is lossless.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .geometry import LineSegment, Point2, line_through, make_segment, point_line_distance

MAX_ATTEMPTS = 100
DISTRACTOR_CLEARANCE = 3.0


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 128
    vp_margin: float = 0.1
    min_line_angle_sep: float = 15.0
    distractor_min: int = 2
    distractor_max: int = 6
    noise_sigma: float = 0.02
    seed: int = 0
    # main segments start at least this fraction of the size away from the vp
    min_vp_offset: float = 0.1
    max_vp_offset: float = 0.3
    min_main_length: float = 0.2

    def __post_init__(self):
        if not 0 <= self.vp_margin < 0.45:
            raise ValueError(f"vp_margin must be in [0, 0.45), got {self.vp_margin}")
        if not 0 < self.min_line_angle_sep <= 90:
            raise ValueError(f"min_line_angle_sep must be in (0, 90], got {self.min_line_angle_sep}")
        if self.image_size < 8:
            raise ValueError("image_size too small")
        if not 0 < self.min_vp_offset <= self.max_vp_offset:
            raise ValueError("need 0 < min_vp_offset <= max_vp_offset")
        if not 0 <= self.distractor_min <= self.distractor_max:
            raise ValueError("bad distractor count range")


@dataclass
class AnnotatedScene:
    image: np.ndarray
    main_lines: tuple
    vp: Point2
    distractors: list = field(default_factory=list)
    scene_id: str = ""

    @property
    def image_size(self):
        h, w = self.image.shape[:2]
        return (w, h)


def scene_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


# ------------------------------------------------------------------ drawing

def draw_segment(img, a, b, width, color):
    """Anti-aliased segment: coverage alpha from pixel-centre distance."""
    h, w = img.shape[:2]
    r = width / 2 + 1
    x0 = max(int(math.floor(min(a[0], b[0]) - r)), 0)
    x1 = min(int(math.ceil(max(a[0], b[0]) + r)), w)
    y0 = max(int(math.floor(min(a[1], b[1]) - r)), 0)
    y1 = min(int(math.ceil(max(a[1], b[1]) + r)), h)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    px, py = xs + 0.5, ys + 0.5
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy), 0, 1)
    dist = np.hypot(px - ax - t * dx, py - ay - t * dy)
    alpha = np.clip(width / 2 + 0.5 - dist, 0, 1)[..., None]
    patch = img[y0:y1, x0:x1]
    patch *= 1 - alpha
    patch += alpha * np.asarray(color)


def _background(rng, size):
    base = rng.uniform(0.25, 0.75, 3)
    theta = rng.uniform(0, 2 * math.pi)
    amp = rng.uniform(0.05, 0.25)
    ys, xs = np.mgrid[0:size, 0:size] / size - 0.5
    ramp = (math.cos(theta) * xs + math.sin(theta) * ys)[..., None]
    return np.clip(base + amp * ramp * rng.uniform(0.5, 1.0, 3), 0, 1)


def _ray_exit(p, d, size, inset=1.0):
    """Distance along unit direction d from p to the inset image border."""
    ts = []
    for k in range(2):
        if d[k] > 1e-12:
            ts.append((size - inset - p[k]) / d[k])
        elif d[k] < -1e-12:
            ts.append((inset - p[k]) / d[k])
    return min(ts)


def _main_segments(rng, config, vp):
    size = config.image_size
    sep = math.radians(config.min_line_angle_sep)
    th1 = rng.uniform(0, 2 * math.pi)
    th2 = th1 + rng.choice([-1, 1]) * rng.uniform(sep, math.pi - sep)
    t_min = config.min_vp_offset * size
    min_len = config.min_main_length * size
    segs = []
    for th in (th1, th2):
        d = np.array([math.cos(th), math.sin(th)])
        t_max = _ray_exit(vp, d, size)
        if t_max - t_min < min_len:
            return None
        # like road edges: start short of the vp, run out to the border
        t0 = rng.uniform(t_min, min(config.max_vp_offset * size, t_max - min_len))
        segs.append(make_segment(vp + t0 * d, vp + t_max * d))
    return segs


def _distractor(rng, size, vp):
    for _ in range(MAX_ATTEMPTS):
        c = rng.uniform(0.05 * size, 0.95 * size, 2)
        th = rng.uniform(0, math.pi)
        half = 0.5 * rng.uniform(0.1, 0.4) * size
        d = np.array([math.cos(th), math.sin(th)])
        a, b = c - half * d, c + half * d
        if not (np.all(a >= 1) and np.all(a <= size - 1) and np.all(b >= 1) and np.all(b <= size - 1)):
            continue
        if point_line_distance(vp, line_through(a, b)) <= DISTRACTOR_CLEARANCE:
            continue
        return make_segment(a, b)
    return None


def generate_scene(config: SceneConfig, rng: np.random.Generator, scene_id="") -> AnnotatedScene:
    size = config.image_size
    lo, hi = config.vp_margin * size, (1 - config.vp_margin) * size
    for _ in range(MAX_ATTEMPTS):
        vp = rng.uniform(lo, hi, 2)
        if not (0 < vp[0] < size and 0 < vp[1] < size):
            continue
        segs = _main_segments(rng, config, vp)
        if segs is not None:
            break
    else:
        raise GenerationError(f"no valid main lines after {MAX_ATTEMPTS} attempts for {config}")

    img = _background(rng, size)
    n_dis = int(rng.integers(config.distractor_min, config.distractor_max + 1))
    distractors = [d for d in (_distractor(rng, size, vp) for _ in range(n_dis)) if d is not None]
    bg_mean = float(img.mean())
    for d in distractors:
        shift = rng.uniform(0.15, 0.3) * rng.choice([-1, 1])
        color = np.clip(img.mean(axis=(0, 1)) + shift, 0, 1)
        draw_segment(img, d.a, d.b, rng.uniform(1, 2), color)
    main_color = rng.uniform(0.0, 0.08, 3) if bg_mean > 0.5 else rng.uniform(0.92, 1.0, 3)
    for s in segs:
        draw_segment(img, s.a, s.b, rng.uniform(2, 4), main_color)
    if config.noise_sigma > 0:
        img += rng.normal(0, config.noise_sigma, img.shape)
    img = np.round(np.clip(img, 0, 1) * 255) / 255
    return AnnotatedScene(img.astype(np.float32), tuple(segs), Point2(float(vp[0]), float(vp[1])),
                          distractors, scene_id)


def generate_scenes(config: SceneConfig, count: int, start=0):
    return [generate_scene(config, scene_rng(config.seed, i), scene_id=f"{i:06d}")
            for i in range(start, start + count)]


# ------------------------------------------------------------- augmentation

def _transform_point(p, A, b):
    q = A @ np.asarray(p, dtype=np.float64) + b
    return Point2(float(q[0]), float(q[1]))


def augment(scene: AnnotatedScene, rng: np.random.Generator, flip_prob=0.5, max_rot_deg=10.0):
    """Random horizontal flip and rotation about the image centre.

    Labels follow the same affine map as the pixels. If the vp would leave
    the image the original scene is returned unchanged.
    """
    w, h = scene.image_size
    flip = rng.random() < flip_prob
    angle = math.radians(rng.uniform(-max_rot_deg, max_rot_deg)) if max_rot_deg > 0 else 0.0
    if not flip and angle == 0.0:
        return scene
    F = np.array([[-1.0, 0.0], [0.0, 1.0]]) if flip else np.eye(2)
    fb = np.array([w, 0.0]) if flip else np.zeros(2)
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    ctr = np.array([w / 2, h / 2])
    # p' = R (F p + fb - ctr) + ctr
    A = R @ F
    b = R @ (fb - ctr) + ctr
    vp = _transform_point(scene.vp, A, b)
    if not (0 < vp.x < w and 0 < vp.y < h):
        return scene
    lines = tuple(LineSegment(_transform_point(l.a, A, b), _transform_point(l.b, A, b))
                  for l in scene.main_lines)
    dis = [LineSegment(_transform_point(l.a, A, b), _transform_point(l.b, A, b))
           for l in scene.distractors]
    # output index (r, c) samples input index P Ainv P (r, c) + off
    Ainv = np.linalg.inv(A)
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    M = P @ Ainv @ P
    off = P @ Ainv @ (0.5 - b) - 0.5
    M3 = np.eye(3)
    M3[:2, :2] = M
    img = ndimage.affine_transform(scene.image, M3, offset=np.r_[off, 0.0], order=1, mode="nearest")
    return AnnotatedScene(img.astype(scene.image.dtype), lines, vp, dis, scene.scene_id)


# ------------------------------------------------------------------ datasets

def save_png(image, path):
    arr = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("RGB"), dtype=np.float32) / 255).astype(np.float32)


def build_dataset(config: SceneConfig, count: int, split_ratio: float, out_dir) -> dict:
    """Write PNG scenes plus ``train.jsonl``/``test.jsonl`` and a manifest.

    The first ``round(count * split_ratio)`` scene indices form the train split.
    """
    from .dataio import record_from_scene, save_annotations
    if count < 2:
        raise ValueError("count must be >= 2")
    if not 0 < split_ratio < 1:
        raise ValueError("split_ratio must be in (0, 1)")
    out = Path(out_dir)
    n_train = int(round(count * split_ratio))
    n_train = min(max(n_train, 1), count - 1)
    splits = {"train": range(0, n_train), "test": range(n_train, count)}
    manifest = {"config": asdict(config), "count": count, "split_ratio": split_ratio, "splits": {}}
    for name, idx in splits.items():
        d = out / name
        try:
            d.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OSError(f"cannot create {d}: {e}") from e
        records = []
        for i in idx:
            scene = generate_scene(config, scene_rng(config.seed, i), scene_id=f"{i:06d}")
            rel = f"{name}/{i:06d}.png"
            try:
                save_png(scene.image, out / rel)
            except OSError as e:
                raise OSError(f"cannot write {out / rel}: {e}") from e
            records.append(record_from_scene(scene, rel))
        save_annotations(records, out / f"{name}.jsonl")
        manifest["splits"][name] = {"annotations": f"{name}.jsonl", "count": len(records)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
