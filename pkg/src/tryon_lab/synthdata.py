"""Procedural person/cloth scenes with exact labels, pose and warp.

Each scene is a pure function of (seed, config): a flat cloth image with a
procedural pattern, a ground-truth TPS warp, and a person assembled from
the warped cloth plus head/arms/hands/lower-body primitives. Because the
person's torso pixels are literally the warped cloth, the dataset doubles
as a construction oracle: segmentation, pose keypoints and the warp are
known exactly, replacing the pretrained parser + pose estimator of real
pipelines.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from PIL import Image

from . import tps
from .config import DataConfig
from .errors import InputError

JOINT_NAMES = (
    "neck",
    "l_shoulder", "r_shoulder",
    "l_elbow", "r_elbow",
    "l_wrist", "r_wrist",
    "l_hip", "r_hip",
)

INDEX_FORMAT_VERSION = 1


class SegLabel(IntEnum):
    BACKGROUND = 0
    HEAD = 1
    TORSO_CLOTH = 2
    ARMS = 3
    HANDS = 4
    LOWER_BODY = 5
    ACCESSORY = 6


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to render one sample; scalars only, so two specs
    from the same seed compare equal bit-for-bit."""

    seed: int
    # flat-cloth / torso geometry, pixel units
    torso_cx: float
    torso_cy: float
    torso_w: float
    torso_h: float
    shear: float
    # limbs / head
    arm_angle_l: float
    arm_bend_l: float
    arm_angle_r: float
    arm_bend_r: float
    upper_arm_len: float
    forearm_len: float
    arm_radius: float
    head_radius: float
    # cloth pattern
    pattern_class: int
    pattern_period: float
    pattern_angle: float
    pattern_phase: float
    color_a: tuple[float, float, float]
    color_b: tuple[float, float, float]
    # palette
    skin_color: tuple[float, float, float]
    bg_color: tuple[float, float, float]
    bottom_color: tuple[float, float, float]
    accessory: bool
    accessory_color: tuple[float, float, float]
    theta_gt: tuple[float, ...]


@dataclass
class PairedSample:
    """One dataset record; images are float32 (h, w, 3) in [0, 1]."""

    person: np.ndarray          # p_a
    cloth: np.ndarray           # c_a, flat on white
    worn: np.ndarray            # c_ap, warped cloth isolate on white
    parsing: np.ndarray         # (h, w) uint8 SegLabel map
    pose: dict[str, tuple[float, float]]
    theta_gt: np.ndarray        # (2K,) float32
    pattern_class: int


@dataclass
class AgnosticPerson:
    """Person image with the cloth-dependent region hidden."""

    image: np.ndarray           # (h, w, 3) float32
    mask: np.ndarray            # (h, w) bool, True where hidden


def _quantize(v: float) -> float:
    """Snap to the 8-bit grid so stored PNGs reproduce flat colors exactly."""
    return round(v * 255.0) / 255.0


def _color(rng: np.random.Generator, lo, hi) -> tuple[float, float, float]:
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (3,))
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (3,))
    return tuple(_quantize(float(c)) for c in rng.uniform(lo, hi))


def generate_scene(seed: int, cfg: DataConfig) -> SceneSpec:
    """Deterministically sample scene parameters for one (seed, cfg)."""
    rng = np.random.default_rng(seed)
    h, w = cfg.height, cfg.width

    torso_cx = w * (0.5 + rng.uniform(-0.03, 0.03))
    torso_cy = h * (0.47 + rng.uniform(-0.02, 0.02))
    torso_w = w * rng.uniform(0.34, 0.46)
    torso_h = h * rng.uniform(0.26, 0.34)
    shear = rng.uniform(-0.18, 0.18)

    arm_angle_l = rng.uniform(0.12, 0.50)
    arm_bend_l = rng.uniform(-0.15, 0.45)
    arm_angle_r = rng.uniform(0.12, 0.50)
    arm_bend_r = rng.uniform(-0.15, 0.45)

    pattern_class = int(rng.integers(0, cfg.pattern_classes))
    pattern_period = h * rng.uniform(0.09, 0.16)
    pattern_angle = rng.uniform(0.0, np.pi)
    pattern_phase = rng.uniform(0.0, pattern_period)

    color_a = _color(rng, 0.05, 0.9)
    color_b = _color(rng, 0.05, 0.9)
    while sum(abs(a - b) for a, b in zip(color_a, color_b)) < 0.5:
        color_b = _color(rng, 0.05, 0.9)

    r = rng.uniform(0.55, 0.85)
    skin_color = (_quantize(r), _quantize(r * rng.uniform(0.72, 0.85)),
                  _quantize(r * rng.uniform(0.55, 0.75)))
    bg_color = _color(rng, 0.78, 0.95)
    bottom_color = _color(rng, 0.12, 0.45)
    accessory = bool(rng.random() < cfg.accessory_prob)
    accessory_color = _color(rng, (0.6, 0.05, 0.05), (0.95, 0.45, 0.3))

    theta_gt = tuple(
        float(x) for x in rng.uniform(-cfg.warp_bound, cfg.warp_bound, size=cfg.theta_dim)
        .astype(np.float32)
    )

    return SceneSpec(
        seed=seed,
        torso_cx=torso_cx, torso_cy=torso_cy,
        torso_w=torso_w, torso_h=torso_h, shear=shear,
        arm_angle_l=arm_angle_l, arm_bend_l=arm_bend_l,
        arm_angle_r=arm_angle_r, arm_bend_r=arm_bend_r,
        upper_arm_len=h * rng.uniform(0.15, 0.20),
        forearm_len=h * rng.uniform(0.13, 0.18),
        arm_radius=max(1.2, 0.032 * h),
        head_radius=h * rng.uniform(0.068, 0.095),
        pattern_class=pattern_class,
        pattern_period=pattern_period,
        pattern_angle=pattern_angle,
        pattern_phase=pattern_phase,
        color_a=color_a, color_b=color_b,
        skin_color=skin_color, bg_color=bg_color, bottom_color=bottom_color,
        accessory=accessory, accessory_color=accessory_color,
        theta_gt=theta_gt,
    )


# -- rasterization primitives -------------------------------------------

def _disc(xx, yy, cx, cy, r):
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _capsule(xx, yy, p0, p1, r):
    """Pixels within distance r of segment p0-p1."""
    px, py = p1[0] - p0[0], p1[1] - p0[1]
    denom = max(px * px + py * py, 1e-9)
    t = np.clip(((xx - p0[0]) * px + (yy - p0[1]) * py) / denom, 0.0, 1.0)
    dx = xx - (p0[0] + t * px)
    dy = yy - (p0[1] + t * py)
    return dx * dx + dy * dy <= r * r


def _pattern(scene: SceneSpec, xx, yy) -> np.ndarray:
    ca = np.asarray(scene.color_a, dtype=np.float32)
    cb = np.asarray(scene.color_b, dtype=np.float32)
    per = scene.pattern_period
    if scene.pattern_class == 0:        # solid
        sel = np.zeros(xx.shape, dtype=bool)
    elif scene.pattern_class == 1:      # stripes
        s = xx * np.cos(scene.pattern_angle) + yy * np.sin(scene.pattern_angle)
        sel = np.floor((s + scene.pattern_phase) / per).astype(np.int64) % 2 == 1
    elif scene.pattern_class == 2:      # checker
        sel = (
            np.floor((xx + scene.pattern_phase) / per).astype(np.int64)
            + np.floor((yy + scene.pattern_phase) / per).astype(np.int64)
        ) % 2 == 1
    else:                               # dots
        ux = np.mod(xx + scene.pattern_phase, per) - per / 2
        uy = np.mod(yy + scene.pattern_phase, per) - per / 2
        sel = ux * ux + uy * uy <= (0.32 * per) ** 2
    out = np.where(sel[..., None], cb, ca)
    return out.astype(np.float32)


def _paint(img, parsing, mask, color, label):
    img[mask] = np.asarray(color, dtype=np.float32)
    parsing[mask] = int(label)


def _clamp_point(x, y, w, h):
    return (float(np.clip(x, 1.0, w - 2.0)), float(np.clip(y, 1.0, h - 2.0)))


def render_sample(scene: SceneSpec, cfg: DataConfig) -> PairedSample:
    """Rasterize a scene into the (person, cloth, worn, labels, pose) record."""
    h, w = cfg.height, cfg.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)

    # flat cloth: sheared rectangle minus a neck notch, pattern in flat coords
    xs = xx - scene.torso_cx - scene.shear * (yy - scene.torso_cy)
    ys = yy - scene.torso_cy
    flat_mask = (np.abs(xs) <= scene.torso_w / 2) & (np.abs(ys) <= scene.torso_h / 2)
    notch_cx = scene.torso_cx - scene.shear * scene.torso_h / 2
    notch = _disc(xx, yy, notch_cx, scene.torso_cy - scene.torso_h / 2, 0.17 * scene.torso_w)
    flat_mask &= ~notch

    pattern = _pattern(scene, xx, yy)
    m3 = flat_mask[..., None].astype(np.float32)
    cloth = (1.0 - m3) + pattern * m3

    # ground-truth warp of both the cloth and its mask
    warper = tps.get_warper(cfg.k_per_side)
    theta = np.asarray(scene.theta_gt, dtype=np.float32)
    warped_cloth = tps.warp_image_np(cloth, theta, warper)
    warped_mask = tps.warp_image_np(flat_mask[..., None].astype(np.float32), theta, warper)[..., 0]
    region = warped_mask > 0.5
    if not region.any():          # cannot happen for bounded warps; keep render total
        region = flat_mask

    rows = np.flatnonzero(region.any(axis=1))
    cols = np.flatnonzero(region.any(axis=0))
    y0, y1 = float(rows[0]), float(rows[-1])
    x0, x1 = float(cols[0]), float(cols[-1])
    bw, bh = x1 - x0, y1 - y0

    neck = _clamp_point((x0 + x1) / 2, y0, w, h)
    l_sh = _clamp_point(x0 + 0.12 * bw, y0 + 0.08 * bh, w, h)
    r_sh = _clamp_point(x1 - 0.12 * bw, y0 + 0.08 * bh, w, h)

    def arm_chain(shoulder, angle, bend, side):
        sx = -1.0 if side == "l" else 1.0
        elbow = (
            shoulder[0] + sx * np.sin(angle) * scene.upper_arm_len,
            shoulder[1] + np.cos(angle) * scene.upper_arm_len,
        )
        wrist = (
            elbow[0] + sx * np.sin(angle + bend) * scene.forearm_len,
            elbow[1] + np.cos(angle + bend) * scene.forearm_len,
        )
        return _clamp_point(*elbow, w, h), _clamp_point(*wrist, w, h)

    l_el, l_wr = arm_chain(l_sh, scene.arm_angle_l, scene.arm_bend_l, "l")
    r_el, r_wr = arm_chain(r_sh, scene.arm_angle_r, scene.arm_bend_r, "r")
    l_hip = _clamp_point(x0 + 0.22 * bw, y1, w, h)
    r_hip = _clamp_point(x1 - 0.22 * bw, y1, w, h)
    pose = {
        "neck": neck,
        "l_shoulder": l_sh, "r_shoulder": r_sh,
        "l_elbow": l_el, "r_elbow": r_el,
        "l_wrist": l_wr, "r_wrist": r_wr,
        "l_hip": l_hip, "r_hip": r_hip,
    }

    person = np.empty((h, w, 3), dtype=np.float32)
    person[:] = np.asarray(scene.bg_color, dtype=np.float32)
    parsing = np.zeros((h, w), dtype=np.uint8)

    legs = (
        (yy >= y1 + 1)
        & (yy <= min(h - 1.0, y1 + 0.30 * h))
        & (xx >= x0 + 0.06 * bw)
        & (xx <= x1 - 0.06 * bw)
    )
    _paint(person, parsing, legs, scene.bottom_color, SegLabel.LOWER_BODY)

    person[region] = warped_cloth[region]
    parsing[region] = int(SegLabel.TORSO_CLOTH)

    arm_r = scene.arm_radius
    arms = (
        _capsule(xx, yy, l_sh, l_el, arm_r) | _capsule(xx, yy, l_el, l_wr, arm_r)
        | _capsule(xx, yy, r_sh, r_el, arm_r) | _capsule(xx, yy, r_el, r_wr, arm_r)
    )
    _paint(person, parsing, arms, scene.skin_color, SegLabel.ARMS)

    hands = _disc(xx, yy, *l_wr, arm_r * 1.4) | _disc(xx, yy, *r_wr, arm_r * 1.4)
    _paint(person, parsing, hands, scene.skin_color, SegLabel.HANDS)

    head_cy = max(scene.head_radius + 1.0, y0 - scene.head_radius - 1.5)
    head = _disc(xx, yy, neck[0], head_cy, scene.head_radius)
    _paint(person, parsing, head, scene.skin_color, SegLabel.HEAD)

    if scene.accessory:
        acc_r = 0.045 * h
        acc_x = min(w - 2.0 - acc_r, x1 + 0.06 * w)
        acc_y = min(h - 2.0 - acc_r, y1 - 0.05 * h)
        acc = _disc(xx, yy, acc_x, acc_y, acc_r)
        _paint(person, parsing, acc, scene.accessory_color, SegLabel.ACCESSORY)

    worn = np.ones((h, w, 3), dtype=np.float32)
    torso_px = parsing == int(SegLabel.TORSO_CLOTH)
    worn[torso_px] = warped_cloth[torso_px]

    return PairedSample(
        person=person,
        cloth=cloth,
        worn=worn,
        parsing=parsing,
        pose=pose,
        theta_gt=theta,
        pattern_class=scene.pattern_class,
    )


def build_agnostic(
    person: np.ndarray,
    parsing: np.ndarray,
    pose: dict[str, tuple[float, float]],
    cfg: DataConfig,
) -> AgnosticPerson:
    """Hide arms, worn cloth and a neck-centered box; the h() of the teacher."""
    if person.shape[:2] != parsing.shape:
        raise InputError(
            f"parsing {parsing.shape} not aligned with person {person.shape[:2]}"
        )
    if "neck" not in pose:
        raise InputError("pose is missing the neck joint")
    h, w = parsing.shape
    mask = (parsing == int(SegLabel.ARMS)) | (parsing == int(SegLabel.TORSO_CLOTH))

    nx, ny = pose["neck"]
    half_h = cfg.neck_box_h * h / 2.0
    half_w = cfg.neck_box_w * w / 2.0
    r0, r1 = int(np.floor(ny - half_h)), int(np.ceil(ny + half_h))
    c0, c1 = int(np.floor(nx - half_w)), int(np.ceil(nx + half_w))
    if half_h > 0 and half_w > 0:
        mask[max(r0, 0): max(r1, 0), max(c0, 0): max(c1, 0)] = True

    image = person.copy()
    image[mask] = np.float32(cfg.mask_fill)
    return AgnosticPerson(image=image, mask=mask)


# -- dataset on disk ------------------------------------------------------

@dataclass(frozen=True)
class IndexEntry:
    id: str
    seed: int
    split: str
    pattern_class: int


class DatasetIndex:
    """Loaded dataset index; samples are re-rendered from their seeds so
    in-memory values keep full float precision (PNGs are for inspection
    and interop)."""

    def __init__(self, path: Path, cfg: DataConfig, entries: list[IndexEntry]):
        self.path = Path(path)
        self.cfg = cfg
        self.entries = entries
        self._cache: dict[str, PairedSample] = {}
        self._agnostic: dict[str, AgnosticPerson] = {}

    def split_entries(self, split: str) -> list[IndexEntry]:
        if split == "all":
            return list(self.entries)
        return [e for e in self.entries if e.split == split]

    def sample(self, entry: IndexEntry) -> PairedSample:
        if entry.id not in self._cache:
            scene = generate_scene(entry.seed, self.cfg)
            self._cache[entry.id] = render_sample(scene, self.cfg)
        return self._cache[entry.id]

    def agnostic(self, entry: IndexEntry) -> AgnosticPerson:
        if entry.id not in self._agnostic:
            s = self.sample(entry)
            self._agnostic[entry.id] = build_agnostic(s.person, s.parsing, s.pose, self.cfg)
        return self._agnostic[entry.id]

    def __len__(self) -> int:
        return len(self.entries)


def _to_png(arr: np.ndarray, path: Path):
    if arr.ndim == 3:
        data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(data, mode="RGB").save(path)
    else:
        Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


def write_dataset(n: int, seed: int, cfg: DataConfig, path) -> DatasetIndex:
    """Generate n samples under `path` with the documented directory layout."""
    if n < 1:
        raise InputError("dataset size must be >= 1")
    root = Path(path)
    try:
        for sub in ("images", "labels", "meta"):
            (root / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create dataset directory at {root}: {exc}") from exc

    n_test = int(round(n * cfg.test_fraction))
    entries = []
    for i in range(n):
        sid = f"{i:06d}"
        sample_seed = seed + i
        split = "test" if i >= n - n_test else "train"
        scene = generate_scene(sample_seed, cfg)
        sample = render_sample(scene, cfg)
        _to_png(sample.person, root / "images" / f"{sid}_person.png")
        _to_png(sample.cloth, root / "images" / f"{sid}_cloth.png")
        _to_png(sample.worn, root / "images" / f"{sid}_worn.png")
        _to_png(sample.parsing, root / "labels" / f"{sid}_parsing.png")
        meta = {
            "id": sid,
            "seed": sample_seed,
            "split": split,
            "pattern_class": sample.pattern_class,
            "pose": {k: list(v) for k, v in sample.pose.items()},
            "theta_gt": [float(t) for t in sample.theta_gt],
        }
        (root / "meta" / f"{sid}.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
        entries.append(IndexEntry(id=sid, seed=sample_seed, split=split,
                                  pattern_class=sample.pattern_class))

    index = {
        "format_version": INDEX_FORMAT_VERSION,
        "n": n,
        "seed": seed,
        "config": asdict(cfg),
        "entries": [asdict(e) for e in entries],
    }
    (root / "index.json").write_text(json.dumps(index, sort_keys=True, indent=1))
    return DatasetIndex(root, cfg, entries)


def load_dataset(path) -> DatasetIndex:
    root = Path(path)
    index_file = root / "index.json"
    if not index_file.exists():
        raise InputError(f"no index.json under {root}")
    raw = json.loads(index_file.read_text())
    if raw.get("format_version") != INDEX_FORMAT_VERSION:
        raise InputError(
            f"index format {raw.get('format_version')} unsupported "
            f"(expected {INDEX_FORMAT_VERSION})"
        )
    cfg = DataConfig(**raw["config"])
    entries = [IndexEntry(**e) for e in raw["entries"]]
    return DatasetIndex(root, cfg, entries)


def dataset_checksum(path) -> str:
    """SHA-256 over the index and every stored file, order-stable."""
    root = Path(path)
    digest = hashlib.sha256()
    for f in sorted(root.rglob("*")):
        if f.is_file():
            digest.update(f.relative_to(root).as_posix().encode())
            digest.update(f.read_bytes())
    return digest.hexdigest()


# -- batching ---------------------------------------------------------------

def _chw(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))


@dataclass
class Batch:
    ids: list[str]
    person: torch.Tensor        # (b, 3, h, w)
    agnostic: torch.Tensor      # (b, 3, h, w)
    cloth: torch.Tensor         # (b, 3, h, w) paired cloth c_a
    worn: torch.Tensor          # (b, 3, h, w) target c_ap
    theta_gt: torch.Tensor      # (b, 2K)
    parsing: torch.Tensor       # (b, h, w) uint8
    cloth_b: torch.Tensor | None = None   # unpaired cloth, shuffled partner


def iterate_batches(
    index: DatasetIndex,
    batch_size: int,
    mode: str,
    seed: int,
    split: str = "train",
    epochs: int | None = None,
) -> Iterator[Batch]:
    """Yield seeded batches; `unpaired` mode adds a shuffled partner cloth."""
    if mode not in ("paired", "unpaired"):
        raise InputError(f"mode {mode!r} not in (paired, unpaired)")
    entries = index.split_entries(split)
    if not entries:
        raise InputError(f"dataset split {split!r} is empty")
    if batch_size > len(entries):
        raise InputError(f"batch size {batch_size} exceeds split size {len(entries)}")

    rng = np.random.default_rng(seed)
    n = len(entries)
    epoch = 0
    while epochs is None or epoch < epochs:
        order = rng.permutation(n)
        partner = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            chosen = order[start: start + batch_size]
            samples = [index.sample(entries[i]) for i in chosen]
            agnostics = [index.agnostic(entries[i]) for i in chosen]
            batch = Batch(
                ids=[entries[i].id for i in chosen],
                person=torch.stack([_chw(s.person) for s in samples]),
                agnostic=torch.stack([_chw(a.image) for a in agnostics]),
                cloth=torch.stack([_chw(s.cloth) for s in samples]),
                worn=torch.stack([_chw(s.worn) for s in samples]),
                theta_gt=torch.stack([torch.from_numpy(s.theta_gt) for s in samples]),
                parsing=torch.stack(
                    [torch.from_numpy(s.parsing.astype(np.uint8)) for s in samples]
                ),
            )
            if mode == "unpaired":
                partners = [index.sample(entries[partner[i]]) for i in chosen]
                batch.cloth_b = torch.stack([_chw(s.cloth) for s in partners])
            yield batch
        epoch += 1
