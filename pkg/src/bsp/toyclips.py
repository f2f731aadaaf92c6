"""Procedural trimmed-clip dataset: generation and on-disk store.

Each class is a distinct motion pattern: a soft blob drifting at a
class-specific direction and rate over a class-specific static sine texture.
Clips within a class differ by blob start position and texture phase, so
same-class pairs are distinguishable while the class itself stays linearly
separable even from time-averaged pixels.

On disk a dataset is a directory with `manifest.json` plus one binary file
per clip: 4-byte magic "BSPC", four little-endian u32 (T, H, W, C), then
T*H*W*C little-endian float32 values, row-major. Frames are kept in float32
in memory so save -> load round-trips are bit-exact.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CLIP_MAGIC = b"BSPC"
MANIFEST_VERSION = 1


class DatasetError(ValueError):
    """Base class for dataset store failures."""


class BadMagicError(DatasetError):
    pass


class TruncatedFileError(DatasetError):
    pass


class ShapeMismatchError(DatasetError):
    pass


@dataclass
class ClipConfig:
    K: int = 8
    clips_per_class: int = 40
    len: int = 64
    H: int = 24
    W: int = 24
    C: int = 1
    noise_sigma: float = 0.05
    fps: float = 12.0


@dataclass
class Clip:
    clip_id: int
    class_id: int
    frames: np.ndarray  # (T, H, W, C) float32, values in [0, 1]
    fps: float

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class ClipDataset:
    clips: list
    K: int
    split: dict = field(default_factory=dict)  # clip_id -> "train" | "val"

    def by_split(self, split):
        return [c for c in self.clips if self.split[c.clip_id] == split]

    def frame_shape(self):
        return self.clips[0].frames.shape[1:] if self.clips else None


def _class_params(class_id, K):
    angle = 2.0 * np.pi * class_id / K
    # rates stay close across classes so a resampled clip never mimics another
    # class's natural pace
    speed = (1.5 + 0.04 * class_id) / 24.0       # fraction of frame width per frame
    blob_sigma = 0.12 + 0.02 * (class_id % 2)
    return angle, speed, blob_sigma


DRIFT_FREQ = 2.0  # cycles across the width of the moving texture component


def render_clip(class_id, cfg, rng):
    """Render one clip of the class's motion pattern.

    The class is a motion direction: a sine grating drifting along the class
    angle plus a blob travelling the same way. The grating covers every pixel,
    so the frame rate (and any change of it) is visible everywhere. A static
    sine with random per-clip orientation/frequency/phase decorates the clip
    without carrying class identity; classes that share a grating orientation
    differ only by drift sign, so appearance alone cannot name the class and
    a classifier must read temporal order. Clean values stay inside [0, 1] by
    construction: 0.45 +- 0.24 + 0.31.
    """
    angle, speed, blob_sigma = _class_params(class_id, cfg.K)
    u = (np.arange(cfg.W) + 0.5) / cfg.W
    v = (np.arange(cfg.H) + 0.5) / cfg.H
    uu, vv = np.meshgrid(u, v)
    proj = np.cos(angle) * uu + np.sin(angle) * vv

    tex_angle = rng.uniform(0.0, np.pi)
    tex_freq = rng.uniform(1.5, 5.0)
    tex_phase = rng.uniform(0.0, 2.0 * np.pi)
    tex_proj = np.cos(tex_angle) * uu + np.sin(tex_angle) * vv
    static = 0.12 * np.sin(2.0 * np.pi * tex_freq * tex_proj + tex_phase)

    phase_drift = rng.uniform(0.0, 2.0 * np.pi)
    p0 = rng.uniform(0.0, 1.0, size=2)
    dx, dy = speed * np.cos(angle), speed * np.sin(angle)
    frames = np.empty((cfg.len, cfg.H, cfg.W, cfg.C), dtype=np.float64)
    for t in range(cfg.len):
        drift = 0.12 * np.sin(2.0 * np.pi * DRIFT_FREQ * (proj - speed * t) + phase_drift)
        px = (p0[0] + dx * t) % 1.0
        py = (p0[1] + dy * t) % 1.0
        # toroidal distance keeps motion smooth across the wrap
        du = np.abs(uu - px)
        dv = np.abs(vv - py)
        du = np.minimum(du, 1.0 - du)
        dv = np.minimum(dv, 1.0 - dv)
        blob = np.exp(-(du * du + dv * dv) / (2.0 * blob_sigma * blob_sigma))
        frames[t] = (0.45 + static + drift + 0.31 * blob)[:, :, None]
    if cfg.noise_sigma > 0:
        frames += rng.normal(0.0, cfg.noise_sigma, size=frames.shape)
    np.clip(frames, 0.0, 1.0, out=frames)
    return frames.astype(np.float32)


def min_source_len(tau, epsilon, t_max, gamma_max):
    """Shortest clip that supports every synthesis mode at the given knobs."""
    need_speed = int(np.floor(t_max + gamma_max * (2 * tau - t_max) + 0.5))
    return max(2 * (tau + epsilon), need_speed, 2 * tau)


def generate_source(seed, cfg):
    """Deterministic dataset: K classes, clips_per_class clips each, 3:1 split."""
    if cfg.K < 4:
        raise ValueError("need K >= 4 classes, got %d" % cfg.K)
    if cfg.H < 8 or cfg.W < 8:
        raise ValueError("frames must be at least 8x8, got %dx%d" % (cfg.H, cfg.W))
    if cfg.clips_per_class < 2:
        raise ValueError("need >= 2 clips per class for same-class pairs")
    clips = []
    split = {}
    clip_id = 0
    for class_id in range(cfg.K):
        for j in range(cfg.clips_per_class):
            rng = np.random.default_rng((seed, class_id, j))
            clips.append(Clip(clip_id, class_id, render_clip(class_id, cfg, rng), cfg.fps))
            # deterministic 3:1 train:val by clip index within the class
            split[clip_id] = "val" if j % 4 == 3 else "train"
            clip_id += 1
    return ClipDataset(clips=clips, K=cfg.K, split=split)


# ---------------------------------------------------------------------------
# binary store
# ---------------------------------------------------------------------------

def write_tensor_file(path, frames):
    """Write one BSPC tensor file: magic, u32 T,H,W,C, float32 payload."""
    arr = np.ascontiguousarray(frames, dtype=np.float32)
    if arr.ndim != 4:
        raise ShapeMismatchError("expected a (T,H,W,C) array, got shape %s" % (arr.shape,))
    with open(path, "wb") as f:
        f.write(CLIP_MAGIC)
        f.write(struct.pack("<4I", *arr.shape))
        f.write(arr.astype("<f4").tobytes(order="C"))


def read_tensor_file(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if len(magic) < 4 or magic != CLIP_MAGIC:
            raise BadMagicError("%s: bad magic %r" % (path, magic))
        header = f.read(16)
        if len(header) < 16:
            raise TruncatedFileError("%s: truncated header" % path)
        t, h, w, c = struct.unpack("<4I", header)
        payload = f.read(4 * t * h * w * c)
        if len(payload) < 4 * t * h * w * c:
            raise TruncatedFileError("%s: expected %d payload bytes, got %d"
                                     % (path, 4 * t * h * w * c, len(payload)))
    return np.frombuffer(payload, dtype="<f4").reshape(t, h, w, c).copy()


def save_dataset(ds, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    shape = ds.frame_shape()
    manifest = {
        "version": MANIFEST_VERSION,
        "K": ds.K,
        "H": int(shape[0]) if shape else 0,
        "W": int(shape[1]) if shape else 0,
        "C": int(shape[2]) if shape else 0,
        "fps": ds.clips[0].fps if ds.clips else 0.0,
        "clips": [],
    }
    for clip in ds.clips:
        fname = "clip_%05d.bspc" % clip.clip_id
        write_tensor_file(path / fname, clip.frames)
        manifest["clips"].append({
            "id": clip.clip_id,
            "class": clip.class_id,
            "split": ds.split[clip.clip_id],
            "file": fname,
            "len": len(clip),
        })
    with open(path / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


def load_dataset(path):
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise DatasetError("no manifest at %s" % mpath)
    with open(mpath, encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("version") != MANIFEST_VERSION:
        raise DatasetError("unsupported manifest version %r" % manifest.get("version"))
    clips, split = [], {}
    for rec in manifest["clips"]:
        frames = read_tensor_file(path / rec["file"])
        want = (rec["len"], manifest["H"], manifest["W"], manifest["C"])
        if frames.shape != want:
            raise ShapeMismatchError("%s: manifest says %s, file holds %s"
                                     % (rec["file"], want, frames.shape))
        clips.append(Clip(rec["id"], rec["class"], frames, manifest["fps"]))
        split[rec["id"]] = rec["split"]
    return ClipDataset(clips=clips, K=manifest["K"], split=split)
