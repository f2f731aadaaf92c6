"""Synthesis of the four temporal-boundary sample types from trimmed clips.

Every sample is 2*tau frames long. Frame positions are 1-based in the
formulas below (i in [1, 2*tau]); stored arrays are 0-based. The four types:

  DIFF_CLASS  two clips of different classes, cross-faded over the window
              (tau - eps, tau + eps] with linear weights; change point tau.
  SAME_CLASS  two distinct clips of one class, hard concatenation at tau.
  DIFF_SPEED  one clip, original rate up to t, then resampled at rate gamma
              using the nearest source frame (round half up); change point t.
  SAME_SPEED  one clip, a contiguous window at the original rate; the
              no-boundary class, change point absent.
"""

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import toyclips


class SynthesisError(ValueError):
    pass


class ClipTooShortError(SynthesisError):
    pass


class BoundaryClass(IntEnum):
    DIFF_CLASS = 0
    SAME_CLASS = 1
    DIFF_SPEED = 2
    SAME_SPEED = 3


@dataclass
class SynthesisConfig:
    tau: int = 8
    epsilon: int = 3
    gamma_set: tuple = (1 / 3, 0.5, 2.0, 3.0)
    t_min: int = 4       # change-point draw range for DIFF_SPEED, inclusive
    t_max: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.tau < 2:
            raise SynthesisError("tau must be >= 2, got %d" % self.tau)
        if not 1 <= self.epsilon <= self.tau - 1:
            raise SynthesisError("epsilon must be in [1, tau-1], got %d" % self.epsilon)
        gammas = tuple(sorted(float(g) for g in self.gamma_set))
        if not gammas or any(g <= 0 for g in gammas):
            raise SynthesisError("gamma_set must hold positive factors, got %r" % (self.gamma_set,))
        if any(g == 1.0 for g in gammas):
            raise SynthesisError("gamma_set must not contain 1.0")
        self.gamma_set = gammas
        lo, hi = 2, 2 * self.tau - 2
        if not (lo <= self.t_min <= self.t_max <= hi):
            raise SynthesisError("change-point range [%d, %d] must lie inside [%d, %d]"
                                 % (self.t_min, self.t_max, lo, hi))


@dataclass
class SynthSample:
    frames: np.ndarray            # (2*tau, H, W, C) float64 in [0, 1]
    boundary_class: BoundaryClass
    change_point: int | None      # 1-based frame position; None for SAME_SPEED
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return self.frames.shape[0]


def blend_weights(i, tau, epsilon):
    """Cross-fade weights at 1-based position i inside (tau-eps, tau+eps].

    w2 is the complement of w1 so the pair sums to 1.0 exactly in floating
    point; mathematically w2 = (i - tau + epsilon) / (2 * epsilon).
    """
    if not tau - epsilon < i <= tau + epsilon:
        raise SynthesisError("position %d outside blend window (%d, %d]"
                             % (i, tau - epsilon, tau + epsilon))
    w1 = (tau + epsilon - i) / (2.0 * epsilon)
    return w1, 1.0 - w1


def uniform_frame_indices(n_frames, count):
    """Evenly spaced 0-based indices covering the whole clip."""
    if n_frames < count:
        raise ClipTooShortError("clip of %d frames cannot yield %d uniform frames"
                                % (n_frames, count))
    return np.floor(np.linspace(0.0, n_frames - 1.0, count) + 0.5).astype(int)


def speed_source_index(t, gamma, i):
    """1-based source frame for 1-based output position i after a speed change
    at t: i itself before the change, else the nearest frame to t + gamma*(i-t)."""
    if i <= t:
        return i
    return int(np.floor(t + gamma * (i - t) + 0.5))


def speed_min_length(t, gamma, tau):
    return speed_source_index(t, gamma, 2 * tau)


def make_diff_class(clip1, clip2, cfg, rng=None):
    if clip1.class_id == clip2.class_id:
        raise SynthesisError("diff-class needs clips of different classes, both are %d"
                             % clip1.class_id)
    n = cfg.tau + cfg.epsilon
    f1 = clip1.frames[uniform_frame_indices(len(clip1), n)].astype(np.float64)
    f2 = clip2.frames[uniform_frame_indices(len(clip2), n)].astype(np.float64)
    out = np.empty((2 * cfg.tau,) + f1.shape[1:], dtype=np.float64)
    for i in range(1, 2 * cfg.tau + 1):
        if i <= cfg.tau - cfg.epsilon:
            out[i - 1] = f1[i - 1]
        elif i <= cfg.tau + cfg.epsilon:
            w1, w2 = blend_weights(i, cfg.tau, cfg.epsilon)
            out[i - 1] = w1 * f1[i - 1] + w2 * f2[i - cfg.tau + cfg.epsilon - 1]
        else:
            out[i - 1] = f2[i - cfg.tau + cfg.epsilon - 1]
    return SynthSample(out, BoundaryClass.DIFF_CLASS, cfg.tau,
                       {"clips": [clip1.clip_id, clip2.clip_id],
                        "classes": [clip1.class_id, clip2.class_id]})


def make_same_class(clip1, clip2, cfg, rng=None):
    if clip1.class_id != clip2.class_id:
        raise SynthesisError("same-class needs one class, got %d and %d"
                             % (clip1.class_id, clip2.class_id))
    if clip1.clip_id == clip2.clip_id:
        raise SynthesisError("same-class needs two distinct clips, got clip %d twice"
                             % clip1.clip_id)
    f1 = clip1.frames[uniform_frame_indices(len(clip1), cfg.tau)].astype(np.float64)
    f2 = clip2.frames[uniform_frame_indices(len(clip2), cfg.tau)].astype(np.float64)
    return SynthSample(np.concatenate([f1, f2]), BoundaryClass.SAME_CLASS, cfg.tau,
                       {"clips": [clip1.clip_id, clip2.clip_id],
                        "classes": [clip1.class_id, clip2.class_id]})


def make_diff_speed(clip, cfg, rng, t=None, gamma=None):
    """Speed-change sample; t and gamma are drawn unless pinned by the caller
    (pinning is how tests force gamma=1 to cross-check against SAME_SPEED)."""
    if t is None:
        t = int(rng.integers(cfg.t_min, cfg.t_max + 1))
    if gamma is None:
        gamma = cfg.gamma_set[int(rng.integers(0, len(cfg.gamma_set)))]
    need = speed_min_length(t, gamma, cfg.tau)
    if len(clip) < need:
        raise ClipTooShortError("clip %d has %d frames; speed change (t=%d, gamma=%g) needs %d"
                                % (clip.clip_id, len(clip), t, gamma, need))
    idx = [speed_source_index(t, gamma, i) - 1 for i in range(1, 2 * cfg.tau + 1)]
    frames = clip.frames[idx].astype(np.float64)
    return SynthSample(frames, BoundaryClass.DIFF_SPEED, t,
                       {"clips": [clip.clip_id], "classes": [clip.class_id], "gamma": gamma})


def make_same_speed(clip, cfg, rng, start=None):
    if len(clip) < 2 * cfg.tau:
        raise ClipTooShortError("clip %d has %d frames, need %d"
                                % (clip.clip_id, len(clip), 2 * cfg.tau))
    if start is None:
        start = int(rng.integers(0, len(clip) - 2 * cfg.tau + 1))
    frames = clip.frames[start:start + 2 * cfg.tau].astype(np.float64)
    return SynthSample(frames, BoundaryClass.SAME_SPEED, None,
                       {"clips": [clip.clip_id], "classes": [clip.class_id], "start": start})


_SPEED_RETRIES = 32


def _draw_clip(clips, rng):
    return clips[int(rng.integers(0, len(clips)))]


def sample_batch(ds, cfg, rng, batch_size, split="train"):
    """Balanced batch: exactly batch_size/4 samples of each boundary type,
    interleaved deterministically as [dc, sc, ds, ss, dc, ...]."""
    if batch_size % 4 != 0:
        raise SynthesisError("batch_size must be divisible by 4, got %d" % batch_size)
    clips = ds.by_split(split)
    if not clips:
        raise SynthesisError("no clips in split %r" % split)
    by_class = {}
    for c in clips:
        by_class.setdefault(c.class_id, []).append(c)
    classes = sorted(by_class)
    if len(classes) < 2:
        raise SynthesisError("diff-class synthesis needs >= 2 classes in split %r" % split)
    thin = [k for k in classes if len(by_class[k]) < 2]
    if thin:
        raise SynthesisError("same-class quota impossible: class(es) %s have < 2 clips in split %r"
                             % (thin, split))

    out = []
    for _ in range(batch_size // 4):
        k1, k2 = rng.choice(len(classes), size=2, replace=False)
        out.append(make_diff_class(_draw_clip(by_class[classes[k1]], rng),
                                   _draw_clip(by_class[classes[k2]], rng), cfg, rng))

        k = classes[int(rng.integers(0, len(classes)))]
        i1, i2 = rng.choice(len(by_class[k]), size=2, replace=False)
        out.append(make_same_class(by_class[k][i1], by_class[k][i2], cfg, rng))

        sample = None
        for _ in range(_SPEED_RETRIES):
            try:
                sample = make_diff_speed(_draw_clip(clips, rng), cfg, rng)
                break
            except ClipTooShortError:
                continue
        if sample is None:
            raise ClipTooShortError("no clip in split %r long enough for speed synthesis "
                                    "after %d tries" % (split, _SPEED_RETRIES))
        out.append(sample)

        out.append(make_same_speed(_draw_clip(clips, rng), cfg, rng))
    return out


def dump_samples(samples, path):
    """Write samples in the clip tensor format plus a labels.json index."""
    from pathlib import Path
    import json

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    labels = []
    for i, s in enumerate(samples):
        fname = "sample_%05d.bspc" % i
        toyclips.write_tensor_file(path / fname, s.frames.astype(np.float32))
        labels.append({
            "sample_id": i,
            "file": fname,
            "boundary_class": int(s.boundary_class),
            "change_point": s.change_point,
            "gamma": s.provenance.get("gamma"),
        })
    with open(path / "labels.json", "w", encoding="utf-8") as f:
        json.dump(labels, f, indent=1)
