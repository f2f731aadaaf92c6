"""Synthetic untrimmed-video benchmark and temporal-localization metrics.

Untrimmed videos interleave static background with action instances cut from
held-out clips. Frozen extractors encode sliding snippets; boundary
sensitivity is scored from consecutive-snippet feature differences, a linear
probe predicts boundary-bearing snippets, and framewise AP / tIoU / recall
quantify the result.

Segments are half-open [start, end) in 0-based frame indices; a video's
boundary positions are the sorted unique starts and ends.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np


class EvalError(ValueError):
    pass


@dataclass
class BenchmarkConfig:
    num_videos: int = 64
    video_len: int = 256
    instances_per_video: int = 2
    instance_len_min: int = 24
    instance_len_max: int = 48
    min_gap: int = 8
    background: str = "noise"   # "noise" | "freeze"
    # fraction of instances rendered as two touching same-class segments
    # (shot cut or speed switch at the junction); boundaries a supervised
    # action classifier is structurally blind to
    compound_fraction: float = 0.0
    compound_gamma: float = 2.0
    # amplitude of a slow additive brightness wave over each instance,
    # appearance variation that never marks a boundary
    appearance_drift: float = 0.0
    snippet_len: int = 8
    snippet_stride: int = 4
    tol_frames: int = 4
    peak_min_separation: int = 4
    peak_threshold_std: float = 1.0
    znorm_scores: bool = False
    train_fraction: float = 0.75
    probe_lr: float = 1.0
    probe_steps: int = 400
    probe_l2: float = 1e-3


@dataclass
class UntrimmedVideo:
    video_id: int
    frames: np.ndarray                 # (L, H, W, C) float32
    segments: list                     # (start, end, class_id), half-open
    boundary_positions: list = field(default_factory=list)

    def __post_init__(self):
        if not self.boundary_positions:
            pos = set()
            for s, e, _ in self.segments:
                pos.add(s)
                pos.add(e)
            self.boundary_positions = sorted(pos)


@dataclass
class SnippetTrack:
    video_id: int
    features: np.ndarray       # (N, D)
    snippet_centers: np.ndarray
    labels: np.ndarray         # 1 if a boundary falls inside the snippet window
    boundary_positions: list
    snippet_len: int = 8


def _background_image(ds, rng, kind, shape):
    if kind == "noise":
        return rng.uniform(0.0, 1.0, size=shape).astype(np.float32)
    if kind == "freeze":
        clips = ds.by_split("val")
        clip = clips[int(rng.integers(0, len(clips)))]
        return clip.frames[int(rng.integers(0, len(clip)))]
    if kind == "gray":
        return np.full(shape, 0.45, dtype=np.float32)
    raise EvalError("unknown background kind %r" % kind)


def _simple_instance(clips, vrng, ln):
    clip = clips[int(vrng.integers(0, len(clips)))]
    ln = min(ln, len(clip))
    start = int(vrng.integers(0, len(clip) - ln + 1))
    return clip.frames[start:start + ln], [(ln, clip.class_id)]


def _cut_pair_instance(by_class, vrng, ln):
    """Two touching segments of one class cut from two different clips."""
    classes = [k for k, cs in by_class.items() if len(cs) >= 2]
    if not classes:
        return None
    k = classes[int(vrng.integers(0, len(classes)))]
    i1, i2 = vrng.choice(len(by_class[k]), size=2, replace=False)
    halves = []
    lens = (ln // 2, ln - ln // 2)
    for clip, l in zip((by_class[k][i1], by_class[k][i2]), lens):
        l = min(l, len(clip))
        start = int(vrng.integers(0, len(clip) - l + 1))
        halves.append(clip.frames[start:start + l])
    frames = np.concatenate(halves)
    return frames, [(len(halves[0]), k), (len(halves[1]), k)]


def _speed_pair_instance(clips, vrng, ln, gamma):
    """One clip, original rate then rate gamma; touching segments at the switch."""
    clip = clips[int(vrng.integers(0, len(clips)))]
    l1 = ln // 2
    l2 = ln - l1
    # keep every resampled index inside the clip
    need = int(np.floor(l1 + gamma * l2 + 0.5))
    while l2 > 4 and need > len(clip):
        l2 -= 1
        need = int(np.floor(l1 + gamma * l2 + 0.5))
    if need > len(clip):
        return None
    idx = list(range(l1)) + [int(np.floor(l1 - 1 + gamma * j + 0.5)) for j in range(1, l2 + 1)]
    idx = [min(i, len(clip) - 1) for i in idx]
    return clip.frames[idx], [(l1, clip.class_id), (l2, clip.class_id)]


def gen_untrimmed(ds, rng, cfg):
    """Deterministic benchmark videos with non-overlapping action segments.

    With compound_fraction > 0 some instances become two touching same-class
    segments (alternating shot cuts and speed switches), adding boundaries
    that carry no class change.
    """
    clips = ds.by_split("val")
    if not clips:
        raise EvalError("dataset has no val clips to cut instances from")
    by_class = {}
    for c in clips:
        by_class.setdefault(c.class_id, []).append(c)
    shape = clips[0].frames.shape[1:]
    n = cfg.instances_per_video
    min_total = n * cfg.instance_len_min + (n + 1) * cfg.min_gap
    if cfg.video_len < min_total:
        raise EvalError("video_len %d cannot pack %d instances (need >= %d)"
                        % (cfg.video_len, n, min_total))
    videos = []
    for vid in range(cfg.num_videos):
        vrng = np.random.default_rng((int(rng.integers(0, 2 ** 31)), vid))
        lens = [int(vrng.integers(cfg.instance_len_min, cfg.instance_len_max + 1))
                for _ in range(n)]
        # shrink uniformly if the draw happens not to fit
        while sum(lens) + (n + 1) * cfg.min_gap > cfg.video_len:
            lens[int(np.argmax(lens))] -= 1
        extra = cfg.video_len - sum(lens) - (n + 1) * cfg.min_gap
        gaps = np.full(n + 1, cfg.min_gap)
        if extra > 0:
            gaps = gaps + vrng.multinomial(extra, np.full(n + 1, 1.0 / (n + 1)))
        frames = np.empty((cfg.video_len,) + shape, dtype=np.float32)
        frames[:] = _background_image(ds, vrng, cfg.background, shape)
        segments = []
        cursor = 0
        for i, ln in enumerate(lens):
            cursor += int(gaps[i])
            made = None
            if vrng.uniform() < cfg.compound_fraction:
                if int(vrng.integers(0, 2)) == 0:
                    made = _cut_pair_instance(by_class, vrng, ln)
                else:
                    made = _speed_pair_instance(clips, vrng, ln, cfg.compound_gamma)
            if made is None:
                made = _simple_instance(clips, vrng, ln)
            inst_frames, parts = made
            if cfg.appearance_drift > 0:
                phase = vrng.uniform(0.0, 2.0 * np.pi)
                t = np.arange(len(inst_frames), dtype=np.float64)
                wave = cfg.appearance_drift * np.sin(
                    2.0 * np.pi * 1.5 * t / max(len(inst_frames), 1) + phase)
                inst_frames = np.clip(
                    inst_frames.astype(np.float64) + wave[:, None, None, None],
                    0.0, 1.0).astype(np.float32)
            frames[cursor:cursor + len(inst_frames)] = inst_frames
            for part_len, cls in parts:
                segments.append((cursor, cursor + part_len, cls))
                cursor += part_len
        videos.append(UntrimmedVideo(vid, frames, segments))
    return videos


def worker_count():
    try:
        return max(1, int(os.environ.get("BSP_THREADS", "1")))
    except ValueError:
        return 1


def extract_track(video, extractor, snippet_len=8, stride=4):
    """Slide a window over the video and encode each snippet."""
    length = video.frames.shape[0]
    if length < snippet_len:
        raise EvalError("video %d shorter than one snippet" % video.video_id)
    starts = list(range(0, length - snippet_len + 1, stride))
    feats = np.stack([extractor(video.frames[s:s + snippet_len].astype(np.float64))
                      for s in starts])
    centers = np.array([s + snippet_len // 2 for s in starts])
    labels = np.array([
        1 if any(s <= b < s + snippet_len for b in video.boundary_positions) else 0
        for s in starts])
    return SnippetTrack(video.video_id, feats, centers, labels,
                        list(video.boundary_positions), snippet_len)


def extract_tracks(videos, extractor, snippet_len=8, stride=4):
    workers = worker_count()
    if workers == 1:
        return [extract_track(v, extractor, snippet_len, stride) for v in videos]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(extract_track, v, extractor, snippet_len, stride) for v in videos]
        return [f.result() for f in futs]


def boundary_score(features):
    """L2 norm of the feature difference of each consecutive snippet pair."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise EvalError("need at least two snippet features, got shape %s" % (f.shape,))
    return np.linalg.norm(np.diff(f, axis=0), axis=1)


def znorm(features):
    f = np.asarray(features, dtype=np.float64)
    mu = f.mean(axis=0)
    sd = f.std(axis=0)
    sd[sd < 1e-12] = 1.0
    return (f - mu) / sd


def track_scores(track, use_znorm=False):
    f = znorm(track.features) if use_znorm else track.features
    return boundary_score(f)


def pair_is_boundary(track):
    """Pair j is boundary-adjacent iff a boundary falls inside either of its
    two snippet windows (the transition shows in at least one feature)."""
    c = track.snippet_centers
    half = track.snippet_len // 2
    out = np.zeros(len(c) - 1, dtype=bool)
    for j in range(len(c) - 1):
        lo = c[j] - half
        hi = c[j + 1] - half + track.snippet_len
        out[j] = any(lo <= b < hi for b in track.boundary_positions)
    return out


def sensitivity_ratio(tracks, use_znorm=False):
    """Mean consecutive-feature difference at boundary pairs over the mean at
    non-boundary pairs, pooled across tracks."""
    bnd, rest = [], []
    for t in tracks:
        s = track_scores(t, use_znorm)
        mask = pair_is_boundary(t)
        bnd.extend(s[mask])
        rest.extend(s[~mask])
    if not bnd or not rest:
        raise EvalError("need both boundary and non-boundary snippet pairs")
    denom = float(np.mean(rest))
    if denom <= 0:
        raise EvalError("non-boundary mean difference is zero; ratio undefined")
    return float(np.mean(bnd)) / denom


def framewise_ap(scores, labels):
    """Average precision: mean over positives of precision at each positive's
    rank, scoring descending with ties broken by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise EvalError("scores %s and labels %s must be equal-length vectors"
                        % (scores.shape, labels.shape))
    if labels.sum() == 0:
        raise EvalError("average precision undefined without positives")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    precisions = []
    for rank, idx in enumerate(order, start=1):
        if labels[idx]:
            hits += 1
            precisions.append(hits / rank)
    return float(np.mean(precisions))


def tiou(a, b):
    """Intersection over union of two real-line segments (start, end)."""
    for seg in (a, b):
        if not seg[0] < seg[1]:
            raise EvalError("degenerate segment %r" % (seg,))
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def detect_boundaries(scores, threshold, min_separation):
    """Indices of local maxima above threshold, greedily suppressed so no two
    kept peaks are closer than min_separation."""
    if min_separation < 1:
        raise EvalError("min_separation must be >= 1, got %r" % min_separation)
    s = np.asarray(scores, dtype=np.float64)
    candidates = []
    for j in range(len(s)):
        left = s[j - 1] if j > 0 else -math.inf
        right = s[j + 1] if j + 1 < len(s) else -math.inf
        if s[j] > threshold and s[j] >= left and s[j] > right:
            candidates.append(j)
    kept = []
    for j in sorted(candidates, key=lambda i: (-s[i], i)):
        if all(abs(j - k) >= min_separation for k in kept):
            kept.append(j)
    return sorted(kept)


def recall_at_tolerance(predicted, truth, tol_frames):
    """Fraction of true boundaries with a prediction within tol_frames."""
    if not truth:
        raise EvalError("no ground-truth boundaries to recall")
    hit = sum(1 for b in truth if any(abs(p - b) <= tol_frames for p in predicted))
    return hit / len(truth)


# ---------------------------------------------------------------------------
# linear probe
# ---------------------------------------------------------------------------

def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))


def probe_fit(features, labels, lr=1.0, steps=400, l2=1e-3):
    """Full-batch logistic regression on standardized features."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    mu, sd = x.mean(axis=0), x.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    xs = (x - mu) / sd
    w = np.zeros(x.shape[1])
    b = 0.0
    n = len(y)
    for step in range(steps):
        p = _sigmoid(xs @ w + b)
        err = p - y
        gw = xs.T @ err / n + l2 * w
        gb = err.mean()
        w -= lr * gw
        b -= lr * gb
        if not np.all(np.isfinite(w)):
            raise EvalError("probe diverged at step %d" % step)
    return {"w": w, "b": b, "mu": mu, "sd": sd}


def probe_scores(model, features):
    xs = (np.asarray(features, dtype=np.float64) - model["mu"]) / model["sd"]
    return xs @ model["w"] + model["b"]


def linear_probe(train_tracks, test_tracks, cfg):
    """AP of a boundary-snippet probe fit on train videos, scored on held-out."""
    xtr = np.concatenate([t.features for t in train_tracks])
    ytr = np.concatenate([t.labels for t in train_tracks])
    model = probe_fit(xtr, ytr, lr=cfg.probe_lr, steps=cfg.probe_steps, l2=cfg.probe_l2)
    xte = np.concatenate([t.features for t in test_tracks])
    yte = np.concatenate([t.labels for t in test_tracks])
    return framewise_ap(probe_scores(model, xte), yte)


# ---------------------------------------------------------------------------
# full evaluation of one extractor
# ---------------------------------------------------------------------------

@dataclass
class EvalRecord:
    extractor: str
    ap: float
    recall: float
    ratio: float


def evaluate_extractor(name, extractor, videos, cfg):
    tracks = extract_tracks(videos, extractor, cfg.snippet_len, cfg.snippet_stride)
    n_train = int(round(cfg.train_fraction * len(tracks)))
    if not 0 < n_train < len(tracks):
        raise EvalError("train_fraction %r leaves an empty probe split" % cfg.train_fraction)
    ap = linear_probe(tracks[:n_train], tracks[n_train:], cfg)
    recalls = []
    for t in tracks:
        s = track_scores(t, cfg.znorm_scores)
        thr = s.mean() + cfg.peak_threshold_std * s.std()
        peaks = detect_boundaries(s, thr, cfg.peak_min_separation)
        pred_frames = [(t.snippet_centers[j] + t.snippet_centers[j + 1]) // 2 for j in peaks]
        recalls.append(recall_at_tolerance(pred_frames, t.boundary_positions, cfg.tol_frames))
    ratio = sensitivity_ratio(tracks, cfg.znorm_scores)
    return EvalRecord(name, ap, float(np.mean(recalls)), ratio), tracks
