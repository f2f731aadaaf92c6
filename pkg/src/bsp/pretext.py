"""Pre-training objectives and the shared SGD loop.

Three trainers share one loop: four-way boundary classification (the default
pretext), change-point regression against a 1D Gaussian heatmap, and the
supervised action-classification baseline used as the teacher for feature
integration.

Seed-stream layout (children of TrainConfig.seed): 1 = training batches,
2 = auxiliary boundary batches (two-head), 3 = validation set, 7 = first
head init, 8 = second head init. Trainers that share a child stream see
identical draws, which is what makes the two-head/vanilla equivalence at
zero boundary weight exact.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import encode, encode_graph
from .ndgrad import Graph, MomentumSgd, gradients
from .synthesis import sample_batch


class DivergenceError(RuntimeError):
    def __init__(self, step, value):
        super().__init__("training loss became non-finite (%r) at step %d" % (value, step))
        self.step = step


@dataclass
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    steps: int = 2000
    eval_every: int = 200
    seed: int = 0
    loss_kind: str = "boundary_cls"  # boundary_cls | boundary_reg | vanilla_cls | two_head
    val_size: int = 512
    snippet_len: int = 16
    lambda_boundary: float = 1.0       # two-head boundary-task weight
    reg_reduction: str = "sum"         # smooth-L1 over positions: "sum" | "mean"
    reg_include_nonboundary: bool = True
    heatmap_variance: float | None = None
    distill_ce_labels: str = "boundary"  # "boundary" | "action" (first source clip)
    freeze_encoder: bool = False
    shuffle_labels: bool = False


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)        # (step, train_loss, val_loss, metric)
    train_curve: list = field(default_factory=list)  # (step, loss) for every step
    extra: dict = field(default_factory=dict)

    def add(self, step, train_loss, val_loss, metric):
        if self.rows and step <= self.rows[-1][0]:
            raise ValueError("report steps must increase, got %d after %d"
                             % (step, self.rows[-1][0]))
        self.rows.append((step, train_loss, val_loss, metric))

    def save_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["step", "loss", "val_loss", "metric"])
            for step, loss, val_loss, metric in self.rows:
                w.writerow([step, "%.6f" % loss, "%.6f" % val_loss, "%.6f" % metric])


def gaussian_heatmap(mu, tau, length, variance=None):
    """Unit-peak heatmap over positions 1..length: exp(-(t-mu)^2 / (2*tau)).

    The default spread parameter is tau itself; `variance` overrides it.
    """
    if not 1 <= mu <= length:
        raise ValueError("change point %d outside [1, %d]" % (mu, length))
    if tau < 1:
        raise ValueError("tau must be >= 1, got %r" % tau)
    var = float(tau if variance is None else variance)
    t = np.arange(1, length + 1, dtype=np.float64)
    return np.exp(-((t - mu) ** 2) / (2.0 * var))


def regression_target(sample, tau, length, variance=None):
    """Heatmap for boundary-bearing samples, zeros for the no-boundary class."""
    if sample.change_point is None:
        return np.zeros(length)
    return gaussian_heatmap(sample.change_point, tau, length, variance)


def snippet_batch(ds, rng, batch_size, snippet_len, split="train"):
    """Action-classification batch: contiguous windows cut from single clips."""
    clips = ds.by_split(split)
    out = []
    for _ in range(batch_size):
        clip = clips[int(rng.integers(0, len(clips)))]
        if len(clip) < snippet_len:
            raise ValueError("clip %d too short for snippet_len %d" % (clip.clip_id, snippet_len))
        start = int(rng.integers(0, len(clip) - snippet_len + 1))
        out.append((clip.frames[start:start + snippet_len].astype(np.float64), clip.class_id))
    return out


def _linear_head(rng, din, dout):
    a = np.sqrt(6.0 / (din + dout))
    if dout == 1:
        return {"w": rng.uniform(-a, a, size=din), "b": np.zeros(())}
    return {"w": rng.uniform(-a, a, size=(din, dout)), "b": np.zeros(dout)}


def _merge(enc_params, heads):
    merged = dict(enc_params)
    for prefix, head in heads.items():
        for k, v in head.items():
            merged["%s.%s" % (prefix, k)] = v
    return merged


def _split_heads(merged, prefixes):
    enc, heads = {}, {p: {} for p in prefixes}
    for name, v in merged.items():
        if "." in name and name.split(".", 1)[0] in heads:
            p, k = name.split(".", 1)
            heads[p][k] = v
        else:
            enc[name] = v
    return enc, heads


ENCODER_PARAM_NAMES = ("embed_w", "embed_b", "conv1_w", "conv1_b",
                       "conv2_w", "conv2_b", "proj_w", "proj_b")


def run_train_loop(cfg, params, make_batch, batch_loss, evaluate):
    """Generic deterministic SGD loop.

    make_batch(step) -> batch; batch_loss(graph, pnodes, batch) -> loss node;
    evaluate(params) -> (val_loss, metric). Evaluation happens at step 0,
    every cfg.eval_every steps, and after the final step. lr == 0 runs the
    loop without updating anything (the optimizer itself requires lr > 0).
    """
    opt = MomentumSgd(cfg.lr, cfg.momentum) if cfg.lr > 0 else None
    report = TrainReport()
    val_loss, metric = evaluate(params)
    report.add(0, math.nan, val_loss, metric)
    since_eval = []
    for step in range(1, cfg.steps + 1):
        batch = make_batch(step)
        g = Graph()
        pnodes = {name: g.leaf(v) for name, v in params.items()}
        loss = batch_loss(g, pnodes, batch)
        value = float(loss.value)
        if not math.isfinite(value):
            raise DivergenceError(step, value)
        if opt is not None:
            adj = gradients(g, loss)
            grads = {name: adj[pnodes[name].nid] for name in params}
            if cfg.freeze_encoder:
                for name in ENCODER_PARAM_NAMES:
                    if name in grads:
                        grads[name] = np.zeros_like(grads[name])
            params = opt.step(params, grads)
        report.train_curve.append((step, value))
        since_eval.append(value)
        if step % cfg.eval_every == 0 or step == cfg.steps:
            val_loss, metric = evaluate(params)
            report.add(step, float(np.mean(since_eval)), val_loss, metric)
            since_eval = []
    return params, report


def _ce_forward_numpy(z, y):
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()) - z[y])


def classifier_eval(params, head, val_items):
    """Mean cross-entropy and accuracy of a pooled-feature linear classifier."""
    losses, hits = [], 0
    for frames, label in val_items:
        z = encode(params, frames).pooled @ head["w"] + head["b"]
        losses.append(_ce_forward_numpy(z, label))
        hits += int(np.argmax(z) == label)
    return float(np.mean(losses)), hits / len(val_items)


def _ce_batch_loss(g, pnodes, batch, head_prefix):
    w = pnodes["%s.w" % head_prefix]
    b = pnodes["%s.b" % head_prefix]
    total = None
    for frames, label in batch:
        _, pooled = encode_graph(g, pnodes, frames)
        ce = g.softmax_cross_entropy(g.add(g.matmul(pooled, w), b), label=label)
        total = ce if total is None else g.add(total, ce)
    return g.scale(total, 1.0 / len(batch))


def train_boundary_classifier(ds, synth_cfg, enc_init, cfg):
    """Four-way boundary-type classification with cross-entropy."""
    rng_batch = np.random.default_rng((cfg.seed, 1))
    rng_val = np.random.default_rng((cfg.seed, 3))
    head = _linear_head(np.random.default_rng((cfg.seed, 7)), enc_init["proj_w"].shape[1], 4)
    params = _merge(enc_init, {"cls": head})

    val_raw = sample_batch(ds, synth_cfg, rng_val, cfg.val_size, split="val")
    val_items = [(s.frames, int(s.boundary_class)) for s in val_raw]

    def make_batch(step):
        samples = sample_batch(ds, synth_cfg, rng_batch, cfg.batch_size, split="train")
        if cfg.shuffle_labels:
            return [(s.frames, int(rng_batch.integers(0, 4))) for s in samples]
        return [(s.frames, int(s.boundary_class)) for s in samples]

    def batch_loss(g, pnodes, batch):
        return _ce_batch_loss(g, pnodes, batch, "cls")

    def evaluate(p):
        enc, heads = _split_heads(p, ["cls"])
        return classifier_eval(enc, heads["cls"], val_items)

    params, report = run_train_loop(cfg, params, make_batch, batch_loss, evaluate)
    enc, heads = _split_heads(params, ["cls"])
    return enc, heads["cls"], report


def train_vanilla_classifier(ds, enc_init, cfg):
    """Supervised action classification on raw snippets; the f_v teacher."""
    rng_batch = np.random.default_rng((cfg.seed, 1))
    rng_val = np.random.default_rng((cfg.seed, 3))
    head = _linear_head(np.random.default_rng((cfg.seed, 7)), enc_init["proj_w"].shape[1], ds.K)
    params = _merge(enc_init, {"cls": head})

    val_items = snippet_batch(ds, rng_val, cfg.val_size, cfg.snippet_len, split="val")

    def make_batch(step):
        batch = snippet_batch(ds, rng_batch, cfg.batch_size, cfg.snippet_len, split="train")
        if cfg.shuffle_labels:
            return [(f, int(rng_batch.integers(0, ds.K))) for f, _ in batch]
        return batch

    def batch_loss(g, pnodes, batch):
        return _ce_batch_loss(g, pnodes, batch, "cls")

    def evaluate(p):
        enc, heads = _split_heads(p, ["cls"])
        return classifier_eval(enc, heads["cls"], val_items)

    params, report = run_train_loop(cfg, params, make_batch, batch_loss, evaluate)
    enc, heads = _split_heads(params, ["cls"])
    return enc, heads["cls"], report


def predict_heatmap(params, head, frames):
    fm = encode(params, frames)
    return fm.per_frame @ head["w"] + head["b"]


def localization_errors(params, head, samples):
    """|argmax r - mu| per boundary-bearing sample (1-based positions)."""
    errs = []
    for s in samples:
        if s.change_point is None:
            continue
        r = predict_heatmap(params, head, s.frames)
        errs.append(abs(int(np.argmax(r)) + 1 - s.change_point))
    return errs


def regression_hits(params, head, samples, tol=2):
    errs = localization_errors(params, head, samples)
    return sum(1 for e in errs if e <= tol) / len(errs)


def train_boundary_regressor(ds, synth_cfg, enc_init, cfg):
    """Change-point regression: smooth-L1 fit of the per-frame head to the
    Gaussian heatmap target (all-zero target for the no-boundary class)."""
    rng_batch = np.random.default_rng((cfg.seed, 1))
    rng_val = np.random.default_rng((cfg.seed, 3))
    e_dim = enc_init["conv2_w"].shape[2]
    head = _linear_head(np.random.default_rng((cfg.seed, 7)), e_dim, 1)
    params = _merge(enc_init, {"reg": head})
    length = 2 * synth_cfg.tau

    val_samples = sample_batch(ds, synth_cfg, rng_val, cfg.val_size, split="val")

    def target(sample):
        return regression_target(sample, synth_cfg.tau, length, cfg.heatmap_variance)

    def make_batch(step):
        samples = sample_batch(ds, synth_cfg, rng_batch, cfg.batch_size, split="train")
        if not cfg.reg_include_nonboundary:
            samples = [s for s in samples if s.change_point is not None]
        return samples

    def batch_loss(g, pnodes, batch):
        w, b = pnodes["reg.w"], pnodes["reg.b"]
        total = None
        for s in batch:
            per_frame, _ = encode_graph(g, pnodes, s.frames)
            r = g.add(g.matmul(per_frame, w), b)
            d = g.add(r, g.leaf(-target(s)))
            term = g.smooth_l1_sum(d)
            if cfg.reg_reduction == "mean":
                term = g.scale(term, 1.0 / length)
            total = term if total is None else g.add(total, term)
        return g.scale(total, 1.0 / len(batch))

    def evaluate(p):
        enc, heads = _split_heads(p, ["reg"])
        losses = []
        for s in val_samples:
            r = predict_heatmap(enc, heads["reg"], s.frames)
            d = r - target(s)
            a = np.abs(d)
            v = float(np.where(a < 1.0, 0.5 * d * d, a - 0.5).sum())
            losses.append(v / length if cfg.reg_reduction == "mean" else v)
        errs = localization_errors(enc, heads["reg"], val_samples)
        return float(np.mean(losses)), float(np.mean(errs))

    params, report = run_train_loop(cfg, params, make_batch, batch_loss, evaluate)
    enc, heads = _split_heads(params, ["reg"])
    return enc, heads["reg"], report
