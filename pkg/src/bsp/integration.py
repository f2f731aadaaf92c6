"""Combining the supervised and boundary-pretext representations.

Three designs: frozen two-stream concatenation, a shared trunk with one head
per task, and distillation of both frozen teachers into a single student
through per-teacher linear projections.
"""

import numpy as np

from .encoder import encode, encode_graph
from .ndgrad import Graph, ShapeError
from .pretext import (
    TrainReport,
    _ce_batch_loss,
    _linear_head,
    _merge,
    _split_heads,
    classifier_eval,
    run_train_loop,
    snippet_batch,
)
from .synthesis import sample_batch

EXTRACTOR_ROLES = ("random", "vanilla", "bsp", "bsp-reg", "two-head", "student", "two-stream")


class FeatureExtractor:
    """A frozen encoder with a role tag; callable on a snippet."""

    def __init__(self, role, params):
        self.role = role
        self.params = params
        self.out_dim = params["proj_w"].shape[1]

    def __call__(self, snippet):
        return encode(self.params, snippet).pooled


class TwoStreamExtractor:
    """Concatenation [vanilla; boundary] of two frozen streams."""

    def __init__(self, fv, fb):
        self.role = "two_stream"
        self.fv = fv
        self.fb = fb
        self.out_dim = fv.out_dim + fb.out_dim

    def __call__(self, snippet):
        return two_stream_features(self.fv, self.fb, snippet)


def two_stream_features(fv, fb, snippet):
    """[f_v(x); f_b(x)] with the vanilla features always first."""
    a = fv(snippet)
    b = fb(snippet)
    if a.shape != (fv.out_dim,) or b.shape != (fb.out_dim,):
        raise ShapeError("two_stream_features: extractor outputs %s / %s do not match "
                         "declared dims %d / %d" % (a.shape, b.shape, fv.out_dim, fb.out_dim))
    return np.concatenate([a, b])


def train_two_head(ds, synth_cfg, enc_init, cfg):
    """One shared encoder, an action head and a boundary head, joint loss
    CE_action + lambda * CE_boundary. With lambda == 0 the boundary branch is
    skipped entirely, which reproduces the vanilla trainer update-for-update.
    """
    rng_action = np.random.default_rng((cfg.seed, 1))
    rng_boundary = np.random.default_rng((cfg.seed, 2))
    rng_val = np.random.default_rng((cfg.seed, 3))
    d = enc_init["proj_w"].shape[1]
    action_head = _linear_head(np.random.default_rng((cfg.seed, 7)), d, ds.K)
    boundary_head = _linear_head(np.random.default_rng((cfg.seed, 8)), d, 4)
    params = _merge(enc_init, {"cls": action_head, "bnd": boundary_head})
    lam = cfg.lambda_boundary

    val_action = snippet_batch(ds, rng_val, cfg.val_size, cfg.snippet_len, split="val")
    val_boundary = [(s.frames, int(s.boundary_class))
                    for s in sample_batch(ds, synth_cfg, rng_val, cfg.val_size, split="val")]

    def make_batch(step):
        action = snippet_batch(ds, rng_action, cfg.batch_size, cfg.snippet_len, split="train")
        if lam == 0.0:
            return action, None
        boundary = [(s.frames, int(s.boundary_class))
                    for s in sample_batch(ds, synth_cfg, rng_boundary, cfg.batch_size, split="train")]
        return action, boundary

    def batch_loss(g, pnodes, batch):
        action, boundary = batch
        loss = _ce_batch_loss(g, pnodes, action, "cls")
        if boundary is not None:
            bl = _ce_batch_loss(g, pnodes, boundary, "bnd")
            loss = g.add(loss, bl if lam == 1.0 else g.scale(bl, lam))
        return loss

    def evaluate(p):
        enc, heads = _split_heads(p, ["cls", "bnd"])
        a_loss, a_acc = classifier_eval(enc, heads["cls"], val_action)
        b_loss, b_acc = classifier_eval(enc, heads["bnd"], val_boundary)
        return a_loss + lam * b_loss, (a_acc + b_acc) / 2.0

    params, report = run_train_loop(cfg, params, make_batch, batch_loss, evaluate)
    enc, heads = _split_heads(params, ["cls", "bnd"])
    report.extra["val_action"] = classifier_eval(enc, heads["cls"], val_action)
    report.extra["val_boundary"] = classifier_eval(enc, heads["bnd"], val_boundary)
    return enc, heads["cls"], heads["bnd"], report


def matching_loss_numpy(teacher_v, teacher_b, student, proj, frames):
    fs = encode(student, frames).pooled
    dv = teacher_v(frames) - (fs @ proj["h1.w"] + proj["h1.b"])
    db = teacher_b(frames) - (fs @ proj["h2.w"] + proj["h2.b"])
    return float((dv * dv).sum() + (db * db).sum())


def distill(teacher_v, teacher_b, student_init, ds, synth_cfg, cfg):
    """Train one student so projections of its features match both frozen
    teachers, plus a boundary cross-entropy on the student's own head.

    Teacher features enter the graph as constants, so nothing can flow back
    into the teacher parameters.
    """
    rng_batch = np.random.default_rng((cfg.seed, 1))
    rng_val = np.random.default_rng((cfg.seed, 3))
    d_s = student_init["proj_w"].shape[1]
    rng_h = np.random.default_rng((cfg.seed, 7))
    h1 = _linear_head(rng_h, d_s, teacher_v.out_dim)
    h2 = _linear_head(rng_h, d_s, teacher_b.out_dim)
    ce_head = _linear_head(np.random.default_rng((cfg.seed, 8)), d_s,
                           ds.K if cfg.distill_ce_labels == "action" else 4)
    params = _merge(student_init, {"h1": h1, "h2": h2, "ce": ce_head})

    val_samples = sample_batch(ds, synth_cfg, rng_val, cfg.val_size, split="val")

    def ce_label(sample):
        if cfg.distill_ce_labels == "action":
            return int(sample.provenance["classes"][0])
        return int(sample.boundary_class)

    def make_batch(step):
        return sample_batch(ds, synth_cfg, rng_batch, cfg.batch_size, split="train")

    def batch_loss(g, pnodes, batch):
        total = None
        for s in batch:
            _, fs = encode_graph(g, pnodes, s.frames)
            pv = g.add(g.matmul(fs, pnodes["h1.w"]), pnodes["h1.b"])
            pb = g.add(g.matmul(fs, pnodes["h2.w"]), pnodes["h2.b"])
            term = g.add(
                g.squared_l2_distance(g.leaf(teacher_v(s.frames)), pv),
                g.squared_l2_distance(g.leaf(teacher_b(s.frames)), pb),
            )
            z = g.add(g.matmul(fs, pnodes["ce.w"]), pnodes["ce.b"])
            term = g.add(term, g.softmax_cross_entropy(z, label=ce_label(s)))
            total = term if total is None else g.add(total, term)
        return g.scale(total, 1.0 / len(batch))

    def evaluate(p):
        student, heads = _split_heads(p, ["h1", "h2", "ce"])
        proj = {"h1.w": heads["h1"]["w"], "h1.b": heads["h1"]["b"],
                "h2.w": heads["h2"]["w"], "h2.b": heads["h2"]["b"]}
        match = np.mean([matching_loss_numpy(teacher_v, teacher_b, student, proj, s.frames)
                         for s in val_samples])
        return float(match), float(match)

    params, report = run_train_loop(cfg, params, make_batch, batch_loss, evaluate)
    student, heads = _split_heads(params, ["h1", "h2", "ce"])
    projections = {"h1": heads["h1"], "h2": heads["h2"]}
    report.extra["match_start"] = report.rows[0][2]
    report.extra["match_final"] = report.rows[-1][2]
    return student, projections, report
