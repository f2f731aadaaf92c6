import numpy as np
import pytest

from bsp.encoder import EncoderConfig, encode, init_params
from bsp.integration import (
    FeatureExtractor,
    TwoStreamExtractor,
    distill,
    train_two_head,
    two_stream_features,
)
from bsp.ndgrad import Graph, ShapeError, gradients
from bsp.pretext import TrainConfig, train_vanilla_classifier
from bsp.synthesis import SynthesisConfig
from bsp.toyclips import ClipConfig, generate_source

ECFG = EncoderConfig(H=10, W=10, C=1, E=8, D=12)
SCFG = SynthesisConfig(tau=8, epsilon=3)


@pytest.fixture(scope="module")
def toy_ds():
    return generate_source(4, ClipConfig(K=4, clips_per_class=8, len=48, H=10, W=10))


def quick_cfg(**kw):
    base = dict(lr=0.05, momentum=0.9, batch_size=8, steps=12, eval_every=6,
                val_size=16, seed=0)
    base.update(kw)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# two-stream
# ---------------------------------------------------------------------------

def test_two_stream_concatenation_layout():
    fv = FeatureExtractor("vanilla", init_params(0, ECFG))
    fb = FeatureExtractor("bsp", init_params(1, ECFG))
    snip = np.random.default_rng(0).uniform(size=(16, 10, 10, 1))
    out = two_stream_features(fv, fb, snip)
    assert out.shape == (24,)
    assert np.array_equal(out[:12], fv(snip))
    assert np.array_equal(out[12:], fb(snip))


def test_two_stream_zero_through_zero_params():
    zero = {k: np.zeros_like(v) for k, v in init_params(0, ECFG).items()}
    fv = FeatureExtractor("vanilla", zero)
    fb = FeatureExtractor("bsp", {k: v.copy() for k, v in zero.items()})
    out = two_stream_features(fv, fb, np.zeros((4, 10, 10, 1)))
    assert np.array_equal(out, np.zeros(24))


def test_two_stream_extractor_dim():
    fv = FeatureExtractor("vanilla", init_params(0, ECFG))
    fb = FeatureExtractor("bsp", init_params(1, ECFG))
    ts = TwoStreamExtractor(fv, fb)
    assert ts.out_dim == 24
    assert ts.role == "two_stream"


def test_two_stream_dim_mismatch_rejected():
    fv = FeatureExtractor("vanilla", init_params(0, ECFG))
    fb = FeatureExtractor("bsp", init_params(1, ECFG))
    fb.out_dim = 99
    with pytest.raises(ShapeError):
        two_stream_features(fv, fb, np.zeros((4, 10, 10, 1)))


# ---------------------------------------------------------------------------
# two-head
# ---------------------------------------------------------------------------

def test_two_head_lambda_zero_matches_vanilla_trajectory(toy_ds):
    enc0 = init_params(2, ECFG)
    cfg = quick_cfg(lambda_boundary=0.0)
    enc_a, head_a, _, _ = train_two_head(toy_ds, SCFG, enc0, cfg)
    enc_b, head_b, _ = train_vanilla_classifier(toy_ds, enc0, quick_cfg())
    for k in enc_a:
        assert np.array_equal(enc_a[k], enc_b[k]), k
    assert np.array_equal(head_a["w"], head_b["w"])
    assert np.array_equal(head_a["b"], head_b["b"])


def test_two_head_lambda_one_changes_updates(toy_ds):
    enc0 = init_params(2, ECFG)
    enc_a, _, _, _ = train_two_head(toy_ds, SCFG, enc0, quick_cfg(lambda_boundary=1.0))
    enc_b, _, _, _ = train_two_head(toy_ds, SCFG, enc0, quick_cfg(lambda_boundary=0.0))
    assert any(not np.array_equal(enc_a[k], enc_b[k]) for k in enc_a)


def test_two_head_returns_both_heads(toy_ds):
    enc0 = init_params(2, ECFG)
    enc, action_head, boundary_head, report = train_two_head(toy_ds, SCFG, enc0, quick_cfg())
    assert action_head["w"].shape == (12, toy_ds.K)
    assert boundary_head["w"].shape == (12, 4)
    assert "val_action" in report.extra and "val_boundary" in report.extra


def test_two_head_joint_gradient_is_sum_of_task_gradients(toy_ds):
    """On a shared weight, grad(CE_a + CE_b) equals grad(CE_a) + grad(CE_b);
    cross-checked against central finite differences."""
    from bsp.encoder import encode_graph
    from bsp.pretext import _linear_head, _merge

    enc0 = init_params(5, ECFG)
    rng = np.random.default_rng(0)
    snip_a = rng.uniform(size=(16, 10, 10, 1))
    snip_b = rng.uniform(size=(16, 10, 10, 1))
    heads = {"cls": _linear_head(np.random.default_rng(1), 12, 4),
             "bnd": _linear_head(np.random.default_rng(2), 12, 4)}
    params = _merge(enc0, heads)

    def losses(p):
        g = Graph()
        pn = {k: g.leaf(v) for k, v in p.items()}
        _, fa = encode_graph(g, pn, snip_a)
        _, fb = encode_graph(g, pn, snip_b)
        ca = g.softmax_cross_entropy(g.add(g.matmul(fa, pn["cls.w"]), pn["cls.b"]), label=1)
        cb = g.softmax_cross_entropy(g.add(g.matmul(fb, pn["bnd.w"]), pn["bnd.b"]), label=2)
        joint = g.add(ca, cb)
        return g, pn, ca, cb, joint

    g, pn, ca, cb, joint = losses(params)
    nid = pn["conv1_w"].nid
    ga = gradients(g, ca)[nid]
    gb = gradients(g, cb)[nid]
    gj = gradients(g, joint)[nid]
    assert np.allclose(gj, ga + gb, atol=1e-12)

    h = 1e-5
    flat = params["conv1_w"].reshape(-1)
    for i in (0, 7, 33):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(losses(params)[4].value)
        flat[i] = orig - h
        lo = float(losses(params)[4].value)
        flat[i] = orig
        num = (hi - lo) / (2 * h)
        an = gj.reshape(-1)[i]
        assert abs(an - num) < 1e-9 or abs(an - num) / max(abs(an), abs(num)) < 1e-4


# ---------------------------------------------------------------------------
# distillation
# ---------------------------------------------------------------------------

def test_distill_identity_rig_reaches_zero_matching_loss(toy_ds):
    """Student initialized as teacher_v with identity projections and
    teacher_b == teacher_v: the matching loss is zero without any training."""
    from bsp.integration import matching_loss_numpy

    tparams = init_params(3, ECFG)
    fv = FeatureExtractor("vanilla", tparams)
    fb = FeatureExtractor("bsp", tparams)
    proj = {"h1.w": np.eye(12), "h1.b": np.zeros(12),
            "h2.w": np.eye(12), "h2.b": np.zeros(12)}
    snip = np.random.default_rng(1).uniform(size=(16, 10, 10, 1))
    assert matching_loss_numpy(fv, fb, tparams, proj, snip) < 1e-6


def test_unit_residual_matching_loss():
    from bsp.integration import matching_loss_numpy

    tparams = init_params(3, ECFG)
    fv_feat = np.zeros(12)
    fv_feat[0] = 1.0
    fv = lambda s: fv_feat
    fv.out_dim = 12
    fb = FeatureExtractor("bsp", tparams)
    # h1 collapses the student to zero; h2 reproduces teacher_b exactly via identity
    proj = {"h1.w": np.zeros((12, 12)), "h1.b": np.zeros(12),
            "h2.w": np.eye(12), "h2.b": np.zeros(12)}
    snip = np.random.default_rng(1).uniform(size=(16, 10, 10, 1))
    assert matching_loss_numpy(fv, fb, tparams, proj, snip) == pytest.approx(1.0)


def test_distill_trains_and_freezes_teachers(toy_ds):
    tv = init_params(3, ECFG)
    tb = init_params(4, ECFG)
    fv = FeatureExtractor("vanilla", tv)
    fb = FeatureExtractor("bsp", tb)
    snap_v = {k: v.copy() for k, v in tv.items()}
    snap_b = {k: v.copy() for k, v in tb.items()}
    student0 = init_params(5, ECFG)
    student, proj, report = distill(fv, fb, student0, toy_ds, SCFG, quick_cfg(steps=20))
    for k in tv:
        assert np.array_equal(tv[k], snap_v[k])
        assert np.array_equal(tb[k], snap_b[k])
    assert proj["h1"]["w"].shape == (12, 12)
    assert report.extra["match_final"] < report.extra["match_start"]
    assert any(not np.array_equal(student[k], student0[k]) for k in student)
