"""Small differentiable snippet encoder.

Per-frame linear embedding into E channels, two temporal conv blocks
(kernel 3, relu) that mix information across neighbouring frames, then a
temporal mean-pool and a linear projection to the D-dim snippet feature.
The pre-pool T x E map is exposed for per-frame heads.

The convs use edge padding: output length equals input length, and a
time-constant input yields time-constant features (zero padding would
manufacture content change at the window ends, which is exactly what this
model is supposed to detect).
"""

from dataclasses import dataclass

import numpy as np

from .ndgrad import Graph, ShapeError

CONV_KERNEL = 3
CONV_PAD = "edge"


@dataclass
class EncoderConfig:
    H: int = 24
    W: int = 24
    C: int = 1
    E: int = 32
    D: int = 64

    @property
    def frame_dim(self):
        return self.H * self.W * self.C


@dataclass
class FeatureMap:
    per_frame: np.ndarray  # (T, E)
    pooled: np.ndarray     # (D,)


def _glorot(rng, shape, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_params(seed, cfg):
    """Glorot-uniform weights, zero biases; bit-identical for a given seed."""
    rng = np.random.default_rng(seed)
    f, e, d = cfg.frame_dim, cfg.E, cfg.D
    k = CONV_KERNEL
    return {
        "embed_w": _glorot(rng, (f, e), f, e),
        "embed_b": np.zeros(e),
        "conv1_w": _glorot(rng, (k, e, e), k * e, k * e),
        "conv1_b": np.zeros(e),
        "conv2_w": _glorot(rng, (k, e, e), k * e, k * e),
        "conv2_b": np.zeros(e),
        "proj_w": _glorot(rng, (e, d), e, d),
        "proj_b": np.zeros(d),
    }


def param_count(params):
    return sum(v.size for v in params.values())


def _flatten_snippet(snippet, frame_dim):
    x = np.asarray(snippet, dtype=np.float64)
    if x.ndim == 4:
        x = x.reshape(x.shape[0], -1)
    if x.ndim != 2 or x.shape[1] != frame_dim:
        raise ShapeError("encode: snippet with %s values per frame does not match "
                         "configured frame dim %d" % (x.shape[1:], frame_dim))
    if x.shape[0] < 1:
        raise ShapeError("encode: snippet must hold at least one frame")
    # center unit-interval pixels; pure reparameterization of the embed bias,
    # but it keeps SGD well conditioned
    return x - 0.5


def encode_graph(g, pnodes, snippet):
    """Record the encoder into an existing graph; returns (per-frame, pooled) nodes.

    `pnodes` maps parameter names to graph leaves so gradients flow to them.
    """
    frame_dim = pnodes["embed_w"].value.shape[0]
    x = g.leaf(_flatten_snippet(snippet, frame_dim))
    e = g.add(g.matmul(x, pnodes["embed_w"]), pnodes["embed_b"])
    h = g.relu(g.add(g.temporal_conv1d(e, pnodes["conv1_w"], pad=CONV_PAD), pnodes["conv1_b"]))
    h = g.relu(g.add(g.temporal_conv1d(h, pnodes["conv2_w"], pad=CONV_PAD), pnodes["conv2_b"]))
    pooled = g.add(g.matmul(g.mean_over_axis(h, 0), pnodes["proj_w"]), pnodes["proj_b"])
    return h, pooled


def encode(params, snippet):
    """Pure forward pass; deterministic for identical inputs."""
    g = Graph()
    pnodes = {name: g.leaf(v) for name, v in params.items()}
    h, pooled = encode_graph(g, pnodes, snippet)
    return FeatureMap(per_frame=h.value, pooled=pooled.value)
