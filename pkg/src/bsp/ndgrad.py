"""Dense float64 tensor ops with reverse-mode automatic differentiation.

A Graph records every operation as it happens (a Wengert list), so the node
sequence is topologically ordered by construction. `gradients` walks the list
backwards and accumulates adjoints for every node, including all leaves.

Everything is computed in float64. Arrays handed to `leaf` are copied and
frozen; op outputs are frozen too, so values can be shared across threads
read-only.
"""

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""


def _as_array(x):
    a = np.array(x, dtype=np.float64, order="C", copy=True)
    return a


def _freeze(a):
    a.flags.writeable = False
    return a


def _shape_err(kind, *shapes):
    pretty = " vs ".join(str(tuple(s)) for s in shapes)
    return ShapeError("%s: incompatible shapes %s" % (kind, pretty))


# ---------------------------------------------------------------------------
# primitive forward / backward pairs
#
# forward(vals, attrs) -> ndarray
# backward(grad_out, vals, out, attrs) -> list of grads aligned with inputs
# ---------------------------------------------------------------------------

def _matmul_fwd(vals, attrs):
    a, b = vals
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or (a.ndim == 1 and b.ndim == 1):
        raise _shape_err("matmul", a.shape, b.shape)
    if a.shape[-1] != b.shape[0]:
        raise _shape_err("matmul", a.shape, b.shape)
    return np.matmul(a, b)


def _matmul_bwd(g, vals, out, attrs):
    a, b = vals
    if a.ndim == 2 and b.ndim == 2:
        return [g @ b.T, a.T @ g]
    if a.ndim == 1:  # (k,) @ (k,n) -> (n,)
        return [b @ g, np.outer(a, g)]
    # (m,k) @ (k,) -> (m,)
    return [np.outer(g, b), a.T @ g]


def _add_fwd(vals, attrs):
    a, b = vals
    # same shape, or a trailing-axes broadcast (bias add)
    small, big = (a, b) if a.ndim <= b.ndim else (b, a)
    if big.shape[big.ndim - small.ndim:] != small.shape:
        raise _shape_err("add", a.shape, b.shape)
    return a + b


def _reduce_to_shape(g, shape):
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g


def _add_bwd(g, vals, out, attrs):
    a, b = vals
    return [_reduce_to_shape(g, a.shape), _reduce_to_shape(g, b.shape)]


def _relu_fwd(vals, attrs):
    return np.maximum(vals[0], 0.0)


def _relu_bwd(g, vals, out, attrs):
    return [g * (vals[0] > 0)]


def _conv1d_fwd(vals, attrs):
    x, w = vals
    pad = attrs.get("pad", "zero")
    if x.ndim != 2 or w.ndim != 3 or w.shape[1] != x.shape[1]:
        raise _shape_err("temporal_conv1d", x.shape, w.shape)
    k = w.shape[0]
    if k % 2 != 1:
        raise ShapeError("temporal_conv1d: kernel size must be odd, got %d" % k)
    xp = _pad_time(x, k // 2, pad)
    t = x.shape[0]
    out = np.zeros((t, w.shape[2]))
    for j in range(k):
        out += xp[j:j + t] @ w[j]
    return out


def _pad_time(x, p, pad):
    if p == 0:
        return x
    if pad == "zero":
        return np.concatenate([np.zeros((p, x.shape[1])), x, np.zeros((p, x.shape[1]))])
    if pad == "edge":
        return np.concatenate([np.repeat(x[:1], p, axis=0), x, np.repeat(x[-1:], p, axis=0)])
    raise ValueError("temporal_conv1d: unknown pad mode %r" % pad)


def _conv1d_bwd(g, vals, out, attrs):
    x, w = vals
    pad = attrs.get("pad", "zero")
    k = w.shape[0]
    p = k // 2
    t = x.shape[0]
    xp = _pad_time(x, p, pad)
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for j in range(k):
        dxp[j:j + t] += g @ w[j].T
        dw[j] = xp[j:j + t].T @ g
    dx = dxp[p:p + t].copy()
    if p and pad == "edge":
        dx[0] += dxp[:p].sum(axis=0)
        dx[-1] += dxp[p + t:].sum(axis=0)
    return [dx, dw]


def _mean_fwd(vals, attrs):
    x = vals[0]
    axis = attrs["axis"]
    if not -x.ndim <= axis < x.ndim:
        raise _shape_err("mean_over_axis", x.shape)
    return x.mean(axis=axis)


def _mean_bwd(g, vals, out, attrs):
    x = vals[0]
    axis = attrs["axis"] % x.ndim
    n = x.shape[axis]
    return [np.repeat(np.expand_dims(g / n, axis), n, axis=axis)]


def _concat_fwd(vals, attrs):
    a, b = vals
    if a.shape[:-1] != b.shape[:-1]:
        raise _shape_err("concat_last_axis", a.shape, b.shape)
    return np.concatenate([a, b], axis=-1)


def _concat_bwd(g, vals, out, attrs):
    na = vals[0].shape[-1]
    return [g[..., :na], g[..., na:]]


def _sqdist_fwd(vals, attrs):
    a, b = vals
    if a.shape != b.shape:
        raise _shape_err("squared_l2_distance", a.shape, b.shape)
    d = a - b
    return np.float64((d * d).sum())


def _sqdist_bwd(g, vals, out, attrs):
    d = vals[0] - vals[1]
    return [2.0 * g * d, -2.0 * g * d]


def _xent_fwd(vals, attrs):
    z = vals[0]
    y = attrs["label"]
    if z.ndim != 1:
        raise _shape_err("softmax_cross_entropy", z.shape)
    if not 0 <= y < z.shape[0]:
        raise ValueError("softmax_cross_entropy: label %d outside [0,%d)" % (y, z.shape[0]))
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    return np.float64(lse - z[y])


def _xent_bwd(g, vals, out, attrs):
    z = vals[0]
    m = z.max()
    e = np.exp(z - m)
    p = e / e.sum()
    p[attrs["label"]] -= 1.0
    return [g * p]


def _smooth_l1_fwd(vals, attrs):
    d = vals[0]
    a = np.abs(d)
    per = np.where(a < 1.0, 0.5 * d * d, a - 0.5)
    return np.float64(per.sum())


def _smooth_l1_bwd(g, vals, out, attrs):
    d = vals[0]
    return [g * np.where(np.abs(d) < 1.0, d, np.sign(d))]


def _scale_fwd(vals, attrs):
    return attrs["factor"] * vals[0]


def _scale_bwd(g, vals, out, attrs):
    return [attrs["factor"] * g]


_OPS = {
    "matmul": (_matmul_fwd, _matmul_bwd),
    "add": (_add_fwd, _add_bwd),
    "relu": (_relu_fwd, _relu_bwd),
    "temporal_conv1d": (_conv1d_fwd, _conv1d_bwd),
    "mean_over_axis": (_mean_fwd, _mean_bwd),
    "concat_last_axis": (_concat_fwd, _concat_bwd),
    "squared_l2_distance": (_sqdist_fwd, _sqdist_bwd),
    "softmax_cross_entropy": (_xent_fwd, _xent_bwd),
    "smooth_l1_sum": (_smooth_l1_fwd, _smooth_l1_bwd),
    "scale": (_scale_fwd, _scale_bwd),
}

PRIMITIVES = tuple(sorted(_OPS))


def primitive_forward(kind, *inputs, **attrs):
    """Evaluate one primitive outside any graph; returns a plain ndarray."""
    if kind not in _OPS:
        raise ValueError("unknown primitive %r" % kind)
    vals = [np.asarray(x, dtype=np.float64) for x in inputs]
    return np.asarray(_OPS[kind][0](vals, attrs))


class Node:
    """One record in a Graph: op kind, input node ids, frozen output array."""

    __slots__ = ("nid", "kind", "inputs", "attrs", "value")

    def __init__(self, nid, kind, inputs, attrs, value):
        self.nid = nid
        self.kind = kind
        self.inputs = inputs
        self.attrs = attrs
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return "Node(%d, %s, shape=%s)" % (self.nid, self.kind, self.value.shape)


class Graph:
    """Append-only computation record; nodes are topologically ordered."""

    def __init__(self):
        self.nodes = []

    def leaf(self, value):
        return self._append("leaf", [], {}, _freeze(_as_array(value)))

    def apply(self, kind, *inputs, **attrs):
        if kind not in _OPS:
            raise ValueError("unknown primitive %r" % kind)
        vals = [n.value for n in inputs]
        out = np.asarray(_OPS[kind][0](vals, attrs))
        return self._append(kind, [n.nid for n in inputs], attrs, _freeze(out))

    def _append(self, kind, input_ids, attrs, value):
        node = Node(len(self.nodes), kind, input_ids, attrs, value)
        self.nodes.append(node)
        return node

    # -- convenience wrappers ------------------------------------------------

    def matmul(self, a, b):
        return self.apply("matmul", a, b)

    def add(self, a, b):
        return self.apply("add", a, b)

    def relu(self, x):
        return self.apply("relu", x)

    def temporal_conv1d(self, x, w, pad="zero"):
        return self.apply("temporal_conv1d", x, w, pad=pad)

    def mean_over_axis(self, x, axis):
        return self.apply("mean_over_axis", x, axis=axis)

    def concat_last_axis(self, a, b):
        return self.apply("concat_last_axis", a, b)

    def squared_l2_distance(self, a, b):
        return self.apply("squared_l2_distance", a, b)

    def softmax_cross_entropy(self, z, label):
        return self.apply("softmax_cross_entropy", z, label=label)

    def smooth_l1_sum(self, d):
        return self.apply("smooth_l1_sum", d)

    def scale(self, x, factor):
        return self.apply("scale", x, factor=factor)


def gradients(graph, loss):
    """Reverse accumulation from a scalar loss node.

    Returns {node id: adjoint array} covering every node at or below the loss;
    leaves with no path to the loss get zero adjoints.
    """
    if loss.value.size != 1:
        raise ShapeError("gradients: loss must be scalar, got shape %s" % (loss.value.shape,))
    adj = {}
    for node in graph.nodes:
        if node.kind == "leaf":
            adj[node.nid] = np.zeros_like(node.value)
    adj[loss.nid] = np.ones_like(loss.value)
    for node in reversed(graph.nodes[:loss.nid + 1]):
        g = adj.get(node.nid)
        if g is None or node.kind == "leaf":
            continue
        vals = [graph.nodes[i].value for i in node.inputs]
        for nid, dg in zip(node.inputs, _OPS[node.kind][1](g, vals, node.value, node.attrs)):
            dg = np.asarray(dg, dtype=np.float64)
            adj[nid] = adj[nid] + dg if nid in adj else dg
    return adj


class MomentumSgd:
    """Classic momentum SGD over a dict of named parameter arrays.

    v <- momentum * v + g;  p <- p - lr * v
    """

    def __init__(self, lr, momentum=0.0):
        if lr <= 0:
            raise ValueError("lr must be positive, got %r" % lr)
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must be in [0,1), got %r" % momentum)
        self.lr = lr
        self.momentum = momentum
        self.velocity = {}

    def step(self, params, grads):
        out = {}
        for name in params:
            p, g = params[name], grads[name]
            if p.shape != g.shape:
                raise _shape_err("sgd_step[%s]" % name, p.shape, g.shape)
            v = self.velocity.get(name)
            v = g if v is None else self.momentum * v + g
            self.velocity[name] = v
            out[name] = p - self.lr * v
        return out


def sgd_step(params, grads, lr, momentum=0.0, velocity=None):
    """One functional momentum-SGD step; returns (new params, new velocity)."""
    opt = MomentumSgd(lr, momentum)
    if velocity:
        opt.velocity = dict(velocity)
    new = opt.step(params, grads)
    return new, opt.velocity
