"""Dense Q-network engine.

A :class:`DenseNet` is either a plain affine/rectifier chain ("single"
topology) or a dueling network ("dueling"): a shared trunk that branches
into a scalar value stream and a per-action advantage stream, recombined
by an aggregator into Q-values. All parameters live in one flat float64
buffer; layers are views into it, so SGD, clipping and target syncs are
single vectorized operations.

Backward passes are exact reverse-mode derivatives, with one deliberate
exception: for dueling networks the combined gradient entering the shared
trunk is rescaled by 1/sqrt(2) (a stability heuristic, applied exactly once
per pass). Gradients of trunk parameters therefore carry that constant
factor relative to the true derivative; stream and head parameters are
exact. :func:`finite_diff_grad` provides an independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels

RELU = 1
IDENTITY = 0

SINGLE = "single"
DUELING = "dueling"

AGGREGATORS = ("mean", "max", "naive")

JUNCTION_SCALE = 1.0 / math.sqrt(2.0)

# Slack so that clipping is exactly idempotent: after scaling to the target
# norm, the recomputed norm can exceed it by a few ulps, which must not
# trigger a second rescale.
_CLIP_SLACK = 1.0 + 1e-14


class NonFiniteError(RuntimeError):
    """A parameter or gradient stopped being finite (NaN or Inf)."""


@dataclass
class Layer:
    """One affine layer: views into the owning network's flat buffer."""

    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    act: int       # RELU or IDENTITY


class DenseNet:
    """Feed-forward Q-network parameters.

    For the dueling topology the flat layer list is ordered trunk, value
    stream, advantage stream; the value stream must end in a single output.
    """

    __slots__ = ("topology", "theta", "layers", "n_trunk", "n_value", "n_adv",
                 "_chains", "_view_plan")

    def __init__(self, topology, shapes, acts, n_trunk, n_value, n_adv,
                 theta=None):
        if topology not in (SINGLE, DUELING):
            raise ValueError(f"unknown topology {topology!r}")
        if len(shapes) != len(acts):
            raise ValueError("one activation flag per layer required")
        if n_trunk + n_value + n_adv != len(shapes):
            raise ValueError("stream sizes do not cover the layer list")
        if topology == SINGLE and (n_value or n_adv):
            raise ValueError("single topology has no streams")
        if topology == DUELING:
            if n_trunk < 1 or n_value < 1 or n_adv < 1:
                raise ValueError("dueling topology needs trunk, value and "
                                 "advantage layers")
            if shapes[n_trunk + n_value - 1][0] != 1:
                raise ValueError("value stream must end in a single output")
        self._check_chaining(shapes, n_trunk, n_value, n_adv)

        size = sum(o * i + o for o, i in shapes)
        if theta is None:
            theta = np.zeros(size, dtype=np.float64)
        else:
            theta = np.asarray(theta, dtype=np.float64)
            if theta.size != size:
                raise ValueError(f"parameter buffer has {theta.size} entries, "
                                 f"layer shapes need {size}")
        self.topology = topology
        self.theta = theta
        self.n_trunk = n_trunk
        self.n_value = n_value
        self.n_adv = n_adv
        self.layers = _build_views(theta, shapes, acts)
        self._chains = self._build_chain_cache()
        self._view_plan = _view_plan(shapes)

    @staticmethod
    def _check_chaining(shapes, n_trunk, n_value, n_adv):
        def chain_ok(sub, first_in):
            if not sub:
                return
            if sub[0][1] != first_in and first_in is not None:
                raise ValueError(f"stream input {sub[0][1]} does not match "
                                 f"upstream width {first_in}")
            for (o_prev, _), (_, i_next) in zip(sub, sub[1:]):
                if o_prev != i_next:
                    raise ValueError("consecutive layer dimensions do not chain")

        trunk = shapes[:n_trunk]
        chain_ok(trunk, None)
        trunk_out = trunk[-1][0] if trunk else None
        if n_value or n_adv:
            chain_ok(shapes[n_trunk:n_trunk + n_value], trunk_out)
            chain_ok(shapes[n_trunk + n_value:], trunk_out)

    def _build_chain_cache(self):
        def pack(sub):
            return ([l.w for l in sub], [l.b for l in sub], [l.act for l in sub])

        t = self.layers[:self.n_trunk]
        v = self.layers[self.n_trunk:self.n_trunk + self.n_value]
        a = self.layers[self.n_trunk + self.n_value:]
        return (pack(t), pack(v), pack(a))

    @property
    def input_dim(self):
        return self.layers[0].w.shape[1]

    @property
    def n_outputs(self):
        """Width of the Q-value output (advantage width for dueling nets)."""
        return self.layers[-1].w.shape[0]

    @property
    def shapes(self):
        return [l.w.shape for l in self.layers]

    def param_count(self):
        return self.theta.size

    def clone(self):
        """Deep copy (used for target networks)."""
        acts = [l.act for l in self.layers]
        return DenseNet(self.topology, self.shapes, acts, self.n_trunk,
                        self.n_value, self.n_adv, theta=self.theta.copy())

    def validate_finite(self):
        if not np.isfinite(self.theta).all():
            for k, layer in enumerate(self.layers):
                if not (np.isfinite(layer.w).all() and np.isfinite(layer.b).all()):
                    raise NonFiniteError(f"non-finite parameters in layer {k}")
            raise NonFiniteError("non-finite parameters")

    def __repr__(self):
        dims = "/".join(f"{o}x{i}" for o, i in self.shapes)
        return f"DenseNet({self.topology}, {dims})"


def _build_views(theta, shapes, acts):
    layers = []
    pos = 0
    for (out, inp), act in zip(shapes, acts):
        w = theta[pos:pos + out * inp].reshape(out, inp)
        pos += out * inp
        b = theta[pos:pos + out]
        pos += out
        layers.append(Layer(w, b, int(act)))
    return layers


def _view_plan(shapes):
    """Precomputed (start, stop, shape) slices for fast view construction."""
    plan = []
    pos = 0
    for out, inp in shapes:
        plan.append((pos, pos + out * inp, (out, inp)))
        pos += out * inp
        plan.append((pos, pos + out, None))
        pos += out
    return plan


class GradientSet:
    """Per-parameter gradients, shape-congruent with a DenseNet.

    Stored as one flat buffer plus per-layer (dw, db) views, mirroring the
    network's layout.
    """

    __slots__ = ("g", "layers")

    def __init__(self, g, layers):
        self.g = g
        self.layers = layers

    @classmethod
    def zeros_like(cls, net):
        g = np.zeros(net.theta.size, dtype=np.float64)
        plan = net._view_plan
        views = [g[a:b].reshape(shape) if shape else g[a:b]
                 for a, b, shape in plan]
        return cls(g, list(zip(views[0::2], views[1::2])))

    def norm(self):
        return math.sqrt(float(self.g @ self.g))

    def copy(self):
        out = GradientSet.__new__(GradientSet)
        out.g = self.g.copy()
        shapes = [dw.shape for dw, _ in self.layers]
        views = _build_views(out.g, shapes, [0] * len(shapes))
        out.layers = [(l.w, l.b) for l in views]
        return out


# ---------------------------------------------------------------------------
# construction

def init_net(layer_spec, topology=SINGLE, seed=0):
    """Build a seeded network.

    For the single topology, ``layer_spec`` is the full dimension chain
    ``[in, hidden..., out]``. For the dueling topology it is exactly
    ``[in, shared, stream_hidden, n_actions]``: one shared rectified layer,
    then a value stream (stream_hidden -> 1) and an advantage stream
    (stream_hidden -> n_actions).

    Weights are uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]; biases zero.
    Deterministic given the seed.
    """
    dims = [int(d) for d in layer_spec]
    if not dims:
        raise ValueError("empty layer spec")
    if any(d < 1 for d in dims):
        raise ValueError(f"all dimensions must be >= 1, got {dims}")

    if topology == SINGLE:
        if len(dims) < 2:
            raise ValueError("single topology needs at least [in, out]")
        shapes = [(o, i) for i, o in zip(dims, dims[1:])]
        acts = [RELU] * (len(shapes) - 1) + [IDENTITY]
        net = DenseNet(SINGLE, shapes, acts, len(shapes), 0, 0)
    elif topology == DUELING:
        if len(dims) != 4:
            raise ValueError("dueling layer spec is [in, shared, stream_hidden, "
                             f"n_actions], got {dims}")
        inp, shared, hid, n_actions = dims
        shapes = [(shared, inp),
                  (hid, shared), (1, hid),
                  (hid, shared), (n_actions, hid)]
        acts = [RELU, RELU, IDENTITY, RELU, IDENTITY]
        net = DenseNet(DUELING, shapes, acts, 1, 2, 2)
    else:
        raise ValueError(f"unknown topology {topology!r}")

    rng = np.random.default_rng(seed)
    for layer in net.layers:
        k = 1.0 / math.sqrt(layer.w.shape[1])
        layer.w[...] = rng.uniform(-k, k, size=layer.w.shape)
        layer.b[...] = 0.0
    return net


def build_single_stream(input_dim, n_actions, seed, hidden=50):
    """Plain Q-network: input -> hidden -> hidden -> n_actions."""
    return init_net([input_dim, hidden, hidden, n_actions], SINGLE, seed)


def build_dueling(input_dim, n_actions, seed, shared=50, stream_hidden=25):
    """Dueling Q-network: shared layer, then value and advantage streams."""
    return init_net([input_dim, shared, stream_hidden, n_actions], DUELING, seed)


# ---------------------------------------------------------------------------
# aggregating module

def _aggregate_2d(kind, v2, adv2):
    """Aggregation core on (n, 1) values and (n, A) advantages."""
    if kind == "mean":
        return (adv2 - adv2.sum(axis=1, keepdims=True) / adv2.shape[1]) + v2
    if kind == "max":
        return (adv2 - adv2.max(axis=1, keepdims=True)) + v2
    return adv2 + v2


def aggregate(kind, v, adv):
    """Combine value and advantage estimates into Q-values.

    mean:  q_a = v + adv_a - mean(adv)
    max:   q_a = v + adv_a - max(adv)
    naive: q_a = v + adv_a   (not identifiable; kept to demonstrate why)

    ``adv`` may be a vector or an (n, A) batch; ``v`` a scalar or (n, 1).
    """
    if kind not in AGGREGATORS:
        raise ValueError(f"unknown aggregator {kind!r}")
    adv = np.asarray(adv, dtype=np.float64)
    squeeze = adv.ndim == 1
    adv2 = np.atleast_2d(adv)
    if adv2.shape[1] == 0:
        raise ValueError("empty advantage vector")
    v2 = np.asarray(v, dtype=np.float64).reshape(adv2.shape[0], -1)
    q = _aggregate_2d(kind, v2, adv2)
    return q[0] if squeeze else q


def _aggregate_backward_2d(kind, dq2, adv2):
    dv = dq2.sum(axis=1, keepdims=True)
    if kind == "mean":
        dadv = dq2 - dv / dq2.shape[1]
    elif kind == "naive":
        dadv = dq2.copy()
    else:
        if adv2 is None:
            raise ValueError("max aggregator backward needs the forward adv")
        stars = adv2.argmax(axis=1)
        dadv = dq2.copy()
        dadv[np.arange(dq2.shape[0]), stars] -= dv[:, 0]
    return dv, dadv


def aggregate_backward(kind, dq, adv=None):
    """Exact derivative of :func:`aggregate` with respect to (v, adv).

    The max variant uses the standard subgradient: the max term routes its
    gradient entirely to the argmax entry (ties to the lowest index), so it
    needs the forward ``adv`` values.

    Returns ``(dv, dadv)``; scalar ``dv`` for vector input, (n, 1) for a
    batch.
    """
    if kind not in AGGREGATORS:
        raise ValueError(f"unknown aggregator {kind!r}")
    dq = np.asarray(dq, dtype=np.float64)
    squeeze = dq.ndim == 1
    dq2 = np.atleast_2d(dq)
    adv2 = None if adv is None else np.atleast_2d(np.asarray(adv, dtype=np.float64))
    dv, dadv = _aggregate_backward_2d(kind, dq2, adv2)
    if squeeze:
        return float(dv[0, 0]), dadv[0]
    return dv, dadv


def junction_rescale(shared_grad):
    """Scale the combined stream gradient at the trunk junction by 1/sqrt(2).

    Contract: applied exactly once per dueling backward pass.
    """
    return np.asarray(shared_grad, dtype=np.float64) * JUNCTION_SCALE


# ---------------------------------------------------------------------------
# forward / backward

@dataclass
class Trace:
    """Activations retained by :func:`forward` for the backward pass."""

    x: np.ndarray              # (n, in) input batch
    outs: list                 # per-layer activations, flat layer order
    v: np.ndarray | None       # (n, 1) value-stream output (dueling only)
    adv: np.ndarray | None     # (n, A) advantage-stream output (dueling only)
    aggregator: str | None
    single_input: bool


def _as_batch(x, width, what="input"):
    if type(x) is np.ndarray and x.dtype == np.float64 and x.ndim == 1 \
            and x.flags.c_contiguous:
        if x.shape[0] != width:
            raise ValueError(f"{what} width {x.shape[0]} does not match "
                             f"expected {width}")
        return x.reshape(1, width), True
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.ascontiguousarray(np.atleast_2d(x))
    if x2.ndim != 2 or x2.shape[1] != width:
        raise ValueError(f"{what} width {x2.shape[-1]} does not match "
                         f"expected {width}")
    return x2, single


def forward(net, x, aggregator="mean"):
    """Evaluate the network, returning (q_values, trace).

    ``x`` is one input vector or an (n, in) batch; the output matches.
    The aggregator only matters for dueling nets.
    """
    x2, single = _as_batch(x, net.input_dim)
    (tw, tb, ta), (vw, vb, va), (aw, ab, aa) = net._chains

    if net.topology == SINGLE:
        outs = _kernels.chain_forward(tw, tb, ta, x2)
        q = outs[-1]
        trace = Trace(x2, outs, None, None, None, single)
    else:
        if aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {aggregator!r}")
        t_outs = _kernels.chain_forward(tw, tb, ta, x2)
        h = t_outs[-1]
        v_outs = _kernels.chain_forward(vw, vb, va, h)
        a_outs = _kernels.chain_forward(aw, ab, aa, h)
        v, adv = v_outs[-1], a_outs[-1]
        q = _aggregate_2d(aggregator, v, adv)
        trace = Trace(x2, t_outs + v_outs + a_outs, v, adv, aggregator, single)
    return (q[0] if single else q), trace


def q_values(net, x, aggregator="mean"):
    """Forward pass without keeping the trace."""
    return forward(net, x, aggregator)[0]


def backward(net, trace, output_grad):
    """Reverse-mode pass: gradients of ``output_grad . q`` w.r.t. parameters
    and input.

    For dueling nets this includes the aggregator derivative and the one-time
    1/sqrt(2) junction rescale on the gradient entering the shared trunk.
    Returns ``(GradientSet, input_grad)``.
    """
    if len(trace.outs) != len(net.layers):
        raise ValueError("trace does not match this network's layer count")
    g, single = _as_batch(output_grad, net.n_outputs, what="output gradient")
    if g.shape[0] != trace.x.shape[0]:
        raise ValueError("output gradient batch does not match the trace")
    if trace.x.shape[1] != net.input_dim:
        raise ValueError("trace input width does not match this network")

    grads = GradientSet.zeros_like(net)
    (tw, _, ta), (vw, _, va), (aw, _, aa) = net._chains
    nt, nv = net.n_trunk, net.n_value
    dws = [dw for dw, _ in grads.layers]
    dbs = [db for _, db in grads.layers]

    if net.topology == SINGLE:
        gin = _kernels.chain_backward(tw, ta, trace.x, trace.outs, g,
                                      dws, dbs)
    else:
        for out, expect in ((trace.v, 1), (trace.adv, net.n_outputs)):
            if out is None or out.shape != (trace.x.shape[0], expect):
                raise ValueError("trace is missing dueling stream outputs")
        dv, dadv = _aggregate_backward_2d(trace.aggregator, g, trace.adv)
        h = trace.outs[nt - 1]
        gh_v = _kernels.chain_backward(vw, va, h, trace.outs[nt:nt + nv], dv,
                                       dws[nt:nt + nv], dbs[nt:nt + nv])
        gh_a = _kernels.chain_backward(aw, aa, h, trace.outs[nt + nv:], dadv,
                                       dws[nt + nv:], dbs[nt + nv:])
        gh = junction_rescale(gh_v + gh_a)
        gin = _kernels.chain_backward(tw, ta, trace.x, trace.outs[:nt], gh,
                                      dws[:nt], dbs[:nt])
    return grads, (gin[0] if single else gin)


# ---------------------------------------------------------------------------
# training-step primitives

def sgd_step(net, grads, lr):
    """In-place SGD update: every parameter becomes p - lr * g.

    Raises :class:`NonFiniteError` naming the offending layer if the
    gradient contains NaN or Inf. Returns the (mutated) network.
    """
    if grads.g.size != net.theta.size:
        raise ValueError("gradient set is not shape-congruent with the network")
    sq = float(grads.g @ grads.g)
    if not math.isfinite(sq):
        for k, (dw, db) in enumerate(grads.layers):
            if not (np.isfinite(dw).all() and np.isfinite(db).all()):
                raise NonFiniteError(f"non-finite gradient in layer {k}")
        raise NonFiniteError("non-finite gradient")
    net.theta -= lr * grads.g
    return net


def clip_grad_norm(grads, max_norm):
    """Clip the global L2 norm over all parameters to ``max_norm``.

    Mutates and returns ``grads``. If the norm already fits, the gradients
    are returned unchanged (which makes clipping exactly idempotent).
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    sq = float(grads.g @ grads.g)
    if not math.isfinite(sq):
        for k, (dw, db) in enumerate(grads.layers):
            if not (np.isfinite(dw).all() and np.isfinite(db).all()):
                raise NonFiniteError(f"non-finite gradient in layer {k}")
        raise NonFiniteError("non-finite gradient")
    norm = math.sqrt(sq)
    if norm > max_norm * _CLIP_SLACK:
        grads.g *= max_norm / norm
    return grads


def finite_diff_grad(net, x, loss, h=1e-6, aggregator="mean"):
    """Central-difference gradient oracle.

    ``loss`` maps the network output (q-vector) to a scalar. Perturbs each
    parameter by +-h in double precision; the network is restored bitwise.
    """
    grads = GradientSet.zeros_like(net)
    theta = net.theta
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        lp = float(loss(q_values(net, x, aggregator)))
        theta[i] = orig - h
        lm = float(loss(q_values(net, x, aggregator)))
        theta[i] = orig
        grads.g[i] = (lp - lm) / (2.0 * h)
    return grads


# ---------------------------------------------------------------------------
# saliency

def saliency(net, state_input, aggregator="mean"):
    """Absolute input-Jacobians of the two dueling streams.

    Returns ``(val_sal, adv_sal)``: elementwise ``|d v / d input|`` and
    ``|d adv[a*] / d input|`` with ``a*`` the advantage argmax (ties to the
    lowest index). These are true Jacobians of the stream outputs, so the
    training-only junction rescale is not applied.
    """
    if net.topology != DUELING:
        raise ValueError("saliency needs a dueling network; this one is "
                         f"{net.topology!r}")
    x = np.asarray(state_input, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("saliency expects a single input vector")
    _, trace = forward(net, x, aggregator)

    (tw, _, ta), (vw, _, va), (aw, _, aa) = net._chains
    nt, nv = net.n_trunk, net.n_value

    def scratch(chain_ws):
        return ([np.zeros_like(w) for w in chain_ws],
                [np.zeros(w.shape[0]) for w in chain_ws])

    def input_grad_through(stream_ws, stream_acts, stream_outs, g_out):
        dws, dbs = scratch(stream_ws)
        gh = _kernels.chain_backward(stream_ws, stream_acts,
                                     trace.outs[nt - 1], stream_outs, g_out,
                                     dws, dbs)
        dwt, dbt = scratch(tw)
        return _kernels.chain_backward(tw, ta, trace.x, trace.outs[:nt], gh,
                                       dwt, dbt)

    gv = np.ones((1, 1))
    gx_v = input_grad_through(vw, va, trace.outs[nt:nt + nv], gv)

    a_star = int(trace.adv[0].argmax())
    ga = np.zeros((1, net.n_outputs))
    ga[0, a_star] = 1.0
    gx_a = input_grad_through(aw, aa, trace.outs[nt + nv:], ga)

    return np.abs(gx_v[0]), np.abs(gx_a[0])


def write_saliency_csv(net, state_input, path, aggregator="mean"):
    """Dump per-input-dimension saliency magnitudes to CSV."""
    val_sal, adv_sal = saliency(net, state_input, aggregator)
    with open(path, "w") as fh:
        fh.write("input_index,value_saliency,advantage_saliency\n")
        for i, (vs, asal) in enumerate(zip(val_sal, adv_sal)):
            fh.write(f"{i},{float(vs)!r},{float(asal)!r}\n")


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_net(net, path):
    """Write a network to a versioned ``.npz`` checkpoint (lossless float64)."""
    net.validate_finite()
    arrays = {}
    for k, layer in enumerate(net.layers):
        arrays[f"w{k}"] = layer.w
        arrays[f"b{k}"] = layer.b
    np.savez(path,
             format_version=np.int64(CHECKPOINT_VERSION),
             topology=np.str_(net.topology),
             acts=np.asarray([l.act for l in net.layers], dtype=np.int64),
             splits=np.asarray([net.n_trunk, net.n_value, net.n_adv],
                               dtype=np.int64),
             n_layers=np.int64(len(net.layers)),
             **arrays)


def load_net(path):
    """Load a checkpoint written by :func:`save_net`."""
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        topology = str(data["topology"])
        acts = [int(a) for a in data["acts"]]
        n_trunk, n_value, n_adv = (int(s) for s in data["splits"])
        n_layers = int(data["n_layers"])
        ws = [data[f"w{k}"] for k in range(n_layers)]
        bs = [data[f"b{k}"] for k in range(n_layers)]
    shapes = [w.shape for w in ws]
    net = DenseNet(topology, shapes, acts, n_trunk, n_value, n_adv)
    for layer, w, b in zip(net.layers, ws, bs):
        layer.w[...] = w
        layer.b[...] = b
    net.validate_finite()
    return net
