"""Central-difference verification of every differentiable op.

check() compares the tape's analytic gradient against symmetric finite
differences, elementwise, in float64. The error measure is

    max |a - n| / max(1, |a|, |n|)

so tiny absolute slopes don't blow up the relative error. battery() runs
a named case list (one per op, plus losses, the modulator block, and an
end-to-end micro network) across seeds.
"""

from __future__ import annotations

import numpy as np

from fbnet import tensor as T
from fbnet.kernels import out_size
from fbnet.labels import IGNORE
from fbnet.losses import bwbce, pointwise_ce, reweighted_ce
from fbnet.tensor import Tensor

EPS = 1e-4
TOL = 1e-4


def numeric_grad(fn, t, eps=EPS):
    """d fn() / d t.data by central differences; fn rebuilds its graph each call."""
    flat = t.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(fn().data)
        flat[i] = orig - eps
        lo = float(fn().data)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * eps)
    return out.reshape(t.data.shape)


def relative_error(analytic, numeric):
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check(fn, params, eps=EPS):
    """Max relative error over all params of fn's analytic vs numeric gradient."""
    for p in params:
        p.grad = None
    T.backward(fn())
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = max(worst, relative_error(analytic, numeric_grad(fn, p, eps)))
    return worst


def _param(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True, dtype=np.float64)


def _const(rng, shape):
    return Tensor(rng.uniform(-1.0, 1.0, size=shape), dtype=np.float64)


def _score(t, c):
    # weighted sum so the reduction feeding FD has a non-uniform gradient
    return T.tsum(T.mul(t, c))


def _case_add(rng):
    a, b = _param(rng, (3, 4)), _param(rng, (4,))
    c = _const(rng, (3, 4))
    return lambda: _score(T.add(a, b), c), [a, b]


def _case_mul(rng):
    a, b = _param(rng, (2, 3, 4)), _param(rng, (3, 1))
    c = _const(rng, (2, 3, 4))
    return lambda: _score(T.mul(a, b), c), [a, b]


def _case_neg(rng):
    a = _param(rng, (5,))
    c = _const(rng, (5,))
    return lambda: _score(T.neg(a), c), [a]


def _case_log(rng):
    a = _param(rng, (3, 3), lo=0.5, hi=2.0)
    c = _const(rng, (3, 3))
    return lambda: _score(T.log(a), c), [a]


def _case_sigmoid(rng):
    a = _param(rng, (3, 4), lo=-3.0, hi=3.0)
    c = _const(rng, (3, 4))
    return lambda: _score(T.sigmoid(a), c), [a]


def _case_relu(rng):
    # keep inputs a safe margin from the kink so FD stays two-sided-smooth
    base = rng.uniform(0.2, 1.0, size=(4, 4)) * rng.choice([-1.0, 1.0], size=(4, 4))
    a = Tensor(base, requires_grad=True, dtype=np.float64)
    c = _const(rng, (4, 4))
    return lambda: _score(T.relu(a), c), [a]


def _case_tmean(rng):
    a = _param(rng, (2, 3))
    c = _const(rng, (2, 3))
    return lambda: T.tmean(T.mul(a, c)), [a]


def _case_reshape(rng):
    a = _param(rng, (2, 6))
    c = _const(rng, (3, 4))
    return lambda: _score(T.reshape(a, (3, 4)), c), [a]


def _conv_case(stride, padding, dilation, bias=True):
    def build(rng):
        x = _param(rng, (2, 3, 5, 5))
        w = _param(rng, (4, 3, 3, 3))
        b = _param(rng, (4,)) if bias else None
        ho = out_size(5, 3, stride, padding, dilation)
        c = _const(rng, (2, 4, ho, ho))
        params = [x, w] + ([b] if bias else [])
        return (
            lambda: _score(T.conv2d(x, w, b, stride=stride, padding=padding, dilation=dilation), c),
            params,
        )

    return build


def _case_fc(rng):
    x, w, b = _param(rng, (3, 5)), _param(rng, (5, 4)), _param(rng, (4,))
    c = _const(rng, (3, 4))
    return lambda: _score(T.fully_connected(x, w, b), c), [x, w, b]


def _case_gap(rng):
    x = _param(rng, (2, 3, 4, 5))
    c = _const(rng, (2, 3))
    return lambda: _score(T.global_avg_pool(x), c), [x]


def _case_up_nearest(rng):
    x = _param(rng, (1, 2, 3, 3))
    c = _const(rng, (1, 2, 6, 6))
    return lambda: _score(T.upsample_nearest(x, 2), c), [x]


def _bilinear_case(shape, factor):
    def build(rng):
        x = _param(rng, shape)
        c = _const(rng, shape[:2] + (shape[2] * factor, shape[3] * factor))
        return lambda: _score(T.upsample_bilinear(x, factor), c), [x]

    return build


def _bwbce_case(reduction):
    def build(rng):
        z = _param(rng, (1, 2, 4, 4), lo=-2.0, hi=2.0)
        y = rng.integers(0, 2, size=(1, 2, 4, 4)).astype(np.float64)
        return lambda: bwbce(T.sigmoid(z), y, reduction=reduction).value, [z]

    return build


def _masked_ce_case(weighted):
    def build(rng):
        z = _param(rng, (2, 3, 4, 4), lo=-2.0, hi=2.0)
        m = rng.integers(0, 3, size=(2, 4, 4)).astype(np.uint8)
        m[rng.random(size=m.shape) < 0.25] = IGNORE
        m[0, 0, 0] = 1  # at least one valid pixel
        if weighted:
            w = rng.uniform(0.5, 2.0, size=3)
            return lambda: reweighted_ce(z, m, w).value, [z]
        return lambda: pointwise_ce(z, m).value, [z]

    return build


def _case_block(rng):
    from fbnet.blocks import FBNetBlock

    block = FBNetBlock(channels=3, n_foreground=2, rng=rng, dtype=np.float64)
    x = _param(rng, (1, 3, 4, 4))
    cf = _const(rng, (1, 3, 4, 4))
    params = [x] + list(block.parameters().values())

    def fn():
        fused, p = block.forward(x)
        return T.add(_score(fused, cf), T.tsum(p))

    return fn, params


def _relu_kink_margin(root):
    """Smallest |pre-activation| feeding any relu in the traced graph."""
    margins = [
        float(np.min(np.abs(node._parents[0].data)))
        for node in T.Tape.trace(root).entries
        if node._op == "relu"
    ]
    return min(margins) if margins else float("inf")


def _case_end_to_end(rng):
    from fbnet.labels import ClassScheme
    from fbnet.network import ModelConfig, build
    from fbnet.train import total_loss

    scheme = ClassScheme(total=4, foreground_ids=(2, 3))
    config = ModelConfig(scheme=scheme, stage_channels=(2, 2, 2, 2), convs_per_stage=1)

    # The loss is not differentiable where a relu input is zero, and a
    # central difference of step EPS crosses the kink whenever an input
    # sits within EPS times the local gain of it. Resample the probe
    # point until every pre-activation clears a 30x margin.
    for _ in range(100):
        model = build(config, seed=int(rng.integers(1 << 30)), dtype=np.float64)
        image = Tensor(rng.uniform(0.0, 1.0, size=(3, 8, 8)), dtype=np.float64)
        mask = rng.integers(0, 4, size=(8, 8)).astype(np.uint8)
        params = list(model.parameters().values())

        def fn():
            return total_loss(model.forward(image), mask, scheme).value

        if _relu_kink_margin(fn()) > 30 * EPS:
            return fn, params
    raise RuntimeError("could not sample a kink-free end-to-end probe point")


_OP_CASES = [
    ("add-broadcast", _case_add),
    ("mul-broadcast", _case_mul),
    ("neg", _case_neg),
    ("log", _case_log),
    ("sigmoid", _case_sigmoid),
    ("relu", _case_relu),
    ("mean", _case_tmean),
    ("reshape", _case_reshape),
    ("conv-s1p1", _conv_case(1, 1, 1)),
    ("conv-s2p1d2", _conv_case(2, 1, 2)),
    ("conv-s3p2", _conv_case(3, 2, 1)),
    ("conv-nobias", _conv_case(1, 0, 1, bias=False)),
    ("fully-connected", _case_fc),
    ("global-avg-pool", _case_gap),
    ("upsample-nearest", _case_up_nearest),
    ("upsample-bilinear-x2", _bilinear_case((1, 2, 3, 3), 2)),
    ("upsample-bilinear-x4", _bilinear_case((1, 1, 2, 2), 4)),
    ("bwbce-mean", _bwbce_case("mean")),
    ("bwbce-sum", _bwbce_case("sum")),
    ("pointwise-ce", _masked_ce_case(False)),
    ("reweighted-ce", _masked_ce_case(True)),
]

_MODEL_CASES = [
    ("modulator-block", _case_block),
    ("end-to-end", _case_end_to_end),
]


def case_names(full=True):
    cases = _OP_CASES + (_MODEL_CASES if full else [])
    return [name for name, _ in cases]


def battery(seeds=range(10), full=True):
    """Run every case per seed; returns [(name, seed, max_rel_err), ...]."""
    cases = _OP_CASES + (_MODEL_CASES if full else [])
    results = []
    for seed in seeds:
        for index, (name, builder) in enumerate(cases):
            fn, params = builder(np.random.default_rng([seed, index]))
            results.append((name, seed, check(fn, params)))
    return results
