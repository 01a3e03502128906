"""Feature-modulation add-on block with block-supervised auxiliary head.

The block watches a backbone feature map X_l through two sigmoid sensors:

* spatial sensor  - 1x1 conv to a single channel, one gate per position
* channel sensor  - global average pool + fully-connected C -> C, one
                    gate per channel

Their broadcast product rescales X_l into X_o; the fused output is the
residual sum X_l + X_o. An auxiliary 1x1 conv head turns X_o into
per-class block probabilities P, trained against block-level multi-hot
labels. Variants for ablation: "aux_only" keeps just the head (applied
to X_l directly, no modulation) and "sensors_only" keeps just the
modulation (no head, no auxiliary loss).
"""

from __future__ import annotations

import numpy as np

from fbnet import tensor as T
from fbnet.labels import assign
from fbnet.losses import bwbce
from fbnet.tensor import DEFAULT_DTYPE, ShapeError, Tensor

VARIANTS = ("full", "aux_only", "sensors_only")

# sigmoid(-40) ~ 4e-18: far below float32 resolution, so the modulated
# branch contributes exactly nothing observable
GATE_CLOSED_BIAS = -40.0


def _he_conv(rng, out_ch, in_ch, k, dtype):
    fan_in = in_ch * k * k
    return Tensor(
        rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_ch, in_ch, k, k)),
        requires_grad=True,
        dtype=dtype,
    )


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


class FBNetBlock:
    """One injection point's sensors and auxiliary head."""

    def __init__(self, channels, n_foreground, stride=1, variant="full", rng=None, dtype=DEFAULT_DTYPE):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        if channels < 1 or n_foreground < 1 or stride < 1:
            raise ValueError("channels, n_foreground and stride must all be >= 1")
        if rng is None:
            rng = np.random.default_rng()
        self.channels = channels
        self.n_foreground = n_foreground
        self.stride = stride
        self.variant = variant
        self._params = {}
        if self.has_sensors:
            self._params["spatial_sensor.weight"] = _he_conv(rng, 1, channels, 1, dtype)
            self._params["spatial_sensor.bias"] = _zeros((1,), dtype)
            self._params["channel_sensor.weight"] = Tensor(
                rng.normal(0.0, np.sqrt(2.0 / channels), size=(channels, channels)),
                requires_grad=True,
                dtype=dtype,
            )
            self._params["channel_sensor.bias"] = _zeros((channels,), dtype)
        if self.has_aux_head:
            self._params["aux.weight"] = _he_conv(rng, n_foreground, channels, 1, dtype)
            self._params["aux.bias"] = _zeros((n_foreground,), dtype)

    @property
    def has_sensors(self):
        return self.variant in ("full", "sensors_only")

    @property
    def has_aux_head(self):
        return self.variant in ("full", "aux_only")

    def parameters(self):
        return dict(self._params)

    def _check_input(self, x):
        if x.data.ndim != 4:
            raise ShapeError(f"block expects NCHW input, got {x.data.shape}")
        if x.data.shape[1] != self.channels:
            raise ShapeError(f"block built for {self.channels} channels, input has {x.data.shape[1]}")

    def modulated(self, x):
        """X_o = X_l gated by the spatial and channel sensors; requires sensors."""
        if not self.has_sensors:
            raise ValueError(f"variant {self.variant!r} has no modulated branch")
        self._check_input(x)
        n, c = x.data.shape[0], self.channels
        s_spatial = T.sigmoid(
            T.conv2d(x, self._params["spatial_sensor.weight"], self._params["spatial_sensor.bias"])
        )
        pooled = T.reshape(T.global_avg_pool(x), (n, c))
        s_channel = T.sigmoid(
            T.fully_connected(pooled, self._params["channel_sensor.weight"], self._params["channel_sensor.bias"])
        )
        return T.mul(T.mul(x, s_spatial), T.reshape(s_channel, (n, c, 1, 1)))

    def forward(self, x, want_xo=False):
        """(X_fused, P) from a batched feature map; P is None without the head.

        With want_xo the gated branch X_o is appended to the return tuple
        (None when modulation is off).
        """
        self._check_input(x)
        if self.has_sensors:
            x_o = self.modulated(x)
            fused = T.add(x, x_o)
            head_in = x_o
        else:
            x_o = None
            fused = x
            head_in = x  # head reads the raw feature when modulation is off
        p = None
        if self.has_aux_head:
            p = T.sigmoid(T.conv2d(head_in, self._params["aux.weight"], self._params["aux.bias"]))
        return (fused, p, x_o) if want_xo else (fused, p)

    def close_gates(self, bias=GATE_CLOSED_BIAS):
        """Drive both sensors hard negative so the block becomes an identity."""
        if not self.has_sensors:
            raise ValueError(f"variant {self.variant!r} has no gates to close")
        for name in ("spatial_sensor", "channel_sensor"):
            self._params[f"{name}.weight"].data[...] = 0.0
            self._params[f"{name}.bias"].data[...] = bias

    def aux_loss(self, p, mask, scheme):
        return aux_loss(p, mask, scheme, self.stride)


def aux_loss(p, mask, scheme, stride):
    """bwbce of block probabilities against labels assigned at the given stride."""
    target = assign(np.asarray(mask), scheme, stride)
    spatial = p.data.shape[-3:] if p.data.ndim == 4 else p.data.shape
    if target.data.shape != spatial:
        raise ShapeError(
            f"aux_loss: mask {np.asarray(mask).shape} at stride {stride} gives blocks "
            f"{target.data.shape}, prediction is {p.data.shape}"
        )
    return bwbce(p, target)
