"""Miniature dilated-FCN segmentation network with optional add-on blocks.

Four stages (res2..res5) of 3x3 convs reach cumulative strides
(4, 8, 8, 8); the last two stages trade further striding for dilation
(2, 4), keeping output stride 8. No batch norm at this scale - each
stage ends in a learnable per-channel scale instead. A 1x1 head maps
the last stage to class logits, bilinearly upsampled to input size.

Modulation blocks can be injected after any subset of stages; each
injected stage contributes its block-probability map P at that stage's
stride to the forward result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fbnet import tensor as T
from fbnet.blocks import VARIANTS, FBNetBlock, _he_conv, _zeros
from fbnet.labels import ClassScheme
from fbnet.tensor import DEFAULT_DTYPE, ShapeError, Tensor

STAGE_NAMES = ("res2", "res3", "res4", "res5")


class ConfigError(ValueError):
    """Model configuration violates a structural constraint."""


@dataclass(frozen=True)
class ModelConfig:
    scheme: ClassScheme
    stage_channels: tuple = (16, 32, 64, 64)
    stage_strides: tuple = (4, 8, 8, 8)
    stage_dilations: tuple = (1, 1, 2, 4)
    convs_per_stage: int = 1
    inject: tuple = ("res5",)
    block_variant: str = "full"
    in_channels: int = 3

    def __post_init__(self):
        for name in ("stage_channels", "stage_strides", "stage_dilations", "inject"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.stage_channels) != len(STAGE_NAMES):
            raise ConfigError(f"need {len(STAGE_NAMES)} stage channel counts, got {self.stage_channels!r}")
        if len(self.stage_strides) != len(STAGE_NAMES) or len(self.stage_dilations) != len(STAGE_NAMES):
            raise ConfigError("stage_strides and stage_dilations must have one entry per stage")
        if any(c < 1 for c in self.stage_channels):
            raise ConfigError(f"stage channels must be >= 1, got {self.stage_channels!r}")
        if any(d < 1 for d in self.stage_dilations):
            raise ConfigError(f"dilations must be >= 1, got {self.stage_dilations!r}")
        prev = 1
        for s in self.stage_strides:
            if s < prev or s % prev or s // prev not in (1, 2, 4):
                raise ConfigError(
                    f"stage_strides must grow by factors of 1, 2 or 4, got {self.stage_strides!r}"
                )
            prev = s
        if self.convs_per_stage < 1:
            raise ConfigError(f"convs_per_stage must be >= 1, got {self.convs_per_stage}")
        seen = set()
        for name in self.inject:
            if name not in STAGE_NAMES:
                raise ConfigError(f"unknown injection stage {name!r}; valid: {STAGE_NAMES}")
            if name in seen:
                raise ConfigError(f"duplicate injection stage {name!r}")
            seen.add(name)
        if self.block_variant not in VARIANTS:
            raise ConfigError(f"block_variant must be one of {VARIANTS}, got {self.block_variant!r}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        if not isinstance(self.scheme, ClassScheme):
            raise ConfigError("scheme must be a ClassScheme")

    @property
    def max_stride(self):
        return max(self.stage_strides)

    def to_dict(self):
        return {
            "scheme": {"total": self.scheme.total, "foreground_ids": list(self.scheme.foreground_ids)},
            "stage_channels": list(self.stage_channels),
            "stage_strides": list(self.stage_strides),
            "stage_dilations": list(self.stage_dilations),
            "convs_per_stage": self.convs_per_stage,
            "inject": list(self.inject),
            "block_variant": self.block_variant,
            "in_channels": self.in_channels,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        scheme = d.pop("scheme")
        return cls(
            scheme=ClassScheme(total=scheme["total"], foreground_ids=tuple(scheme["foreground_ids"])),
            **d,
        )

    def conv_plan(self):
        """Per stage: list of (in_ch, out_ch, stride, dilation) for its convs."""
        plan = []
        prev_stride, prev_ch = 1, self.in_channels
        for ch, stride, dil in zip(self.stage_channels, self.stage_strides, self.stage_dilations):
            ratio = stride // prev_stride
            if ratio == 4:
                convs = [(prev_ch, ch, 2, dil), (ch, ch, 2, dil)]
            elif ratio == 2:
                convs = [(prev_ch, ch, 2, dil)]
            else:
                convs = [(prev_ch, ch, 1, dil)]
            convs += [(ch, ch, 1, dil)] * (self.convs_per_stage - 1)
            plan.append(convs)
            prev_stride, prev_ch = stride, ch
        return plan


@dataclass
class ForwardResult:
    z: Tensor
    aux: list = field(default_factory=list)
    xo: dict | None = None


class Model:
    def __init__(self, config, stages, scales, head, blocks, dtype):
        self.config = config
        self.stages = stages  # per stage: list of (weight, bias, stride, dilation)
        self.scales = scales
        self.head = head  # (weight, bias)
        self.blocks = blocks  # stage name -> FBNetBlock
        self.dtype = np.dtype(dtype)

    def parameters(self):
        """Checkpoint-named parameter dict in fixed construction order."""
        out = {}
        for k, stage in enumerate(self.stages):
            for j, (w, b, _, _) in enumerate(stage):
                out[f"backbone.stage{k + 2}.conv{j}.weight"] = w
                out[f"backbone.stage{k + 2}.conv{j}.bias"] = b
            out[f"backbone.stage{k + 2}.scale"] = self.scales[k]
        out["head.weight"], out["head.bias"] = self.head
        for name in STAGE_NAMES:
            if name in self.blocks:
                for pname, p in self.blocks[name].parameters().items():
                    out[f"fbnet.{name}.{pname}"] = p
        return out

    def forward(self, image, capture_xo=False):
        if isinstance(image, Tensor):
            x = image
            if x.dtype != self.dtype:
                raise ShapeError(f"image dtype {x.dtype} != model dtype {self.dtype}")
        else:
            x = Tensor(np.asarray(image), dtype=self.dtype)
        if x.data.ndim == 3:
            unbatched = True
            x = T.reshape(x, (1,) + x.data.shape)
        elif x.data.ndim == 4:
            unbatched = False
        else:
            raise ShapeError(f"image must be CHW or NCHW, got {x.data.shape}")
        n, c, h, w = x.data.shape
        if c != self.config.in_channels:
            raise ShapeError(f"model expects {self.config.in_channels} input channels, got {c}")
        stride = self.config.max_stride
        if h % stride or w % stride:
            raise ValueError(f"input dims {h}x{w} must be divisible by the output stride {stride}")

        def unbatch(t):
            return T.reshape(t, t.data.shape[1:]) if unbatched else t

        aux = []
        xo_map = {} if capture_xo else None
        for k, stage in enumerate(self.stages):
            for conv_w, conv_b, conv_stride, dil in stage:
                x = T.relu(T.conv2d(x, conv_w, conv_b, stride=conv_stride, padding=dil, dilation=dil))
            ch = self.config.stage_channels[k]
            x = T.mul(x, T.reshape(self.scales[k], (1, ch, 1, 1)))
            name = STAGE_NAMES[k]
            block = self.blocks.get(name)
            if block is not None:
                if capture_xo and block.has_sensors:
                    x, p, x_o = block.forward(x, want_xo=True)
                    xo_map[name] = unbatch(x_o)
                else:
                    x, p = block.forward(x)
                if p is not None:
                    aux.append((name, unbatch(p)))
        z = T.conv2d(x, self.head[0], self.head[1])
        z = T.upsample_bilinear(z, stride)
        return ForwardResult(z=unbatch(z), aux=aux, xo=xo_map)


def build(config, seed, dtype=DEFAULT_DTYPE):
    """Deterministically initialized model: same (config, seed) -> same bits."""
    rng = np.random.default_rng(seed)
    stages, scales = [], []
    for k, convs in enumerate(config.conv_plan()):
        stage = []
        for in_ch, out_ch, stride, dil in convs:
            stage.append((_he_conv(rng, out_ch, in_ch, 3, dtype), _zeros((out_ch,), dtype), stride, dil))
        stages.append(stage)
        scales.append(Tensor(np.ones(config.stage_channels[k]), requires_grad=True, dtype=dtype))
    head = (
        _he_conv(rng, config.scheme.total, config.stage_channels[-1], 1, dtype),
        _zeros((config.scheme.total,), dtype),
    )
    blocks = {}
    for k, name in enumerate(STAGE_NAMES):
        if name in config.inject:
            blocks[name] = FBNetBlock(
                channels=config.stage_channels[k],
                n_foreground=config.scheme.n_foreground,
                stride=config.stage_strides[k],
                variant=config.block_variant,
                rng=rng,
                dtype=dtype,
            )
    return Model(config, stages, scales, head, blocks, dtype)
