"""Block-supervised segmentation of thin structures, from scratch.

A small numpy-backed autodiff engine (`tensor`), a dilated-FCN backbone
(`network`), and two additions aimed at thin-object segmentation: a
block-wise multi-label BCE auxiliary loss whose per-block gradient does
not dilute with foreground pixel count (`losses`, `labels`), and a
feature-modulation block that reweights backbone features channel-wise
and spatial-position-wise from block-level probabilities (`blocks`).

Supporting modules: procedural camouflage dataset (`data`), confusion
metrics and the gradient-dilution probe (`metrics`), deterministic SGD
training loop (`train`), finite-difference gradient checks
(`gradcheck`), netpbm I/O (`netpbm`) and the command line (`cli`).

Convolutions run on a compiled extension when built, with a pure-numpy
fallback (`kernels`); set FBNET_BACKEND=native|numpy|auto to override.
"""

from fbnet.labels import ClassScheme, assign
from fbnet.losses import LossValue, bwbce, pointwise_ce
from fbnet.metrics import EvalReport, dilution_probe
from fbnet.network import Model, ModelConfig, build
from fbnet.tensor import Tensor

__all__ = [
    "ClassScheme",
    "EvalReport",
    "LossValue",
    "Model",
    "ModelConfig",
    "Tensor",
    "assign",
    "build",
    "bwbce",
    "dilution_probe",
    "pointwise_ce",
]

__version__ = "0.1.0"
