"""Graph builders for the three benchmark denoisers and a uniform forward pass.

Models are plain data: an ordered list of LayerSpec nodes (already in
topological order) plus a named parameter store. ``forward`` walks the list
and dispatches to the operators in :mod:`denobench.ops`; there is no layer
object hierarchy to subclass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .tensor import ShapeError, Tape, Tensor

__all__ = [
    "ARCHITECTURES",
    "LayerSpec",
    "ModelGraph",
    "build_cnn_dae",
    "build_cadtra",
    "build_dcmiednet",
    "build_model",
    "param_count",
    "forward",
]

ARCHITECTURES = ("cnn_dae", "cadtra", "dcmiednet")

_KINDS = ("input", "conv", "conv_transpose", "maxpool", "upsample",
          "batchnorm", "relu", "sigmoid", "concat", "subtract")


@dataclass(frozen=True)
class LayerSpec:
    """One node of the model DAG.

    ``inputs`` name predecessor layers; ``filters``/``kernel_size``/
    ``dilation`` apply to conv kinds only.
    """

    name: str
    kind: str
    inputs: tuple[str, ...]
    filters: int | None = None
    kernel_size: int | None = None
    dilation: int = 1

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


@dataclass
class ModelGraph:
    """A built architecture: ordered layers plus its parameter store.

    ``params`` maps "<layer>.<role>" to Tensors; running batchnorm statistics
    live here too but with requires_grad False, so trainable_params() is the
    optimizer's view and params.items() the checkpoint's.
    """

    arch_id: str
    width_scale: float
    layers: list[LayerSpec]
    params: dict[str, Tensor] = field(default_factory=dict)

    def trainable_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if v.requires_grad}

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)


def _scaled(channels: int, width_scale: float) -> int:
    if not 0.0 < width_scale <= 1.0:
        raise ValueError(f"width_scale must be in (0, 1], got {width_scale}")
    value = channels * width_scale
    scaled = round(value)
    if scaled < 1 or abs(value - scaled) > 1e-9:
        raise ValueError(
            f"width_scale {width_scale} does not scale {channels} channels to a positive integer"
        )
    return scaled


class _Builder:
    """Accumulates layers and Glorot-initialized parameters for one model."""

    def __init__(self, arch_id: str, width_scale: float, seed: int):
        self.arch_id = arch_id
        self.width_scale = width_scale
        self.rng = np.random.default_rng(seed)
        self.layers: list[LayerSpec] = []
        self.params: dict[str, Tensor] = {}

    def add(self, spec: LayerSpec) -> str:
        self.layers.append(spec)
        return spec.name

    def input(self, name: str = "input_layer") -> str:
        return self.add(LayerSpec(name, "input", ()))

    def _glorot(self, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return self.rng.uniform(-limit, limit, size=shape).astype(np.float32)

    def conv(self, name: str, src: str, cin: int, cout: int, k: int = 3,
             dilation: int = 1) -> str:
        self.params[f"{name}.weight"] = Tensor(
            self._glorot((cout, cin, k, k), cin * k * k, cout * k * k), requires_grad=True)
        self.params[f"{name}.bias"] = Tensor(np.zeros(cout, np.float32), requires_grad=True)
        return self.add(LayerSpec(name, "conv", (src,), filters=cout, kernel_size=k,
                                  dilation=dilation))

    def conv_transpose(self, name: str, src: str, cin: int, cout: int, k: int = 3) -> str:
        self.params[f"{name}.weight"] = Tensor(
            self._glorot((cin, cout, k, k), cin * k * k, cout * k * k), requires_grad=True)
        self.params[f"{name}.bias"] = Tensor(np.zeros(cout, np.float32), requires_grad=True)
        return self.add(LayerSpec(name, "conv_transpose", (src,), filters=cout, kernel_size=k))

    def batchnorm(self, name: str, src: str, channels: int) -> str:
        self.params[f"{name}.gamma"] = Tensor(np.ones(channels, np.float32), requires_grad=True)
        self.params[f"{name}.beta"] = Tensor(np.zeros(channels, np.float32), requires_grad=True)
        self.params[f"{name}.running_mean"] = Tensor(np.zeros(channels, np.float32))
        self.params[f"{name}.running_var"] = Tensor(np.ones(channels, np.float32))
        return self.add(LayerSpec(name, "batchnorm", (src,)))

    def simple(self, name: str, kind: str, *srcs: str) -> str:
        return self.add(LayerSpec(name, kind, srcs))

    def build(self) -> ModelGraph:
        names = [s.name for s in self.layers]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate layer names in {self.arch_id}")
        return ModelGraph(self.arch_id, self.width_scale, self.layers, self.params)


def build_cnn_dae(width_scale: float = 1.0, seed: int = 0) -> ModelGraph:
    """Symmetric 5-conv encoder-decoder with pooling, 74,497 params at scale 1."""
    c32 = _scaled(32, width_scale)
    c64 = _scaled(64, width_scale)
    b = _Builder("cnn_dae", width_scale, seed)
    x = b.input()
    x = b.conv("conv2d_1", x, 1, c32)
    x = b.simple("conv2d_1_relu", "relu", x)
    x = b.simple("max_pool_1", "maxpool", x)
    x = b.conv("conv2d_2", x, c32, c64)
    x = b.simple("conv2d_2_relu", "relu", x)
    x = b.simple("max_pool_2", "maxpool", x)
    x = b.conv("conv2d_3", x, c64, c64)
    x = b.simple("conv2d_3_relu", "relu", x)
    x = b.simple("up_sample_1", "upsample", x)
    x = b.conv("conv2d_4", x, c64, c32)
    x = b.simple("conv2d_4_relu", "relu", x)
    x = b.simple("up_sample_2", "upsample", x)
    x = b.conv("conv2d_5", x, c32, 1)
    b.simple("conv2d_5_sigmoid", "sigmoid", x)
    return b.build()


def build_cadtra(width_scale: float = 1.0, seed: int = 0) -> ModelGraph:
    """Eight-layer conv/conv-transpose autoencoder, 196,293 params at scale 1."""
    c128 = _scaled(128, width_scale)
    c64 = _scaled(64, width_scale)
    c32 = _scaled(32, width_scale)
    b = _Builder("cadtra", width_scale, seed)
    x = b.input()
    x = b.batchnorm("batch_norm_1", x, 1)
    x = b.conv("conv2d_1", x, 1, c128)
    x = b.simple("conv2d_1_relu", "relu", x)
    x = b.conv("conv2d_2", x, c128, c64)
    x = b.simple("conv2d_2_relu", "relu", x)
    x = b.conv("conv2d_3", x, c64, c32)
    x = b.simple("conv2d_3_relu", "relu", x)
    x = b.conv_transpose("conv2d_trans_1", x, c32, c32)
    x = b.simple("conv2d_trans_1_relu", "relu", x)
    x = b.conv_transpose("conv2d_trans_2", x, c32, c64)
    x = b.simple("conv2d_trans_2_relu", "relu", x)
    x = b.conv_transpose("conv2d_trans_3", x, c64, c128)
    x = b.simple("conv2d_trans_3_relu", "relu", x)
    x = b.conv("conv2d_output", x, c128, 1)
    b.simple("conv2d_output_sigmoid", "sigmoid", x)
    return b.build()


# SubNet1 positions carrying dilation-2 kernels (sparse mechanism).
DILATED_POSITIONS = (2, 5, 9, 12)


def build_dcmiednet(width_scale: float = 1.0, seed: int = 0, subnet1_channels: int = 64,
                    subnet2_channels: int = 48, compress_channels: int = 32,
                    enhance_channels: int = 64) -> ModelGraph:
    """Dual-subnet residual denoiser: FEB fusion, two EBs, three CBs, RB head.

    Channel widths are exposed because the reference description fixes only
    the topology; the defaults land near but not exactly on the published
    aggregate parameter count.
    """
    c1 = _scaled(subnet1_channels, width_scale)
    c2 = _scaled(subnet2_channels, width_scale)
    cc = _scaled(compress_channels, width_scale)
    ce = _scaled(enhance_channels, width_scale)
    b = _Builder("dcmiednet", width_scale, seed)
    src = b.input()

    x = src
    for i in range(1, 17):
        cin = 1 if i == 1 else c1
        dil = 2 if i in DILATED_POSITIONS else 1
        x = b.conv(f"subnet1_conv{i}", x, cin, c1, dilation=dil)
        if i < 16:  # layer 16 is the linear output conv
            x = b.batchnorm(f"subnet1_bn{i}", x, c1)
            x = b.simple(f"subnet1_relu{i}", "relu", x)
    s1_out = x

    x = src
    for i in range(1, 16):
        cin = 1 if i == 1 else c2
        x = b.conv(f"subnet2_conv{i}", x, cin, c2)
        x = b.simple(f"subnet2_relu{i}", "relu", x)
    s2_out = b.conv("subnet2_cb1", x, c2, cc, k=1)  # CB[I], linear

    fused = b.simple("fusion_concat", "concat", s1_out, s2_out)

    def enhancement(tag: str, src_name: str, cin: int) -> str:
        a = b.conv(f"{tag}_conv_a", src_name, cin, ce, dilation=1)
        d = b.conv(f"{tag}_conv_b", src_name, cin, ce, dilation=2)
        cat = b.simple(f"{tag}_concat", "concat", a, d)
        return b.simple(f"{tag}_relu", "relu", cat)

    eb1 = enhancement("eb1", fused, c1 + cc)
    cb2 = b.conv("cb2", eb1, 2 * ce, cc, k=1)
    eb2 = enhancement("eb2", cb2, cc)
    cb3 = b.conv("cb3", eb2, 2 * ce, cc, k=1)
    noise = b.conv("rb_conv", cb3, cc, 1)  # linear noise estimate
    b.simple("residual_subtract", "subtract", src, noise)
    return b.build()


_BUILDERS = {
    "cnn_dae": build_cnn_dae,
    "cadtra": build_cadtra,
    "dcmiednet": build_dcmiednet,
}


def build_model(arch_id: str, width_scale: float = 1.0, seed: int = 0) -> ModelGraph:
    if arch_id not in _BUILDERS:
        raise ValueError(f"unknown architecture {arch_id!r}; expected one of {ARCHITECTURES}")
    return _BUILDERS[arch_id](width_scale, seed=seed)


def param_count(model: ModelGraph) -> tuple[int, dict[str, int]]:
    """Total parameter count and a per-layer breakdown.

    Counts every stored tensor, so batchnorm contributes 4 per channel
    (gamma, beta, and the two running statistics), matching the reference
    tables' counting convention. Layers without parameters report 0.
    """
    breakdown = {spec.name: 0 for spec in model.layers}
    for key, tensor in model.params.items():
        layer_name = key.rsplit(".", 1)[0]
        breakdown[layer_name] += tensor.size
    return sum(breakdown.values()), breakdown


def forward(model: ModelGraph, batch: Tensor, mode: str = "eval",
            tape: Tape | None = None, trace: dict[str, tuple[int, ...]] | None = None) -> Tensor:
    """Run the DAG on an (N, 1, H, W) batch.

    ``trace``, if supplied, collects every layer's output shape by name.
    DCMIEDNet output is clamped to [0,1] in eval mode only, keeping the
    training loss path linear.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if batch.data.ndim != 4 or batch.data.shape[1] != 1:
        raise ShapeError(f"expected an (N, 1, H, W) batch, got {batch.data.shape}")
    h, w = batch.data.shape[2], batch.data.shape[3]
    if model.arch_id == "cnn_dae" and (h % 4 != 0 or w % 4 != 0):
        raise ShapeError(f"cnn_dae needs H and W divisible by 4, got ({h}, {w})")

    values: dict[str, Tensor] = {}
    for spec in model.layers:
        if spec.kind == "input":
            out = batch
        elif spec.kind == "conv":
            out = ops.conv2d(values[spec.inputs[0]], model.params[f"{spec.name}.weight"],
                             model.params[f"{spec.name}.bias"], dilation=spec.dilation, tape=tape)
        elif spec.kind == "conv_transpose":
            out = ops.conv2d_transpose(values[spec.inputs[0]],
                                       model.params[f"{spec.name}.weight"],
                                       model.params[f"{spec.name}.bias"], tape=tape)
        elif spec.kind == "maxpool":
            out = ops.maxpool2d(values[spec.inputs[0]], tape=tape)
        elif spec.kind == "upsample":
            out = ops.upsample2x(values[spec.inputs[0]], tape=tape)
        elif spec.kind == "batchnorm":
            out = ops.batchnorm2d(values[spec.inputs[0]],
                                  model.params[f"{spec.name}.gamma"],
                                  model.params[f"{spec.name}.beta"],
                                  model.params[f"{spec.name}.running_mean"],
                                  model.params[f"{spec.name}.running_var"],
                                  mode=mode, tape=tape)
        elif spec.kind == "relu":
            out = ops.relu(values[spec.inputs[0]], tape=tape)
        elif spec.kind == "sigmoid":
            out = ops.sigmoid(values[spec.inputs[0]], tape=tape)
        elif spec.kind == "concat":
            out = ops.concat([values[n] for n in spec.inputs], tape=tape)
        else:  # subtract
            out = ops.subtract(values[spec.inputs[0]], values[spec.inputs[1]], tape=tape)
        values[spec.name] = out
        if trace is not None:
            trace[spec.name] = out.data.shape

    result = values[model.layers[-1].name]
    if model.arch_id == "dcmiednet" and mode == "eval":
        result = Tensor(np.clip(result.data, 0.0, 1.0))
    return result
