"""Declarative MobileNet-style network: build, run, cost accounting, config text.

A :class:`ModelSpec` is an ordered list of :class:`LayerSpec` entries plus input
size, width multiplier and output head. ``build_model`` turns it into
:class:`ModelWeights`; ``forward`` and ``forward_train``/``backward`` run it.
Weight files live in :mod:`vigil.weightfile`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import configtext, tensor as T
from .errors import ConfigurationError, DimensionError

LAYER_KINDS = ("conv", "sep", "maxpool", "avgpool", "flatten", "fc")
HEADS = ("softmax", "sigmoid")


@dataclass(frozen=True)
class LayerSpec:
    """One entry of the layer stack.

    ``channels`` is the nominal width before the multiplier. ``padding=None``
    means "same" padding: output extent ``ceil(size / stride)``, with the odd
    leftover pixel (if any) added at the bottom/right. An explicit ``padding``
    is symmetric and must divide exactly. ``window=None`` on a pool means a
    global pool over the whole feature map; ``stride=None`` defaults to 1 for
    convolutions and to the window for pools. ``bias=None`` means "bias only
    when there is no batch norm".
    """

    kind: str
    channels: int = 0
    kernel: int = 3
    stride: int | None = None
    padding: int | None = None
    window: int | None = 2
    units: int = 0
    in_features: int | None = None
    has_bn: bool = True
    bias: bool | None = None
    activation: str | None = None

    def __post_init__(self):
        # resolve kind-dependent defaults so equal layers compare equal
        conv_like = self.kind in ("conv", "sep")
        if not conv_like:
            object.__setattr__(self, "has_bn", False)
        if self.activation is None:
            object.__setattr__(self, "activation", "relu" if conv_like else "none")
        if self.bias is None:
            object.__setattr__(self, "bias", self.kind == "fc" or (self.kind == "conv" and not self.has_bn))
        if self.kind == "sep":
            object.__setattr__(self, "bias", False)

    @property
    def uses_bias(self):
        return self.bias


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[LayerSpec, ...]
    class_labels: tuple[str, ...]
    input_shape: tuple[int, int, int] = (3, 224, 224)
    width_multiplier: float = 1.0
    head: str = "softmax"

    @property
    def num_classes(self):
        return len(self.class_labels)

    @property
    def output_units(self):
        return 1 if self.head == "sigmoid" else self.num_classes


@dataclass
class ModelWeights:
    """Trainable parameters and batch-norm running statistics, in layer order."""

    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int = 0

    def copy(self):
        return ModelWeights({k: v.copy() for k, v in self.params.items()},
                            {k: v.copy() for k, v in self.buffers.items()}, self.seed)

    def tensors(self):
        """All tensors in serialization order: parameters then buffers."""
        return {**self.params, **self.buffers}


def scale_channels(channels, alpha):
    return max(1, int(math.floor(alpha * channels + 0.5)))


# -- planning: expand the layer stack into primitive steps with static shapes ----------

@dataclass(frozen=True)
class Step:
    op: str                  # pad | conv | dw | pw | bn | relu | pool | flatten | fc
    layer: int
    prefix: str = ""
    stride: int = 1
    padding: int = 0
    extra: tuple[int, int] = (0, 0)
    mode: str = ""
    window: tuple[int, int] = (0, 0)
    in_shape: tuple = ()
    out_shape: tuple = ()
    bias: bool = False


def _layer_error(index, layer, message):
    return ConfigurationError(f"layer {index} ({layer.kind}): {message}")


def _same_padding(h, w, k, stride):
    """Symmetric padding plus bottom/right extra giving ``ceil(size / stride)`` outputs."""
    totals = []
    for size in (h, w):
        out = -(-size // stride)
        totals.append(max((out - 1) * stride + k - size, 0))
    # symmetric part is limited by the smaller total so neither axis over-pads
    sym = min(totals) // 2
    return sym, totals[0] - 2 * sym, totals[1] - 2 * sym


def plan(spec: ModelSpec) -> list[Step]:
    """Validate ``spec`` and return its primitive steps with per-sample shapes."""
    if spec.head not in HEADS:
        raise ConfigurationError(f"head must be one of {HEADS}, got {spec.head!r}")
    if spec.head == "sigmoid" and spec.num_classes != 2:
        raise ConfigurationError("sigmoid head needs exactly two class labels")
    if spec.num_classes < 2:
        raise ConfigurationError("need at least two class labels")
    if not 0 < spec.width_multiplier <= 1:
        raise ConfigurationError(f"width_multiplier must be in (0, 1], got {spec.width_multiplier}")
    c, h, w = spec.input_shape
    if min(c, h, w) < 1:
        raise ConfigurationError(f"input shape must be positive, got {spec.input_shape}")
    if not spec.layers:
        raise ConfigurationError("empty layer stack")

    steps: list[Step] = []
    shape: tuple = (c, h, w)
    alpha = spec.width_multiplier

    def extent(index, layer, size, k, stride, pad, axis):
        try:
            return T.output_extent(size, k, stride, pad, axis)
        except ConfigurationError as exc:
            raise _layer_error(index, layer, str(exc)) from None

    for i, layer in enumerate(spec.layers):
        if layer.kind not in LAYER_KINDS:
            raise _layer_error(i, layer, f"unknown kind; expected one of {LAYER_KINDS}")
        if layer.kind in ("conv", "sep"):
            if len(shape) != 3:
                raise _layer_error(i, layer, "convolution after flatten")
            if layer.kernel not in (1, 3, 5):
                raise _layer_error(i, layer, f"kernel size {layer.kernel} not in (1, 3, 5)")
            if layer.channels < 1:
                raise _layer_error(i, layer, "channel count must be positive")
            stride = 1 if layer.stride is None else layer.stride
            c_in, h_in, w_in = shape
            if layer.padding is None:
                pad, extra_h, extra_w = _same_padding(h_in, w_in, layer.kernel, stride)
                if extra_h or extra_w:
                    padded = (c_in, h_in + extra_h, w_in + extra_w)
                    steps.append(Step("pad", i, extra=(extra_h, extra_w), in_shape=shape, out_shape=padded))
                    shape = padded
                    c_in, h_in, w_in = shape
            else:
                pad = layer.padding
            oh = extent(i, layer, h_in, layer.kernel, stride, pad, "height")
            ow = extent(i, layer, w_in, layer.kernel, stride, pad, "width")
            c_out = scale_channels(layer.channels, alpha)
            if layer.kind == "conv":
                steps.append(Step("conv", i, f"{i}.conv", stride, pad, in_shape=shape,
                                  out_shape=(c_out, oh, ow), bias=layer.uses_bias))
                shape = (c_out, oh, ow)
                if layer.has_bn:
                    steps.append(Step("bn", i, f"{i}.bn", in_shape=shape, out_shape=shape))
                if layer.activation == "relu":
                    steps.append(Step("relu", i, in_shape=shape, out_shape=shape))
                elif layer.activation != "none":
                    raise _layer_error(i, layer, f"unknown activation {layer.activation!r}")
            else:
                if not layer.has_bn or layer.activation != "relu":
                    raise _layer_error(i, layer, "a separable block always carries BN and ReLU")
                mid = (c_in, oh, ow)
                steps += [
                    Step("dw", i, f"{i}.dw", stride, pad, in_shape=shape, out_shape=mid),
                    Step("bn", i, f"{i}.dw_bn", in_shape=mid, out_shape=mid),
                    Step("relu", i, in_shape=mid, out_shape=mid),
                    Step("pw", i, f"{i}.pw", in_shape=mid, out_shape=(c_out, oh, ow)),
                    Step("bn", i, f"{i}.pw_bn", in_shape=(c_out, oh, ow), out_shape=(c_out, oh, ow)),
                    Step("relu", i, in_shape=(c_out, oh, ow), out_shape=(c_out, oh, ow)),
                ]
                shape = (c_out, oh, ow)
        elif layer.kind in ("maxpool", "avgpool"):
            if len(shape) != 3:
                raise _layer_error(i, layer, "pooling after flatten")
            c_in, h_in, w_in = shape
            kh, kw = (h_in, w_in) if layer.window is None else (layer.window, layer.window)
            stride = (1 if layer.window is None else layer.window) if layer.stride is None else layer.stride
            oh = extent(i, layer, h_in, kh, stride, 0, "height")
            ow = extent(i, layer, w_in, kw, stride, 0, "width")
            mode = "max" if layer.kind == "maxpool" else "average"
            steps.append(Step("pool", i, stride=stride, mode=mode, window=(kh, kw),
                              in_shape=shape, out_shape=(c_in, oh, ow)))
            shape = (c_in, oh, ow)
        elif layer.kind == "flatten":
            if len(shape) != 3:
                raise _layer_error(i, layer, "already flat")
            flat = (shape[0] * shape[1] * shape[2],)
            steps.append(Step("flatten", i, in_shape=shape, out_shape=flat))
            shape = flat
        else:  # fc
            if len(shape) != 1:
                raise _layer_error(i, layer, f"input of shape {shape} is not flat; add a flatten layer")
            if layer.in_features is not None and layer.in_features != shape[0]:
                raise _layer_error(i, layer, f"declared input dim {layer.in_features} != "
                                             f"flattened output {shape[0]} of the previous layer")
            if layer.units < 1:
                raise _layer_error(i, layer, "units must be positive")
            steps.append(Step("fc", i, f"{i}.fc", in_shape=shape, out_shape=(layer.units,),
                              bias=layer.bias))
            shape = (layer.units,)
            if layer.activation == "relu":
                steps.append(Step("relu", i, in_shape=shape, out_shape=shape))
            elif layer.activation != "none":
                raise _layer_error(i, layer, f"unknown activation {layer.activation!r}")

    last = len(spec.layers) - 1
    if spec.layers[-1].kind != "fc" or steps[-1].op != "fc":
        raise _layer_error(last, spec.layers[-1], "the stack must end in a linear fully-connected head")
    if shape != (spec.output_units,):
        raise _layer_error(last, spec.layers[-1],
                           f"head width {shape[0]} != {spec.output_units} ({spec.head}, "
                           f"{spec.num_classes} classes)")
    return steps


def output_shape(spec):
    return plan(spec)[-1].out_shape


def param_shapes(spec):
    """Ordered ``{name: shape}`` for trainable parameters and for buffers."""
    params: dict[str, tuple] = {}
    buffers: dict[str, tuple] = {}
    for s in plan(spec):
        if s.op == "conv":
            c_out, c_in, k = s.out_shape[0], s.in_shape[0], spec.layers[s.layer].kernel
            params[f"{s.prefix}.kernels"] = (c_out, c_in, k, k)
            if s.bias:
                params[f"{s.prefix}.bias"] = (c_out,)
        elif s.op == "dw":
            k = spec.layers[s.layer].kernel
            params[f"{s.prefix}.kernels"] = (s.in_shape[0], 1, k, k)
        elif s.op == "pw":
            params[f"{s.prefix}.kernels"] = (s.out_shape[0], s.in_shape[0], 1, 1)
        elif s.op == "bn":
            c = s.in_shape[0]
            params[f"{s.prefix}.gamma"] = (c,)
            params[f"{s.prefix}.beta"] = (c,)
            buffers[f"{s.prefix}.running_mean"] = (c,)
            buffers[f"{s.prefix}.running_var"] = (c,)
        elif s.op == "fc":
            params[f"{s.prefix}.weights"] = (s.out_shape[0], s.in_shape[0])
            if s.bias:
                params[f"{s.prefix}.bias"] = (s.out_shape[0],)
    return params, buffers


def regularized_names(spec):
    """Conv, depthwise, pointwise and FC weight tensors (no biases, no BN)."""
    params, _ = param_shapes(spec)
    return [n for n in params if n.endswith(".kernels") or n.endswith(".weights")]


def build_model(spec: ModelSpec, seed: int) -> ModelWeights:
    """He-uniform weights, zero biases, unit BN scale; deterministic in ``seed``."""
    params_shape, buffer_shape = param_shapes(spec)
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in params_shape.items():
        if name.endswith(".gamma"):
            params[name] = np.ones(shape, np.float32)
        elif name.endswith(".beta") or name.endswith(".bias"):
            params[name] = np.zeros(shape, np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = math.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    buffers = {name: (np.zeros if name.endswith("mean") else np.ones)(shape, np.float32)
               for name, shape in buffer_shape.items()}
    return ModelWeights(params, buffers, seed)


def check_weights(spec, weights):
    params, buffers = param_shapes(spec)
    for expected, got, what in ((params, weights.params, "parameter"), (buffers, weights.buffers, "buffer")):
        if list(expected) != list(got):
            raise DimensionError(f"{what} names do not match the spec", axis="weights")
        for name, shape in expected.items():
            if got[name].shape != shape:
                raise DimensionError(f"{name}: shape {got[name].shape} != {shape}", axis=name)


# -- running the network -------------------------------------------------------------------

def _zero_bias(n):
    return np.zeros(n, np.float32)


def _check_batch(spec, batch):
    batch = T.as_tensor(batch, name="batch")
    if batch.shape[1:] != tuple(spec.input_shape):
        raise DimensionError(f"batch shape {batch.shape[1:]} != model input {tuple(spec.input_shape)}",
                             axis="input")
    return batch


def _run(spec, weights, x, training, tape=None, buffers_out=None):
    p = weights.params
    for s in plan(spec):
        if tape is not None:
            tape.append(x)
        if s.op == "conv":
            bias = p.get(f"{s.prefix}.bias", _zero_bias(s.out_shape[0]))
            x = T.conv2d_forward(x, p[f"{s.prefix}.kernels"], bias, s.stride, s.padding)
        elif s.op == "dw":
            x = T.depthwise_conv2d_forward(x, p[f"{s.prefix}.kernels"], _zero_bias(s.in_shape[0]),
                                           s.stride, s.padding)
        elif s.op == "pw":
            x = T.pointwise_conv2d_forward(x, p[f"{s.prefix}.kernels"], _zero_bias(s.out_shape[0]))
        elif s.op == "bn":
            x, mean, var = T.batchnorm_forward(
                x, p[f"{s.prefix}.gamma"], p[f"{s.prefix}.beta"],
                weights.buffers[f"{s.prefix}.running_mean"], weights.buffers[f"{s.prefix}.running_var"],
                training=training)
            if buffers_out is not None:
                buffers_out[f"{s.prefix}.running_mean"] = mean
                buffers_out[f"{s.prefix}.running_var"] = var
        elif s.op == "relu":
            x = T.relu(x)
        elif s.op == "pad":
            x = T.pad2d(x, *s.extra)
        elif s.op == "pool":
            x = T.pool2d(x, s.mode, s.window, s.stride)
        elif s.op == "flatten":
            x = T.flatten(x)
        elif s.op == "fc":
            bias = p.get(f"{s.prefix}.bias", _zero_bias(s.out_shape[0]))
            x = T.fully_connected_forward(x, p[f"{s.prefix}.weights"], bias)
    return x


def forward(spec: ModelSpec, weights: ModelWeights, batch) -> np.ndarray:
    """Inference-mode logits of shape ``(N, output_units)``."""
    return _run(spec, weights, _check_batch(spec, batch), training=False)


@dataclass
class Tape:
    inputs: list
    buffers: dict
    logits: np.ndarray


def forward_train(spec, weights, batch) -> Tape:
    """Training-mode forward pass that records every step input for :func:`backward`.

    ``tape.buffers`` holds the updated batch-norm running statistics.
    """
    inputs: list = []
    buffers: dict = {}
    logits = _run(spec, weights, _check_batch(spec, batch), training=True, tape=inputs, buffers_out=buffers)
    return Tape(inputs, buffers, logits)


def backward(spec, weights, tape: Tape, dlogits) -> dict[str, np.ndarray]:
    """Gradients of the loss w.r.t. every trainable parameter, given ``dL/dlogits``."""
    p = weights.params
    grads: dict[str, np.ndarray] = {}
    g = np.asarray(dlogits, np.float32)
    for s, x in zip(reversed(plan(spec)), reversed(tape.inputs)):
        if s.op == "conv":
            bias = p.get(f"{s.prefix}.bias", _zero_bias(s.out_shape[0]))
            r = T.conv2d_backward(x, p[f"{s.prefix}.kernels"], bias, s.stride, s.padding, g)
            grads[f"{s.prefix}.kernels"] = r.param_grads["kernels"]
            if s.bias:
                grads[f"{s.prefix}.bias"] = r.param_grads["bias"]
        elif s.op == "dw":
            r = T.depthwise_conv2d_backward(x, p[f"{s.prefix}.kernels"], _zero_bias(s.in_shape[0]),
                                            s.stride, s.padding, g)
            grads[f"{s.prefix}.kernels"] = r.param_grads["kernels"]
        elif s.op == "pw":
            r = T.pointwise_conv2d_backward(x, p[f"{s.prefix}.kernels"], _zero_bias(s.out_shape[0]), g)
            grads[f"{s.prefix}.kernels"] = r.param_grads["kernels"]
        elif s.op == "bn":
            r = T.batchnorm_backward(x, p[f"{s.prefix}.gamma"], p[f"{s.prefix}.beta"],
                                     weights.buffers[f"{s.prefix}.running_mean"],
                                     weights.buffers[f"{s.prefix}.running_var"], g, training=True)
            grads[f"{s.prefix}.gamma"] = r.param_grads["gamma"]
            grads[f"{s.prefix}.beta"] = r.param_grads["beta"]
        elif s.op == "relu":
            r = T.relu_backward(x, g)
        elif s.op == "pad":
            r = T.pad2d_backward(x, *s.extra, g)
        elif s.op == "pool":
            r = T.pool2d_backward(x, s.mode, s.window, s.stride, g)
        elif s.op == "flatten":
            g = g.reshape(x.shape)
            continue
        elif s.op == "fc":
            bias = p.get(f"{s.prefix}.bias", _zero_bias(s.out_shape[0]))
            r = T.fully_connected_backward(x, p[f"{s.prefix}.weights"], bias, g)
            grads[f"{s.prefix}.weights"] = r.param_grads["weights"]
            if s.bias:
                grads[f"{s.prefix}.bias"] = r.param_grads["bias"]
        g = r.input_grad
    return {name: grads[name] for name in p}


def head_probabilities(spec, logits):
    """Map logits ``(N, units)`` to class probabilities ``(N, K)``."""
    logits = np.atleast_2d(np.asarray(logits, np.float64))
    if spec.head == "sigmoid":
        p1 = T.sigmoid(logits[:, 0])
        return np.stack([1 - p1, p1], axis=1)
    return T.softmax(logits)


def decide(spec, logits):
    """Class indices (ties go to the lowest index) and probabilities."""
    probs = head_probabilities(spec, logits)
    return np.argmax(probs, axis=1), probs


def predict(spec, weights, image_tensor):
    """Label and probability vector for a single ``1 x C x H x W`` image tensor."""
    x = np.asarray(image_tensor)
    if x.ndim == 3:
        x = x[None]
    if x.shape[0] != 1:
        raise DimensionError(f"predict takes one image, got batch of {x.shape[0]}", axis="batch")
    idx, probs = decide(spec, forward(spec, weights, x))
    return spec.class_labels[int(idx[0])], probs[0]


# -- cost accounting --------------------------------------------------------------------

@dataclass(frozen=True)
class LayerCost:
    index: int
    kind: str
    weights: int
    bias: int = 0
    bn: int = 0

    @property
    def total(self):
        return self.weights + self.bias + self.bn


@dataclass(frozen=True)
class CostReport:
    layers: tuple[LayerCost, ...]

    @property
    def total(self):
        return sum(layer.total for layer in self.layers)

    @property
    def weights(self):
        return sum(layer.weights for layer in self.layers)


def _layer_geometry(spec):
    """Per-layer (kind, c_in, c_out, k, out_h, out_w, in_dim, units)."""
    geo = {}
    for s in plan(spec):
        layer = spec.layers[s.layer]
        if s.op in ("conv", "dw"):
            geo[s.layer] = dict(c_in=s.in_shape[0], k=layer.kernel, oh=s.out_shape[1], ow=s.out_shape[2])
        if s.op in ("conv", "pw"):
            geo[s.layer]["c_out"] = s.out_shape[0]
        if s.op == "fc":
            geo[s.layer] = dict(d=s.in_shape[0], m=s.out_shape[0])
    return geo


def count_params(spec: ModelSpec) -> CostReport:
    """Trainable parameter counts per layer.

    Standard conv: ``k*k*C_in*C_out`` weights. Separable block:
    ``k*k*C_in + C_in*C_out`` weights plus ``2*C_in + 2*C_out`` BN scale/shift.
    Running statistics are buffers and are not counted.
    """
    geo = _layer_geometry(spec)
    out = []
    for i, layer in enumerate(spec.layers):
        g = geo.get(i)
        if layer.kind == "conv":
            w = g["k"] ** 2 * g["c_in"] * g["c_out"]
            out.append(LayerCost(i, layer.kind, w, g["c_out"] if layer.uses_bias else 0,
                                 2 * g["c_out"] if layer.has_bn else 0))
        elif layer.kind == "sep":
            w = g["k"] ** 2 * g["c_in"] + g["c_in"] * g["c_out"]
            out.append(LayerCost(i, layer.kind, w, 0, 2 * g["c_in"] + 2 * g["c_out"]))
        elif layer.kind == "fc":
            out.append(LayerCost(i, layer.kind, g["d"] * g["m"], g["m"] if layer.bias else 0))
        else:
            out.append(LayerCost(i, layer.kind, 0))
    return CostReport(tuple(out))


def count_flops(spec: ModelSpec) -> CostReport:
    """Multiply-accumulate counts per layer (reported in the ``weights`` field).

    Standard conv: ``k*k*C_in*C_out*H'*W'``; separable block:
    ``(k*k*C_in + C_in*C_out)*H'*W'``; FC: ``D*M``. Pooling, BN and ReLU count 0.
    """
    geo = _layer_geometry(spec)
    out = []
    for i, layer in enumerate(spec.layers):
        g = geo.get(i)
        if layer.kind == "conv":
            macs = g["k"] ** 2 * g["c_in"] * g["c_out"] * g["oh"] * g["ow"]
        elif layer.kind == "sep":
            macs = (g["k"] ** 2 * g["c_in"] + g["c_in"] * g["c_out"]) * g["oh"] * g["ow"]
        elif layer.kind == "fc":
            macs = g["d"] * g["m"]
        else:
            macs = 0
        out.append(LayerCost(i, layer.kind, macs))
    return CostReport(tuple(out))


# -- reference architectures ---------------------------------------------------------------

# (nominal channels, stride) of the separable blocks in MobileNetV1
_MOBILENET_V1_BLOCKS = ((64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
                        (512, 1), (512, 1), (512, 1), (512, 1), (512, 1), (1024, 2), (1024, 1))


def mobilenet_v1_spec(class_labels, input_hw=(224, 224), width_multiplier=1.0, head="softmax",
                      blocks=_MOBILENET_V1_BLOCKS):
    """Stride-2 3x3 stem, separable blocks, global average pool, one FC head."""
    labels = tuple(class_labels)
    units = 1 if head == "sigmoid" else len(labels)
    layers = [LayerSpec("conv", channels=32, kernel=3, stride=2)]
    layers += [LayerSpec("sep", channels=c, kernel=3, stride=s) for c, s in blocks]
    layers += [LayerSpec("avgpool", window=None), LayerSpec("flatten"),
               LayerSpec("fc", units=units)]
    return ModelSpec(tuple(layers), labels, (3, *input_hw), width_multiplier, head)


def tiny_spec(class_labels, input_hw=(32, 32), width_multiplier=0.25, head="softmax"):
    """Desk-scale variant: the first five MobileNetV1 blocks."""
    return mobilenet_v1_spec(class_labels, input_hw, width_multiplier, head,
                             blocks=((64, 1), (128, 2), (128, 1), (256, 2), (256, 1)))


# -- config text -------------------------------------------------------------------------

_MODEL_KEYS = {"input_channels", "input_height", "input_width", "width_multiplier", "head", "classes"}


def _render_layer(layer: LayerSpec) -> str:
    if layer.kind in ("conv", "sep"):
        parts = [layer.kind, f"c={layer.channels}", f"k={layer.kernel}", f"s={layer.stride or 1}"]
        if layer.padding is not None:
            parts.append(f"p={layer.padding}")
        if layer.kind == "conv":
            parts += [f"bn={int(layer.has_bn)}", f"bias={int(layer.uses_bias)}", f"act={layer.activation}"]
        return " ".join(parts)
    if layer.kind in ("maxpool", "avgpool"):
        parts = [layer.kind, "w=global" if layer.window is None else f"w={layer.window}"]
        if layer.stride is not None:
            parts.append(f"s={layer.stride}")
        return " ".join(parts)
    if layer.kind == "flatten":
        return "flatten"
    parts = ["fc", f"units={layer.units}"]
    if layer.in_features is not None:
        parts.append(f"in={layer.in_features}")
    parts += [f"bias={int(layer.bias)}", f"act={layer.activation}"]
    return " ".join(parts)


def _parse_layer(text, index):
    tokens = text.split()
    if not tokens or tokens[0] not in LAYER_KINDS:
        raise ConfigurationError(f"layer.{index}: unknown layer kind in {text!r}")
    kind = tokens[0]
    opts = {}
    for tok in tokens[1:]:
        if "=" not in tok:
            raise ConfigurationError(f"layer.{index}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        opts[k] = v
    allowed = {"conv": {"c", "k", "s", "p", "bn", "bias", "act"}, "sep": {"c", "k", "s", "p"},
               "maxpool": {"w", "s"}, "avgpool": {"w", "s"}, "flatten": set(),
               "fc": {"units", "in", "bias", "act"}}[kind]
    bad = set(opts) - allowed
    if bad:
        raise ConfigurationError(f"layer.{index}: unknown option(s) {sorted(bad)} for {kind}")

    def num(key, default=None):
        if key not in opts:
            return default
        try:
            return int(opts[key])
        except ValueError:
            raise ConfigurationError(f"layer.{index}: {key} must be an integer, got {opts[key]!r}") from None

    if kind == "conv":
        has_bn = bool(num("bn", 1))
        return LayerSpec(kind, channels=num("c", 0), kernel=num("k", 3), stride=num("s", 1), padding=num("p"),
                         has_bn=has_bn, bias=bool(num("bias", 0 if has_bn else 1)),
                         activation=opts.get("act", "relu"))
    if kind == "sep":
        return LayerSpec(kind, channels=num("c", 0), kernel=num("k", 3), stride=num("s", 1), padding=num("p"))
    if kind in ("maxpool", "avgpool"):
        window = None if opts.get("w") == "global" else num("w", 2)
        return LayerSpec(kind, window=window, stride=num("s"))
    if kind == "flatten":
        return LayerSpec(kind)
    return LayerSpec(kind, units=num("units", 0), in_features=num("in"),
                     bias=bool(num("bias", 1)), activation=opts.get("act", "none"))


def spec_items(spec: ModelSpec) -> list[tuple[str, str]]:
    c, h, w = spec.input_shape
    items = [("input_channels", str(c)), ("input_height", str(h)), ("input_width", str(w)),
             ("width_multiplier", repr(float(spec.width_multiplier))), ("head", spec.head),
             ("classes", ",".join(spec.class_labels))]
    items += [(f"layer.{i}", _render_layer(layer)) for i, layer in enumerate(spec.layers)]
    return items


def render_spec(spec: ModelSpec, extra=()) -> str:
    """Canonical config text for ``spec``; ``extra`` pairs are appended verbatim."""
    return configtext.render(spec_items(spec) + list(extra))


def spec_from_config(cfg: dict, strict=True) -> ModelSpec:
    """Build a :class:`ModelSpec` from parsed config text (see :func:`render_spec`)."""
    layer_keys = sorted((k for k in cfg if k.startswith("layer.")), key=lambda k: int(k.split(".", 1)[1])
                        if k.split(".", 1)[1].isdigit() else -1)
    if strict:
        configtext.check_known({k: v for k, v in cfg.items() if not k.startswith("layer.")},
                               _MODEL_KEYS, "model config")
    indices = []
    for k in layer_keys:
        suffix = k.split(".", 1)[1]
        if not suffix.isdigit():
            raise ConfigurationError(f"bad layer key {k!r}")
        indices.append(int(suffix))
    if indices != list(range(len(indices))):
        raise ConfigurationError(f"layer keys must be layer.0 .. layer.{len(indices) - 1} without gaps")
    if "classes" not in cfg:
        raise ConfigurationError("model config: missing required key 'classes'")
    labels = tuple(x.strip() for x in cfg["classes"].split(",") if x.strip())
    head = cfg.get("head", "softmax")
    layers = [_parse_layer(cfg[k], i) for i, k in enumerate(layer_keys)]
    if layers and layers[-1].kind == "fc" and layers[-1].units == 0:
        layers[-1] = replace(layers[-1], units=1 if head == "sigmoid" else len(labels))
    spec = ModelSpec(
        layers=tuple(layers),
        class_labels=labels,
        input_shape=(configtext.get_int(cfg, "input_channels", 3),
                     configtext.get_int(cfg, "input_height", 224),
                     configtext.get_int(cfg, "input_width", 224)),
        width_multiplier=configtext.get_float(cfg, "width_multiplier", 1.0),
        head=head,
    )
    plan(spec)
    return spec


def parse_spec(text: str, strict=True) -> ModelSpec:
    return spec_from_config(configtext.parse(text), strict=strict)


def with_input_size(spec, height, width):
    """Same stack at a different input resolution (re-validated)."""
    new = replace(spec, input_shape=(spec.input_shape[0], height, width))
    plan(new)
    return new
