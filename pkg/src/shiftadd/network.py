"""Layers and models built from shift/add blocks.

A ``shiftadd`` block expands to shift -> BN -> add -> BN. The add sub-layer
takes the shift layer's output channels as input channels, reuses its
kernel size, runs at stride 1 and pads to keep the spatial size. Batch
normalization follows every shift and add sub-layer.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .add import AddWeights, add_backward, add_forward, add_forward_strided, add_init, add_prune
from .errors import ConfigError, GeometryError, StaleCacheError
from .quant import fake_quantize, precision_bits
from .shift import ShiftInitConfig, shift_backward, shift_forward, shift_init, shift_prune
from .tensor import ConvGeometry, pad_input

KINDS = ("shiftadd", "shift_only", "add_only", "mult_conv", "batchnorm", "relu", "avgpool", "linear_shiftadd")


@dataclass
class LayerSpec:
    kind: str
    out_channels: int | None = None
    kernel: int = 3
    stride: int = 1
    padding: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}; choose from {KINDS}")


@dataclass
class ArchSpec:
    input_shape: tuple
    classes: int
    layers: list
    shift: dict = field(default_factory=dict)
    add: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "classes": self.classes,
            "layers": [{k: v for k, v in vars(l).items() if v is not None} for l in self.layers],
            "shift": dict(self.shift),
            "add": dict(self.add),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in d["layers"]]
            return cls(tuple(d["input_shape"]), int(d["classes"]), layers, dict(d.get("shift", {})),
                       dict(d.get("add", {})))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed architecture: {exc}") from None


# ---------------------------------------------------------------- layers


class ShiftConv:
    kind = "shift"

    def __init__(self, geom, weights):
        self.geom = geom
        self.weights = weights

    def forward(self, x, ctx, train, bits):
        ctx["x"] = fake_quantize(x, bits)
        return shift_forward(x, self.weights, self.geom, bits=bits)

    def backward(self, g, ctx, bits):
        g = fake_quantize(g, bits)
        gp, gs, gx = shift_backward(ctx["x"], self.weights, g, self.geom, need_weight_grad=not self.weights.frozen)
        grads = {} if gp is None else {"p": fake_quantize(gp, bits), "s": fake_quantize(gs, bits)}
        return fake_quantize(gx, bits), grads

    def params(self):
        return {}


class AddConv:
    kind = "add"

    def __init__(self, geom, weights, strided=False):
        self.geom = geom
        self.weights = weights
        self.strided = strided

    def forward(self, x, ctx, train, bits):
        ctx["x"] = fake_quantize(x, bits)
        ctx["w"] = AddWeights(fake_quantize(self.weights.weights, bits), self.weights.mask)
        fwd = add_forward_strided if self.strided else add_forward
        return fwd(x, self.weights, self.geom, bits=bits)

    def backward(self, g, ctx, bits):
        g = fake_quantize(g, bits)
        gw, gx = add_backward(ctx["x"], ctx["w"], g, self.geom)
        return fake_quantize(gx, bits), {"weight": fake_quantize(gw, bits)}

    def params(self):
        return {"weight": self.weights.weights}


class MultConv:
    kind = "mult"

    def __init__(self, geom, weight):
        self.geom = geom
        self.weight = weight

    def forward(self, x, ctx, train, bits):
        xq = fake_quantize(x, bits)
        wq = fake_quantize(self.weight, bits)
        ctx["x"], ctx["w"] = xq, wq
        g = self.geom
        return kernels.conv_forward(pad_input(xq, g.padding), wq, g.stride, g.output_rows, g.output_cols)

    def backward(self, g, ctx, bits):
        g = fake_quantize(g, bits)
        geo = self.geom
        xp = pad_input(ctx["x"], geo.padding)
        gw = kernels.conv_weight_grad(xp, g, geo.stride, geo.kernel_rows, geo.kernel_cols)
        gxp = kernels.conv_input_grad(g, ctx["w"], geo.stride, xp.shape[2], xp.shape[3])
        p = geo.padding
        gx = np.ascontiguousarray(gxp[:, :, p : p + geo.in_rows, p : p + geo.in_cols])
        return fake_quantize(gx, bits), {"weight": fake_quantize(gw, bits)}

    def params(self):
        return {"weight": self.weight}


class BatchNorm:
    kind = "batchnorm"

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def forward(self, x, ctx, train, bits):
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = x.shape[0] * x.shape[2] * x.shape[3]
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var * m / max(m - 1, 1)
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        ctx["xhat"], ctx["inv"], ctx["train"] = xhat, inv, train
        return self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]

    def backward(self, g, ctx, bits):
        xhat, inv = ctx["xhat"], ctx["inv"]
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        gh = g * self.gamma[None, :, None, None]
        if ctx["train"]:
            m = g.shape[0] * g.shape[2] * g.shape[3]
            gx = (inv[None, :, None, None] / m) * (
                m * gh - gh.sum(axis=(0, 2, 3))[None, :, None, None]
                - xhat * (gh * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
            )
        else:
            gx = gh * inv[None, :, None, None]
        return gx, {"gamma": dgamma, "beta": dbeta}

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class ReLU:
    kind = "relu"

    def forward(self, x, ctx, train, bits):
        ctx["mask"] = x > 0
        # maximum (unlike a mask) lets NaN through so divergence is caught downstream
        return np.maximum(x, 0.0)

    def backward(self, g, ctx, bits):
        return np.where(ctx["mask"], g, 0.0), {}

    def params(self):
        return {}


class GlobalAvgPool:
    kind = "avgpool"

    def forward(self, x, ctx, train, bits):
        ctx["hw"] = x.shape[2:]
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, g, ctx, bits):
        h, w = ctx["hw"]
        return np.broadcast_to(g / (h * w), g.shape[:2] + (h, w)).copy(), {}

    def params(self):
        return {}


# ---------------------------------------------------------------- model


class GradStore(dict):
    """Gradients keyed by ``(layer_index, name)``; ``input`` holds d loss / d batch."""

    input = None


@dataclass
class Cache:
    version: int
    batch_shape: tuple
    contexts: list


class Model:
    def __init__(self, arch, layers, shapes, precision="fp32", seed=0):
        self.arch = arch
        self.layers = layers
        self.shapes = shapes  # per-layer output shape (C, H, W)
        self.precision = precision
        self.bits = precision_bits(precision)
        self.seed = seed
        self.version = 0
        self.training = True

    @property
    def input_shape(self):
        return tuple(self.arch.input_shape)

    @property
    def classes(self):
        return self.arch.classes

    def set_precision(self, precision):
        self.bits = precision_bits(precision)
        self.precision = precision

    def layers_of(self, *kinds):
        return [(i, l) for i, l in enumerate(self.layers) if l.kind in kinds]

    def parameters(self):
        """Yield ``(layer_index, name, array)`` for every real-valued trainable array."""
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                yield i, name, arr

    def bump(self):
        self.version += 1

    def param_count(self, include_aux=False):
        """Kernel weights of shift/add/mult layers (plus BN affine terms with ``include_aux``)."""
        n = 0
        for layer in self.layers:
            if layer.kind in ("shift", "add"):
                n += layer.weights.signs.size if layer.kind == "shift" else layer.weights.weights.size
            elif layer.kind == "mult":
                n += layer.weight.size
            elif include_aux and layer.kind == "batchnorm":
                n += 2 * layer.channels
        return n

    def param_bytes(self, precision=None):
        bits = precision_bits(precision or self.precision) or 32
        return self.param_count() * bits / 8

    def summary(self):
        lines = [f"input {self.input_shape}  precision {self.precision}  seed {self.seed}"]
        for i, (layer, shape) in enumerate(zip(self.layers, self.shapes)):
            extra = ""
            geom = getattr(layer, "geom", None)
            if geom is not None:
                extra = (f" {geom.in_channels}->{geom.out_channels} k{geom.kernel_rows}x{geom.kernel_cols}"
                         f" s{geom.stride} p{geom.padding}")
            if layer.kind == "shift":
                w = layer.weights
                extra += f" nonzero {w.nonzero}/{w.signs.size} p_min {w.p_min}{' frozen' if w.frozen else ''}"
            elif layer.kind == "add":
                extra += f" active {layer.weights.active}/{layer.weights.weights.size}"
            lines.append(f"{i:3d} {layer.kind:<9} -> {tuple(shape)}{extra}")
        lines.append(f"kernel parameters {self.param_count()}  (with norm {self.param_count(True)})")
        return "\n".join(lines)


def _shift_cfg(arch, rng_seed):
    s = arch.shift
    return ShiftInitConfig(p_min=int(s.get("p_min", -7)), nonzero_fraction=float(s.get("nonzero_fraction", 0.5)),
                           mode=s.get("mode", "learnable"), rng_seed=int(rng_seed))


def build_model(arch, seed=0, precision="fp32"):
    """Instantiate every layer of ``arch`` with parameters drawn from ``seed``."""
    if not isinstance(arch, ArchSpec):
        arch = ArchSpec.from_dict(arch)
    if not arch.layers:
        raise ConfigError("architecture has no layers")
    seeds = np.random.SeedSequence(seed).spawn(len(arch.layers))
    add_std = float(arch.add.get("init_std", 1.0))
    shift_prune_ratio = float(arch.shift.get("prune_ratio", 0.0))
    add_prune_ratio = float(arch.add.get("prune_ratio", 0.0))
    add_policy = arch.add.get("prune_policy", "magnitude")
    layers, shapes = [], []
    C, H, W = arch.input_shape
    for i, spec in enumerate(arch.layers):
        ss = seeds[i]
        rng = np.random.default_rng(ss)
        sub_seed = int(ss.generate_state(1)[0])
        try:
            new = _expand(spec, arch, C, H, W, rng, sub_seed, add_std)
        except GeometryError as exc:
            raise GeometryError(f"layer {i} ({spec.kind}): {exc}") from None
        for layer in new:
            if layer.kind == "shift" and shift_prune_ratio:
                layer.weights = shift_prune(layer.weights, shift_prune_ratio, sub_seed + 1)
            if layer.kind == "add" and add_prune_ratio:
                layer.weights = add_prune(layer.weights, add_prune_ratio, add_policy, sub_seed + 2)
            if hasattr(layer, "geom"):
                C, H, W = layer.geom.output_shape
            elif layer.kind == "avgpool":
                H, W = 1, 1
            layers.append(layer)
            shapes.append((C, H, W))
    if (C, H, W) != (arch.classes, 1, 1):
        raise GeometryError(f"final output {(C, H, W)} must be ({arch.classes}, 1, 1) to form logits")
    return Model(arch, layers, shapes, precision, seed)


def _expand(spec, arch, C, H, W, rng, sub_seed, add_std):
    kind = spec.kind
    if kind == "relu":
        return [ReLU()]
    if kind == "avgpool":
        return [GlobalAvgPool()]
    if kind == "batchnorm":
        return [BatchNorm(C)]
    out = spec.out_channels
    if out is None or out < 1:
        raise GeometryError(f"{kind} needs out_channels")
    k = 1 if kind == "linear_shiftadd" else spec.kernel
    pad = spec.padding if spec.padding is not None else k // 2
    stride = 1 if kind == "linear_shiftadd" else spec.stride
    if kind == "linear_shiftadd" and (H, W) != (1, 1):
        raise GeometryError(f"linear_shiftadd expects pooled 1x1 features, got {H}x{W}")
    geom = ConvGeometry(C, out, k, k, stride, pad, H, W)
    if kind == "mult_conv":
        fan_in = geom.terms_per_output
        return [MultConv(geom, rng.normal(0, np.sqrt(2.0 / fan_in), size=geom.filter_shape)), BatchNorm(out)]
    if kind == "add_only":
        return [AddConv(geom, add_init(geom, rng, add_std), strided=True), BatchNorm(out)]
    shift = ShiftConv(geom, shift_init(geom, _shift_cfg(arch, sub_seed)))
    if kind == "shift_only":
        return [shift, BatchNorm(out)]
    if k % 2 == 0:
        raise GeometryError("shiftadd blocks need an odd kernel so the add layer can keep the spatial size")
    E, F = geom.output_rows, geom.output_cols
    add_geom = ConvGeometry(out, out, k, k, 1, k // 2, E, F)
    return [shift, BatchNorm(out), AddConv(add_geom, add_init(add_geom, rng, add_std)), BatchNorm(out)]


def model_forward(m, batch, train=True):
    """Run ``batch`` ``(N, C, H, W)`` through the model; returns ``(logits, cache)``."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != m.input_shape:
        raise GeometryError(f"batch shape {x.shape} does not match model input {m.input_shape}")
    contexts = []
    for i, layer in enumerate(m.layers):
        ctx = {}
        try:
            x = layer.forward(x, ctx, train, m.bits)
        except GeometryError as exc:
            raise GeometryError(f"layer {i} ({layer.kind}): {exc}") from None
        contexts.append(ctx)
    return x.reshape(x.shape[0], -1), Cache(m.version, x.shape, contexts)


def model_backward(m, loss_grad, cache):
    """Backpropagate ``d loss / d logits``; frozen shift layers only pass the error through."""
    if cache.version != m.version or len(cache.contexts) != len(m.layers):
        raise StaleCacheError("activation cache does not belong to the current parameters")
    g = np.asarray(loss_grad, dtype=np.float64).reshape(cache.batch_shape)
    grads = GradStore()
    for i in range(len(m.layers) - 1, -1, -1):
        g, layer_grads = m.layers[i].backward(g, cache.contexts[i], m.bits)
        for name, arr in layer_grads.items():
            grads[(i, name)] = arr
    grads.input = g
    return grads


def cross_entropy_loss(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= k:
        raise ConfigError(f"labels must be {n} integers in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z - logsum[:, None]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n
