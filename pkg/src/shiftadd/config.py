"""Architecture and experiment config files (YAML or JSON key-value documents).

Architecture schema::

    input_shape: [1, 12, 12]      # C, H, W
    classes: 3
    layers:                       # kinds: shiftadd, shift_only, add_only, mult_conv,
      - {kind: shiftadd, out_channels: 8, kernel: 3, stride: 1}
      - {kind: relu}              #        batchnorm, relu, avgpool, linear_shiftadd
      - {kind: avgpool}
      - {kind: linear_shiftadd, out_channels: 3}
    shift: {p_min: -7, nonzero_fraction: 0.5, mode: learnable, update_threshold: 0.5, prune_ratio: 0.0}
    add: {prune_ratio: 0.0, prune_policy: magnitude, init_std: 1.0}

Experiment configs may carry ``arch`` (inline mapping or path), ``data``,
``train`` (TrainConfig fields) and the global flags ``seed``,
``precision`` and ``platform``.
"""
import copy
import json
from pathlib import Path

import yaml

from .errors import ConfigError
from .network import ArchSpec


def load_mapping(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a key-value mapping")
    return data


def load_arch(source):
    """Accept an ``ArchSpec``, a mapping, a file path or a zoo name."""
    if isinstance(source, ArchSpec):
        return source
    if isinstance(source, dict):
        return ArchSpec.from_dict(source)
    if str(source) in ZOO:
        return ArchSpec.from_dict(zoo(str(source)))
    return ArchSpec.from_dict(load_mapping(source))


def shiftadd_stack(input_shape=(1, 12, 12), classes=3, widths=(8, 16, 16), strides=(1, 2, 2), block="shiftadd",
                   shift=None, add=None):
    """Small residual-free CNN: ``len(widths)`` blocks, global pooling and a 1x1 head of the same family."""
    layers = []
    for w, s in zip(widths, strides):
        layers += [{"kind": block, "out_channels": w, "kernel": 3, "stride": s}, {"kind": "relu"}]
    layers.append({"kind": "avgpool"})
    head = "linear_shiftadd" if block == "shiftadd" else block
    layers.append({"kind": head, "out_channels": classes, "kernel": 1})
    return {"input_shape": list(input_shape), "classes": classes, "layers": layers,
            "shift": dict(shift or {}), "add": dict(add or {})}


ZOO = {
    "shiftadd3": lambda: shiftadd_stack(),
    "addonly3": lambda: shiftadd_stack(block="add_only"),
    "shiftonly3": lambda: shiftadd_stack(block="shift_only"),
    "conv3": lambda: shiftadd_stack(block="mult_conv"),
}


def zoo(name):
    try:
        return copy.deepcopy(ZOO[name]())
    except KeyError:
        raise ConfigError(f"unknown architecture {name!r}; zoo has {sorted(ZOO)}") from None
