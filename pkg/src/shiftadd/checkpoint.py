"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic     8 bytes  b"SHADDCK\\x00"
    version   u32
    count     u32      number of records
    record*   name_len u16, name utf-8, kind u8 (0 array, 1 json), body
              array body: dtype_len u8, dtype str (numpy, e.g. "<f8"), ndim u8,
                          dims u64 * ndim, nbytes u64, raw C-order bytes
              json body:  nbytes u64, utf-8 JSON text
    digest    32 bytes sha256 of everything before it

The ``meta`` JSON record carries the architecture, train config, epoch,
model seed/precision, shuffling RNG state, per-layer scalar state and the
TrainRecord. Arrays are named ``L<i>.<field>`` (layer state) and
``V<i>.<param>`` (momentum buffers).
"""
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IntegrityError
from .network import ArchSpec, build_model
from .train import TrainConfig, Trainer, TrainRecord

MAGIC = b"SHADDCK\x00"
VERSION = 1
_ARRAY, _JSON = 0, 1


def _layer_arrays(layer):
    k = layer.kind
    if k == "shift":
        w = layer.weights
        return {"signs": w.signs, "exponents": w.exponents, "latent_sign": w.latent_sign}
    if k == "add":
        return {"weights": layer.weights.weights, "mask": layer.weights.mask}
    if k == "mult":
        return {"weight": layer.weight}
    if k == "batchnorm":
        return {"gamma": layer.gamma, "beta": layer.beta, "running_mean": layer.running_mean,
                "running_var": layer.running_var}
    return {}


def _layer_scalars(layer):
    if layer.kind == "shift":
        w = layer.weights
        return {"kind": "shift", "p_min": int(w.p_min), "deadzone": float(w.deadzone), "frozen": bool(w.frozen)}
    return {"kind": layer.kind}


def _encode(records):
    out = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name, value in records:
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb)
        if isinstance(value, np.ndarray):
            arr = np.ascontiguousarray(value)
            dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
            arr = arr.astype(dt, copy=False)
            ds = dt.str.encode()
            raw = arr.tobytes()
            out.append(struct.pack("<BB", _ARRAY, len(ds)) + ds + struct.pack("<B", arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) + struct.pack("<Q", len(raw)) + raw)
        else:
            raw = json.dumps(value, sort_keys=True).encode()
            out.append(struct.pack("<BQ", _JSON, len(raw)) + raw)
    body = b"".join(out)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise IntegrityError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _decode(buf):
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise IntegrityError("not a checkpoint file (bad magic bytes)")
    if len(buf) < len(MAGIC) + 8 + 32:
        raise IntegrityError("checkpoint truncated")
    body, digest = buf[:-32], buf[-32:]
    r = _Reader(body)
    r.take(len(MAGIC))
    version, count = r.unpack("<II")
    if version != VERSION:
        raise IntegrityError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("checkpoint digest mismatch (file corrupt or truncated)")
    records = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (kind,) = r.unpack("<B")
        if kind == _ARRAY:
            (dlen,) = r.unpack("<B")
            dtype = np.dtype(r.take(dlen).decode())
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}Q")
            (nbytes,) = r.unpack("<Q")
            records[name] = np.frombuffer(r.take(nbytes), dtype=dtype).reshape(shape).copy()
        elif kind == _JSON:
            (nbytes,) = r.unpack("<Q")
            records[name] = json.loads(r.take(nbytes).decode())
        else:
            raise IntegrityError(f"unknown record kind {kind} for {name!r}")
    if r.pos != len(body):
        raise IntegrityError("trailing bytes after last record")
    return records


@dataclass
class Checkpoint:
    model: object
    trainer: object | None
    config: TrainConfig | None
    record: TrainRecord | None
    epoch: int


def save_checkpoint(path, model, trainer=None):
    """Write ``model`` (and, if given, the full ``trainer`` state) to ``path``."""
    meta = {"arch": model.arch.to_dict(), "model_seed": int(model.seed), "precision": model.precision,
            "version": int(model.version), "layers": [_layer_scalars(l) for l in model.layers]}
    records = []
    for i, layer in enumerate(model.layers):
        records += [(f"L{i}.{k}", v) for k, v in _layer_arrays(layer).items()]
    if trainer is not None:
        meta["train_config"] = trainer.cfg.to_dict()
        meta["epoch"] = trainer.epoch
        meta["rng_state"] = trainer.rng.bit_generator.state
        meta["shift_threshold"] = trainer.shift_threshold
        meta["record"] = {"meta": trainer.record.meta, "epochs": trainer.record.epochs}
        meta["velocity"] = sorted([i, name] for (i, name) in trainer.velocity)
        records += [(f"V{i}.{name}", v) for (i, name), v in sorted(trainer.velocity.items())]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(_encode([("meta", meta)] + records))
    tmp.replace(path)
    return path


def load_checkpoint(path):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IntegrityError(f"cannot read checkpoint {path}: {exc}") from None
    rec = _decode(buf)
    meta = rec.get("meta")
    if not isinstance(meta, dict):
        raise IntegrityError("checkpoint has no meta record")
    try:
        model = build_model(ArchSpec.from_dict(meta["arch"]), seed=meta["model_seed"], precision=meta["precision"])
        if len(model.layers) != len(meta["layers"]):
            raise IntegrityError("layer count does not match the stored architecture")
        for i, (layer, scal) in enumerate(zip(model.layers, meta["layers"])):
            if layer.kind != scal["kind"]:
                raise IntegrityError(f"layer {i} kind {layer.kind} != stored {scal['kind']}")
            arrays = {k: rec[f"L{i}.{k}"] for k in _layer_arrays(layer)}
            _restore_layer(layer, arrays, scal)
        model.version = meta["version"]
        trainer = cfg = record = None
        epoch = 0
        if "train_config" in meta:
            cfg = TrainConfig.from_dict(meta["train_config"])
            trainer = Trainer(model, cfg)
            trainer.epoch = epoch = meta["epoch"]
            trainer.rng.bit_generator.state = meta["rng_state"]
            trainer.shift_threshold = meta["shift_threshold"]
            record = trainer.record = TrainRecord(epochs=meta["record"]["epochs"], meta=meta["record"]["meta"])
            trainer.velocity = {(i, name): rec[f"V{i}.{name}"] for i, name in meta["velocity"]}
            # Trainer() re-applies precision and freezing; restore the stored flags exactly
            for layer, scal in zip(model.layers, meta["layers"]):
                if layer.kind == "shift":
                    layer.weights.frozen = scal["frozen"]
    except (KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"checkpoint is missing or has malformed state: {exc!r}") from None
    return Checkpoint(model, trainer, cfg, record, epoch)


def _restore_layer(layer, arrays, scal):
    for name, arr in arrays.items():
        if layer.kind in ("shift", "add"):
            cur = getattr(layer.weights, name)
        else:
            cur = getattr(layer, name)
        if cur.shape != arr.shape or cur.dtype != arr.dtype:
            raise IntegrityError(f"{layer.kind} field {name}: stored {arr.dtype}{arr.shape} != {cur.dtype}{cur.shape}")
        if layer.kind in ("shift", "add"):
            setattr(layer.weights, name, arr)
        else:
            setattr(layer, name, arr)
    if layer.kind == "shift":
        layer.weights.p_min = scal["p_min"]
        layer.weights.deadzone = scal["deadzone"]
        layer.weights.frozen = scal["frozen"]
