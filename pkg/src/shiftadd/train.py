"""Momentum-SGD training loop with step schedule, add-layer gradient scaling,
frozen-shift mode, pruning events and per-epoch energy accounting."""
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .add import add_prune
from .energy import training_energy
from .errors import ConfigError, DataError, NumericalError
from .network import cross_entropy_loss, model_backward, model_forward
from .shift import shift_prune, shift_update

log = logging.getLogger(__name__)

# energy format used for accounting when the arithmetic format has no table entry
ENERGY_FORMAT = {"fp32": "FIX32", "fix32": "FIX32", "fix16": "FIX32", "fix8": "FIX8"}


@dataclass
class PruneEvent:
    epoch: int
    target: str  # "shift" or "add"
    ratio: float
    policy: str = "magnitude"

    def __post_init__(self):
        if self.target not in ("shift", "add"):
            raise ConfigError(f"prune target must be 'shift' or 'add', got {self.target!r}")
        if not (0.0 <= self.ratio < 1.0):
            raise ConfigError(f"prune ratio must be in [0, 1), got {self.ratio}")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_drop_epochs: tuple | None = None
    precision: str = "fp32"
    freeze_shift: bool = False
    prune_schedule: tuple = ()
    seed: int = 0
    add_lr_eta: float = 0.1
    adaptive_eps: float = 1e-8
    shift_threshold: float = 0.5
    platform: str = "asic"
    energy_format: str | None = None

    def __post_init__(self):
        self.prune_schedule = tuple(e if isinstance(e, PruneEvent) else PruneEvent(**e)
                                    for e in self.prune_schedule)
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        drops = self.drop_epochs
        if any(b <= a for a, b in zip(drops, drops[1:])) or any(d >= max(self.epochs, 1) for d in drops):
            raise ConfigError(f"lr_drop_epochs {drops} must be strictly increasing and below epochs")

    @property
    def drop_epochs(self):
        if self.lr_drop_epochs is not None:
            return tuple(int(d) for d in self.lr_drop_epochs)
        # 80 and 120 of 160 epochs, scaled to the run length
        drops = sorted({int(self.epochs * 80 / 160), int(self.epochs * 120 / 160)})
        return tuple(d for d in drops if 0 < d < self.epochs)

    @property
    def accounting_format(self):
        return self.energy_format or ENERGY_FORMAT[self.precision]

    def to_dict(self):
        d = asdict(self)
        d["prune_schedule"] = [asdict(e) for e in self.prune_schedule]
        d["lr_drop_epochs"] = None if self.lr_drop_epochs is None else list(self.lr_drop_epochs)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys {sorted(unknown)}")
        d = dict(d)
        if d.get("lr_drop_epochs") is not None:
            d["lr_drop_epochs"] = tuple(d["lr_drop_epochs"])
        return cls(**d)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class TrainRecord:
    epochs: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def deterministic_view(self):
        """Everything except wall-clock timings."""
        rows = [{k: v for k, v in row.items() if k != "wall_time"} for row in self.epochs]
        return {"meta": self.meta, "epochs": rows}

    def column(self, name):
        return [row[name] for row in self.epochs]

    def to_jsonl(self):
        """One JSON object per line: a ``meta`` line, then one line per epoch."""
        lines = [json.dumps({"meta": self.meta}, sort_keys=True)]
        lines += [json.dumps(row, sort_keys=True) for row in self.epochs]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text):
        rec = cls()
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"record line {n}: {exc}") from None
            if "meta" in obj and len(obj) == 1:
                rec.meta = obj["meta"]
            else:
                rec.epochs.append(obj)
        return rec

    @property
    def run_id(self):
        return self.meta.get("run_id", "")

    @property
    def final_test_accuracy(self):
        return self.epochs[-1]["test_acc"] if self.epochs else float("nan")


def lr_at(epoch, cfg):
    return cfg.base_lr * 10.0 ** -sum(1 for d in cfg.drop_epochs if d <= epoch)


def adaptive_add_lr(grad_w, k, global_lr, eps=1e-8):
    """``global_lr * sqrt(k) / (||grad_w||_2 + eps)``."""
    return global_lr * math.sqrt(k) / (float(np.linalg.norm(np.ravel(grad_w))) + eps)


def sgd_step(params, grads, state, lr, cfg):
    """In-place momentum SGD: ``v = m*v + g + wd*p``; ``p -= lr*v``.

    ``params``, ``grads`` and ``state`` are dicts keyed alike; missing
    momentum buffers start at zero.
    """
    for key, p in params.items():
        g = grads.get(key)
        if g is None:
            continue
        v = state.get(key)
        if v is None:
            v = np.zeros_like(p)
        v = cfg.momentum * v + g + cfg.weight_decay * p
        state[key] = v
        p -= lr * v
    return params, state


class Trainer:
    """Resumable training state: model, optimizer buffers, shuffling RNG, record."""

    def __init__(self, model, cfg):
        self.model = model
        self.cfg = cfg
        self.epoch = 0
        self.velocity = {}
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        # the architecture's shift.update_threshold, when given, overrides the config default
        self.shift_threshold = float(model.arch.shift.get("update_threshold", cfg.shift_threshold))
        self.record = TrainRecord(meta={"config_hash": cfg.digest(), "seed": cfg.seed, "model_seed": model.seed,
                                        "precision": cfg.precision, "energy_format": cfg.accounting_format,
                                        "platform": cfg.platform})
        model.set_precision(cfg.precision)
        if cfg.freeze_shift:
            for _, layer in model.layers_of("shift"):
                layer.weights.frozen = True

    @property
    def cumulative_energy(self):
        return self.record.epochs[-1]["energy_j"] if self.record.epochs else 0.0

    def _apply_pruning(self, epoch):
        for n, ev in enumerate(self.cfg.prune_schedule):
            if ev.epoch != epoch:
                continue
            seed = self.cfg.seed * 1000 + n
            for i, layer in self.model.layers_of(ev.target):
                if ev.target == "shift":
                    layer.weights = shift_prune(layer.weights, ev.ratio, seed + i)
                else:
                    layer.weights = add_prune(layer.weights, ev.ratio, ev.policy, seed + i)
            log.info("epoch %d: pruned %s layers by %.2f", epoch, ev.target, ev.ratio)
        self.model.bump()

    def step(self, images, labels, lr):
        m, cfg = self.model, self.cfg
        logits, cache = model_forward(m, images, train=True)
        loss, grad = cross_entropy_loss(logits, labels)
        if not np.isfinite(loss):
            raise NumericalError(f"loss is {loss}; first non-finite layer: {_first_bad_layer(m, cache)}")
        grads = model_backward(m, grad, cache)
        for i, layer in enumerate(m.layers):
            if layer.kind == "shift":
                if not layer.weights.frozen:
                    layer.weights = shift_update(layer.weights, grads[(i, "p")], grads[(i, "s")], lr,
                                                 self.shift_threshold)
                continue
            params = {(i, name): arr for name, arr in layer.params().items()}
            if not params:
                continue
            g = {key: grads[key] for key in params}
            if layer.kind == "add":
                gw = g[(i, "weight")]
                scale = adaptive_add_lr(gw, gw.size, cfg.add_lr_eta, cfg.adaptive_eps)
                g[(i, "weight")] = gw * scale * layer.weights.mask
            sgd_step(params, g, self.velocity, lr, cfg)
        m.bump()
        correct = int(np.sum(np.argmax(logits, axis=1) == labels))
        return loss, correct

    def run_epoch(self, train_set, test_set=None):
        cfg, epoch = self.cfg, self.epoch
        t0 = time.perf_counter()
        self._apply_pruning(epoch)
        lr = lr_at(epoch, cfg)
        n = len(train_set)
        order = self.rng.permutation(n)
        total_loss, correct, steps = 0.0, 0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, c = self.step(train_set.images[idx], train_set.labels[idx], lr)
            total_loss += loss * len(idx)
            correct += c
            steps += 1
        energy = training_energy(self.model, n, steps, cfg.accounting_format, cfg.platform)
        row = {"epoch": epoch, "lr": lr, "train_loss": total_loss / n, "train_acc": correct / n,
               "energy_j": self.cumulative_energy + energy}
        if test_set is not None:
            row["test_loss"], row["test_acc"] = evaluate(self.model, test_set)
        row["wall_time"] = time.perf_counter() - t0
        self.record.epochs.append(row)
        self.epoch += 1
        log.info("epoch %d lr %.4g loss %.4f acc %.3f test %.3f", epoch, lr, row["train_loss"], row["train_acc"],
                 row.get("test_acc", float("nan")))
        return row

    def run(self, dataset, until=None, on_epoch=None):
        train_set, test_set = dataset.train_split(), dataset.test_split()
        if len(test_set) == 0:
            test_set = None
        until = self.cfg.epochs if until is None else min(until, self.cfg.epochs)
        while self.epoch < until:
            row = self.run_epoch(train_set, test_set)
            if on_epoch is not None:
                on_epoch(self, row)
        return self.model, self.record


def _first_bad_layer(m, cache):
    # contexts hold each layer's input, so a bad input at i was produced by layer i - 1
    for i, ctx in enumerate(cache.contexts):
        for v in ctx.values():
            if isinstance(v, np.ndarray) and v.dtype.kind == "f" and not np.all(np.isfinite(v)):
                return "input data" if i == 0 else f"layer {i - 1} ({m.layers[i - 1].kind})"
    return f"layer {len(m.layers) - 1} ({m.layers[-1].kind})"


def train(model, dataset, cfg):
    """Train ``model`` on ``dataset`` for ``cfg.epochs``; returns ``(model, record)``."""
    return Trainer(model, cfg).run(dataset)


def evaluate(model, dataset, batch_size=256):
    """Mean loss and accuracy in inference mode; parameters are not touched."""
    n = len(dataset)
    total, correct = 0.0, 0
    for start in range(0, n, batch_size):
        x = dataset.images[start : start + batch_size]
        y = dataset.labels[start : start + batch_size]
        logits, _ = model_forward(model, x, train=False)
        loss, _ = cross_entropy_loss(logits, y)
        total += loss * len(y)
        correct += int(np.sum(np.argmax(logits, axis=1) == y))
    return total / n, correct / n
