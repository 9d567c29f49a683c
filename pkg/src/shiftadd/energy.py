"""Analytical compute-energy model: operation counts times unit energies.

Counting conventions
--------------------
* shift layer forward: one shift and one add per term with a nonzero sign;
* add layer forward: two adds per unmasked term (subtract and accumulate);
  the absolute value is sign logic and costs nothing;
* multiplication convolution: one mult and one add per term;
* batch norm: one mult and one add per element (``2 * elements`` ops);
* global average pool: one add per input element and one mult per channel;
* backward = 2x forward kernel work (input-gradient and weight-gradient
  passes). Frozen shift layers only pay the input-gradient pass;
* update: 3 mults + 3 adds per real parameter (momentum SGD with weight
  decay), plus 2 mults + 1 add per add-layer weight for the adaptive
  gradient scaling, and 1 mult + 2 adds per active learnable shift weight.

Data movement (DRAM, on-chip buffers) is not modelled: every figure here
is a compute-only lower bound.
"""
from dataclasses import dataclass

from .errors import ConfigError, EnergyLookupError

PLATFORMS = {"asic": "ASIC45nm", "asic45nm": "ASIC45nm", "fpga": "FPGA"}
FORMATS = ("FP32", "FIX32", "FIX16", "FIX8")

# unit energies in pJ, 45nm ASIC and ZYNQ-7 ZC706 FPGA
UNIT_ENERGY_PJ = {
    ("mult", "FP32", "ASIC45nm"): 3.7,
    ("mult", "FIX32", "ASIC45nm"): 3.1,
    ("mult", "FIX8", "ASIC45nm"): 0.2,
    ("add", "FP32", "ASIC45nm"): 0.9,
    ("add", "FIX32", "ASIC45nm"): 0.1,
    ("add", "FIX8", "ASIC45nm"): 0.03,
    ("shift", "FIX32", "ASIC45nm"): 0.13,
    ("shift", "FIX8", "ASIC45nm"): 0.024,
    ("mult", "FP32", "FPGA"): 18.8,
    ("mult", "FIX32", "FPGA"): 19.6,
    ("mult", "FIX8", "FPGA"): 0.2,
    ("add", "FP32", "FPGA"): 0.4,
    ("add", "FIX32", "FPGA"): 0.1,
    ("add", "FIX8", "FPGA"): 0.1,
    ("shift", "FIX32", "FPGA"): 0.1,
    ("shift", "FIX8", "FPGA"): 0.025,
}

PHASES = ("forward", "backward", "update")


def canonical_platform(platform):
    try:
        return PLATFORMS[str(platform).lower()]
    except KeyError:
        raise ConfigError(f"unknown platform {platform!r}; use asic or fpga") from None


def canonical_format(fmt):
    f = str(fmt).upper()
    if f not in FORMATS:
        raise ConfigError(f"unknown number format {fmt!r}; choose from {FORMATS}")
    return f


class EnergyTable:
    """Read-only mapping ``(op, format, platform) -> pJ``; misses raise."""

    def __init__(self, entries=None):
        self._entries = dict(UNIT_ENERGY_PJ if entries is None else entries)

    def __getitem__(self, key):
        op, fmt, platform = key
        k = (op, canonical_format(fmt), canonical_platform(platform))
        if k not in self._entries:
            raise EnergyLookupError(f"no unit energy for {op} in {k[1]} on {k[2]}")
        return self._entries[k]

    def __contains__(self, key):
        try:
            self[key]
        except (EnergyLookupError, ConfigError):
            return False
        return True

    def keys(self):
        return self._entries.keys()


DEFAULT_TABLE = EnergyTable()


def unit_energy(op, fmt, platform, table=DEFAULT_TABLE):
    return table[(op, fmt, platform)]


@dataclass
class OpCount:
    mults: int = 0
    adds: int = 0
    shifts: int = 0
    layer: str = ""
    phase: str = ""

    def __add__(self, other):
        return OpCount(self.mults + other.mults, self.adds + other.adds, self.shifts + other.shifts)

    def scaled(self, k):
        return OpCount(self.mults * k, self.adds * k, self.shifts * k, self.layer, self.phase)


def _forward_ops(layer, in_shape):
    kind = layer.kind
    if kind == "shift":
        g = layer.geom
        n = g.output_rows * g.output_cols * layer.weights.nonzero
        return OpCount(0, n, n)
    if kind == "add":
        g = layer.geom
        return OpCount(0, 2 * g.output_rows * g.output_cols * layer.weights.active, 0)
    if kind == "mult":
        g = layer.geom
        n = g.output_rows * g.output_cols * g.out_channels * g.terms_per_output
        return OpCount(n, n, 0)
    if kind == "batchnorm":
        n = in_shape[0] * in_shape[1] * in_shape[2]
        return OpCount(n, n, 0)
    if kind == "avgpool":
        return OpCount(in_shape[0], in_shape[0] * in_shape[1] * in_shape[2], 0)
    if kind == "relu":
        return OpCount()
    raise ConfigError(f"cannot count operations for layer kind {kind!r}")


def count_layer_ops(layer, phase, in_shape=None):
    """Per-sample operation count of ``layer`` in ``phase`` (update: per step)."""
    if phase not in PHASES:
        raise ConfigError(f"unknown phase {phase!r}")
    if in_shape is None:
        geom = getattr(layer, "geom", None)
        in_shape = geom.input_shape if geom is not None else (0, 0, 0)
    if phase == "forward":
        ops = _forward_ops(layer, in_shape)
    elif phase == "backward":
        ops = _forward_ops(layer, in_shape)
        if not (layer.kind == "shift" and layer.weights.frozen):
            ops = ops.scaled(2)
    else:
        ops = _update_ops(layer)
    ops.phase = phase
    return ops


def _update_ops(layer):
    kind = layer.kind
    if kind == "shift":
        if layer.weights.frozen:
            return OpCount()
        n = layer.weights.nonzero
        return OpCount(n, 2 * n, 0)
    if kind == "add":
        n = layer.weights.active
        return OpCount(5 * n, 4 * n, 0)
    if kind == "mult":
        n = layer.weight.size
        return OpCount(3 * n, 3 * n, 0)
    if kind == "batchnorm":
        n = 2 * layer.channels
        return OpCount(3 * n, 3 * n, 0)
    return OpCount()


def _input_shapes(model):
    shapes = [model.input_shape] + list(model.shapes[:-1])
    return shapes


def layer_op_table(model, phases=PHASES):
    """``[(index, kind, phase, OpCount)]`` per layer and phase."""
    rows = []
    for i, (layer, in_shape) in enumerate(zip(model.layers, _input_shapes(model))):
        for phase in phases:
            ops = count_layer_ops(layer, phase, in_shape)
            ops.layer = f"{i}.{layer.kind}"
            rows.append((i, layer.kind, phase, ops))
    return rows


def ops_energy_pj(ops, fmt, platform, table=DEFAULT_TABLE):
    total = 0.0
    for op, n in (("mult", ops.mults), ("add", ops.adds), ("shift", ops.shifts)):
        if n:
            try:
                total += n * table[(op, fmt, platform)]
            except EnergyLookupError:
                if op == "shift":
                    raise ConfigError(
                        f"no shift unit energy for {canonical_format(fmt)}; "
                        "shift layers need a fixed-point format (FIX32 or FIX8)") from None
                raise
    return total


@dataclass
class EnergyReport:
    rows: list  # (layer_index, kind, phase, OpCount, joules)
    fmt: str
    platform: str
    steps: int
    batch_size: int

    @property
    def total(self):
        return sum(r[4] for r in self.rows)

    def by_layer(self):
        out = {}
        for i, kind, _, _, j in self.rows:
            out[(i, kind)] = out.get((i, kind), 0.0) + j
        return out

    def by_phase(self):
        out = {}
        for _, _, phase, _, j in self.rows:
            out[phase] = out.get(phase, 0.0) + j
        return out

    def header(self):
        return (f"# compute-only energy estimate ({self.fmt}, {self.platform}); DRAM/data movement excluded; "
                f"backward = 2x forward kernel ops; steps={self.steps} batch={self.batch_size}")

    def to_text(self):
        lines = [self.header(), f"{'layer':<14}{'phase':<10}{'mults':>14}{'adds':>14}{'shifts':>14}{'energy_J':>14}"]
        for i, kind, phase, ops, j in self.rows:
            lines.append(f"{f'{i}.{kind}':<14}{phase:<10}{ops.mults:>14}{ops.adds:>14}{ops.shifts:>14}{j:>14.6e}")
        lines.append(f"{'total':<24}{'':>42}{self.total:>14.6e}")
        return "\n".join(lines)

    def to_csv(self, path, delimiter=","):
        import csv

        with open(path, "w", newline="") as fh:
            fh.write(self.header() + "\n")
            w = csv.writer(fh, delimiter=delimiter)
            w.writerow(["layer", "kind", "phase", "mults", "adds", "shifts", "energy_j"])
            for i, kind, phase, ops, j in self.rows:
                w.writerow([i, kind, phase, ops.mults, ops.adds, ops.shifts, repr(j)])


def estimate_energy(model, phases=("forward",), fmt="FIX32", platform="asic", steps=1, batch_size=1,
                    table=DEFAULT_TABLE):
    """Energy in joules for ``steps`` steps of ``batch_size`` samples.

    Forward and backward counts scale with ``steps * batch_size``; the update
    phase is paid once per step.
    """
    fmt = canonical_format(fmt)
    platform = canonical_platform(platform)
    rows = []
    for i, kind, phase, ops in layer_op_table(model, phases):
        reps = steps if phase == "update" else steps * batch_size
        joules = ops_energy_pj(ops, fmt, platform, table) * reps * 1e-12
        rows.append((i, kind, phase, ops.scaled(reps), joules))
    return EnergyReport(rows, fmt, platform, steps, batch_size)


def training_energy(model, samples, steps, fmt, platform, table=DEFAULT_TABLE):
    """Joules for one pass over ``samples`` examples in ``steps`` optimizer steps."""
    fb = estimate_energy(model, ("forward", "backward"), fmt, platform, steps=1, batch_size=1, table=table).total
    up = estimate_energy(model, ("update",), fmt, platform, steps=1, batch_size=1, table=table).total
    return fb * samples + up * steps
