"""Multiplication-free ShiftAdd networks: bit-shift and additive layers, fixed-point
training, an analytical energy model and a small training harness."""
__version__ = "0.1.0"

from .kernels import BACKEND
from .errors import (ConfigError, DataError, EnergyLookupError, FrozenUpdateError, GeometryError, IntegrityError,
                     NumericalError, QuantizationError, ShiftAddError, StaleCacheError)
from .tensor import ConvGeometry
from .quant import FixedPointFormat, QuantizedTensor, dequantize, fake_quantize, quantize
from .shift import ShiftInitConfig, ShiftWeights, shift_backward, shift_forward, shift_init, shift_prune, shift_update
from .add import AddWeights, add_backward, add_forward, add_prune
from .network import ArchSpec, LayerSpec, build_model, cross_entropy_loss, model_backward, model_forward
from .energy import EnergyTable, OpCount, count_layer_ops, estimate_energy, unit_energy
from .train import PruneEvent, TrainConfig, Trainer, TrainRecord, evaluate, train
from .data import Dataset, load_dataset
from .checkpoint import load_checkpoint, save_checkpoint
from .curves import emit_curves
