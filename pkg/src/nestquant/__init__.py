"""Integer-nesting post-training quantization.

An INT n model nests an INT h model: its weights are stored as h-bit high
parts plus (l+1)-bit residuals, so a device can run the h-bit model from the
high parts alone and page the residuals in or out to switch precision.
"""
from ._jit import backend_name
from .errors import NestQuantError
from .nesting import (
    ErrorCensus,
    NestedLayer,
    NestedModel,
    advise_nested_bits,
    decompose,
    error_census,
    nest_model,
    quantize_model,
    recompose,
)
from .packed import PackedTensor, capacity, pack, packed_byte_size, unpack
from .quantizer import QuantizedTensor, compute_scale, dequantize, perturbation, quantize
from .resources import ideal_storage_reduction, memory_usage_estimate, nest_page_costs, reduced_overhead
from .rounding import RoundingStrategy, adaptive_round, round_scalar
from .store import load, load_part_bit, save, size_report
from .switch import SwitchState, diverse_switch_baseline, launch_part_bit

__version__ = "0.1.0"
