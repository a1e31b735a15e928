"""Deploy-first int8 quantization toolchain.

The heavy lifting lives in the C++ core; this package re-exports the
bound operations.
"""

from ._core import (
    KanjiError,
    QFormat,
    RangeTracker,
    __version__,
    choose_qformat,
    conv2d_q7,
    dequantize,
    derive_shifts,
    fake_quant,
    fully_connected_q7,
    matmul_asym,
    matmul_sym,
    maxpool_q7,
    parse_manifest,
    plan_report,
    preprocess_q7,
    quantize,
    quantize_asymmetric,
    relu_q7,
    requantize_dynamic,
    round_shift,
    ste_mask,
    update_range,
    validate_generated,
)

__all__ = [
    "KanjiError",
    "QFormat",
    "RangeTracker",
    "__version__",
    "choose_qformat",
    "conv2d_q7",
    "dequantize",
    "derive_shifts",
    "fake_quant",
    "fully_connected_q7",
    "matmul_asym",
    "matmul_sym",
    "maxpool_q7",
    "parse_manifest",
    "plan_report",
    "preprocess_q7",
    "quantize",
    "quantize_asymmetric",
    "relu_q7",
    "requantize_dynamic",
    "round_shift",
    "ste_mask",
    "update_range",
    "validate_generated",
]
