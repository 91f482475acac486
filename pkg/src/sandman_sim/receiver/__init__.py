from .linear import ChannelEstimate, SolveError, chest_ls, lmmse_detect
from .llr import hard_bits, llr_map, prox_box
from .prs import LFSR_DEGREE, LFSR_PERIOD, lfsr_bits, lfsr_step, prs_vector
from .sandman import (
    DetectionResult,
    DetectorConfig,
    FixedConfig,
    ReferenceEvaluator,
    chest_fixed,
    quantize_inputs,
    run_fixed,
    sandman_detect,
)

__all__ = [
    "ChannelEstimate", "SolveError", "chest_ls", "lmmse_detect",
    "hard_bits", "llr_map", "prox_box",
    "LFSR_DEGREE", "LFSR_PERIOD", "lfsr_bits", "lfsr_step", "prs_vector",
    "DetectionResult", "DetectorConfig", "FixedConfig", "ReferenceEvaluator",
    "chest_fixed", "quantize_inputs", "run_fixed", "sandman_detect",
]
