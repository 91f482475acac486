"""Functional and cycle-level model of the 32x8 PE array."""

from .block import ArrayEvaluator, program_for, run_block
from .grid import PEGrid, cannon_mm, cannon_mm_herm, mv_broadcast
from .program import (
    DEFAULT_TIMING,
    PHASE_ORDER,
    ArrayTiming,
    CycleReport,
    Phase,
    PhaseProgram,
    throughput,
)

__all__ = [
    "ArrayEvaluator", "ArrayTiming", "CycleReport", "DEFAULT_TIMING", "PEGrid", "PHASE_ORDER",
    "Phase", "PhaseProgram", "cannon_mm", "cannon_mm_herm", "mv_broadcast", "program_for",
    "run_block", "throughput",
]
