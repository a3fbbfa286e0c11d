"""Compile wide, shallow ReLU networks into narrow, deep ones with exact verification."""

from .exactrep import DepthCeilingError, efficiency_report, exact_deep, exact_two_layer
from .harness import VerificationReport, compile_target, generate_target, verify
from .minwidth import compile_minwidth
from .narrowing import CompileConfig, CompileError, bound_weights, compile_narrow, compile_narrow_multi
from .netcore import (
    Layer,
    NetStats,
    Network,
    NetworkError,
    deserialize,
    evaluate,
    evaluate_float,
    evaluate_many,
    serialize,
    stats,
)

__all__ = [
    "CompileConfig",
    "CompileError",
    "DepthCeilingError",
    "Layer",
    "NetStats",
    "Network",
    "NetworkError",
    "VerificationReport",
    "bound_weights",
    "compile_minwidth",
    "compile_narrow",
    "compile_narrow_multi",
    "compile_target",
    "deserialize",
    "efficiency_report",
    "evaluate",
    "evaluate_float",
    "evaluate_many",
    "exact_deep",
    "exact_two_layer",
    "generate_target",
    "serialize",
    "stats",
    "verify",
]
