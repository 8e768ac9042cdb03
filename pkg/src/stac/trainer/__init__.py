"""Training loop, algorithms, evaluation and sweeps."""
from .algorithms import ALGORITHM_CLASSES, ESTAC, SAC, STAC, Algorithm, ScalarCritic, build_algorithm
from .config import BENCHMARK_PRESETS, DESK_PRESETS, PRESETS, TrainConfig, load_config_file, resolve_config
from .loop import (CsvMetricSink, EvalRecord, TrainResult, discounted_suffix_returns, evaluate, load_artifact,
                   save_artifact, train)

__all__ = [
    "ALGORITHM_CLASSES", "Algorithm", "BENCHMARK_PRESETS", "CsvMetricSink", "DESK_PRESETS", "ESTAC",
    "EvalRecord", "PRESETS", "SAC", "STAC", "ScalarCritic", "TrainConfig", "TrainResult", "build_algorithm",
    "discounted_suffix_returns", "evaluate", "load_artifact", "load_config_file", "resolve_config",
    "save_artifact", "train",
]
