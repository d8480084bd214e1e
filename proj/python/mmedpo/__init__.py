"""Python bindings for the mmedpo C++ core."""

import json

from ._core import (
    AgentSpec,
    ConsensusEntry,
    ConsensusTranscript,
    Error,
    FormatError,
    NoiseConfig,
    ProtocolError,
    TrainingError,
    TransportError,
    ValidationError,
    __version__,
    bleu_avg,
    bleu_n,
    closed_correct,
    consensus_score,
    cumulative_schedule,
    margin,
    meteor,
    neg_log_sigmoid,
    noise_image,
    noise_image_global,
    normalize_scores,
    open_recall,
    rouge_l,
    sha256_hex,
    tokenize,
)
from ._core import run_pipeline as _run_pipeline


def run_pipeline(run_dir, config_toml="", overrides=()):
    """Run the pipeline into run_dir and return the parsed manifest."""
    return json.loads(_run_pipeline(config_toml, str(run_dir), list(overrides)))


__all__ = [name for name in dir() if not name.startswith("_")]
