"""Streaming block-synchronous beam search for monotonic attention models."""

from blockbeam.core import (
    BeamSets,
    BlockbeamError,
    ConfigError,
    DecodeConfig,
    DecodeError,
    EncoderBlock,
    FeatureError,
    Hypothesis,
    ScenarioError,
    Segment,
    SessionTranscript,
    Vocab,
    VocabError,
    load_config,
    load_vocab,
    save_config,
    save_vocab,
)

__version__ = "0.1.0"

__all__ = [
    "BeamSets",
    "BlockbeamError",
    "ConfigError",
    "DecodeConfig",
    "DecodeError",
    "EncoderBlock",
    "FeatureError",
    "Hypothesis",
    "ScenarioError",
    "Segment",
    "SessionTranscript",
    "Vocab",
    "VocabError",
    "load_config",
    "load_vocab",
    "save_config",
    "save_vocab",
    "__version__",
]
