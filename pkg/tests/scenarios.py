"""Scripted scenarios crafted to exercise one mechanism each."""

from __future__ import annotations

from typing import Any

import numpy as np


def early_eos_scenario() -> tuple[dict[str, Any], np.ndarray]:
    """Every block immediately emits eos and nothing else.

    With the reset safeguard disabled this produces an eos-flavored reset at
    the end of every block; with it enabled (and the stream shorter than the
    safeguard window) no mid-stream reset may fire at all.
    """
    scenario = {
        "vocab": ["<blank>", "<eos>", "a"],
        "default_selection_prob": 1.0,
        "emission": [{"prefix": [], "dist": {"<eos>": 1.0}}],
    }
    return scenario, np.zeros((256, 2), dtype=np.float64)


def dead_beam_scenario() -> dict[str, Any]:
    """Emission mass sits entirely on eos while the language model assigns
    eos zero probability, so with nonzero fusion weight every expansion is
    impossible and the search ends with nothing to rank."""
    return {
        "vocab": ["<blank>", "<eos>", "a"],
        "default_selection_prob": 1.0,
        "emission": [{"prefix": [], "dist": {"<eos>": 1.0}}],
        "lm": {"order": 1, "table": [{"context": [], "dist": {"a": 1.0}}]},
    }


def scanning_scenario() -> dict[str, Any]:
    """No boundary ever fires: each block costs exactly one scan of its
    encoder frames and the beam never grows."""
    return {
        "vocab": ["<blank>", "<eos>", "a"],
        "default_selection_prob": 0.0,
        "emission": [],
        "default_emission": {"a": 1.0},
    }


def branching_scenario() -> dict[str, Any]:
    """A boundary at every frame with a two-way token split, so the beam
    fills to its width and every block performs the same bounded work."""
    return {
        "vocab": ["<blank>", "<eos>", "a", "b"],
        "default_selection_prob": 1.0,
        "emission": [],
        "default_emission": {"a": 0.5, "b": 0.5},
    }


def subword_scenario() -> tuple[dict[str, Any], np.ndarray]:
    """Marker-style vocabulary whose decode spells two words."""
    scenario = {
        "vocab": ["<blank>", "<eos>", "▁he", "llo", "▁world"],
        "default_selection_prob": 0.0,
        "selection": [
            {"prefix": [], "frames": {0: 1.0}},
            {"prefix": ["▁he"], "frames": {1: 1.0}},
            {"prefix": ["▁he", "llo"], "frames": {2: 1.0}},
        ],
        "emission": [
            {"prefix": [], "dist": {"▁he": 1.0}},
            {"prefix": ["▁he"], "dist": {"llo": 1.0}},
            {"prefix": ["▁he", "llo"], "dist": {"▁world": 0.9, "<eos>": 0.1}},
            {"prefix": ["▁he", "llo", "▁world"], "dist": {"<eos>": 1.0}},
        ],
    }
    return scenario, np.zeros((16, 2), dtype=np.float64)
