"""Seeded generation of scripted scenarios.

Three flavors: "general" draws broad random table models for randomized
cross-checks, "small" draws 4-token models whose output length is capped
at 3 real tokens plus eos so full enumeration stays cheap, and "session"
builds a long stream of identical scripted utterances separated by blank
regions long enough to trigger mid-stream resets.

All randomness flows from one explicit seed; the same seed always
produces the same documents and features, byte for byte.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from blockbeam.core import ConfigError
from blockbeam.features import ManifestEntry

FLAVORS = ("general", "small", "session")

_BLANK = "<blank>"
_EOS = "<eos>"


@dataclass
class GeneratedScenario:
    scenario: dict[str, Any]
    config: dict[str, Any]
    features: np.ndarray
    manifest: list[ManifestEntry] = field(default_factory=list)


def dump_scenario(scenario: dict[str, Any]) -> str:
    return yaml.safe_dump(scenario, sort_keys=True)


def random_scenario(seed: int, flavor: str = "general") -> GeneratedScenario:
    rng = random.Random(seed)
    if flavor == "general":
        return _general(rng)
    if flavor == "small":
        return _small(rng)
    if flavor == "session":
        return session_scenario(num_utts=rng.randint(2, 4), seed=seed)
    raise ConfigError(f"unknown scenario flavor {flavor!r} (want one of {FLAVORS})")


def _features(rng: random.Random, frames: int, dim: int) -> np.ndarray:
    return np.array(
        [[rng.gauss(0.0, 1.0) for _ in range(dim)] for _ in range(frames)],
        dtype=np.float64,
    ).reshape(frames, dim)


def _dist_over(rng: random.Random, names: list[str], allow_zero: bool = True) -> dict[str, float]:
    """Random normalized distribution; zeros appear but never everywhere."""
    weights = []
    for _ in names:
        if allow_zero and rng.random() < 0.25:
            weights.append(0.0)
        else:
            weights.append(rng.random() + 0.05)
    if not any(weights):
        weights[rng.randrange(len(weights))] = 1.0
    total = sum(weights)
    return {name: w / total for name, w in zip(names, weights)}


def _general(rng: random.Random) -> GeneratedScenario:
    n_real = rng.randint(2, 4)
    reals = [chr(ord("a") + i) for i in range(n_real)]
    tokens = [_BLANK, _EOS] + reals
    nonblank = [_EOS] + reals
    factor = rng.choice([1, 2])
    stream = rng.randint(6, 24)
    enc_frames = -(-stream // factor)
    dim = rng.randint(2, 4)

    def rand_prefix() -> tuple[str, ...]:
        return tuple(rng.choice(reals) for _ in range(rng.randint(0, 3)))

    selection: dict[tuple[str, ...], dict[int, float]] = {}
    for _ in range(rng.randint(1, 6)):
        prefix = rand_prefix()
        frames = selection.setdefault(prefix, {})
        for _ in range(rng.randint(1, 4)):
            frames[rng.randrange(enc_frames)] = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0])

    emission: dict[tuple[str, ...], dict[str, float]] = {}
    for _ in range(rng.randint(0, 5)):
        prefix = rand_prefix()
        if prefix not in emission:
            emission[prefix] = _dist_over(rng, nonblank)

    scenario: dict[str, Any] = {
        "vocab": tokens,
        "default_selection_prob": rng.choice([0.0, 0.0, 0.2, 0.6, 1.0]),
        "selection": [
            {"prefix": list(p), "frames": dict(f)} for p, f in sorted(selection.items())
        ],
        "emission": [
            {"prefix": list(p), "dist": d} for p, d in sorted(emission.items())
        ],
        "default_emission": _dist_over(rng, nonblank),
        "encoder": {"type": "mean_pool"},
    }
    if rng.random() < 0.4:
        rows = []
        for _ in range(rng.randint(1, 6)):
            d = _dist_over(rng, tokens, allow_zero=False)
            rows.append([d[t] for t in tokens])
        scenario["ctc"] = rows

    lm_weight = 0.0
    if rng.random() < 0.5:
        order = rng.randint(1, 3)
        table = []
        seen: set[tuple[str, ...]] = set()
        for _ in range(rng.randint(1, 4)):
            ctx = tuple(rng.choice(reals) for _ in range(rng.randint(0, order - 1)))
            if ctx in seen:
                continue
            seen.add(ctx)
            scale = rng.uniform(0.3, 1.0)
            listed = rng.sample(nonblank, rng.randint(1, n_real))
            d = _dist_over(rng, listed, allow_zero=False)
            table.append({"context": list(ctx), "dist": {t: p * scale for t, p in d.items()}})
        scenario["lm"] = {"order": order, "table": table}
        lm_weight = rng.choice([0.0, 0.3, 0.7])

    config = {
        "beam_width": rng.choice([1, 2, 4]),
        "block_size": rng.choice([4, 8]),
        "subsample_factor": factor,
        "chunk_width": rng.choice([1, 2, 4]),
        "length_ratio": rng.choice([0.5, 1.0, 2.0]),
        "boundary_threshold": rng.choice([0.3, 0.5, 0.8]),
        "enable_length_norm": rng.choice([True, False]),
        "enable_parked_eos": rng.choice([True, False]),
        "lm_weight": lm_weight,
    }
    return GeneratedScenario(
        scenario=scenario, config=config, features=_features(rng, stream, dim)
    )


def _small(rng: random.Random) -> GeneratedScenario:
    """4-token model; every length-3 prefix must emit eos, capping output."""
    reals = ["a", "b"]
    tokens = [_BLANK, _EOS] + reals
    nonblank = [_EOS] + reals
    stream = rng.randint(16, 24)

    prefixes: list[tuple[str, ...]] = [()]
    for length in range(1, 4):
        grown: list[tuple[str, ...]] = []
        for p in prefixes:
            if len(p) == length - 1:
                grown.extend(p + (r,) for r in reals)
        prefixes.extend(grown)

    emission = []
    for p in prefixes:
        if len(p) == 3:
            emission.append({"prefix": list(p), "dist": {_EOS: 1.0}})
        else:
            emission.append({"prefix": list(p), "dist": _dist_over(rng, nonblank)})

    selection = []
    for p in prefixes:
        if rng.random() < 0.75:
            frames = {
                rng.randrange(stream): rng.choice([0.4, 0.6, 1.0])
                for _ in range(rng.randint(1, 3))
            }
            selection.append({"prefix": list(p), "frames": frames})

    scenario: dict[str, Any] = {
        "vocab": tokens,
        "default_selection_prob": 0.0,
        "selection": selection,
        "emission": emission,
        "encoder": {"type": "mean_pool"},
    }
    config = {
        "beam_width": 256,
        "block_size": 8,
        "subsample_factor": 1,
        "chunk_width": 2,
        "length_ratio": 1.0,
        "boundary_threshold": 0.5,
        "enable_length_norm": rng.choice([True, False]),
        "lm_weight": 0.0,
    }
    return GeneratedScenario(
        scenario=scenario, config=config, features=_features(rng, stream, 2)
    )


# The session pattern is rigid by design: every utterance scripts token
# "a" at local frame 5 and "b" at local frame 20, emits CTC "a" rows for
# its first 40 frames, then blanks. With 96-frame utterances, 32-frame
# blocks, safeguard 64 and blank threshold 12, each utterance's blank
# tail fires exactly one reset at its 64th frame, and the leftover
# blanks after a reset always fall inside the safeguard window of the
# next segment. The final utterance is 48 frames so its 8-frame blank
# tail stays below the threshold and the stream end pushes the last
# segment.
_UTT_LEN = 96
_LAST_LEN = 48
_SPEECH_LEN = 40
_SESSION_CONFIG = {
    "beam_width": 10,
    "block_size": 32,
    "subsample_factor": 1,
    "chunk_width": 4,
    "length_ratio": 1.0,
    "safeguard": 64,
    "blank_threshold": 12,
    "spike_threshold": 0.1,
    "lm_weight": 0.0,
}


def session_scenario(num_utts: int = 3, seed: int = 0) -> GeneratedScenario:
    if num_utts < 1:
        raise ConfigError("session needs at least one utterance")
    rng = random.Random(seed)
    tokens = [_BLANK, _EOS, "a", "b"]
    lens = [_UTT_LEN] * (num_utts - 1) + [_LAST_LEN]
    offsets = []
    total = 0
    for n in lens:
        offsets.append(total)
        total += n

    sel_root: dict[int, float] = {}
    sel_a: dict[int, float] = {}
    for o in offsets:
        sel_root[o + 5] = 1.0
        sel_a[o + 20] = 1.0

    blank_row = [1.0, 0.0, 0.0, 0.0]
    a_row = [0.0, 0.0, 1.0, 0.0]
    ctc = [list(blank_row) for _ in range(offsets[-1] + _SPEECH_LEN)]
    for o in offsets:
        for j in range(o, o + _SPEECH_LEN):
            ctc[j] = list(a_row)

    scenario: dict[str, Any] = {
        "vocab": tokens,
        "default_selection_prob": 0.0,
        "selection": [
            {"prefix": [], "frames": sel_root},
            {"prefix": ["a"], "frames": sel_a},
        ],
        "emission": [
            {"prefix": [], "dist": {"a": 1.0}},
            {"prefix": ["a"], "dist": {"b": 1.0}},
            # Dummy continuation with zero eos mass: the finished set
            # stays empty, so only blank runs end segments.
            {"prefix": ["a", "b"], "dist": {"b": 1.0}},
        ],
        "ctc": ctc,
        "encoder": {"type": "mean_pool"},
    }

    dim = 2
    features = np.zeros((total, dim), dtype=np.float64)
    for o in offsets:
        for t in range(o, o + _SPEECH_LEN):
            for d in range(dim):
                features[t, d] = 1.0 + 0.1 * rng.gauss(0.0, 1.0)

    manifest = [
        ManifestEntry(utt_id=f"utt{k}", offset=o, ref=(2, 3), text="a b")
        for k, o in enumerate(offsets)
    ]
    return GeneratedScenario(
        scenario=scenario,
        config=dict(_SESSION_CONFIG),
        features=features,
        manifest=manifest,
    )
