"""Domain types, configuration, and vocabulary shared by all modules.

Two clocks run through the engine and every field declares which one it uses:

* input frames: raw 10 ms feature frames (``block_size``, ``safeguard``,
  the session's ``t`` counter);
* encoder frames: subsampled frames, 10 ms x ``subsample_factor``
  (``blank_threshold``, hypothesis heads, emit times).

Conversions between the two happen only at module boundaries, never inside
an algorithm.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np


class BlockbeamError(Exception):
    """Base class for all errors raised by this package."""


class VocabError(BlockbeamError):
    """Invalid vocabulary file or token set."""


class ConfigError(BlockbeamError):
    """Invalid decode configuration or config file."""


class ScenarioError(BlockbeamError):
    """Malformed or inconsistent scripted-model scenario."""


class FeatureError(BlockbeamError):
    """Unreadable or malformed feature input."""


class DecodeError(BlockbeamError):
    """Failure raised while decoding (scorer faults, internal bugs)."""


@dataclass(frozen=True)
class Vocab:
    """Token inventory with the two reserved symbols.

    The blank symbol exists for the CTC branch only; the decoder never
    emits it. ``eos_id`` terminates hypotheses.
    """

    tokens: tuple[str, ...]
    blank_id: int = 0
    eos_id: int = 1

    def __post_init__(self) -> None:
        n = len(self.tokens)
        if not (0 <= self.blank_id < n and 0 <= self.eos_id < n):
            raise VocabError("blank_id/eos_id outside token range")
        if self.blank_id == self.eos_id:
            raise VocabError("blank_id and eos_id must differ")
        if len(set(self.tokens)) != n:
            raise VocabError("duplicate token strings in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise VocabError(f"unknown token: {token!r}") from None

    def text(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @property
    def decoder_token_ids(self) -> tuple[int, ...]:
        """All token ids the decoder may emit (everything except blank)."""
        return tuple(i for i in range(len(self.tokens)) if i != self.blank_id)

    def uses_subword_marker(self, marker: str = "▁") -> bool:
        """True when any non-reserved token carries the word-boundary marker."""
        reserved = {self.blank_id, self.eos_id}
        return any(
            marker in t for i, t in enumerate(self.tokens) if i not in reserved
        )


def load_vocab(path: str | Path) -> Vocab:
    """Load a vocabulary file: one token per line, blank first, eos second.

    Line numbers become token ids, so ``blank_id`` is 0 and ``eos_id`` is 1.
    Raises :class:`VocabError` on duplicates or when the two reserved lines
    are missing.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    tokens = [ln for ln in lines if ln != ""]
    if len(tokens) < 2:
        raise VocabError(
            f"{path}: vocabulary must declare blank and eos on its first two lines"
        )
    if len(set(tokens)) != len(tokens):
        seen: set[str] = set()
        for t in tokens:
            if t in seen:
                raise VocabError(f"{path}: duplicate token {t!r}")
            seen.add(t)
    return Vocab(tokens=tuple(tokens), blank_id=0, eos_id=1)


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    Path(path).write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")


# Config fields toggling one ablation behavior each; all default on.
_TOGGLE_FIELDS = (
    "enable_length_norm",
    "enable_lm_carryover",
    "enable_safeguard",
    "enable_condition2",
    "enable_backoff_init",
)


@dataclass(frozen=True)
class DecodeConfig:
    """All search and reset hyperparameters.

    Clock conventions: ``block_size`` and ``safeguard`` count input frames
    (10 ms); ``blank_threshold`` counts encoder frames.
    """

    beam_width: int = 10
    block_size: int = 32
    length_ratio: float = 1.0
    safeguard: int = 1600
    blank_threshold: int = 40
    spike_threshold: float = 0.1
    lm_weight: float = 0.0
    chunk_width: int = 4
    subsample_factor: int = 4
    boundary_threshold: float = 0.5
    enable_length_norm: bool = True
    enable_lm_carryover: bool = True
    enable_safeguard: bool = True
    enable_condition2: bool = True
    enable_backoff_init: bool = True
    enable_parked_eos: bool = True

    def __post_init__(self) -> None:
        if self.beam_width < 1:
            raise ConfigError("beam_width must be positive")
        if self.block_size < 1:
            raise ConfigError("block_size must be positive")
        if self.length_ratio <= 0:
            raise ConfigError("length_ratio must be positive")
        if self.safeguard < 0:
            raise ConfigError("safeguard must be non-negative")
        if self.blank_threshold < 1:
            raise ConfigError("blank_threshold must be positive")
        if not 0.0 <= self.spike_threshold <= 1.0:
            raise ConfigError("spike_threshold must lie in [0, 1]")
        if self.lm_weight < 0:
            raise ConfigError("lm_weight must be non-negative")
        if self.chunk_width < 1:
            raise ConfigError("chunk_width must be positive")
        if self.subsample_factor < 1:
            raise ConfigError("subsample_factor must be positive")
        if not 0.0 <= self.boundary_threshold <= 1.0:
            raise ConfigError("boundary_threshold must lie in [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DecodeConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes: Any) -> "DecodeConfig":
        return dataclasses.replace(self, **changes)


def load_config(path: str | Path) -> DecodeConfig:
    """Read a flat JSON key-value config file."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a flat JSON object")
    return DecodeConfig.from_dict(data)


def save_config(cfg: DecodeConfig, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


@dataclass(frozen=True)
class Hypothesis:
    """One beam entry: a token prefix plus everything needed to extend it.

    ``head`` is the encoder frame (global index) of the most recent
    attention boundary and never decreases. ``scan_from`` is the next
    global encoder frame this hypothesis will inspect for a boundary;
    it equals ``head`` right after an emission (a repeated stop at the
    same frame is legal) and moves past a block once the block has been
    scanned without success. ``emit_times[i]`` is the global encoder
    frame index of the last frame processed when token ``i`` entered the
    beam; ``boundary_times[i]`` is the boundary frame of token ``i``.
    """

    prefix: tuple[int, ...] = ()
    raw_log_score: float = 0.0
    head: int = 0
    scan_from: int = 0
    decoder_state: Any = None
    lm_state: Any = None
    emit_times: tuple[int, ...] = ()
    boundary_times: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if len(self.emit_times) != len(self.prefix):
            raise DecodeError("emit_times must parallel prefix")
        if len(self.boundary_times) != len(self.prefix):
            raise DecodeError("boundary_times must parallel prefix")

    def extended(
        self,
        token: int,
        score_delta: float,
        head: int,
        commit_frame: int,
        decoder_state: Any,
        lm_state: Any,
    ) -> "Hypothesis":
        """New hypothesis with ``token`` appended at boundary ``head``."""
        return Hypothesis(
            prefix=self.prefix + (token,),
            raw_log_score=self.raw_log_score + score_delta,
            head=head,
            scan_from=head,
            decoder_state=decoder_state,
            lm_state=lm_state,
            emit_times=self.emit_times + (commit_frame,),
            boundary_times=self.boundary_times + (head,),
        )

    def parked_past(self, frame: int) -> "Hypothesis":
        """Copy with the scan pointer moved past ``frame`` (block exhausted).

        Never rewinds: a pointer already beyond ``frame`` stays put.
        """
        return dataclasses.replace(self, scan_from=max(self.scan_from, frame + 1))


@dataclass(frozen=True)
class Segment:
    """One committed stretch of a session: tokens between two reset events."""

    tokens: tuple[int, ...]
    emit_times: tuple[int, ...]
    boundary_times: tuple[int, ...]
    reason: str  # blank_run | eos | end_of_stream
    score: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "tokens": list(self.tokens),
            "emit_times": list(self.emit_times),
            "boundary_times": list(self.boundary_times),
            "reason": self.reason,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Segment":
        return cls(
            tokens=tuple(data["tokens"]),
            emit_times=tuple(data["emit_times"]),
            boundary_times=tuple(data["boundary_times"]),
            reason=data["reason"],
            score=data["score"],
        )


RESET_REASONS = ("blank_run", "eos", "end_of_stream")


@dataclass(frozen=True)
class BeamSets:
    """The working hypothesis sets of one search plus the session history.

    ``finished`` keeps only the running best eos-terminated hypothesis;
    nothing downstream ever consumes more than its argmax.
    """

    active: tuple[Hypothesis, ...] = ()
    parked: tuple[Hypothesis, ...] = ()
    expanded: tuple[Hypothesis, ...] = ()
    finished: tuple[Hypothesis, ...] = ()
    session: tuple[Segment, ...] = ()


@dataclass(frozen=True)
class EncoderBlock:
    """Encoder output for one input block.

    ``frames`` has one row per encoder frame; ``global_offset`` is the
    global encoder frame index of row 0. ``prev_tail`` carries the last
    ``chunk_width - 1`` encoder frames of the previous block (empty or
    all-zero right after a stream start or state reset) so chunk windows
    can straddle the block edge.
    """

    frames: np.ndarray
    global_offset: int
    prev_tail: np.ndarray

    def __post_init__(self) -> None:
        if self.frames.ndim != 2:
            raise DecodeError("encoder block frames must be 2-D")
        if self.prev_tail.ndim != 2 or (
            self.prev_tail.shape[0] and self.prev_tail.shape[1] != self.frames.shape[1]
        ):
            raise DecodeError("prev_tail must match the frame dimensionality")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def tail_len(self) -> int:
        return self.prev_tail.shape[0]

    @property
    def last_frame(self) -> int:
        """Global index of the final encoder frame in this block."""
        return self.global_offset + self.num_frames - 1

    def frame(self, global_index: int) -> np.ndarray:
        """Row for a global encoder frame, drawing from the tail if needed."""
        local = global_index - self.global_offset
        if 0 <= local < self.num_frames:
            return self.frames[local]
        if -self.tail_len <= local < 0:
            return self.prev_tail[local + self.tail_len]
        raise DecodeError(
            f"frame {global_index} outside block [{self.global_offset - self.tail_len},"
            f" {self.last_frame}]"
        )


@dataclass(frozen=True)
class SessionTranscript:
    """Ordered segments of a long-form session, one per reset event."""

    segments: tuple[Segment, ...] = ()

    def all_tokens(self) -> list[int]:
        out: list[int] = []
        for seg in self.segments:
            out.extend(seg.tokens)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"segments": [s.to_dict() for s in self.segments]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SessionTranscript":
        return cls(segments=tuple(Segment.from_dict(s) for s in data["segments"]))


def split_blocks(features: np.ndarray, block_size: int) -> list[np.ndarray]:
    """Partition an input feature matrix into blocks of ``block_size`` frames.

    The final block may be shorter. ``block_size`` larger than the stream
    yields a single block (label-synchronous limiting case).
    """
    if features.ndim != 2:
        raise FeatureError("feature matrix must be 2-D (frames x dims)")
    if block_size < 1:
        raise ConfigError("block_size must be positive")
    n = features.shape[0]
    return [features[i : i + block_size] for i in range(0, max(n, 1), block_size)]


def encoder_to_input_frame(enc_frame: int, subsample_factor: int) -> int:
    """Last input frame covered by an encoder frame."""
    return (enc_frame + 1) * subsample_factor - 1
