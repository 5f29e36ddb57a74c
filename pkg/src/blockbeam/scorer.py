"""Scorer interfaces and deterministic test implementations.

The search engine sees four abstract roles: a block encoder, a monotonic
decoder, a CTC branch, and an optional language model. All state handles
are value-like: advancing one hypothesis never mutates a sibling's
state, so beam pruning needs no copying discipline.

The table-driven model scripts every probability the search can ask
for, which makes any beam situation constructible in tests. A small
exponential-moving-average encoder exists to make stateful resets and
re-encode priming observable.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from blockbeam.core import (
    ConfigError,
    DecodeConfig,
    EncoderBlock,
    ScenarioError,
    Vocab,
    load_vocab,
)

_DIST_TOL = 1e-9


class EncoderScorer(ABC):
    """Streaming block encoder.

    Tracks the global encoder-frame offset and the attendable tail of
    the previous block across calls. ``start_stream`` rewinds to frame
    zero; ``reset_state`` clears hidden state and tail but keeps the
    global clock running (mid-session reset).
    """

    @property
    @abstractmethod
    def subsample_factor(self) -> int: ...

    @property
    @abstractmethod
    def stateful(self) -> bool:
        """True when hidden state carries across blocks (resets matter)."""

    @abstractmethod
    def start_stream(self) -> None: ...

    @abstractmethod
    def reset_state(self) -> None: ...

    @abstractmethod
    def prime_with(self, features: np.ndarray) -> None:
        """Reset, then warm hidden state on ``features`` without emitting.

        The global offset and the tail are untouched: the primed frames
        were already consumed by the stream clock.
        """

    @abstractmethod
    def encode_block(self, features: np.ndarray, is_reset: bool = False) -> EncoderBlock:
        """Encode one block of input frames.

        Output length is ceil(input frames / subsample_factor). With
        ``is_reset`` the internal state is reinitialized first.
        """

    @property
    @abstractmethod
    def global_offset(self) -> int:
        """Global encoder-frame index the next block will start at."""


class MonotonicDecoderScorer(ABC):
    """Decoder side of the search: selection probabilities and token scores."""

    @abstractmethod
    def initial_state(self) -> Any: ...

    @abstractmethod
    def selection_prob(self, state: Any, frame_index: int, frame: np.ndarray) -> float:
        """Probability of stopping at the given global encoder frame."""

    @abstractmethod
    def token_log_probs(self, state: Any, window: np.ndarray) -> np.ndarray:
        """Log-probability vector over the full vocabulary for the next token.

        ``window`` is the attended chunk (possibly empty for a
        no-boundary completion). The underlying distribution sums to 1
        within 1e-9; the blank token always has probability 0.
        """

    @abstractmethod
    def advance(self, state: Any, token: int) -> Any: ...


class CtcScorer(ABC):
    """Per-frame CTC posteriors for one encoder block."""

    @abstractmethod
    def posteriors(self, block: EncoderBlock) -> np.ndarray:
        """Matrix (block frames x vocab size); each row sums to 1 within 1e-9."""


class LmScorer(ABC):
    """External language model for shallow fusion."""

    @abstractmethod
    def initial_state(self) -> Any: ...

    @abstractmethod
    def score(self, state: Any, token: int) -> tuple[np.ndarray, Any]:
        """Log-prob vector over the vocabulary at ``state``, plus the state
        advanced by ``token``. The vector does not depend on ``token``."""


class MeanPoolEncoder(EncoderScorer):
    """Stateless encoder: mean-pool every subsample_factor input frames.

    The final group of a block may be shorter; it is pooled as-is, so
    output length is always ceil(T / factor) per block.
    """

    def __init__(self, subsample_factor: int, tail_len: int) -> None:
        if subsample_factor < 1:
            raise ConfigError("subsample_factor must be positive")
        if tail_len < 0:
            raise ConfigError("tail_len must be non-negative")
        self._factor = subsample_factor
        self._tail_len = tail_len
        self._offset = 0
        self._tail: np.ndarray | None = None

    @property
    def subsample_factor(self) -> int:
        return self._factor

    @property
    def stateful(self) -> bool:
        return False

    @property
    def global_offset(self) -> int:
        return self._offset

    def start_stream(self) -> None:
        self._offset = 0
        self._tail = None

    def reset_state(self) -> None:
        self._tail = None

    def prime_with(self, features: np.ndarray) -> None:
        self.reset_state()

    def _pool(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2:
            raise ConfigError("feature matrix must be 2-D")
        n = x.shape[0]
        groups = [x[k : k + self._factor] for k in range(0, n, self._factor)]
        if not groups:
            return np.zeros((0, x.shape[1]), dtype=np.float64)
        return np.stack([g.mean(axis=0) for g in groups], axis=0)

    def encode_block(self, features: np.ndarray, is_reset: bool = False) -> EncoderBlock:
        if is_reset:
            self.reset_state()
        frames = self._pool(features)
        dim = frames.shape[1]
        tail = self._tail if self._tail is not None else np.zeros((0, dim))
        block = EncoderBlock(frames=frames, global_offset=self._offset, prev_tail=tail)
        self._offset += frames.shape[0]
        if frames.shape[0] > 0:
            self._tail = frames[-self._tail_len :] if self._tail_len else np.zeros((0, dim))
        return block


class EmaEncoder(EncoderScorer):
    """Stateful encoder: per-channel exponential moving average.

    s <- decay * s + (1 - decay) * x_t per input frame, emitting the
    state at the end of every subsample group (the final, possibly
    short, group included). Hidden state persists across blocks, which
    makes reset and re-encode priming behavior observable.
    """

    def __init__(self, subsample_factor: int, tail_len: int, decay: float) -> None:
        if not 0.0 < decay < 1.0:
            raise ConfigError("decay must lie in (0, 1)")
        if subsample_factor < 1:
            raise ConfigError("subsample_factor must be positive")
        if tail_len < 0:
            raise ConfigError("tail_len must be non-negative")
        self._factor = subsample_factor
        self._tail_len = tail_len
        self._decay = decay
        self._offset = 0
        self._tail: np.ndarray | None = None
        self._state: np.ndarray | None = None

    @property
    def subsample_factor(self) -> int:
        return self._factor

    @property
    def stateful(self) -> bool:
        return True

    @property
    def global_offset(self) -> int:
        return self._offset

    def start_stream(self) -> None:
        self._offset = 0
        self._tail = None
        self._state = None

    def reset_state(self) -> None:
        self._tail = None
        self._state = None

    def _run(self, features: np.ndarray, emit: bool) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2:
            raise ConfigError("feature matrix must be 2-D")
        s = self._state if self._state is not None else np.zeros(x.shape[1])
        out: list[np.ndarray] = []
        n = x.shape[0]
        for t in range(n):
            s = self._decay * s + (1.0 - self._decay) * x[t]
            if emit and (t % self._factor == self._factor - 1 or t == n - 1):
                out.append(s.copy())
        self._state = s
        if not emit or not out:
            return np.zeros((0, x.shape[1] if x.ndim == 2 else 0), dtype=np.float64)
        return np.stack(out, axis=0)

    def prime_with(self, features: np.ndarray) -> None:
        self.reset_state()
        if np.asarray(features).shape[0]:
            self._run(features, emit=False)

    def encode_block(self, features: np.ndarray, is_reset: bool = False) -> EncoderBlock:
        if is_reset:
            self.reset_state()
        frames = self._run(features, emit=True)
        dim = frames.shape[1]
        tail = self._tail if self._tail is not None else np.zeros((0, dim))
        block = EncoderBlock(frames=frames, global_offset=self._offset, prev_tail=tail)
        self._offset += frames.shape[0]
        if frames.shape[0] > 0:
            self._tail = frames[-self._tail_len :] if self._tail_len else np.zeros((0, dim))
        return block


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf


def _check_dist(dist: dict[int, float], size: int, where: str) -> None:
    total = math.fsum(dist.values())
    if abs(total - 1.0) > _DIST_TOL:
        raise ScenarioError(f"{where}: distribution sums to {total}, expected 1")
    for token_id, p in dist.items():
        if not 0 <= token_id < size:
            raise ScenarioError(f"{where}: token id {token_id} out of range")
        if p < 0:
            raise ScenarioError(f"{where}: negative probability {p}")


class TableDecoder(MonotonicDecoderScorer):
    """Decoder scripted by (exact prefix, global encoder frame index).

    State handles are the emitted-prefix tuples themselves. Frame
    content and chunk windows are ignored: determinism comes from the
    script, not the features.
    """

    def __init__(
        self,
        vocab: Vocab,
        selection: dict[tuple[int, ...], dict[int, float]],
        default_selection_prob: float,
        emission: dict[tuple[int, ...], dict[int, float]],
        default_emission: dict[int, float] | None,
    ) -> None:
        self._vocab = vocab
        self._selection = selection
        self._default_p = default_selection_prob
        self._emission = emission
        self._default_emission = default_emission
        # Uniform over everything the decoder may emit, as the fallback
        # when a prefix is unscripted and no default is declared.
        ids = vocab.decoder_token_ids
        self._uniform = {i: 1.0 / len(ids) for i in ids}

    def initial_state(self) -> tuple[int, ...]:
        return ()

    def selection_prob(self, state: Any, frame_index: int, frame: np.ndarray) -> float:
        by_frame = self._selection.get(tuple(state))
        if by_frame is None:
            return self._default_p
        return by_frame.get(frame_index, self._default_p)

    def token_log_probs(self, state: Any, window: np.ndarray) -> np.ndarray:
        dist = self._emission.get(tuple(state))
        if dist is None:
            dist = self._default_emission if self._default_emission is not None else self._uniform
        out = np.full(len(self._vocab), -math.inf, dtype=np.float64)
        for token_id, p in dist.items():
            out[token_id] = _log(p)
        return out

    def advance(self, state: Any, token: int) -> tuple[int, ...]:
        return tuple(state) + (token,)


class TableCtc(CtcScorer):
    """CTC posteriors scripted densely by global encoder frame.

    Frames beyond the scripted matrix emit a blank one-hot, so any
    stream length stays total.
    """

    def __init__(self, vocab: Vocab, rows: np.ndarray) -> None:
        self._vocab = vocab
        self._rows = rows

    def posteriors(self, block: EncoderBlock) -> np.ndarray:
        size = len(self._vocab)
        out = np.zeros((block.num_frames, size), dtype=np.float64)
        scripted = self._rows.shape[0]
        for local in range(block.num_frames):
            g = block.global_offset + local
            if g < scripted:
                out[local] = self._rows[g]
            else:
                out[local, self._vocab.blank_id] = 1.0
        return out


class TableLm(LmScorer):
    """Order-n language model over scripted context tables.

    A context entry lists part of a distribution; the unlisted
    remainder is spread uniformly over the unlisted non-blank tokens.
    Lookup backs off from the longest context suffix to shorter ones;
    with no matching entry the distribution is uniform over non-blank
    tokens. State handles are tuples of the last order-1 tokens.
    """

    def __init__(
        self,
        vocab: Vocab,
        order: int,
        table: dict[tuple[int, ...], dict[int, float]],
    ) -> None:
        if order < 1:
            raise ScenarioError("lm order must be positive")
        self._vocab = vocab
        self._order = order
        self._log_table = {
            ctx: self._complete(ctx, dist) for ctx, dist in table.items()
        }
        ids = vocab.decoder_token_ids
        uniform = np.full(len(vocab), -math.inf, dtype=np.float64)
        uniform[list(ids)] = _log(1.0 / len(ids))
        self._uniform = uniform

    def _complete(self, ctx: tuple[int, ...], dist: dict[int, float]) -> np.ndarray:
        where = f"lm context {ctx}"
        listed = math.fsum(dist.values())
        if listed > 1.0 + _DIST_TOL:
            raise ScenarioError(f"{where}: listed mass {listed} exceeds 1")
        for token_id, p in dist.items():
            if token_id == self._vocab.blank_id:
                raise ScenarioError(f"{where}: blank cannot carry LM mass")
            if p < 0:
                raise ScenarioError(f"{where}: negative probability {p}")
        unlisted = [i for i in self._vocab.decoder_token_ids if i not in dist]
        remainder = 1.0 - listed
        if remainder > _DIST_TOL and not unlisted:
            raise ScenarioError(f"{where}: mass {remainder} left with no token to take it")
        out = np.full(len(self._vocab), -math.inf, dtype=np.float64)
        for token_id, p in dist.items():
            out[token_id] = _log(p)
        if unlisted:
            share = max(remainder, 0.0) / len(unlisted)
            out[unlisted] = _log(share)
        return out

    def initial_state(self) -> tuple[int, ...]:
        return ()

    def score(self, state: Any, token: int) -> tuple[np.ndarray, Any]:
        ctx = tuple(state)
        vec = self._uniform
        for k in range(len(ctx), -1, -1):
            hit = self._log_table.get(ctx[len(ctx) - k :])
            if hit is not None:
                vec = hit
                break
        if self._order == 1:
            next_state: tuple[int, ...] = ()
        else:
            next_state = (ctx + (token,))[-(self._order - 1) :]
        return vec, next_state


@dataclass(frozen=True)
class Scorers:
    """The scorer bundle one decode run operates on."""

    vocab: Vocab
    encoder: EncoderScorer
    decoder: MonotonicDecoderScorer
    ctc: CtcScorer
    lm: LmScorer | None = None


class TableModel:
    """A fully scripted model backing all four scorer interfaces.

    Built from a scenario document; two loads of the same document
    produce bit-identical scorers.
    """

    def __init__(
        self,
        vocab: Vocab,
        default_selection_prob: float,
        selection: dict[tuple[int, ...], dict[int, float]],
        emission: dict[tuple[int, ...], dict[int, float]],
        default_emission: dict[int, float] | None,
        ctc_rows: np.ndarray,
        lm_order: int | None,
        lm_table: dict[tuple[int, ...], dict[int, float]] | None,
        encoder_kind: str = "mean_pool",
        encoder_decay: float = 0.85,
    ) -> None:
        self.vocab = vocab
        self._default_p = default_selection_prob
        self._selection = selection
        self._emission = emission
        self._default_emission = default_emission
        self._ctc_rows = ctc_rows
        self._lm_order = lm_order
        self._lm_table = lm_table
        self.encoder_kind = encoder_kind
        self._decay = encoder_decay

    @property
    def has_lm(self) -> bool:
        return self._lm_order is not None

    def encoder(self, cfg: DecodeConfig) -> EncoderScorer:
        tail_len = cfg.chunk_width - 1
        if self.encoder_kind == "ema":
            return EmaEncoder(cfg.subsample_factor, tail_len, self._decay)
        return MeanPoolEncoder(cfg.subsample_factor, tail_len)

    def decoder(self) -> MonotonicDecoderScorer:
        return TableDecoder(
            self.vocab,
            self._selection,
            self._default_p,
            self._emission,
            self._default_emission,
        )

    def ctc(self) -> CtcScorer:
        return TableCtc(self.vocab, self._ctc_rows)

    def lm(self) -> LmScorer | None:
        if self._lm_order is None:
            return None
        return TableLm(self.vocab, self._lm_order, self._lm_table or {})

    def scorers(self, cfg: DecodeConfig) -> Scorers:
        """Fresh scorer bundle; the encoder starts at stream position zero."""
        return Scorers(
            vocab=self.vocab,
            encoder=self.encoder(cfg),
            decoder=self.decoder(),
            ctc=self.ctc(),
            lm=self.lm(),
        )

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: str | Path | None = None) -> "TableModel":
        if not isinstance(data, dict):
            raise ScenarioError("scenario must be a mapping")
        vocab = _resolve_vocab(data.get("vocab"), base_dir)
        default_p = float(data.get("default_selection_prob", 0.0))
        if not 0.0 <= default_p <= 1.0:
            raise ScenarioError("default_selection_prob must lie in [0, 1]")

        selection: dict[tuple[int, ...], dict[int, float]] = {}
        for entry in _as_list(data.get("selection", []), "selection"):
            prefix = _parse_prefix(entry.get("prefix"), vocab, "selection entry")
            frames = entry.get("frames")
            if not isinstance(frames, dict):
                raise ScenarioError(f"selection entry {prefix}: frames must be a mapping")
            parsed: dict[int, float] = {}
            for key, p in frames.items():
                frame = int(key)
                p = float(p)
                if frame < 0:
                    raise ScenarioError(f"selection entry {prefix}: negative frame {frame}")
                if not 0.0 <= p <= 1.0:
                    raise ScenarioError(f"selection entry {prefix}: probability {p} outside [0, 1]")
                parsed[frame] = p
            if prefix in selection:
                raise ScenarioError(f"duplicate selection prefix {prefix}")
            selection[prefix] = parsed

        emission: dict[tuple[int, ...], dict[int, float]] = {}
        for entry in _as_list(data.get("emission", []), "emission"):
            prefix = _parse_prefix(entry.get("prefix"), vocab, "emission entry")
            dist = _parse_dist(entry.get("dist"), vocab, f"emission entry {prefix}")
            _check_dist(dist, len(vocab), f"emission entry {prefix}")
            if prefix in emission:
                raise ScenarioError(f"duplicate emission prefix {prefix}")
            emission[prefix] = dist

        default_emission = None
        if "default_emission" in data:
            default_emission = _parse_dist(data["default_emission"], vocab, "default_emission")
            _check_dist(default_emission, len(vocab), "default_emission")

        ctc_rows = _parse_ctc(data.get("ctc"), vocab)

        lm_order: int | None = None
        lm_table: dict[tuple[int, ...], dict[int, float]] | None = None
        if "lm" in data:
            lm_data = data["lm"]
            if not isinstance(lm_data, dict):
                raise ScenarioError("lm must be a mapping")
            lm_order = int(lm_data.get("order", 1))
            lm_table = {}
            for entry in _as_list(lm_data.get("table", []), "lm table"):
                ctx = _parse_prefix(entry.get("context"), vocab, "lm entry")
                if lm_order > 1 and len(ctx) > lm_order - 1:
                    raise ScenarioError(f"lm context {ctx} longer than order allows")
                if lm_order == 1 and len(ctx) > 0:
                    raise ScenarioError(f"lm context {ctx} not allowed at order 1")
                dist = _parse_dist(entry.get("dist"), vocab, f"lm context {ctx}")
                if ctx in lm_table:
                    raise ScenarioError(f"duplicate lm context {ctx}")
                lm_table[ctx] = dist

        encoder_kind = "mean_pool"
        decay = 0.85
        if "encoder" in data:
            enc = data["encoder"]
            if not isinstance(enc, dict):
                raise ScenarioError("encoder must be a mapping")
            encoder_kind = enc.get("type", "mean_pool")
            if encoder_kind not in ("mean_pool", "ema"):
                raise ScenarioError(f"unknown encoder type {encoder_kind!r}")
            decay = float(enc.get("decay", 0.85))

        model = cls(
            vocab=vocab,
            default_selection_prob=default_p,
            selection=selection,
            emission=emission,
            default_emission=default_emission,
            ctc_rows=ctc_rows,
            lm_order=lm_order,
            lm_table=lm_table,
            encoder_kind=encoder_kind,
            encoder_decay=decay,
        )
        if lm_order is not None:
            model.lm()  # validate the table eagerly so load fails, not decode
        return model


def _as_list(value: Any, where: str) -> list[Any]:
    if not isinstance(value, list):
        raise ScenarioError(f"{where} must be a list")
    for item in value:
        if not isinstance(item, dict):
            raise ScenarioError(f"{where} entries must be mappings")
    return value


def _resolve_vocab(value: Any, base_dir: str | Path | None) -> Vocab:
    if isinstance(value, list):
        if len(value) < 2:
            raise ScenarioError("inline vocab must list blank and eos first")
        return Vocab(tokens=tuple(str(t) for t in value), blank_id=0, eos_id=1)
    if isinstance(value, str):
        path = Path(value)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        if not path.exists():
            raise ScenarioError(f"vocab file not found: {path}")
        return load_vocab(path)
    raise ScenarioError("scenario must declare vocab (token list or file path)")


def _parse_prefix(value: Any, vocab: Vocab, where: str) -> tuple[int, ...]:
    if value is None:
        raise ScenarioError(f"{where}: missing prefix/context")
    if not isinstance(value, list):
        raise ScenarioError(f"{where}: prefix must be a list of token strings")
    try:
        return tuple(vocab.id_of(str(t)) for t in value)
    except Exception as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def _parse_dist(value: Any, vocab: Vocab, where: str) -> dict[int, float]:
    if not isinstance(value, dict):
        raise ScenarioError(f"{where}: dist must be a mapping token -> probability")
    out: dict[int, float] = {}
    for token, p in value.items():
        try:
            token_id = vocab.id_of(str(token))
        except Exception as exc:
            raise ScenarioError(f"{where}: {exc}") from None
        if token_id == vocab.blank_id:
            raise ScenarioError(f"{where}: blank cannot appear in a token distribution")
        out[token_id] = float(p)
    return out


def _parse_ctc(value: Any, vocab: Vocab) -> np.ndarray:
    if value is None:
        return np.zeros((0, len(vocab)), dtype=np.float64)
    if not isinstance(value, list):
        raise ScenarioError("ctc must be a list of rows")
    size = len(vocab)
    rows = np.zeros((len(value), size), dtype=np.float64)
    for i, row in enumerate(value):
        if not isinstance(row, list) or len(row) != size:
            raise ScenarioError(f"ctc row {i}: expected {size} entries")
        arr = np.asarray([float(v) for v in row], dtype=np.float64)
        if arr.min() < 0:
            raise ScenarioError(f"ctc row {i}: negative probability")
        if abs(float(arr.sum()) - 1.0) > _DIST_TOL:
            raise ScenarioError(f"ctc row {i}: sums to {float(arr.sum())}, expected 1")
        rows[i] = arr
    return rows


def load_table_model(path: str | Path) -> TableModel:
    """Load a scenario document into a scripted model."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {p}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{p}: {exc}") from None
    return TableModel.from_dict(data, base_dir=p.parent)


def load_table_model_text(text: str, base_dir: str | Path | None = None) -> TableModel:
    """Parse a scenario document from a string (service inline payloads)."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(str(exc)) from None
    return TableModel.from_dict(data, base_dir=base_dir)


def energy_vad_segment(
    frames: np.ndarray,
    energy_threshold: float,
    min_silence: int,
    margin: int,
) -> list[tuple[int, int]]:
    """Segment a feature stream by per-frame energy.

    A frame is speech when its mean squared magnitude reaches the
    threshold. Maximal speech runs are kept, gaps shorter than
    ``min_silence`` merged, then ``margin`` frames padded on both sides
    and clipped to the stream; padding-induced overlaps merge too.
    Segments are (start, end) with end exclusive.
    """
    if min_silence < 1:
        raise ConfigError("min_silence must be at least 1")
    if margin < 0:
        raise ConfigError("margin must be non-negative")
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError("feature matrix must be 2-D")
    n = x.shape[0]
    if n == 0:
        return []
    energy = np.mean(x * x, axis=1)
    speech = energy >= energy_threshold
    runs: list[tuple[int, int]] = []
    start: int | None = None
    for t in range(n):
        if speech[t] and start is None:
            start = t
        elif not speech[t] and start is not None:
            runs.append((start, t))
            start = None
    if start is not None:
        runs.append((start, n))
    if not runs:
        return []
    merged = [runs[0]]
    for s, e in runs[1:]:
        if s - merged[-1][1] < min_silence:
            merged[-1] = (merged[-1][0], e)
        else:
            merged.append((s, e))
    padded = [(max(0, s - margin), min(n, e + margin)) for s, e in merged]
    out = [padded[0]]
    for s, e in padded[1:]:
        if s <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], e))
        else:
            out.append((s, e))
    return out
