"""Long-form inference without pre-segmentation.

The session runs block-synchronous search continuously and watches the
CTC branch for a run of blank-equivalent frames (condition 1) or a
completion-topped beam (condition 2). Either marks the end of the
current block as a reset point: the best hypothesis is committed to the
session transcript, decoder/beam/encoder states are cleared (optionally
re-warmed on the previous block), and search continues. A safeguard
blocks resets until enough input has accumulated since the last one.

Clock reminder: the safeguard counts input frames, the blank run counts
encoder frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from blockbeam.core import (
    BeamSets,
    ConfigError,
    DecodeConfig,
    DecodeError,
    Segment,
    SessionTranscript,
    split_blocks,
)
from blockbeam.scorer import Scorers, energy_vad_segment
from blockbeam.search import (
    WorkCounters,
    best_hypothesis,
    block_sync_step,
    decode_utterance,
    seed_hypothesis,
    transcript_tokens,
)

_POSTERIOR_TOL = 1e-9


@dataclass(frozen=True)
class ResetTracker:
    """Counters feeding the reset decision.

    frames_since_reset is t (input frames); blank_run is the count of
    consecutive blank-equivalent encoder frames; is_reset_pending
    latches once the blank run reaches its threshold and stays set until
    the reset happens, even if later frames break the run.
    """

    frames_since_reset: int = 0
    blank_run: int = 0
    is_reset_pending: bool = False

    def advanced(self, input_frames: int) -> "ResetTracker":
        return replace(self, frames_since_reset=self.frames_since_reset + input_frames)


def safeguard_satisfied(frames_since_reset: int, cfg: DecodeConfig) -> bool:
    return not cfg.enable_safeguard or frames_since_reset >= cfg.safeguard


def blank_run_update(
    tracker: ResetTracker,
    frame_posterior: np.ndarray,
    cfg: DecodeConfig,
    blank_id: int = 0,
) -> ResetTracker:
    """Advance the blank run by one encoder frame of CTC posteriors.

    A frame counts as blank when its argmax is the blank token or its
    maximum is a weak spike below spike_threshold; anything else resets
    the run to zero. The pending flag is gated by the safeguard.
    """
    p = np.asarray(frame_posterior, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise DecodeError("posterior must be a non-empty vector")
    total = float(p.sum())
    if abs(total - 1.0) > _POSTERIOR_TOL:
        raise DecodeError(f"posterior sums to {total}, expected 1")
    top = int(np.argmax(p))
    blank_like = top == blank_id or float(p[top]) < cfg.spike_threshold
    run = tracker.blank_run + 1 if blank_like else 0
    pending = tracker.is_reset_pending
    if run >= cfg.blank_threshold and safeguard_satisfied(
        tracker.frames_since_reset, cfg
    ):
        pending = True
    return ResetTracker(
        frames_since_reset=tracker.frames_since_reset,
        blank_run=run,
        is_reset_pending=pending,
    )


def check_condition2(
    beams: BeamSets,
    cfg: DecodeConfig,
    frames_since_reset: int,
    eos_id: int = 1,
) -> bool:
    """True when the best current hypothesis already ended with eos.

    Gated by the toggle and by the safeguard; an empty beam never
    triggers.
    """
    if not cfg.enable_condition2:
        return False
    if not safeguard_satisfied(frames_since_reset, cfg):
        return False
    pool = beams.active + beams.parked + beams.finished
    if not pool:
        return False
    best = best_hypothesis(pool, cfg)
    return bool(best.prefix) and best.prefix[-1] == eos_id


def _segment_from(beams: BeamSets, cfg: DecodeConfig, scorers: Scorers, reason: str) -> tuple[Segment, object]:
    """Best hypothesis as a Segment plus its LM state (None for an empty beam)."""
    pool = beams.active + beams.parked + beams.finished
    if not pool:
        return Segment((), (), (), reason, None), None
    best = best_hypothesis(pool, cfg)
    tokens = transcript_tokens(best, scorers.vocab.eos_id)
    keep = len(tokens)
    return (
        Segment(
            tokens=tokens,
            emit_times=best.emit_times[:keep],
            boundary_times=best.boundary_times[:keep],
            reason=reason,
            score=best.raw_log_score,
        ),
        best.lm_state,
    )


def perform_reset(
    beams: BeamSets,
    scorers: Scorers,
    prev_block: np.ndarray | None,
    cfg: DecodeConfig,
    reason: str,
) -> BeamSets:
    """Commit the best hypothesis and restart the search state.

    The pushed segment joins the session list. The encoder is either
    re-warmed by re-encoding ``prev_block`` from scratch (stateful
    encoder with back-off enabled) or cleared outright. The next seed's
    LM state carries over from the pushed hypothesis when enabled;
    decoder state always restarts.
    """
    segment, lm_state = _segment_from(beams, cfg, scorers, reason)
    if not cfg.enable_lm_carryover:
        lm_state = None
    if (
        scorers.encoder.stateful
        and cfg.enable_backoff_init
        and prev_block is not None
        and np.asarray(prev_block).shape[0] > 0
    ):
        scorers.encoder.prime_with(prev_block)
    else:
        scorers.encoder.reset_state()
    seed = seed_hypothesis(scorers.encoder.global_offset, scorers, lm_state=lm_state)
    return BeamSets(
        active=(seed,),
        parked=(),
        expanded=(),
        finished=(),
        session=beams.session + (segment,),
    )


@dataclass
class SessionResult:
    """Outcome of one long-form run."""

    transcript: SessionTranscript
    segment_end_inputs: tuple[int, ...]
    segment_end_encs: tuple[int, ...]
    counters: WorkCounters
    subsample_factor: int

    def segment_token_lists(self) -> list[list[int]]:
        return [list(s.tokens) for s in self.transcript.segments]


def vad_free_decode(
    features: np.ndarray,
    cfg: DecodeConfig,
    scorers: Scorers,
    counters: WorkCounters | None = None,
) -> SessionResult:
    """Decode an unsegmented stream end to end.

    Per block: encode, search, advance the input-frame clock, then
    (safeguard permitting) update the blank run over the block's CTC
    posteriors and check the completion condition. A flagged reset fires
    at the block end; a blank run takes priority over a completion when
    both fire in the same block. The stream end always pushes a final
    segment, empty or not.
    """
    if cfg.lm_weight > 0.0 and scorers.lm is None:
        raise ConfigError("lm_weight is positive but no language model is available")
    if counters is None:
        counters = WorkCounters()
    blank_id = scorers.vocab.blank_id
    eos_id = scorers.vocab.eos_id

    scorers.encoder.start_stream()
    beams = BeamSets(active=(seed_hypothesis(0, scorers),))
    tracker = ResetTracker()
    consumed = 0
    end_inputs: list[int] = []
    end_encs: list[int] = []

    for index, chunk in enumerate(split_blocks(features, cfg.block_size)):
        block = scorers.encoder.encode_block(chunk)
        counters.blocks += 1
        beams = block_sync_step(
            block, beams, cfg, scorers, counters=counters, block_index=index
        )
        consumed += chunk.shape[0]
        tracker = tracker.advanced(chunk.shape[0])

        reason: str | None = None
        if safeguard_satisfied(tracker.frames_since_reset, cfg):
            for row in scorers.ctc.posteriors(block):
                tracker = blank_run_update(tracker, row, cfg, blank_id=blank_id)
            if tracker.is_reset_pending:
                reason = "blank_run"
            elif check_condition2(beams, cfg, tracker.frames_since_reset, eos_id):
                reason = "eos"

        if reason is not None:
            beams = perform_reset(beams, scorers, chunk, cfg, reason)
            tracker = ResetTracker()
            end_inputs.append(consumed)
            end_encs.append(scorers.encoder.global_offset)

    segment, _ = _segment_from(beams, cfg, scorers, "end_of_stream")
    session = beams.session + (segment,)
    end_inputs.append(consumed)
    end_encs.append(scorers.encoder.global_offset)
    return SessionResult(
        transcript=SessionTranscript(segments=session),
        segment_end_inputs=tuple(end_inputs),
        segment_end_encs=tuple(end_encs),
        counters=counters,
        subsample_factor=scorers.encoder.subsample_factor,
    )


def vad_cascade_decode(
    features: np.ndarray,
    cfg: DecodeConfig,
    make_scorers,
    energy_threshold: float = 1e-3,
    min_silence: int = 40,
    margin: int = 0,
    counters: WorkCounters | None = None,
) -> SessionResult:
    """Baseline: segment by energy first, then decode each piece alone.

    ``make_scorers`` builds a fresh scorer bundle per segment, so
    segments share nothing. Emit times are shifted to global encoder
    frames by the segment's start offset (floor division, bumped past
    the previous segment's end so the global encoder clock stays
    monotone even when segment boundaries straddle subsample groups).
    """
    if counters is None:
        counters = WorkCounters()
    pieces = energy_vad_segment(features, energy_threshold, min_silence, margin)
    segments: list[Segment] = []
    end_inputs: list[int] = []
    end_encs: list[int] = []
    factor = cfg.subsample_factor
    prev_end_enc = 0
    for start, end in pieces:
        scorers: Scorers = make_scorers()
        result = decode_utterance(features[start:end], cfg, scorers, counters=counters)
        tokens = transcript_tokens(result.best, scorers.vocab.eos_id)
        keep = len(tokens)
        shift = max(start // factor, prev_end_enc)
        segments.append(
            Segment(
                tokens=tokens,
                emit_times=tuple(t + shift for t in result.best.emit_times[:keep]),
                boundary_times=tuple(
                    t + shift for t in result.best.boundary_times[:keep]
                ),
                reason="end_of_stream",
                score=result.best.raw_log_score,
            )
        )
        prev_end_enc = shift + result.total_enc_frames
        end_inputs.append(end)
        end_encs.append(prev_end_enc)
    return SessionResult(
        transcript=SessionTranscript(segments=tuple(segments)),
        segment_end_inputs=tuple(end_inputs),
        segment_end_encs=tuple(end_encs),
        counters=counters,
        subsample_factor=factor,
    )
