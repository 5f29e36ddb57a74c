"""Block-synchronous beam search.

One call to :func:`block_sync_step` runs the search over a single
encoder block: up to U_max output steps, each scanning every active
hypothesis forward for its next attention boundary, expanding the ones
that found one, parking the ones that did not, and pruning the
expansions to the beam width. Setting the block to one encoder frame
gives frame-synchronous decoding; a block covering the whole stream
gives label-synchronous decoding.

Scores are sums of fused token log probabilities. Ranking optionally
divides by the output length so longer hypotheses are not penalized for
accumulating more log terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from blockbeam.attention import chunk_window, empty_window, scan_for_boundary
from blockbeam.core import (
    BeamSets,
    ConfigError,
    DecodeConfig,
    DecodeError,
    EncoderBlock,
    Hypothesis,
    split_blocks,
)
from blockbeam.scorer import Scorers


@dataclass
class WorkCounters:
    """Instrumentation for the linear-work claim.

    frames_scanned counts selection-probability probes; decoder_calls
    counts token-distribution evaluations (the per-step expensive op);
    output_steps counts search loop iterations; blocks counts encoder
    blocks fed through the search.
    """

    frames_scanned: int = 0
    decoder_calls: int = 0
    output_steps: int = 0
    blocks: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "frames_scanned": self.frames_scanned,
            "decoder_calls": self.decoder_calls,
            "output_steps": self.output_steps,
            "blocks": self.blocks,
        }


@dataclass
class BlockSearchState:
    """Per-block search bookkeeping.

    steps_taken never exceeds the block's output budget
    U_max = max(1, floor(block frames x length_ratio)).
    """

    beams: BeamSets
    steps_taken: int = 0
    block_index: int = 0


def u_max_for(num_frames: int, cfg: DecodeConfig) -> int:
    """Output-step budget for a block of ``num_frames`` encoder frames."""
    return max(1, math.floor(num_frames * cfg.length_ratio))


def ordering_key(h: Hypothesis, cfg: DecodeConfig) -> tuple:
    """Sort key under which the best hypothesis is smallest.

    Primary: negated score, length-normalized when enabled. Ties break
    by shorter prefix, then token ids, then scan position, which makes
    the order total on any reachable set.
    """
    if cfg.enable_length_norm:
        primary = h.raw_log_score / max(1, len(h.prefix))
    else:
        primary = h.raw_log_score
    return (-primary, len(h.prefix), h.prefix, h.head, h.scan_from)


def best_hypothesis(pool: tuple[Hypothesis, ...], cfg: DecodeConfig) -> Hypothesis:
    if not pool:
        raise DecodeError("no hypothesis to rank")
    return min(pool, key=lambda h: ordering_key(h, cfg))


def fuse_score(token_logp: float, lm_logp: float, cfg: DecodeConfig) -> float:
    """Shallow fusion: token log prob plus weighted LM log prob."""
    if cfg.lm_weight == 0.0:
        return token_logp
    if token_logp == -math.inf or lm_logp == -math.inf:
        return -math.inf
    return token_logp + cfg.lm_weight * lm_logp


def seed_hypothesis(
    start_frame: int, scorers: Scorers, lm_state: Any = None
) -> Hypothesis:
    """Empty-prefix hypothesis scanning from ``start_frame`` (global)."""
    if lm_state is None and scorers.lm is not None:
        lm_state = scorers.lm.initial_state()
    return Hypothesis(
        prefix=(),
        raw_log_score=0.0,
        head=start_frame,
        scan_from=start_frame,
        decoder_state=scorers.decoder.initial_state(),
        lm_state=lm_state,
    )


def _lm_parts(
    scorers: Scorers, cfg: DecodeConfig, state: Any, token: int
) -> tuple[float, Any]:
    """LM log prob for ``token`` at ``state`` and the advanced state."""
    if cfg.lm_weight == 0.0 or scorers.lm is None:
        return 0.0, state
    vec, next_state = scorers.lm.score(state, token)
    return float(vec[token]), next_state


def _updated_finished(
    finished: tuple[Hypothesis, ...], candidate: Hypothesis, cfg: DecodeConfig
) -> tuple[Hypothesis, ...]:
    """Keep only the running best completed hypothesis."""
    if candidate.raw_log_score == -math.inf:
        return finished
    if not finished:
        return (candidate,)
    best = min(finished + (candidate,), key=lambda h: ordering_key(h, cfg))
    return (best,)


def block_sync_step(
    block: EncoderBlock,
    beams: BeamSets,
    cfg: DecodeConfig,
    scorers: Scorers,
    counters: WorkCounters | None = None,
    step_cap: int | None = None,
    block_index: int = 0,
) -> BeamSets:
    """Run the search over one encoder block.

    Per output step: every active hypothesis scans from its pointer to
    the block's last frame (the retained tail of the previous block is
    scannable). No boundary parks the hypothesis for the block and, when
    enabled, spawns its completion against a zero context. A boundary
    expands the hypothesis by every emittable token; completions go to
    the finished set, the rest are pruned to the beam width. The loop
    ends when the active set empties or the step budget runs out; parked
    hypotheses then rejoin the active set.

    A zero-frame block is a no-op. ``step_cap`` tightens (never loosens)
    the block's own budget; the utterance-level drain uses it.
    """
    if counters is None:
        counters = WorkCounters()
    if block.num_frames == 0:
        return beams

    vocab = scorers.vocab
    eos = vocab.eos_id
    budget = u_max_for(block.num_frames, cfg)
    if step_cap is not None:
        budget = min(budget, step_cap)

    state = BlockSearchState(beams=beams, block_index=block_index)
    # A previous block's exit merged parked back into active; fold in
    # anything still sitting there so no hypothesis is orphaned.
    active = list(beams.active) + list(beams.parked)
    parked: list[Hypothesis] = []
    finished = beams.finished
    history_start = block.global_offset - block.tail_len
    dim = block.frames.shape[1]

    while active and state.steps_taken < budget:
        state.steps_taken += 1
        counters.output_steps += 1
        candidates: list[Hypothesis] = []
        for h in active:
            start = max(h.scan_from, history_start)
            boundary, probed = scan_for_boundary(
                lambda j, _h=h: scorers.decoder.selection_prob(
                    _h.decoder_state, j, block.frame(j)
                ),
                start,
                block.last_frame,
                cfg.boundary_threshold,
            )
            counters.frames_scanned += probed
            if boundary is None:
                resting = h.parked_past(block.last_frame)
                parked.append(resting)
                if cfg.enable_parked_eos:
                    log_probs = scorers.decoder.token_log_probs(
                        h.decoder_state, empty_window(dim)
                    )
                    counters.decoder_calls += 1
                    lm_logp, _ = _lm_parts(scorers, cfg, h.lm_state, eos)
                    delta = fuse_score(float(log_probs[eos]), lm_logp, cfg)
                    done = resting.extended(
                        eos, delta, h.head, block.last_frame, h.decoder_state, h.lm_state
                    )
                    finished = _updated_finished(finished, done, cfg)
                continue

            window = chunk_window(block, boundary, cfg.chunk_width)
            log_probs = scorers.decoder.token_log_probs(h.decoder_state, window)
            counters.decoder_calls += 1
            for token in vocab.decoder_token_ids:
                lm_logp, lm_next = _lm_parts(scorers, cfg, h.lm_state, token)
                delta = fuse_score(float(log_probs[token]), lm_logp, cfg)
                if delta == -math.inf:
                    continue
                if token == eos:
                    done = h.extended(
                        eos, delta, boundary, block.last_frame, h.decoder_state, h.lm_state
                    )
                    finished = _updated_finished(finished, done, cfg)
                else:
                    extended = h.extended(
                        token,
                        delta,
                        boundary,
                        block.last_frame,
                        scorers.decoder.advance(h.decoder_state, token),
                        lm_next,
                    )
                    candidates.append(extended)
        candidates.sort(key=lambda h: ordering_key(h, cfg))
        active = candidates[: cfg.beam_width]

    merged = sorted(active + parked, key=lambda h: ordering_key(h, cfg))
    return BeamSets(
        active=tuple(merged),
        parked=(),
        expanded=(),
        finished=finished,
        session=beams.session,
    )


@dataclass
class DecodeResult:
    """Outcome of one utterance decode."""

    best: Hypothesis
    beams: BeamSets
    counters: WorkCounters
    total_enc_frames: int
    subsample_factor: int

    @property
    def tokens(self) -> tuple[int, ...]:
        return self.best.prefix


def transcript_tokens(h: Hypothesis, eos_id: int) -> tuple[int, ...]:
    """Prefix with a terminal completion marker stripped."""
    if h.prefix and h.prefix[-1] == eos_id:
        return h.prefix[:-1]
    return h.prefix


def decode_utterance(
    features: np.ndarray,
    cfg: DecodeConfig,
    scorers: Scorers,
    counters: WorkCounters | None = None,
) -> DecodeResult:
    """Decode one feature stream block by block and return the argmax.

    After the last block, hypotheses that can still advance within it
    (the step budget cut them off mid-block) are given the remaining
    output budget, so the stream fully drains before finalization. The
    total budget is max(1, floor(total encoder frames x length_ratio)),
    which also makes a whole-stream block equal to label-synchronous
    decoding with the same cap.
    """
    if cfg.lm_weight > 0.0 and scorers.lm is None:
        raise ConfigError("lm_weight is positive but no language model is available")
    if counters is None:
        counters = WorkCounters()

    scorers.encoder.start_stream()
    beams = BeamSets(active=(seed_hypothesis(0, scorers),))
    steps_used = 0
    total_enc = 0
    last_block: EncoderBlock | None = None

    for index, chunk in enumerate(split_blocks(features, cfg.block_size)):
        block = scorers.encoder.encode_block(chunk)
        counters.blocks += 1
        before = counters.output_steps
        beams = block_sync_step(
            block, beams, cfg, scorers, counters=counters, block_index=index
        )
        steps_used += counters.output_steps - before
        total_enc += block.num_frames
        last_block = block

    budget_total = max(1, math.floor(total_enc * cfg.length_ratio))
    while (
        last_block is not None
        and steps_used < budget_total
        and any(h.scan_from <= last_block.last_frame for h in beams.active)
    ):
        before = counters.output_steps
        beams = block_sync_step(
            last_block,
            beams,
            cfg,
            scorers,
            counters=counters,
            step_cap=budget_total - steps_used,
        )
        executed = counters.output_steps - before
        steps_used += executed
        if executed == 0:
            break

    pool = beams.active + beams.finished
    best = best_hypothesis(pool, cfg)
    return DecodeResult(
        best=best,
        beams=beams,
        counters=counters,
        total_enc_frames=total_enc,
        subsample_factor=scorers.encoder.subsample_factor,
    )
