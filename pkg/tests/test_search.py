"""Block-synchronous search: ordering, budgets, expansion, drain."""

import math

import numpy as np
import pytest

from blockbeam.core import (
    BeamSets,
    ConfigError,
    DecodeConfig,
    DecodeError,
    EncoderBlock,
    Hypothesis,
    Vocab,
)
from blockbeam.scorer import MeanPoolEncoder, Scorers, TableCtc, TableDecoder, TableModel
from blockbeam.search import (
    WorkCounters,
    best_hypothesis,
    block_sync_step,
    decode_utterance,
    fuse_score,
    ordering_key,
    seed_hypothesis,
    transcript_tokens,
    u_max_for,
)

VOCAB = Vocab(tokens=("<blank>", "<eos>", "a", "b"))


def hyp(prefix=(), score=0.0, head=0, scan_from=None, state=None):
    prefix = tuple(prefix)
    return Hypothesis(
        prefix=prefix,
        raw_log_score=score,
        head=head,
        scan_from=head if scan_from is None else scan_from,
        decoder_state=prefix if state is None else state,
        emit_times=tuple(head for _ in prefix),
        boundary_times=tuple(head for _ in prefix),
    )


def bundle(selection, default_p, emission, default_emission=None, vocab=VOCAB, factor=1, chunk=2):
    return Scorers(
        vocab=vocab,
        encoder=MeanPoolEncoder(subsample_factor=factor, tail_len=chunk - 1),
        decoder=TableDecoder(vocab, selection, default_p, emission, default_emission),
        ctc=TableCtc(vocab, np.zeros((0, len(vocab)))),
        lm=None,
    )


def zero_block(n, offset=0, tail=0, dim=2):
    return EncoderBlock(
        frames=np.zeros((n, dim)), global_offset=offset, prev_tail=np.zeros((tail, dim))
    )


class TestBudget:
    def test_u_max_floor_and_clamp(self):
        assert u_max_for(8, DecodeConfig(length_ratio=1.0)) == 8
        assert u_max_for(3, DecodeConfig(length_ratio=0.4)) == 1
        assert u_max_for(8, DecodeConfig(length_ratio=2.0)) == 16
        assert u_max_for(0, DecodeConfig()) == 1


class TestOrderingKey:
    def test_length_norm_prefers_longer_here(self):
        short = hyp((2,), -1.0)
        longer = hyp((2, 3), -1.9)
        norm = DecodeConfig()
        raw = DecodeConfig(enable_length_norm=False)
        assert best_hypothesis((short, longer), norm) is longer
        assert best_hypothesis((short, longer), raw) is short

    def test_empty_prefix_denominator_clamped(self):
        assert ordering_key(hyp((), 0.0), DecodeConfig())[0] == 0.0

    def test_score_tie_breaks_by_token_ids(self):
        ab = hyp((2, 3), -1.0)
        ac = hyp((2, 4), -1.0)
        v = Vocab(tokens=("<blank>", "<eos>", "a", "b", "c"))
        assert v  # ids 4 exists
        assert best_hypothesis((ac, ab), DecodeConfig()) is ab

    def test_key_orders_any_pool_totally(self):
        pool = [
            hyp((2,), -1.0),
            hyp((3,), -1.0),
            hyp((2, 3), -2.0),
            hyp((2,), -1.0, head=4),
            hyp((), 0.0),
        ]
        cfg = DecodeConfig()
        keys = sorted(ordering_key(h, cfg) for h in pool)
        assert len(set(keys)) == len(pool)
        again = sorted(pool, key=lambda h: ordering_key(h, cfg))
        assert again == sorted(pool, key=lambda h: ordering_key(h, cfg))

    def test_empty_pool_rejected(self):
        with pytest.raises(DecodeError):
            best_hypothesis((), DecodeConfig())


class TestFuseScore:
    def test_zero_weight_ignores_lm(self):
        cfg = DecodeConfig(lm_weight=0.0)
        assert fuse_score(math.log(0.5), -math.inf, cfg) == math.log(0.5)

    def test_weighted_sum(self):
        cfg = DecodeConfig(lm_weight=0.5)
        got = fuse_score(math.log(0.5), math.log(0.25), cfg)
        assert got == math.log(0.25)

    def test_impossible_token_absorbs(self):
        cfg = DecodeConfig(lm_weight=0.5)
        assert fuse_score(-math.inf, math.log(0.9), cfg) == -math.inf
        assert fuse_score(math.log(0.9), -math.inf, cfg) == -math.inf


class TestBlockSyncStep:
    def worked_example(self):
        scorers = bundle(
            selection={(): {0: 1.0}},
            default_p=0.0,
            emission={(): {2: 0.6, 3: 0.3, 1: 0.1}},
        )
        cfg = DecodeConfig(beam_width=2, subsample_factor=1, chunk_width=2)
        beams = BeamSets(active=(seed_hypothesis(0, scorers),))
        return scorers, cfg, beams

    def test_single_step_expansion(self):
        scorers, cfg, beams = self.worked_example()
        counters = WorkCounters()
        out = block_sync_step(zero_block(2), beams, cfg, scorers, counters, step_cap=1)
        assert [h.prefix for h in out.active] == [(2,), (3,)]
        assert out.active[0].raw_log_score == math.log(0.6)
        assert out.active[1].raw_log_score == math.log(0.3)
        assert [h.prefix for h in out.finished] == [(1,)]
        assert out.finished[0].raw_log_score == math.log(0.1)
        assert counters.output_steps == 1
        assert counters.decoder_calls == 1
        assert counters.frames_scanned == 1

    def test_children_record_boundary_and_commit(self):
        scorers, cfg, beams = self.worked_example()
        out = block_sync_step(zero_block(2), beams, cfg, scorers, step_cap=1)
        child = out.active[0]
        assert child.boundary_times == (0,)
        assert child.emit_times == (1,)  # committed at the block's last frame
        assert child.head == 0
        assert child.scan_from == 0
        assert child.decoder_state == (2,)

    def test_empty_active_returns_unchanged(self):
        scorers, cfg, _ = self.worked_example()
        beams = BeamSets()
        out = block_sync_step(zero_block(2), beams, cfg, scorers)
        assert out == beams

    def test_zero_frame_block_is_a_no_op(self):
        scorers, cfg, beams = self.worked_example()
        out = block_sync_step(zero_block(0), beams, cfg, scorers)
        assert out == beams

    def test_head_past_block_parks_unchanged(self):
        scorers, cfg, _ = self.worked_example()
        cfg = cfg.replace(enable_parked_eos=False)
        parked = hyp((2,), -0.5, head=10)
        beams = BeamSets(active=(parked,))
        out = block_sync_step(zero_block(2, offset=4), beams, cfg, scorers)
        assert out.active == (parked,)
        assert out.parked == ()

    def test_no_boundary_parks_past_block(self):
        scorers = bundle(selection={}, default_p=0.0, emission={}, default_emission={2: 1.0})
        cfg = DecodeConfig(beam_width=2, subsample_factor=1, chunk_width=1)
        beams = BeamSets(active=(seed_hypothesis(0, scorers),))
        counters = WorkCounters()
        out = block_sync_step(zero_block(4), beams, cfg, scorers, counters)
        assert len(out.active) == 1
        assert out.active[0].scan_from == 4
        assert out.active[0].prefix == ()
        assert counters.frames_scanned == 4
        assert counters.output_steps == 1

    def test_parked_eos_spawn_toggle(self):
        selection = {}
        emission = {(): {2: 0.5, 1: 0.5}}
        on = bundle(selection, 0.0, emission)
        cfg = DecodeConfig(beam_width=2, subsample_factor=1, chunk_width=1)
        beams = BeamSets(active=(seed_hypothesis(0, on),))
        out = block_sync_step(zero_block(3), beams, cfg, on)
        assert [h.prefix for h in out.finished] == [(1,)]
        assert out.finished[0].raw_log_score == math.log(0.5)
        off_cfg = cfg.replace(enable_parked_eos=False)
        out_off = block_sync_step(zero_block(3), beams, off_cfg, on)
        assert out_off.finished == ()

    def test_impossible_expansions_skipped(self):
        scorers = bundle(
            selection={(): {0: 1.0}},
            default_p=0.0,
            emission={(): {2: 1.0}},  # b and eos carry no mass
        )
        cfg = DecodeConfig(beam_width=4, subsample_factor=1, chunk_width=1)
        beams = BeamSets(active=(seed_hypothesis(0, scorers),))
        out = block_sync_step(zero_block(1), beams, cfg, scorers, step_cap=1)
        assert [h.prefix for h in out.active] == [(2,)]
        assert out.finished == ()

    def test_pruning_keeps_beam_width(self):
        vocab = Vocab(tokens=("<blank>", "<eos>", "a", "b", "c"))
        scorers = bundle(
            selection={},
            default_p=1.0,
            emission={},
            default_emission={2: 0.5, 3: 0.3, 4: 0.2},
            vocab=vocab,
        )
        cfg = DecodeConfig(beam_width=2, subsample_factor=1, chunk_width=1)
        beams = BeamSets(active=(seed_hypothesis(0, scorers),))
        out = block_sync_step(zero_block(1), beams, cfg, scorers, step_cap=1)
        assert len(out.active) == 2
        assert [h.prefix for h in out.active] == [(2,), (3,)]

    def test_per_block_step_budget(self):
        scorers = bundle(
            selection={},
            default_p=1.0,
            emission={},
            default_emission={2: 0.5, 3: 0.5},
        )
        cfg = DecodeConfig(beam_width=4, length_ratio=1.0, subsample_factor=1, chunk_width=1)
        counters = WorkCounters()
        beams = BeamSets(active=(seed_hypothesis(0, scorers),))
        block_sync_step(zero_block(8), beams, cfg, scorers, counters)
        assert counters.output_steps == 8

    def test_work_bound_holds_on_this_block(self):
        scorers = bundle(
            selection={},
            default_p=1.0,
            emission={},
            default_emission={2: 0.5, 3: 0.5},
        )
        cfg = DecodeConfig(beam_width=4, subsample_factor=1, chunk_width=1)
        counters = WorkCounters()
        beams = BeamSets(active=(seed_hypothesis(0, scorers),))
        block_sync_step(zero_block(8), beams, cfg, scorers, counters)
        assert counters.decoder_calls <= u_max_for(8, cfg) * cfg.beam_width * 8


class TestDecodeUtterance:
    def test_two_token_chain_scores_exactly(self):
        model = TableModel.from_dict(
            {
                "vocab": ["<blank>", "<eos>", "a", "b"],
                "default_selection_prob": 0.0,
                "selection": [
                    {"prefix": [], "frames": {0: 1.0}},
                    {"prefix": ["a"], "frames": {1: 1.0}},
                ],
                "emission": [
                    {"prefix": [], "dist": {"a": 0.9, "<eos>": 0.1}},
                    {"prefix": ["a"], "dist": {"<eos>": 0.8, "a": 0.2}},
                ],
            }
        )
        cfg = DecodeConfig(beam_width=4, subsample_factor=1, chunk_width=2, block_size=8)
        result = decode_utterance(np.zeros((2, 3)), cfg, model.scorers(cfg))
        assert transcript_tokens(result.best, model.vocab.eos_id) == (2,)
        assert result.best.raw_log_score == math.log(0.9) + math.log(0.8)
        assert result.total_enc_frames == 2

    def test_empty_stream(self):
        model = TableModel.from_dict(
            {"vocab": ["<blank>", "<eos>", "a"], "default_selection_prob": 1.0}
        )
        cfg = DecodeConfig(subsample_factor=1)
        result = decode_utterance(np.zeros((0, 2)), cfg, model.scorers(cfg))
        assert result.best.prefix == ()
        assert result.best.raw_log_score == 0.0
        assert result.total_enc_frames == 0

    def test_drain_finishes_the_last_block(self):
        # Block 1 parks (no boundary), block 2 chains an emission per step.
        # The per-block budget caps block 2 at 4 steps, but 3 unused steps
        # remain from the 8-frame total budget, so the drain adds 3 tokens.
        model = TableModel.from_dict(
            {
                "vocab": ["<blank>", "<eos>", "a", "b"],
                "default_selection_prob": 1.0,
                "selection": [
                    {"prefix": [], "frames": {0: 0.0, 1: 0.0, 2: 0.0, 3: 0.0, 4: 1.0}}
                ],
                "emission": [{"prefix": [], "dist": {"a": 1.0}}],
                "default_emission": {"a": 0.5, "<eos>": 0.5},
            }
        )
        cfg = DecodeConfig(
            beam_width=4, block_size=4, subsample_factor=1, chunk_width=2, length_ratio=1.0
        )
        counters = WorkCounters()
        result = decode_utterance(np.zeros((8, 2)), cfg, model.scorers(cfg), counters)
        assert counters.output_steps == 8
        assert max(len(h.prefix) for h in result.beams.active) == 7

    def test_output_steps_never_exceed_total_budget(self):
        model = TableModel.from_dict(
            {
                "vocab": ["<blank>", "<eos>", "a", "b"],
                "default_selection_prob": 1.0,
                "default_emission": {"a": 0.5, "b": 0.5},
            }
        )
        cfg = DecodeConfig(
            beam_width=2, block_size=4, subsample_factor=2, chunk_width=2, length_ratio=0.5
        )
        counters = WorkCounters()
        decode_utterance(np.zeros((20, 2)), cfg, model.scorers(cfg), counters)
        # 10 encoder frames at ratio 0.5
        assert counters.output_steps <= 5

    def test_lm_weight_without_lm_rejected(self):
        model = TableModel.from_dict(
            {"vocab": ["<blank>", "<eos>", "a"], "default_selection_prob": 1.0}
        )
        cfg = DecodeConfig(lm_weight=0.5)
        with pytest.raises(ConfigError):
            decode_utterance(np.zeros((4, 2)), cfg, model.scorers(cfg))

    def test_final_hypotheses_satisfy_monotone_invariants(self):
        model = TableModel.from_dict(
            {
                "vocab": ["<blank>", "<eos>", "a", "b"],
                "default_selection_prob": 0.6,
                "selection": [{"prefix": ["a"], "frames": {2: 0.1, 3: 0.9}}],
                "default_emission": {"a": 0.4, "b": 0.4, "<eos>": 0.2},
            }
        )
        cfg = DecodeConfig(beam_width=3, block_size=4, subsample_factor=2, chunk_width=2)
        result = decode_utterance(np.zeros((17, 2)), cfg, model.scorers(cfg))
        pool = result.beams.active + result.beams.finished
        assert pool
        for h in pool:
            assert len(h.emit_times) == len(h.prefix) == len(h.boundary_times)
            assert list(h.boundary_times) == sorted(h.boundary_times)
            assert list(h.emit_times) == sorted(h.emit_times)
            for emit, boundary in zip(h.emit_times, h.boundary_times):
                assert emit >= boundary
            assert h.raw_log_score <= 1e-12
            assert VOCAB.blank_id not in h.prefix
        for h in result.beams.finished:
            assert h.prefix[-1] == VOCAB.eos_id
        assert len(result.beams.finished) <= 1

    def test_transcript_strips_terminal_eos_only(self):
        h_done = hyp((2, 3, 1), -1.0)
        assert transcript_tokens(h_done, eos_id=1) == (2, 3)
        h_open = hyp((2, 3), -1.0)
        assert transcript_tokens(h_open, eos_id=1) == (2, 3)

    def test_determinism(self):
        from blockbeam.scenario_gen import random_scenario

        gen = random_scenario(11, "general")
        cfg = DecodeConfig.from_dict(gen.config)
        model = TableModel.from_dict(gen.scenario)
        a = decode_utterance(gen.features, cfg, model.scorers(cfg))
        b = decode_utterance(gen.features, cfg, model.scorers(cfg))
        assert a.best == b.best
        assert a.beams == b.beams


def test_work_counters_as_dict():
    counters = WorkCounters(frames_scanned=3, decoder_calls=2, output_steps=1, blocks=4)
    assert counters.as_dict() == {
        "frames_scanned": 3,
        "decoder_calls": 2,
        "output_steps": 1,
        "blocks": 4,
    }
