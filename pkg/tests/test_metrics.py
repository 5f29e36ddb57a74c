"""Edit distance, latency aggregation, and report shapes."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockbeam.core import DecodeError, Hypothesis
from blockbeam.metrics import (
    EditStats,
    detokenize,
    hypothesis_latency_samples,
    latency_stats,
    session_report,
    utterance_report,
    wer,
)

from oracles import edit_distance_oracle


class TestWer:
    def test_identity_and_empties(self):
        assert wer([], []).errors == 0
        assert wer([], []).wer == 0.0
        assert wer(["a", "b"], ["a", "b"]).errors == 0
        assert wer(["a"], []).as_dict()["deletions"] == 1
        # empty reference: clamped denominator, not a ZeroDivisionError
        assert wer([], ["a"]).insertions == 1
        assert wer([], ["a"]).wer == 1.0

    def test_mixed_edit_split(self):
        stats = wer(["a", "b", "c"], ["a", "x", "c", "d"])
        assert stats.substitutions == 1
        assert stats.deletions == 0
        assert stats.insertions == 1
        assert stats.errors == 2
        assert stats.wer == pytest.approx(2 / 3)

    def test_matches_recursive_oracle(self):
        import random

        rng = random.Random(7)
        alpha = ["a", "b", "c", "d"]
        for _ in range(60):
            ref = [rng.choice(alpha) for _ in range(rng.randint(0, 6))]
            hyp = [rng.choice(alpha) for _ in range(rng.randint(0, 6))]
            assert wer(ref, hyp).errors == edit_distance_oracle(ref, hyp)

    def test_works_on_token_ids(self):
        assert wer((2, 3, 4), (2, 4)).errors == 1

    @settings(max_examples=60, deadline=None, derandomize=True)
    @given(
        ref=st.lists(st.integers(0, 3), max_size=5),
        hyp=st.lists(st.integers(0, 3), max_size=5),
    )
    def test_split_sums_to_distance_property(self, ref, hyp):
        stats = wer(ref, hyp)
        assert stats.errors == edit_distance_oracle(ref, hyp)
        assert stats.ref_len == len(ref)
        # alignment accounting: ref consumed by matches+subs+dels
        assert stats.substitutions + stats.deletions <= len(ref)
        assert stats.substitutions + stats.insertions <= len(hyp)


class TestDetokenize:
    def test_subword_merge(self):
        assert detokenize(["▁he", "llo", "▁wor", "ld"]) == ["hello", "world"]

    def test_leading_marker_and_empty(self):
        assert detokenize([]) == []
        assert detokenize(["▁a"]) == ["a"]


class TestLatencyStats:
    def test_empty(self):
        stats = latency_stats([])
        assert stats.mean is None and stats.median is None and stats.p95 is None
        assert stats.as_dict()["num_samples"] == 0

    def test_aggregates(self):
        stats = latency_stats([0, 2, 4])
        assert stats.mean == pytest.approx(2.0)
        assert stats.median == pytest.approx(2.0)
        assert stats.p95 == 4.0

    def test_p95_nearest_rank(self):
        # ceil(0.95 * 20) = 19, so the 19th ordered value
        stats = latency_stats(list(range(20)))
        assert stats.p95 == 18.0

    def test_negative_sample_rejected(self):
        with pytest.raises(DecodeError):
            latency_stats([1, -1])

    def test_hypothesis_samples_skip_eos(self):
        h = Hypothesis(
            prefix=(2, 3, 1),
            raw_log_score=-1.0,
            head=9,
            scan_from=9,
            decoder_state=(2, 3, 1),
            lm_state=(),
            emit_times=(3, 7, 8),
            boundary_times=(1, 6, 8),
        )
        assert hypothesis_latency_samples(h, eos_id=1) == [2, 1]


class TestReports:
    def test_utterance_report(self):
        report = utterance_report([2, 3], [2, 4])
        assert report["errors"] == 1
        assert report["wer"] == 0.5

    def test_session_report_aligned(self):
        report = session_report([[2, 3], [4]], [[2, 3], [4]])
        assert report["global"]["errors"] == 0
        assert report["num_segments"] == 2
        assert len(report["per_segment"]) == 2
        assert "segment_count_mismatch" not in report

    def test_session_report_mismatched_counts(self):
        report = session_report([[2, 3], [4]], [[2, 3, 4]])
        assert report["segment_count_mismatch"] is True
        assert "per_segment" not in report
        # the global score still sees the same concatenation
        assert report["global"]["errors"] == 0

    def test_global_score_ignores_segmentation(self):
        a = session_report([[2], [3, 4]], [[2, 3], [4]])
        b = session_report([[2, 3, 4]], [[2, 3, 4]])
        assert a["global"]["errors"] == b["global"]["errors"] == 0
