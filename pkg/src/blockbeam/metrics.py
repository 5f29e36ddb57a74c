"""Scoring and measurement: edit distance, latency, work counters."""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from blockbeam.core import DecodeError, Hypothesis
from blockbeam.search import DecodeResult, WorkCounters

SUBWORD_MARKER = "▁"


@dataclass(frozen=True)
class EditStats:
    """Edit counts from one minimal alignment.

    wer = (S + D + I) / max(1, ref_len); the denominator clamp keeps
    empty references scoreable.
    """

    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / max(1, self.ref_len)

    def as_dict(self) -> dict[str, Any]:
        return {
            "substitutions": self.substitutions,
            "deletions": self.deletions,
            "insertions": self.insertions,
            "ref_len": self.ref_len,
            "errors": self.errors,
            "wer": self.wer,
        }


def wer(ref: Sequence, hyp: Sequence) -> EditStats:
    """Minimal-edit alignment with unit costs.

    The wer value is tie-independent; the S/D/I split is made
    deterministic by a fixed traceback preference of substitution over
    deletion over insertion.
    """
    r, h = len(ref), len(hyp)
    dist = [[0] * (h + 1) for _ in range(r + 1)]
    for i in range(1, r + 1):
        dist[i][0] = i
    for j in range(1, h + 1):
        dist[0][j] = j
    for i in range(1, r + 1):
        for j in range(1, h + 1):
            same = ref[i - 1] == hyp[j - 1]
            dist[i][j] = min(
                dist[i - 1][j - 1] + (0 if same else 1),
                dist[i - 1][j] + 1,
                dist[i][j - 1] + 1,
            )
    subs = dels = ins = 0
    i, j = r, h
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dist[i][j] == dist[i - 1][j - 1]:
            i -= 1
            j -= 1
        elif i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + 1:
            subs += 1
            i -= 1
            j -= 1
        elif i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditStats(substitutions=subs, deletions=dels, insertions=ins, ref_len=r)


def detokenize(tokens: Iterable[str], marker: str = SUBWORD_MARKER) -> list[str]:
    """Merge subword tokens back into words by the boundary marker."""
    text = "".join(tokens)
    return [w for w in text.split(marker) if w]


@dataclass(frozen=True)
class LatencyStats:
    """Aggregates over per-token display-latency samples (encoder frames).

    A sample is the gap between a token's boundary frame and the frame
    at which the token entered the beam. Aggregates are absent (None)
    when there are no samples.
    """

    samples: tuple[int, ...]
    mean: float | None
    median: float | None
    p95: float | None

    def as_dict(self) -> dict[str, Any]:
        return {
            "num_samples": len(self.samples),
            "mean": self.mean,
            "median": self.median,
            "p95": self.p95,
        }


def latency_stats(samples: Iterable[int]) -> LatencyStats:
    """Aggregate latency samples; negative samples signal an instrumentation bug."""
    values = tuple(int(s) for s in samples)
    for v in values:
        if v < 0:
            raise DecodeError(f"negative latency sample {v}: commit precedes boundary")
    if not values:
        return LatencyStats(samples=(), mean=None, median=None, p95=None)
    ordered = sorted(values)
    rank = max(1, -(-len(ordered) * 95 // 100))  # nearest-rank ceil(0.95 n)
    return LatencyStats(
        samples=values,
        mean=sum(values) / len(values),
        median=float(statistics.median(values)),
        p95=float(ordered[rank - 1]),
    )


def hypothesis_latency_samples(h: Hypothesis, eos_id: int) -> list[int]:
    """Per-token commit-minus-boundary gaps, completion marker excluded."""
    return [
        emit - boundary
        for token, emit, boundary in zip(h.prefix, h.emit_times, h.boundary_times)
        if token != eos_id
    ]


def work_counter_report(run: DecodeResult | WorkCounters) -> dict[str, int]:
    """Counter snapshot from a decode run (or a bare counter set)."""
    counters = run.counters if isinstance(run, DecodeResult) else run
    return counters.as_dict()


def utterance_report(ref: Sequence, hyp: Sequence) -> dict[str, Any]:
    return wer(ref, hyp).as_dict()


def session_report(
    ref_utterances: Sequence[Sequence], hyp_segments: Sequence[Sequence]
) -> dict[str, Any]:
    """Global edit distance over the full session plus per-segment scores.

    The global number aligns the concatenated hypothesis against the
    concatenated references. Per-segment scores pair segment k with
    reference k and exist only when the counts line up.
    """
    ref_all: list = []
    for u in ref_utterances:
        ref_all.extend(u)
    hyp_all: list = []
    for s in hyp_segments:
        hyp_all.extend(s)
    out: dict[str, Any] = {
        "global": wer(ref_all, hyp_all).as_dict(),
        "num_ref_utterances": len(ref_utterances),
        "num_segments": len(hyp_segments),
    }
    if len(ref_utterances) == len(hyp_segments):
        out["per_segment"] = [
            wer(r, s).as_dict() for r, s in zip(ref_utterances, hyp_segments)
        ]
    else:
        out["segment_count_mismatch"] = True
    return out
