"""Decoder event streams: token commits and segment boundaries.

One run produces an ordered list of records; persisting them as one
JSON object per line lets downstream tools stream-parse and lets
display latency be measured from the file alone, without re-running
search. Field names are fixed: kind, input_frame, enc_frame, payload.

Every record carries both clocks. The input frame is derived from the
encoder frame through the one declared conversion, so the stream stays
monotone even when block lengths straddle subsample groups.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from blockbeam.core import DecodeError, Vocab, encoder_to_input_frame
from blockbeam.search import DecodeResult, transcript_tokens
from blockbeam.session import SessionResult

EVENT_KINDS = ("token_commit", "reset", "segment_end")


@dataclass(frozen=True)
class EventRecord:
    """One decoder event.

    token_commit: payload {token, text, boundary_frame}; the record's
    enc_frame is the commit frame, so commit - boundary_frame is the
    display latency in encoder frames.
    reset: mid-session segment boundary; payload {reason, tokens, score}.
    segment_end: final boundary of a run; payload as reset.
    """

    kind: str
    input_frame: int
    enc_frame: int
    payload: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "input_frame": self.input_frame,
            "enc_frame": self.enc_frame,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EventRecord":
        if not isinstance(data, dict):
            raise DecodeError("event record must be a mapping")
        kind = data.get("kind")
        if kind not in EVENT_KINDS:
            raise DecodeError(f"unknown event kind {kind!r}")
        try:
            input_frame = int(data["input_frame"])
            enc_frame = int(data["enc_frame"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DecodeError(f"event record frames malformed: {exc}") from None
        payload = data.get("payload")
        if not isinstance(payload, dict):
            raise DecodeError("event payload must be a mapping")
        return cls(kind=kind, input_frame=input_frame, enc_frame=enc_frame, payload=payload)


def _check_monotone(events: list[EventRecord]) -> list[EventRecord]:
    for prev, cur in zip(events, events[1:]):
        if cur.enc_frame < prev.enc_frame or cur.input_frame < prev.input_frame:
            raise DecodeError(
                f"event stream not monotone: {prev.kind}@{prev.enc_frame} then "
                f"{cur.kind}@{cur.enc_frame}"
            )
    return events


def _commit_events(
    tokens: tuple[int, ...],
    emit_times: tuple[int, ...],
    boundary_times: tuple[int, ...],
    vocab: Vocab,
    factor: int,
) -> list[EventRecord]:
    out: list[EventRecord] = []
    for token, emit, boundary in zip(tokens, emit_times, boundary_times):
        out.append(
            EventRecord(
                kind="token_commit",
                input_frame=encoder_to_input_frame(emit, factor),
                enc_frame=emit,
                payload={
                    "token": token,
                    "text": vocab.tokens[token],
                    "boundary_frame": boundary,
                },
            )
        )
    return out


def _boundary_event(
    kind: str, end_enc: int, factor: int, reason: str, tokens: tuple[int, ...], score: float | None
) -> EventRecord:
    return EventRecord(
        kind=kind,
        input_frame=end_enc * factor,
        enc_frame=end_enc,
        payload={"reason": reason, "tokens": list(tokens), "score": score},
    )


def utterance_events(result: DecodeResult, vocab: Vocab) -> list[EventRecord]:
    """Event stream for a single-utterance decode: commits, then segment_end."""
    tokens = transcript_tokens(result.best, vocab.eos_id)
    keep = len(tokens)
    events = _commit_events(
        tokens,
        result.best.emit_times[:keep],
        result.best.boundary_times[:keep],
        vocab,
        result.subsample_factor,
    )
    events.append(
        _boundary_event(
            "segment_end",
            result.total_enc_frames,
            result.subsample_factor,
            "end_of_stream",
            tokens,
            result.best.raw_log_score,
        )
    )
    return _check_monotone(events)


def session_events(result: SessionResult, vocab: Vocab) -> list[EventRecord]:
    """Event stream for a long-form run.

    Each segment contributes its token commits followed by one boundary
    record: a reset for a mid-session push, a segment_end for the final
    stream-end push. Boundary records sit one-to-one with segments.
    """
    factor = result.subsample_factor
    segments = result.transcript.segments
    if len(result.segment_end_encs) != len(segments):
        raise DecodeError("segment boundary bookkeeping out of step with transcript")
    events: list[EventRecord] = []
    for segment, end_enc in zip(segments, result.segment_end_encs):
        events.extend(
            _commit_events(
                segment.tokens, segment.emit_times, segment.boundary_times, vocab, factor
            )
        )
        kind = "segment_end" if segment.reason == "end_of_stream" else "reset"
        events.append(
            _boundary_event(kind, end_enc, factor, segment.reason, segment.tokens, segment.score)
        )
    return _check_monotone(events)


def latency_samples_from_events(events: Iterable[EventRecord]) -> list[int]:
    """Per-token display latency (commit - boundary, encoder frames).

    Works on a persisted stream: only token_commit records contribute.
    """
    samples: list[int] = []
    for event in events:
        if event.kind != "token_commit":
            continue
        boundary = event.payload.get("boundary_frame")
        if not isinstance(boundary, int):
            raise DecodeError("token_commit payload lacks boundary_frame")
        if event.enc_frame < boundary:
            raise DecodeError(
                f"commit frame {event.enc_frame} precedes boundary {boundary}"
            )
        samples.append(event.enc_frame - boundary)
    return samples


def events_to_jsonl(events: Iterable[EventRecord]) -> str:
    lines = [json.dumps(e.to_dict(), sort_keys=True) for e in events]
    return "".join(line + "\n" for line in lines)


def events_from_jsonl(text: str) -> list[EventRecord]:
    events: list[EventRecord] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DecodeError(f"event line {lineno}: {exc}") from None
        events.append(EventRecord.from_dict(data))
    return events


def write_events(path: str | Path, events: Iterable[EventRecord]) -> None:
    Path(path).write_text(events_to_jsonl(events), encoding="utf-8")


def read_events(path: str | Path) -> list[EventRecord]:
    return events_from_jsonl(Path(path).read_text(encoding="utf-8"))
