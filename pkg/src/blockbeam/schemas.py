"""Request and response bodies for the decoding service."""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class HealthResponse(StrictModel):
    status: str
    version: str


class DecodeRequest(StrictModel):
    """One utterance decode.

    ``scenario`` is a scripted-model document (vocab inlined, since the
    service never touches the client's filesystem). ``config`` holds
    overrides over the default decode configuration. ``mode`` picks the
    synchronization: label covers the stream with one block, frame makes
    every block one encoder frame, block uses the configured size.
    """

    scenario: dict[str, Any]
    features: list[list[float]]
    config: dict[str, Any] = Field(default_factory=dict)
    mode: Literal["label", "block", "frame"] = "block"


class DecodeResponse(StrictModel):
    transcript: list[int]
    texts: list[str]
    text: str
    score: float
    events: list[dict[str, Any]]
    counters: dict[str, int]
    latency: dict[str, Any]


class SessionRequest(StrictModel):
    scenario: dict[str, Any]
    features: list[list[float]]
    config: dict[str, Any] = Field(default_factory=dict)
    vad_cascade: bool = False
    energy_threshold: float = 1e-3
    min_silence: int = 40
    margin: int = 0


class SegmentBody(StrictModel):
    tokens: list[int]
    texts: list[str]
    emit_times: list[int]
    boundary_times: list[int]
    reason: str
    score: float | None


class SessionResponse(StrictModel):
    segments: list[SegmentBody]
    transcript: list[int]
    text: str
    events: list[dict[str, Any]]
    counters: dict[str, int]
    latency: dict[str, Any]
    segment_end_inputs: list[int]
    segment_end_encs: list[int]


class SimUtterance(StrictModel):
    id: str
    features: list[list[float]]
    ref: list[int] = Field(default_factory=list)


class SimulateRequest(StrictModel):
    utterances: list[SimUtterance]
    gap: int = 0
    target_len: int | None = None


class SimulateResponse(StrictModel):
    features: list[list[float]]
    manifest: list[dict[str, Any]]


class ScoreRequest(StrictModel):
    """Reference/hypothesis token sequences.

    utterance mode scores pairwise (counts must match) and pools the
    edit counts; session mode treats ``ref`` as the manifest utterances
    and ``hyp`` as decoded segments, reporting global plus per-segment
    error rates.
    """

    mode: Literal["utterance", "session"] = "utterance"
    ref: list[list[int]]
    hyp: list[list[int]]


class ScoreResponse(StrictModel):
    report: dict[str, Any]


class GenerateRequest(StrictModel):
    seed: int = 0
    flavor: str = "general"


class GenerateResponse(StrictModel):
    scenario: dict[str, Any]
    config: dict[str, Any]
    features: list[list[float]]
    manifest: list[dict[str, Any]]
