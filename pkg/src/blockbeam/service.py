"""HTTP facade over the decoding engine.

Every endpoint is stateless: requests carry the full scenario document
(vocab inlined) plus features and config overrides, so two identical
requests always produce identical responses. Engine errors map to 400
for malformed inputs and 500 for decode-time failures; 422 stays
reserved for request-shape validation.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from blockbeam import __version__
from blockbeam.core import (
    BlockbeamError,
    ConfigError,
    DecodeConfig,
    DecodeError,
    Vocab,
)
from blockbeam.events import (
    latency_samples_from_events,
    session_events,
    utterance_events,
)
from blockbeam.features import simulate_stream
from blockbeam.metrics import EditStats, detokenize, latency_stats, session_report, wer
from blockbeam.scenario_gen import random_scenario
from blockbeam.schemas import (
    DecodeRequest,
    DecodeResponse,
    GenerateRequest,
    GenerateResponse,
    HealthResponse,
    ScoreRequest,
    ScoreResponse,
    SegmentBody,
    SessionRequest,
    SessionResponse,
    SimulateRequest,
    SimulateResponse,
)
from blockbeam.scorer import TableModel
from blockbeam.search import WorkCounters, decode_utterance, transcript_tokens
from blockbeam.session import vad_cascade_decode, vad_free_decode


def features_array(rows: list[list[float]]) -> np.ndarray:
    if not rows:
        return np.zeros((0, 0), dtype=np.float64)
    try:
        x = np.asarray(rows, dtype=np.float64)
    except ValueError as exc:
        raise ConfigError(f"features must be a rectangular matrix: {exc}") from None
    if x.ndim != 2:
        raise ConfigError(f"features must be 2-D, got shape {x.shape}")
    return x


def mode_config(cfg: DecodeConfig, mode: str, stream_len: int) -> DecodeConfig:
    """Resolve the synchronization mode into a concrete block size."""
    if mode == "label":
        return cfg.replace(block_size=max(1, stream_len))
    if mode == "frame":
        return cfg.replace(block_size=cfg.subsample_factor)
    return cfg


def joined_text(vocab: Vocab, texts: list[str]) -> str:
    if vocab.uses_subword_marker():
        return " ".join(detokenize(texts))
    return " ".join(texts)


def create_app() -> FastAPI:
    app = FastAPI(title="blockbeam", version=__version__)

    @app.exception_handler(BlockbeamError)
    async def engine_error(request: Request, exc: BlockbeamError) -> JSONResponse:
        status = 500 if isinstance(exc, DecodeError) else 400
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/decode", response_model=DecodeResponse)
    def decode(req: DecodeRequest) -> DecodeResponse:
        model = TableModel.from_dict(req.scenario)
        cfg = mode_config(
            DecodeConfig.from_dict(req.config), req.mode, len(req.features)
        )
        x = features_array(req.features)
        counters = WorkCounters()
        result = decode_utterance(x, cfg, model.scorers(cfg), counters=counters)
        tokens = transcript_tokens(result.best, model.vocab.eos_id)
        events = utterance_events(result, model.vocab)
        stats = latency_stats(latency_samples_from_events(events))
        texts = model.vocab.text(tokens)
        return DecodeResponse(
            transcript=list(tokens),
            texts=texts,
            text=joined_text(model.vocab, texts),
            score=result.best.raw_log_score,
            events=[e.to_dict() for e in events],
            counters=counters.as_dict(),
            latency=stats.as_dict(),
        )

    @app.post("/session/decode", response_model=SessionResponse)
    def session(req: SessionRequest) -> SessionResponse:
        model = TableModel.from_dict(req.scenario)
        cfg = DecodeConfig.from_dict(req.config)
        x = features_array(req.features)
        counters = WorkCounters()
        if req.vad_cascade:
            result = vad_cascade_decode(
                x,
                cfg,
                lambda: model.scorers(cfg),
                energy_threshold=req.energy_threshold,
                min_silence=req.min_silence,
                margin=req.margin,
                counters=counters,
            )
        else:
            result = vad_free_decode(x, cfg, model.scorers(cfg), counters=counters)
        events = session_events(result, model.vocab)
        stats = latency_stats(latency_samples_from_events(events))
        segments = [
            SegmentBody(
                tokens=list(s.tokens),
                texts=model.vocab.text(s.tokens),
                emit_times=list(s.emit_times),
                boundary_times=list(s.boundary_times),
                reason=s.reason,
                score=s.score,
            )
            for s in result.transcript.segments
        ]
        all_tokens = result.transcript.all_tokens()
        return SessionResponse(
            segments=segments,
            transcript=all_tokens,
            text=joined_text(model.vocab, model.vocab.text(all_tokens)),
            events=[e.to_dict() for e in events],
            counters=counters.as_dict(),
            latency=stats.as_dict(),
            segment_end_inputs=list(result.segment_end_inputs),
            segment_end_encs=list(result.segment_end_encs),
        )

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest) -> SimulateResponse:
        triples = [
            (u.id, features_array(u.features), tuple(u.ref)) for u in req.utterances
        ]
        sim = simulate_stream(triples, gap=req.gap, target_len=req.target_len)
        return SimulateResponse(
            features=sim.features.tolist(),
            manifest=[e.to_dict() for e in sim.manifest],
        )

    @app.post("/score", response_model=ScoreResponse)
    def score(req: ScoreRequest) -> ScoreResponse:
        if req.mode == "session":
            return ScoreResponse(report=session_report(req.ref, req.hyp))
        if len(req.ref) != len(req.hyp):
            raise ConfigError(
                f"ref has {len(req.ref)} utterances but hyp has {len(req.hyp)}"
            )
        per = [wer(r, h) for r, h in zip(req.ref, req.hyp)]
        pooled = EditStats(
            substitutions=sum(s.substitutions for s in per),
            deletions=sum(s.deletions for s in per),
            insertions=sum(s.insertions for s in per),
            ref_len=sum(s.ref_len for s in per),
        )
        return ScoreResponse(
            report={
                "global": pooled.as_dict(),
                "per_utterance": [s.as_dict() for s in per],
                "num_pairs": len(per),
            }
        )

    @app.post("/generate", response_model=GenerateResponse)
    def generate(req: GenerateRequest) -> GenerateResponse:
        built = random_scenario(req.seed, req.flavor)
        return GenerateResponse(
            scenario=built.scenario,
            config=built.config,
            features=built.features.tolist(),
            manifest=[e.to_dict() for e in built.manifest],
        )

    return app
