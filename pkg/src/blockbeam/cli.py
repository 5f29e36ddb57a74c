"""Command-line harness.

Thin client over the HTTP service: every command except ``serve`` loads
local files, posts one request, and writes the response to local files.
By default the service runs in-process; ``--server`` points the same
commands at a remote instance.

Exit codes: 0 success, 1 usage or parse error, 2 decode-time failure.
"""

from __future__ import annotations

import asyncio
import json
from pathlib import Path
from typing import Any

import click
import httpx
import numpy as np
import yaml

from blockbeam.core import (
    BlockbeamError,
    ConfigError,
    DecodeConfig,
    DecodeError,
    ScenarioError,
    load_vocab,
)
from blockbeam.features import load_features, save_features
from blockbeam.scenario_gen import FLAVORS, dump_scenario
from blockbeam.service import create_app

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DECODE = 2

_CONFIG_INT_FIELDS = (
    "beam_width",
    "block_size",
    "safeguard",
    "blank_threshold",
    "chunk_width",
    "subsample_factor",
)
_CONFIG_FLOAT_FIELDS = (
    "length_ratio",
    "spike_threshold",
    "lm_weight",
    "boundary_threshold",
)
_CONFIG_BOOL_FIELDS = (
    "enable_length_norm",
    "enable_lm_carryover",
    "enable_safeguard",
    "enable_condition2",
    "enable_backoff_init",
    "enable_parked_eos",
)


def config_options(fn):
    """Attach one kebab-case flag per decode-config field."""
    for name in reversed(_CONFIG_BOOL_FIELDS):
        kebab = name.replace("_", "-")
        fn = click.option(f"--{kebab}/--no-{kebab}", default=None)(fn)
    for name in reversed(_CONFIG_FLOAT_FIELDS):
        fn = click.option(f"--{name.replace('_', '-')}", type=float, default=None)(fn)
    for name in reversed(_CONFIG_INT_FIELDS):
        fn = click.option(f"--{name.replace('_', '-')}", type=int, default=None)(fn)
    return fn


def _load_raw_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a flat JSON object")
    return data


def resolve_config(
    config_path: str | None, flags: dict[str, Any], mode: str | None
) -> dict[str, Any]:
    """Merge config file and flag overrides; reject mode conflicts."""
    raw = _load_raw_config(config_path)
    overrides = {k: v for k, v in flags.items() if v is not None}
    # A config file is a full record, so its block_size yields to the mode;
    # only the flag counts as an explicit conflict.
    if mode is not None and mode != "block" and "block_size" in overrides:
        raise click.UsageError(
            f"--mode {mode} derives the block size; do not pass --block-size"
        )
    cfg = DecodeConfig.from_dict(raw).replace(**overrides)
    return cfg.to_dict()


def load_scenario_document(path: str | Path) -> dict[str, Any]:
    """Load a scenario file and inline a referenced vocab file.

    The service never sees the client filesystem, so a vocab path is
    resolved here, against the scenario file's directory.
    """
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {p}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{p}: {exc}") from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{p}: scenario must be a mapping")
    vocab = data.get("vocab")
    if isinstance(vocab, str):
        vpath = Path(vocab)
        if not vpath.is_absolute():
            vpath = p.parent / vpath
        if not vpath.exists():
            raise ScenarioError(f"vocab file not found: {vpath}")
        data["vocab"] = list(load_vocab(vpath).tokens)
    return data


class ServiceClient:
    """POSTs to a remote server, or to an in-process app when none is given.

    The in-process path speaks ASGI directly (no socket), so offline use
    and tests exercise the same endpoints a real server exposes.
    """

    def __init__(self, server: str | None) -> None:
        self._client = httpx.Client(base_url=server, timeout=120.0) if server else None

    async def _post_in_process(self, path: str, payload: dict[str, Any]) -> httpx.Response:
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://blockbeam.local", timeout=120.0
        ) as client:
            return await client.post(path, json=payload)

    def post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        if self._client is not None:
            try:
                response = self._client.post(path, json=payload)
            except httpx.HTTPError as exc:
                raise DecodeError(f"{path}: {exc}") from None
        else:
            response = asyncio.run(self._post_in_process(path, payload))
        if response.status_code >= 400:
            try:
                detail = response.json().get("detail")
            except ValueError:
                detail = response.text
            message = f"{path}: {detail}"
            if response.status_code >= 500:
                raise DecodeError(message)
            raise ConfigError(message)
        return response.json()

    def close(self) -> None:
        if self._client is not None:
            self._client.close()


def _write_json(path: str, data: Any) -> None:
    Path(path).write_text(
        json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _write_events(path: str, events: list[dict[str, Any]]) -> None:
    lines = [json.dumps(e, sort_keys=True) for e in events]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _write_id_line(path: str, tokens: list[int]) -> None:
    Path(path).write_text(" ".join(str(t) for t in tokens) + "\n", encoding="utf-8")


def _load_token_lines(path: str) -> list[list[int]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read token file {path}: {exc}") from None
    rows: list[list[int]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        try:
            rows.append([int(t) for t in line.split()])
        except ValueError as exc:
            raise ConfigError(f"{path} line {lineno}: {exc}") from None
    return rows


@click.group()
def cli() -> None:
    """Streaming block-synchronous beam search over scripted models."""


@cli.command()
@click.option("--features", "features_path", required=True, type=click.Path())
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--mode", type=click.Choice(["label", "block", "frame"]), default="block")
@click.option("--events-out", default=None, type=click.Path())
@click.option("--report-out", default=None, type=click.Path())
@click.option("--transcript-out", default=None, type=click.Path())
@click.option("--server", default=None)
@config_options
def decode(
    features_path: str,
    scenario_path: str,
    config_path: str | None,
    mode: str,
    events_out: str | None,
    report_out: str | None,
    transcript_out: str | None,
    server: str | None,
    **flags: Any,
) -> None:
    """Decode one utterance and write transcript, events, and report."""
    payload = {
        "scenario": load_scenario_document(scenario_path),
        "features": load_features(features_path).tolist(),
        "config": resolve_config(config_path, flags, mode),
        "mode": mode,
    }
    client = ServiceClient(server)
    try:
        resp = client.post("/decode", payload)
    finally:
        client.close()
    if transcript_out:
        _write_id_line(transcript_out, resp["transcript"])
    if events_out:
        _write_events(events_out, resp["events"])
    if report_out:
        _write_json(report_out, {k: v for k, v in resp.items() if k != "events"})
    click.echo(resp["text"])
    click.echo(f"score: {resp['score']}")


@cli.command()
@click.option("--features", "features_path", required=True, type=click.Path())
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--vad-cascade", is_flag=True, default=False)
@click.option("--energy-threshold", type=float, default=1e-3)
@click.option("--min-silence", type=int, default=40)
@click.option("--margin", type=int, default=0)
@click.option("--events-out", default=None, type=click.Path())
@click.option("--report-out", default=None, type=click.Path())
@click.option("--transcript-out", default=None, type=click.Path())
@click.option("--server", default=None)
@config_options
def session(
    features_path: str,
    scenario_path: str,
    config_path: str | None,
    vad_cascade: bool,
    energy_threshold: float,
    min_silence: int,
    margin: int,
    events_out: str | None,
    report_out: str | None,
    transcript_out: str | None,
    server: str | None,
    **flags: Any,
) -> None:
    """Decode a long unsegmented stream into reset-separated segments."""
    payload = {
        "scenario": load_scenario_document(scenario_path),
        "features": load_features(features_path).tolist(),
        "config": resolve_config(config_path, flags, None),
        "vad_cascade": vad_cascade,
        "energy_threshold": energy_threshold,
        "min_silence": min_silence,
        "margin": margin,
    }
    client = ServiceClient(server)
    try:
        resp = client.post("/session/decode", payload)
    finally:
        client.close()
    if transcript_out:
        _write_json(transcript_out, {"segments": resp["segments"]})
    if events_out:
        _write_events(events_out, resp["events"])
    if report_out:
        _write_json(report_out, {k: v for k, v in resp.items() if k != "events"})
    for index, seg in enumerate(resp["segments"]):
        text = " ".join(seg["texts"])
        click.echo(f"segment {index} [{seg['reason']}]: {text}")


@cli.command()
@click.option("--utterances", "list_path", required=True, type=click.Path())
@click.option("--gap", type=int, default=0)
@click.option("--target-len", type=int, default=None)
@click.option("--out-features", required=True, type=click.Path())
@click.option("--out-manifest", required=True, type=click.Path())
@click.option("--server", default=None)
def simulate(
    list_path: str,
    gap: int,
    target_len: int | None,
    out_features: str,
    out_manifest: str,
    server: str | None,
) -> None:
    """Concatenate utterances into a long stream plus reference manifest.

    The utterance list is one JSON object per line: {"id", "features"
    (a path, relative to the list file), "ref" (token ids)}.
    """
    base = Path(list_path).parent
    utterances: list[dict[str, Any]] = []
    try:
        text = Path(list_path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read utterance list {list_path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
            fpath = Path(str(entry["features"]))
            if not fpath.is_absolute():
                fpath = base / fpath
            utterances.append(
                {
                    "id": str(entry["id"]),
                    "features": load_features(fpath).tolist(),
                    "ref": [int(t) for t in entry.get("ref", [])],
                }
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{list_path} line {lineno}: {exc}") from None
    payload = {"utterances": utterances, "gap": gap, "target_len": target_len}
    client = ServiceClient(server)
    try:
        resp = client.post("/simulate", payload)
    finally:
        client.close()
    save_features(out_features, np.asarray(resp["features"], dtype=np.float64))
    lines = [json.dumps(e, sort_keys=True) for e in resp["manifest"]]
    Path(out_manifest).write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )
    click.echo(
        f"stream: {len(resp['features'])} frames, {len(resp['manifest'])} utterances"
    )


@cli.command()
@click.option("--ref", "ref_path", required=True, type=click.Path())
@click.option("--hyp", "hyp_path", required=True, type=click.Path())
@click.option(
    "--mode", type=click.Choice(["utterance", "session"]), default="utterance"
)
@click.option("--report-out", default=None, type=click.Path())
@click.option("--server", default=None)
def score(
    ref_path: str,
    hyp_path: str,
    mode: str,
    report_out: str | None,
    server: str | None,
) -> None:
    """Score hypothesis tokens against references.

    utterance mode reads both files as one utterance of token ids per
    line; session mode reads the reference from a manifest and the
    hypothesis from a session transcript file.
    """
    if mode == "utterance":
        ref = _load_token_lines(ref_path)
        hyp = _load_token_lines(hyp_path)
    else:
        from blockbeam.features import load_manifest

        ref = [list(e.ref) for e in load_manifest(ref_path)]
        try:
            doc = json.loads(Path(hyp_path).read_text(encoding="utf-8"))
            hyp = [[int(t) for t in seg["tokens"]] for seg in doc["segments"]]
        except OSError as exc:
            raise ConfigError(f"cannot read transcript {hyp_path}: {exc}") from None
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{hyp_path}: {exc}") from None
    client = ServiceClient(server)
    try:
        resp = client.post("/score", {"mode": mode, "ref": ref, "hyp": hyp})
    finally:
        client.close()
    if report_out:
        _write_json(report_out, resp["report"])
    click.echo(json.dumps(resp["report"], indent=2, sort_keys=True))


@cli.command()
@click.option("--seed", type=int, default=0)
@click.option("--flavor", type=click.Choice(list(FLAVORS)), default="general")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--server", default=None)
def generate(seed: int, flavor: str, out_dir: str, server: str | None) -> None:
    """Generate a seeded scenario, config, features, and manifest."""
    client = ServiceClient(server)
    try:
        resp = client.post("/generate", {"seed": seed, "flavor": flavor})
    finally:
        client.close()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.yaml").write_text(dump_scenario(resp["scenario"]), encoding="utf-8")
    _write_json(str(out / "config.json"), resp["config"])
    save_features(out / "features.csv", np.asarray(resp["features"], dtype=np.float64))
    written = ["scenario.yaml", "config.json", "features.csv"]
    if resp["manifest"]:
        lines = [json.dumps(e, sort_keys=True) for e in resp["manifest"]]
        (out / "manifest.jsonl").write_text(
            "".join(line + "\n" for line in lines), encoding="utf-8"
        )
        written.append("manifest.jsonl")
    click.echo(f"wrote {', '.join(written)} to {out}")


@cli.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host: str, port: int) -> None:
    """Run the decoding service."""
    import uvicorn

    uvicorn.run(create_app(), host=host, port=port)


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.Abort:
        return EXIT_USAGE
    except DecodeError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DECODE
    except BlockbeamError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except httpx.HTTPError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DECODE
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
