"""Feature matrices, reference manifests, and stream simulation.

Features are dense (frames x dims) matrices, one row per 10 ms input
frame, stored as plain CSV or as .npy binary; the extension picks the
reader. Manifests are newline-delimited records (id, offset frame,
reference token ids, optional text), one per utterance of a simulated
stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from blockbeam.core import ConfigError

_CSV_EXTS = (".csv", ".txt")
_NPY_EXTS = (".npy",)


def load_features(path: str | Path) -> np.ndarray:
    """Read a feature matrix; format chosen by extension (.csv/.txt or .npy)."""
    p = Path(path)
    suffix = p.suffix.lower()
    if suffix in _NPY_EXTS:
        try:
            x = np.load(p, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read features {p}: {exc}") from None
    elif suffix in _CSV_EXTS:
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read features {p}: {exc}") from None
        if not text.strip():
            return np.zeros((0, 0), dtype=np.float64)
        try:
            x = np.loadtxt(p, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise ConfigError(f"cannot parse features {p}: {exc}") from None
    else:
        raise ConfigError(f"unknown feature format {suffix!r} (want .csv or .npy)")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError(f"features {p}: expected a 2-D matrix, got shape {x.shape}")
    return x


def save_features(path: str | Path, features: np.ndarray) -> None:
    p = Path(path)
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError(f"features must be 2-D, got shape {x.shape}")
    suffix = p.suffix.lower()
    if suffix in _NPY_EXTS:
        np.save(p, x)
    elif suffix in _CSV_EXTS:
        # 17 significant digits round-trips float64 exactly through text.
        np.savetxt(p, x, delimiter=",", fmt="%.17g")
    else:
        raise ConfigError(f"unknown feature format {suffix!r} (want .csv or .npy)")


@dataclass(frozen=True)
class ManifestEntry:
    """One utterance of a simulated stream."""

    utt_id: str
    offset: int
    ref: tuple[int, ...]
    text: str | None = None

    def to_dict(self) -> dict:
        out: dict = {"id": self.utt_id, "offset": self.offset, "ref": list(self.ref)}
        if self.text is not None:
            out["text"] = self.text
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ManifestEntry":
        if not isinstance(data, dict):
            raise ConfigError("manifest record must be a mapping")
        try:
            utt_id = str(data["id"])
            offset = int(data["offset"])
            ref = tuple(int(t) for t in data["ref"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"manifest record malformed: {exc}") from None
        if offset < 0:
            raise ConfigError(f"manifest record {utt_id}: negative offset")
        text = data.get("text")
        return cls(utt_id=utt_id, offset=offset, ref=ref, text=None if text is None else str(text))


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {p}: {exc}") from None
    entries: list[ManifestEntry] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"manifest {p} line {lineno}: {exc}") from None
        entries.append(ManifestEntry.from_dict(data))
    return entries


def save_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    lines = [json.dumps(e.to_dict(), sort_keys=True) for e in entries]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def manifest_reference(entries: list[ManifestEntry]) -> list[int]:
    """All reference token ids in stream order."""
    out: list[int] = []
    for entry in entries:
        out.extend(entry.ref)
    return out


@dataclass
class SimulatedStream:
    features: np.ndarray
    manifest: list[ManifestEntry]


def simulate_stream(
    utterances: list[tuple[str, np.ndarray, tuple[int, ...]]],
    gap: int = 0,
    target_len: int | None = None,
) -> SimulatedStream:
    """Concatenate utterances into one long stream with silence gaps.

    Takes (id, features, reference ids) triples in timestamp order. The
    first utterance is always included; each further one joins while
    the stream (including its leading gap of zero-feature frames) stays
    within ``target_len``. ``target_len=None`` concatenates everything.
    """
    if not utterances:
        raise ConfigError("simulate needs at least one utterance")
    if gap < 0:
        raise ConfigError("gap must be non-negative")
    dims = {np.asarray(f).shape[1] for _, f, _ in utterances}
    if len(dims) != 1:
        raise ConfigError(f"utterances disagree on feature dimension: {sorted(dims)}")
    dim = dims.pop()

    pieces: list[np.ndarray] = []
    manifest: list[ManifestEntry] = []
    total = 0
    for index, (utt_id, feats, ref) in enumerate(utterances):
        x = np.asarray(feats, dtype=np.float64)
        lead = 0 if index == 0 else gap
        if index > 0 and target_len is not None and total + lead + x.shape[0] > target_len:
            break
        if lead:
            pieces.append(np.zeros((lead, dim), dtype=np.float64))
        offset = total + lead
        pieces.append(x)
        manifest.append(ManifestEntry(utt_id=utt_id, offset=offset, ref=tuple(ref)))
        total = offset + x.shape[0]
    stream = np.concatenate(pieces, axis=0) if pieces else np.zeros((0, dim))
    return SimulatedStream(features=stream, manifest=manifest)
