"""Feature I/O, manifests, and stream simulation."""

import numpy as np
import pytest

from blockbeam.core import ConfigError
from blockbeam.features import (
    ManifestEntry,
    load_features,
    load_manifest,
    manifest_reference,
    save_features,
    save_manifest,
    simulate_stream,
)


class TestFeatureIO:
    def test_csv_round_trip_is_exact(self, tmp_path):
        x = np.array([[1 / 3, -2.5e-7], [1e17, 0.1]])
        path = tmp_path / "f.csv"
        save_features(path, x)
        assert np.array_equal(load_features(path), x)

    def test_npy_round_trip(self, tmp_path):
        x = np.arange(12, dtype=np.float64).reshape(4, 3)
        path = tmp_path / "f.npy"
        save_features(path, x)
        assert np.array_equal(load_features(path), x)

    def test_empty_csv_reads_as_zero_frames(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("")
        assert load_features(path).shape == (0, 0)

    def test_single_row_csv_stays_two_dimensional(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("1.0,2.0\n")
        assert load_features(path).shape == (1, 2)

    def test_unknown_extension_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_features(tmp_path / "f.wav")
        with pytest.raises(ConfigError):
            save_features(tmp_path / "f.wav", np.zeros((1, 1)))

    def test_missing_file_and_garbage(self, tmp_path):
        with pytest.raises(ConfigError):
            load_features(tmp_path / "missing.csv")
        bad = tmp_path / "bad.csv"
        bad.write_text("1.0,zebra\n")
        with pytest.raises(ConfigError):
            load_features(bad)

    def test_non_matrix_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            save_features(tmp_path / "f.npy", np.zeros(3))


class TestManifest:
    def test_round_trip(self, tmp_path):
        entries = [
            ManifestEntry(utt_id="u0", offset=0, ref=(2, 3), text="a b"),
            ManifestEntry(utt_id="u1", offset=96, ref=(2,)),
        ]
        path = tmp_path / "m.jsonl"
        save_manifest(path, entries)
        assert load_manifest(path) == entries
        assert manifest_reference(entries) == [2, 3, 2]

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"id": "u", "offset": 0, "ref": [2]}\n\n')
        assert len(load_manifest(path)) == 1

    @pytest.mark.parametrize(
        "line",
        [
            "not json",
            '{"offset": 0, "ref": []}',
            '{"id": "u", "offset": -1, "ref": []}',
            '{"id": "u", "offset": 0, "ref": ["x"]}',
        ],
    )
    def test_malformed_rejected(self, tmp_path, line):
        path = tmp_path / "m.jsonl"
        path.write_text(line + "\n")
        with pytest.raises(ConfigError):
            load_manifest(path)


class TestSimulateStream:
    def utts(self):
        return [
            ("u0", np.ones((4, 2)), (2,)),
            ("u1", np.full((6, 2), 2.0), (3, 2)),
            ("u2", np.full((2, 2), 3.0), (3,)),
        ]

    def test_concatenation_with_gaps(self):
        sim = simulate_stream(self.utts(), gap=3)
        assert sim.features.shape == (4 + 3 + 6 + 3 + 2, 2)
        assert [e.offset for e in sim.manifest] == [0, 7, 16]
        # gap regions are exact silence
        assert np.array_equal(sim.features[4:7], np.zeros((3, 2)))
        assert manifest_reference(sim.manifest) == [2, 3, 2, 3]

    def test_target_len_truncates_whole_utterances(self):
        sim = simulate_stream(self.utts(), gap=3, target_len=14)
        assert [e.utt_id for e in sim.manifest] == ["u0", "u1"]
        assert sim.features.shape[0] == 13

    def test_first_utterance_always_included(self):
        sim = simulate_stream(self.utts(), gap=0, target_len=1)
        assert [e.utt_id for e in sim.manifest] == ["u0"]
        assert sim.features.shape[0] == 4

    def test_validation(self):
        with pytest.raises(ConfigError):
            simulate_stream([])
        with pytest.raises(ConfigError):
            simulate_stream(self.utts(), gap=-1)
        mixed = [("u0", np.zeros((2, 2)), ()), ("u1", np.zeros((2, 3)), ())]
        with pytest.raises(ConfigError):
            simulate_stream(mixed)

    def test_zero_gap(self):
        sim = simulate_stream(self.utts(), gap=0)
        assert sim.features.shape[0] == 12
        assert [e.offset for e in sim.manifest] == [0, 4, 10]
