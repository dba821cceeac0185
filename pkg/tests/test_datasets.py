import json
import logging
import os

import numpy as np
import pytest

from cyclecl.datasets import load_dataset, save_dataset
from cyclecl.exceptions import DatasetParseError
from cyclecl.seqdata import GeneratorConfig, generate_benchmark


@pytest.fixture
def seqs():
    return generate_benchmark(GeneratorConfig(num_frames=60, period=5.0), 3, seed=1, anomaly_length=(5, 8))


def test_round_trip_exact(tmp_path, seqs):
    save_dataset(seqs, tmp_path)
    back = load_dataset(tmp_path)
    assert len(back) == 3
    for a, b in zip(seqs, back):
        assert a.video_id == b.video_id and a.seed == b.seed and a.sample_period == b.sample_period
        np.testing.assert_array_equal(a.frames, b.frames)
        np.testing.assert_array_equal(a.frame_labels, b.frame_labels)


def test_rewrite_is_byte_identical(tmp_path, seqs):
    save_dataset(seqs, tmp_path / "a")
    save_dataset(seqs, tmp_path / "b")
    for name in sorted(os.listdir(tmp_path / "a")):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_empty_directory_warns(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        assert load_dataset(tmp_path) == []
    assert "empty" in caplog.text


def test_missing_manifest(tmp_path):
    (tmp_path / "stray.csv").write_text("1\n")
    with pytest.raises(DatasetParseError, match="manifest"):
        load_dataset(tmp_path)


def test_missing_file_named(tmp_path, seqs):
    save_dataset(seqs, tmp_path)
    os.remove(tmp_path / f"{seqs[1].video_id}.frames.csv")
    with pytest.raises(DatasetParseError, match=f"{seqs[1].video_id}.frames.csv"):
        load_dataset(tmp_path)


def test_malformed_row_reports_line(tmp_path, seqs):
    save_dataset(seqs, tmp_path)
    path = tmp_path / f"{seqs[0].video_id}.frames.csv"
    lines = path.read_text().splitlines()
    lines[4] = lines[4].replace(",", ",oops,", 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetParseError) as err:
        load_dataset(tmp_path)
    assert err.value.line == 5 and str(path) in str(err.value)


def test_label_count_mismatch(tmp_path, seqs):
    save_dataset(seqs, tmp_path)
    path = tmp_path / f"{seqs[2].video_id}.labels.csv"
    path.write_text("0\n" * 10)
    with pytest.raises(DatasetParseError, match="label count"):
        load_dataset(tmp_path)


def test_bad_label_value(tmp_path, seqs):
    save_dataset(seqs, tmp_path)
    path = tmp_path / f"{seqs[0].video_id}.labels.csv"
    text = path.read_text().splitlines()
    text[2] = "2"
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(DatasetParseError) as err:
        load_dataset(tmp_path)
    assert err.value.line == 3


def test_manifest_layout(tmp_path, seqs):
    save_dataset(seqs, tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    entry = m["sequences"][0]
    assert set(entry) >= {"video_id", "frames_file", "labels_file", "num_frames", "num_regions",
                          "raw_channels", "period", "seed"}
    header = (tmp_path / entry["frames_file"]).read_text().splitlines()[0]
    assert header.split(",")[:3] == ["r0_c0", "r0_c1", "r0_c2"]
