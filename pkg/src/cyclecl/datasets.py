"""Read and write FrameSequence datasets.

Layout of a dataset directory::

    manifest.json        list of sequences with shapes and metadata
    <id>.frames.csv      header row, then one frame per row, region-major
    <id>.labels.csv      one 0/1 per row, 1 = non_periodic
"""

import csv
import json
import logging
import os

import numpy as np

from .exceptions import DatasetParseError
from .seqdata import SIGNIFICANT_DIGITS, FrameSequence

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
FORMAT = "cyclecl-dataset"
VERSION = 1


def _fmt(v):
    return f"{v:.{SIGNIFICANT_DIGITS}g}"


def save_dataset(sequences, directory):
    os.makedirs(directory, exist_ok=True)
    entries = []
    for seq in sequences:
        n, S, C = seq.frames.shape
        frames_file = f"{seq.video_id}.frames.csv"
        labels_file = f"{seq.video_id}.labels.csv"
        with open(os.path.join(directory, frames_file), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"r{s}_c{c}" for s in range(S) for c in range(C)])
            for frame in seq.frames.reshape(n, S * C):
                w.writerow([_fmt(v) for v in frame.tolist()])
        with open(os.path.join(directory, labels_file), "w") as fh:
            fh.writelines(f"{int(v)}\n" for v in seq.frame_labels)
        entries.append({
            "video_id": seq.video_id,
            "frames_file": frames_file,
            "labels_file": labels_file,
            "num_frames": n,
            "num_regions": S,
            "raw_channels": C,
            "period": seq.sample_period,
            "seed": seq.seed,
        })
    manifest = {"format": FORMAT, "version": VERSION, "sequences": entries}
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _read_frames(path, n, width):
    if not os.path.exists(path):
        raise DatasetParseError("frames file listed in manifest is missing", path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != width:
            raise DatasetParseError(f"header must have {width} columns", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise DatasetParseError(f"expected {width} values, found {len(row)}", path, lineno)
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DatasetParseError(f"non-numeric value ({exc})", path, lineno) from None
    if len(rows) != n:
        raise DatasetParseError(f"manifest declares {n} frames, file has {len(rows)}", path)
    return np.asarray(rows, dtype=float).reshape(n, width)


def _read_labels(path, n):
    if not os.path.exists(path):
        raise DatasetParseError("labels file listed in manifest is missing", path)
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            token = line.strip()
            if token not in ("0", "1"):
                raise DatasetParseError(f"label must be 0 or 1, got {token!r}", path, lineno)
            labels.append(int(token))
    if len(labels) != n:
        raise DatasetParseError(f"label count {len(labels)} does not match frame count {n}", path)
    return np.asarray(labels, dtype=np.int64)


def load_dataset(directory):
    """Load every sequence listed in ``directory/manifest.json``.

    An empty (or absent) directory yields an empty list and a warning.
    """
    if not os.path.isdir(directory) or not os.listdir(directory):
        logger.warning("dataset directory %s is empty", directory)
        return []
    manifest_path = os.path.join(directory, MANIFEST)
    if not os.path.exists(manifest_path):
        raise DatasetParseError("manifest is missing", manifest_path)
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"invalid JSON: {exc.msg}", manifest_path, exc.lineno) from None
    if manifest.get("format") != FORMAT:
        raise DatasetParseError(f"unexpected format tag {manifest.get('format')!r}", manifest_path)
    sequences = []
    for i, entry in enumerate(manifest.get("sequences", [])):
        try:
            n, S, C = int(entry["num_frames"]), int(entry["num_regions"]), int(entry["raw_channels"])
            frames_path = os.path.join(directory, entry["frames_file"])
            labels_path = os.path.join(directory, entry["labels_file"])
            video_id, period, seed = entry["video_id"], float(entry["period"]), int(entry["seed"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetParseError(f"sequence entry {i} is malformed ({exc!r})", manifest_path) from None
        frames = _read_frames(frames_path, n, S * C).reshape(n, S, C)
        labels = _read_labels(labels_path, n)
        sequences.append(FrameSequence(video_id, frames, labels, period, seed))
    return sequences
