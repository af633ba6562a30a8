"""Dataset and trajectory serialization.

Datasets are CSV files with columns f0..f(d-1) plus an integer label column,
or MNIST-family IDX binary pairs. Trajectories are line-delimited JSON so
they stream, diff, and survive truncation (every complete line is a valid
record).
"""

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError
from .otdd import DatasetState, label_stats


def load_dataset(
    path,
    fmt: str = "csv",
    labels_path=None,
    downscale: int = 1,
    per_class_cap: int | None = None,
) -> DatasetState:
    """Load a labeled dataset from disk.

    csv: header f0..f(d-1),label; one particle per row.
    idx: MNIST-family binary images at ``path`` plus labels at
         ``labels_path``; pixels are flattened, scaled to [0, 1], optionally
         strided down by ``downscale`` and capped per class.
    """
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "idx":
        if labels_path is None:
            raise ParseError(path, "idx format needs a labels file")
        return _load_idx(path, labels_path, downscale, per_class_cap)
    raise ParseError(path, f"unknown dataset format {fmt!r}")


def _load_csv(path) -> DatasetState:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ParseError(path, str(exc)) from exc
    rows = list(csv.reader(lines))
    if not rows:
        raise ParseError(path, "empty file")
    header = [h.strip() for h in rows[0]]
    if "label" not in header:
        raise ParseError(path, "label column missing", line=1)
    label_col = header.index("label")
    feat_cols = [i for i, h in enumerate(header) if h.startswith("f")]
    if not feat_cols:
        raise ParseError(path, "no feature columns (expected f0..f(d-1))", line=1)
    feats, labels = [], []
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            feats.append([float(row[i]) for i in feat_cols])
            labels.append(int(row[label_col]))
        except (ValueError, IndexError) as exc:
            raise ParseError(path, f"bad row: {exc}", line=ln) from exc
    if not feats:
        raise ParseError(path, "no data rows")
    return DatasetState.from_features(np.array(feats), np.array(labels))


def save_dataset(state: DatasetState, path):
    """Write features and labels as CSV. Floats use repr, so a save/load
    round trip is bit-identical."""
    path = Path(path)
    d = state.dim
    header = ",".join([f"f{i}" for i in range(d)] + ["label"])
    lines = [header]
    for i in range(state.n):
        vals = [repr(float(v)) for v in state.features[i]]
        lines.append(",".join(vals + [str(int(state.labels[i]))]))
    path.write_text("\n".join(lines) + "\n")


def _read_idx_header(data: bytes, path, expected_magic: int, ndim: int):
    need = 4 * (1 + ndim)
    if len(data) < need:
        raise ParseError(path, f"truncated idx header (offset {len(data)})")
    magic = struct.unpack(">i", data[:4])[0]
    if magic != expected_magic:
        raise ParseError(path, f"bad idx magic {magic} (expected {expected_magic})")
    dims = struct.unpack(f">{ndim}i", data[4:need])
    return dims, need


def _load_idx(images_path, labels_path, downscale: int, per_class_cap):
    images_path, labels_path = Path(images_path), Path(labels_path)
    try:
        img_data = images_path.read_bytes()
        lbl_data = labels_path.read_bytes()
    except OSError as exc:
        raise ParseError(images_path, str(exc)) from exc

    (n, rows, cols), off = _read_idx_header(img_data, images_path, 2051, 3)
    if len(img_data) - off < n * rows * cols:
        raise ParseError(images_path, f"truncated idx payload (offset {len(img_data)})")
    images = np.frombuffer(img_data, dtype=np.uint8, count=n * rows * cols, offset=off)
    images = images.reshape(n, rows, cols)

    (n_lbl,), off_l = _read_idx_header(lbl_data, labels_path, 2049, 1)
    if n_lbl != n:
        raise ParseError(labels_path, f"label count {n_lbl} != image count {n}")
    labels = np.frombuffer(lbl_data, dtype=np.uint8, count=n, offset=off_l).astype(int)

    if downscale > 1:
        images = images[:, ::downscale, ::downscale]
    feats = images.reshape(n, -1).astype(float) / 255.0

    if per_class_cap is not None:
        keep = []
        counts = {}
        for i, y in enumerate(labels):
            if counts.get(int(y), 0) < per_class_cap:
                counts[int(y)] = counts.get(int(y), 0) + 1
                keep.append(i)
        feats, labels = feats[keep], labels[keep]
    return DatasetState.from_features(feats, labels)


def _class_stats_record(state: DatasetState) -> dict:
    """Per-class moment summaries for a trajectory record."""
    if state.per_particle:
        stats = label_stats(state)
    else:
        stats = state.label_dists
    return {
        str(int(c)): {"mean": stats[c].mean.tolist(), "cov": stats[c].cov.tolist()}
        for c in sorted(stats)
    }


def snapshot_record(snap) -> dict:
    return {
        "step": int(snap.step),
        "objective": float(snap.objective),
        "term_values": [float(v) for v in snap.term_values],
        "features": snap.state.features.tolist(),
        "labels": snap.state.labels.tolist(),
        "class_stats": _class_stats_record(snap.state),
        "wall_time": float(snap.wall_time),
    }


def write_trajectory(trajectory, path):
    """Append-only JSONL dump of the recorded snapshots."""
    path = Path(path)
    with path.open("w") as fh:
        for snap in trajectory.snapshots:
            fh.write(json.dumps(snapshot_record(snap)) + "\n")


def read_trajectory(path) -> list:
    """Parse a trajectory file line by line; a truncated trailing line is
    dropped and every complete record is returned."""
    path = Path(path)
    records = []
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(path, str(exc)) from exc
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            break
    return records


def write_summary(path, summary: dict):
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
