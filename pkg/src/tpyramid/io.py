"""On-disk formats: feature files, descriptor files, manifests and checkpoints.

Feature file (``PYFT`` version 1), little-endian::

    b"PYFT" | u32 version=1 | u32 T | u32 d | T*d float32, row-major

Descriptor file (``PYFT`` version 2) adds the node count::

    b"PYFT" | u32 version=2 | u32 rows | u32 d | u32 node_count | rows*d float32

Checkpoint (``PYRA`` version 1)::

    b"PYRA" | u32 version=1 | u32 meta_len | meta_len bytes of UTF-8 JSON
    | u32 n_blocks | n_blocks * block

    block = u16 name_len | name (UTF-8) | u32 ndim | ndim * u32 shape
            | prod(shape) float64
"""

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"PYFT"
CHECKPOINT_MAGIC = b"PYRA"
STREAMS = ("motion", "appearance")


class FormatError(ValueError):
    """Malformed file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def _check_matrix(matrix):
    arr = np.asarray(matrix)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains non-finite values")
    return arr.astype("<f4")


def encode_features(matrix, node_count=None):
    arr = _check_matrix(matrix)
    rows, d = arr.shape
    if node_count is None:
        header = FEATURE_MAGIC + struct.pack("<III", 1, rows, d)
    else:
        header = FEATURE_MAGIC + struct.pack("<IIII", 2, rows, d, node_count)
    return header + arr.tobytes(order="C")


def decode_features(data):
    """Parse PYFT bytes into ``(matrix float32, node_count or None)``."""
    if len(data) < 16:
        raise FormatError(f"file too short for a header: {len(data)} bytes", len(data))
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {FEATURE_MAGIC!r}", 0)
    version, rows, d = struct.unpack_from("<III", data, 4)
    offset = 16
    node_count = None
    if version == 2:
        if len(data) < 20:
            raise FormatError("file too short for a version 2 header", len(data))
        (node_count,) = struct.unpack_from("<I", data, 16)
        offset = 20
        if node_count != rows:
            raise FormatError(f"node_count {node_count} does not match {rows} rows", 16)
    elif version != 1:
        raise FormatError(f"unsupported version {version}", 4)
    expected = offset + 4 * rows * d
    if len(data) != expected:
        raise FormatError(
            f"expected {expected} bytes for a {rows}x{d} matrix, got {len(data)}",
            min(len(data), expected))
    arr = np.frombuffer(data, dtype="<f4", count=rows * d, offset=offset).reshape(rows, d)
    return arr.astype(np.float32), node_count


def write_features(path, matrix):
    Path(path).write_bytes(encode_features(matrix))


def read_features(path):
    """Frame matrix stored in a version 1 feature file, as float32."""
    arr, node_count = decode_features(Path(path).read_bytes())
    if node_count is not None:
        raise FormatError(f"{path} is a descriptor file, not a feature file", 4)
    return arr


def read_header(path):
    """``(version, rows, d)`` without loading the payload."""
    with open(path, "rb") as fh:
        head = fh.read(16)
    if len(head) < 16 or head[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: not a PYFT file", 0)
    return struct.unpack_from("<III", head, 4)


def write_descriptors(path, matrix):
    arr = np.asarray(matrix)
    Path(path).write_bytes(encode_features(arr, node_count=arr.shape[0]))


def read_descriptors(path):
    arr, node_count = decode_features(Path(path).read_bytes())
    if node_count is None:
        raise FormatError(f"{path} is a version 1 feature file, not a descriptor file", 4)
    return arr


@dataclass
class FrameSequence:
    video_id: str
    stream: str
    features: np.ndarray
    label: int

    @property
    def T(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]


@dataclass
class ManifestEntry:
    video_id: str
    label: int
    T: int
    appearance: str
    motion: str


@dataclass
class DatasetManifest:
    name: str
    classes: list
    entries: list
    split: str = "all"
    root: Path = field(default_factory=Path)
    extra: dict = field(default_factory=dict)

    @property
    def n_classes(self):
        return len(self.classes)

    def path(self, entry, stream):
        return self.root / getattr(entry, stream)

    def to_dict(self):
        d = {"name": self.name, "classes": list(self.classes), "split": self.split,
             "entries": [vars(e).copy() for e in self.entries]}
        d.update(self.extra)
        return d

    def subset(self, entries, split):
        return DatasetManifest(self.name, self.classes, list(entries), split, self.root,
                               dict(self.extra))

    def validate(self, check_files=True):
        seen = set()
        for e in self.entries:
            if e.video_id in seen:
                raise ValueError(f"duplicate video id {e.video_id!r}")
            seen.add(e.video_id)
            if not 0 <= e.label < self.n_classes:
                raise ValueError(f"{e.video_id}: label {e.label} outside [0, {self.n_classes})")
            if check_files:
                for s in STREAMS:
                    p = self.path(e, s)
                    if not p.exists():
                        raise FileNotFoundError(f"{e.video_id}: missing {s} file {p}")
                    _, rows, _ = read_header(p)
                    if rows != e.T:
                        raise ValueError(
                            f"{e.video_id}: {s} file has {rows} frames, manifest says {e.T}")
        return self


def save_manifest(manifest, path):
    path = Path(path)
    path.write_text(json.dumps(manifest.to_dict(), indent=1))
    return path


def load_manifest(path, check_files=True):
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
        entries = [ManifestEntry(str(e["video_id"]), int(e["label"]), int(e["T"]),
                                 e["appearance"], e["motion"]) for e in raw["entries"]]
        known = {"name", "classes", "split", "entries"}
        m = DatasetManifest(raw["name"], list(raw["classes"]), entries, raw.get("split", "all"),
                            path.parent, {k: v for k, v in raw.items() if k not in known})
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: invalid manifest ({exc})") from exc
    return m.validate(check_files)


def load_sequences(manifest, stream):
    return [FrameSequence(e.video_id, stream, read_features(manifest.path(e, stream)), e.label)
            for e in manifest.entries]


def load_dataset(manifest, streams=STREAMS):
    """Read every feature file of ``manifest`` into a :class:`~tpyramid.deep.TwoStreamData`."""
    from .deep import TwoStreamData

    arrays = {s: [read_features(manifest.path(e, s)).astype(np.float64) for e in manifest.entries]
              for s in streams}
    return TwoStreamData(labels=[e.label for e in manifest.entries],
                         motion=arrays.get("motion"), appearance=arrays.get("appearance"),
                         video_ids=[e.video_id for e in manifest.entries],
                         class_names=list(manifest.classes), n_classes=manifest.n_classes)


def precompute_descriptors(manifest, depth, out_dir):
    """Write node means of every video and stream as version 2 descriptor files.

    Returns the path of ``descriptors.json`` which maps video ids to their
    files, labels and the pyramid depth.
    """
    from .pyramid import build_partition, node_descriptors

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = {"depth": depth, "classes": list(manifest.classes), "entries": []}
    for e in manifest.entries:
        row = {"video_id": e.video_id, "label": e.label}
        for s in STREAMS:
            frames = read_features(manifest.path(e, s)).astype(np.float64)
            desc = node_descriptors(frames, build_partition(len(frames), depth))
            name = f"{e.video_id}.{s}.desc"
            write_descriptors(out_dir / name, desc)
            row[s] = name
        index["entries"].append(row)
    path = out_dir / "descriptors.json"
    path.write_text(json.dumps(index, indent=1))
    return path


def load_descriptors(index_path, stream):
    """``(descriptors (n, n_nodes, d) float64, labels, video_ids, depth)``."""
    index_path = Path(index_path)
    index = json.loads(index_path.read_text())
    desc = np.stack([read_descriptors(index_path.parent / e[stream]).astype(np.float64)
                     for e in index["entries"]])
    labels = np.array([e["label"] for e in index["entries"]])
    ids = [e["video_id"] for e in index["entries"]]
    return desc, labels, ids, index["depth"]


def save_checkpoint(path, blocks, meta):
    """Write named float64 arrays and a JSON metadata dict to a ``PYRA`` container."""
    meta_bytes = json.dumps(meta).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", 1, len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(blocks))]
    for name, value in blocks.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    tmp = Path(f"{path}.tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`: ``(blocks, meta)``."""
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {CHECKPOINT_MAGIC!r}", 0)
    try:
        version, meta_len = struct.unpack_from("<II", data, 4)
        if version != 1:
            raise FormatError(f"unsupported checkpoint version {version}", 4)
        off = 12
        meta = json.loads(data[off:off + meta_len].decode("utf-8"))
        off += meta_len
        (n_blocks,) = struct.unpack_from("<I", data, off)
        off += 4
        blocks = {}
        for _ in range(n_blocks):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            if off + 8 * count > len(data):
                raise FormatError(f"block {name!r} truncated", off)
            blocks[name] = np.frombuffer(data, "<f8", count, off).reshape(shape).copy()
            off += 8 * count
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint ({exc})", len(data)) from exc
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes", off)
    return blocks, meta
