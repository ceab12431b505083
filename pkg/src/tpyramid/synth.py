"""Synthetic two-stream token sequences with controlled temporal granularity.

Every class owns a pattern of tokens laid out left to right over the video
(frame ``t`` shows ``pattern[floor(t * L / T)]``). A frame feature is the
token's embedding plus gaussian noise.

* coarse classes use disjoint tokens, so global means separate them;
* fine pairs share one pattern, the second class playing the first one's
  token sequence backwards: identical histograms, different order;
* complementary split hides the pattern of even classes from the
  appearance stream and the pattern of odd classes from the motion stream
  (the hidden stream shows a shared null token).
"""

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_positive_int
from .io import (
    DatasetManifest,
    ManifestEntry,
    STREAMS,
    save_manifest,
    write_features,
)


@dataclass
class SynthSpec:
    name: str = "synthetic"
    n_classes: int = 2
    videos_per_class: int = 20
    vocab_size: int = 8
    pattern_length: int = 2
    fine_pairs: bool = False
    complementary: bool = False
    t_min: int = 16
    t_max: int = 48
    noise: float = 0.1
    d_in: int = 16
    seed: int = 0

    def __post_init__(self):
        check_positive_int(self.n_classes, "n_classes", minimum=2)
        check_positive_int(self.videos_per_class, "videos_per_class")
        check_positive_int(self.pattern_length, "pattern_length")
        check_positive_int(self.d_in, "d_in")
        check_positive_int(self.t_min, "t_min")
        if self.t_max < self.t_min:
            raise ValueError("t_max must be >= t_min")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.fine_pairs and self.n_classes % 2:
            raise ValueError("fine_pairs needs an even number of classes")
        if self.vocab_size < self.tokens_needed:
            raise ValueError(
                f"vocab_size {self.vocab_size} too small: patterns need {self.tokens_needed} tokens")

    @property
    def n_patterns(self):
        return self.n_classes // 2 if self.fine_pairs else self.n_classes

    @property
    def tokens_needed(self):
        return self.n_patterns * self.pattern_length + (1 if self.complementary else 0)

    @property
    def null_token(self):
        return self.vocab_size - 1

    @classmethod
    def from_dict(cls, values):
        valid = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - valid)
        if unknown:
            raise ValueError(f"unknown synth key(s) {unknown}; valid keys are {sorted(valid)}")
        return cls(**values)


def token_embeddings(vocab_size, d, rng):
    """Unit-norm rows; orthonormal when ``vocab_size <= d``."""
    g = rng.standard_normal((max(vocab_size, d), d))
    if vocab_size <= d:
        q, _ = np.linalg.qr(g[:d].T)
        return q.T[:vocab_size].copy()
    g = g[:vocab_size]
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def token_sequence(spec, label, T):
    """Token id of every frame for a video of class ``label``."""
    L = spec.pattern_length
    pattern_id = label // 2 if spec.fine_pairs else label
    pattern = np.arange(pattern_id * L, (pattern_id + 1) * L)
    seq = pattern[(np.arange(T) * L) // T]
    if spec.fine_pairs and label % 2:
        seq = seq[::-1].copy()
    return seq


def stream_tokens(spec, label, T):
    seq = token_sequence(spec, label, T)
    out = {s: seq for s in STREAMS}
    if spec.complementary:
        null = np.full(T, spec.null_token)
        hidden = "appearance" if label % 2 == 0 else "motion"
        out[hidden] = null
    return out


def synthesize(spec):
    """Generate the dataset in memory.

    Returns ``(data, embeddings)`` where ``data`` is a
    :class:`~tpyramid.deep.TwoStreamData` and ``embeddings`` maps stream
    names to (vocab_size, d_in) arrays.
    """
    from .deep import TwoStreamData

    rng = np.random.default_rng(spec.seed)
    emb = {s: token_embeddings(spec.vocab_size, spec.d_in, rng) for s in STREAMS}
    labels, ids = [], []
    frames = {s: [] for s in STREAMS}
    for c in range(spec.n_classes):
        for v in range(spec.videos_per_class):
            T = int(rng.integers(spec.t_min, spec.t_max + 1))
            tokens = stream_tokens(spec, c, T)
            for s in STREAMS:
                x = emb[s][tokens[s]] + spec.noise * rng.standard_normal((T, spec.d_in))
                frames[s].append(x)
            labels.append(c)
            ids.append(f"c{c:02d}_v{v:03d}")
    data = TwoStreamData(labels, frames["motion"], frames["appearance"], ids,
                         [f"class_{c}" for c in range(spec.n_classes)], spec.n_classes)
    return data, emb


def generate_synthetic(spec, out_dir):
    """Write features, token embeddings and ``manifest.json`` under ``out_dir``.

    Features go to disk as float32; ``load_dataset`` of the result equals
    :func:`synthesize` rounded to float32.
    """
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    data, emb = synthesize(spec)
    for s in STREAMS:
        write_features(out_dir / f"embeddings_{s}.pyft", emb[s])
    entries = []
    for i, vid in enumerate(data.video_ids):
        paths = {}
        for s in STREAMS:
            rel = f"features/{vid}.{s}.pyft"
            write_features(out_dir / rel, getattr(data, s)[i])
            paths[s] = rel
        entries.append(ManifestEntry(vid, int(data.labels[i]), len(data.motion[i]),
                                     paths["appearance"], paths["motion"]))
    manifest = DatasetManifest(spec.name, data.class_names, entries, "all", out_dir,
                               {"synth_spec": dataclasses.asdict(spec)})
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def split(manifest, ratio, seed=0):
    """Stratified train/test split; ``round(ratio * n_c)`` videos of class ``c`` go to train."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in range(manifest.n_classes):
        members = [e for e in manifest.entries if e.label == c]
        order = rng.permutation(len(members))
        n_train = int(round(ratio * len(members)))
        train_idx = set(order[:n_train].tolist())
        for k, e in enumerate(members):
            (train if k in train_idx else test).append(e)
    return manifest.subset(train, "train"), manifest.subset(test, "test")


def split_data(data, ratio, seed=0):
    """Same stratified rule as :func:`split` on an in-memory dataset; returns index arrays."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in range(data.n_classes):
        members = np.flatnonzero(data.labels == c)
        order = rng.permutation(len(members))
        n_train = int(round(ratio * len(members)))
        train.extend(members[order[:n_train]])
        test.extend(members[order[n_train:]])
    return np.sort(train), np.sort(test)


def nearest_centroid_accuracy(data, stream="motion"):
    """Training accuracy of a nearest-centroid rule on global means (sanity check)."""
    X = np.stack([x.mean(axis=0) for x in getattr(data, stream)])
    cents = np.stack([X[data.labels == c].mean(axis=0) for c in range(data.n_classes)])
    pred = np.argmin(((X[:, None] - cents[None]) ** 2).sum(-1), axis=1)
    return float((pred == data.labels).mean())
