"""End-to-end two-stream pyramid network trained with hand-derived gradients.

Per stream: framewise encoder -> node means -> shared node projection ->
one or more weighted pyramids -> (reduction stack when several pyramids) ->
batch norm -> fully connected -> softmax. The two streams are mixed by
learnable late-fusion weights on the 2-simplex.
"""

import dataclasses
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_frames, check_positive_int
from .grad import GradTape, SurrogateSchedule, assemble_param_gradient
from .layers import (
    FramewiseEncoder,
    batchnorm_backward,
    batchnorm_forward,
    softmax,
    softmax_backward,
    update_running_stats,
)
from .metrics import class_accuracies
from .pyramid import build_partition, check_variant, node_count
from .simplex import backprop_through_simplex, normalize

logger = logging.getLogger(__name__)

STREAMS = ("motion", "appearance")


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss; ``trace`` holds the epochs run so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass
class TrainConfig:
    depth: int = 3
    pyramids: int = 1
    variant: str = "concat"
    encoder: str = "mlp"
    activation: str = "tanh"
    d_enc: int = 32
    projection: str = "linear"
    node_dim: int = 128
    reduce_dim: int = 128
    batch_size: int = 8
    epochs: int = 50
    lr_motion: float = 0.005
    lr_appearance: float = 0.001
    lr_fusion: float = 0.005
    decay_factor: float = 10.0
    decay_epochs_motion: tuple = ()
    decay_epochs_appearance: tuple = ()
    weight_decay: float = 1e-4
    momentum: float = 0.0
    speedup_k: int = 1
    stream: str = "joint"
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    shuffle: bool = True
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.decay_epochs_motion = tuple(self.decay_epochs_motion)
        self.decay_epochs_appearance = tuple(self.decay_epochs_appearance)
        self.validate()

    def validate(self):
        for name in ("depth", "pyramids", "d_enc", "node_dim", "reduce_dim", "batch_size",
                     "speedup_k", "threads"):
            check_positive_int(getattr(self, name), name)
        check_positive_int(self.epochs, "epochs", minimum=0)
        check_variant(self.variant)
        if self.encoder not in ("mlp", "identity"):
            raise ValueError(f"encoder must be 'mlp' or 'identity', got {self.encoder!r}")
        if self.projection not in ("linear", "identity"):
            raise ValueError(f"projection must be 'linear' or 'identity', got {self.projection!r}")
        if self.stream not in STREAMS + ("joint",):
            raise ValueError(f"stream must be one of motion, appearance, joint; got {self.stream!r}")
        for name in ("lr_motion", "lr_appearance", "lr_fusion", "weight_decay", "momentum"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.decay_factor > 1:
            raise ValueError("decay_factor must be > 1")
        if not 0 <= self.bn_momentum < 1 or self.bn_eps <= 0:
            raise ValueError("bn_momentum must be in [0, 1) and bn_eps > 0")

    @classmethod
    def from_dict(cls, values):
        valid = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - valid)
        if unknown:
            raise ValueError(
                f"unknown config key(s) {unknown}; valid keys are {sorted(valid)}")
        return cls(**values)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["decay_epochs_motion"] = list(self.decay_epochs_motion)
        d["decay_epochs_appearance"] = list(self.decay_epochs_appearance)
        return d

    @property
    def streams(self):
        return STREAMS if self.stream == "joint" else (self.stream,)

    def learning_rate(self, stream, epoch):
        base = self.lr_motion if stream == "motion" else self.lr_appearance
        marks = self.decay_epochs_motion if stream == "motion" else self.decay_epochs_appearance
        return base / self.decay_factor ** sum(epoch >= m for m in marks)


def build_multi_pyramid_head(P, node_dim, depth, variant="concat", target=128):
    """Widths of the FC+ReLU+BatchNorm reduction applied to stacked pyramids.

    Hidden widths halve until they are <= ``target``; a final FC maps to
    ``target``.
    """
    P = check_positive_int(P, "P")
    node_dim = check_positive_int(node_dim, "node_dim")
    depth = check_positive_int(depth, "depth")
    check_variant(variant)
    width = pyramid_width(P, node_dim, depth, variant)
    hidden = []
    w = width
    while w > target and w // 2 >= 1:
        w //= 2
        hidden.append(w)
    return {"input_width": width, "hidden": hidden, "output": target}


def pyramid_width(P, node_dim, depth, variant):
    per = node_count(depth) * node_dim if variant == "concat" else node_dim
    return per * P


def _normal(rng, shape, fan_in):
    return rng.standard_normal(shape) / np.sqrt(fan_in)


class PyramidStream:
    """Parameters and forward/backward of one stream.

    ``params`` maps block names to float64 arrays; ``buffers`` holds batch
    norm running statistics.
    """

    def __init__(self, config, params, buffers):
        self.config = config
        self.params = params
        self.buffers = buffers

    @classmethod
    def initialize(cls, config, d_in, n_classes, rng):
        p = {}
        feat = d_in
        if config.encoder == "mlp":
            p["enc.W0"] = _normal(rng, (config.d_enc, d_in), d_in)
            p["enc.b0"] = np.zeros(config.d_enc)
            p["enc.W1"] = _normal(rng, (config.d_enc, config.d_enc), config.d_enc)
            p["enc.b1"] = np.zeros(config.d_enc)
            feat = config.d_enc
        node_dim = feat
        if config.projection == "linear":
            p["proj.W"] = _normal(rng, (config.node_dim, feat), feat)
            node_dim = config.node_dim
        n_nodes = node_count(config.depth)
        for k in range(config.pyramids):
            p[f"pyr{k}.free"] = np.zeros(n_nodes)
        buffers = {}
        width = pyramid_width(config.pyramids, node_dim, config.depth, config.variant)
        if config.pyramids > 1:
            spec = build_multi_pyramid_head(config.pyramids, node_dim, config.depth,
                                            config.variant, config.reduce_dim)
            for j, w in enumerate(spec["hidden"]):
                p[f"red{j}.W"] = _normal(rng, (w, width), width)
                p[f"red{j}.b"] = np.zeros(w)
                p[f"red{j}.gamma"] = np.ones(w)
                p[f"red{j}.beta"] = np.zeros(w)
                buffers[f"red{j}.mean"] = np.zeros(w)
                buffers[f"red{j}.var"] = np.ones(w)
                width = w
            p["redout.W"] = _normal(rng, (spec["output"], width), width)
            p["redout.b"] = np.zeros(spec["output"])
            width = spec["output"]
        p["bn.gamma"] = np.ones(width)
        p["bn.beta"] = np.zeros(width)
        buffers["bn.mean"] = np.zeros(width)
        buffers["bn.var"] = np.ones(width)
        p["fc.W"] = _normal(rng, (n_classes, width), width)
        p["fc.b"] = np.zeros(n_classes)
        return cls(config, p, buffers)

    @property
    def encoder(self):
        if "enc.W0" not in self.params:
            return None
        n = sum(1 for k in self.params if k.startswith("enc.W"))
        return FramewiseEncoder([self.params[f"enc.W{i}"] for i in range(n)],
                                [self.params[f"enc.b{i}"] for i in range(n)],
                                self.config.activation)

    @property
    def n_reduction(self):
        return sum(1 for k in self.params if re.fullmatch(r"red\d+\.W", k))

    def pyramid_weights(self):
        return [normalize(self.params[f"pyr{k}.free"]) for k in range(self.config.pyramids)]

    def input_dim(self):
        enc = self.encoder
        return enc.input_dim if enc is not None else None

    # per-video part: encoder, node means, projection, pyramids
    def _video_forward(self, frames, membership):
        enc = self.encoder
        if enc is not None:
            phi, enc_cache = enc.forward(frames)
        else:
            phi, enc_cache = frames, None
        psi = membership.averaging_matrix() @ phi
        q = psi @ self.params["proj.W"].T if "proj.W" in self.params else psi
        betas = self.pyramid_weights()
        if self.config.variant == "concat":
            h = np.concatenate([(b[:, None] * q).ravel() for b in betas])
        else:
            h = np.concatenate([b @ q for b in betas])
        return h, (frames, membership, enc_cache, psi, q, betas)

    def _video_backward(self, vcache, dh, grads):
        frames, membership, enc_cache, psi, q, betas = vcache
        dq = np.zeros_like(q)
        size = dh.size // len(betas)
        for k, b in enumerate(betas):
            du = dh[k * size:(k + 1) * size]
            if self.config.variant == "concat":
                du = du.reshape(q.shape)
                dq += b[:, None] * du
                dbeta = (du * q).sum(axis=1)
            else:
                dq += np.outer(b, du)
                dbeta = q @ du
            _add(grads, f"pyr{k}.free", backprop_through_simplex(dbeta, b))
        if "proj.W" in self.params:
            _add(grads, "proj.W", dq.T @ psi)
            dpsi = dq @ self.params["proj.W"]
        else:
            dpsi = dq
        enc = self.encoder
        if enc is not None:
            tape = GradTape(node_grads=dpsi)
            assemble_param_gradient(tape, membership, enc, frames, cache=enc_cache)
            for name, g in tape.accum.items():
                _add(grads, name, g)

    def forward(self, videos, training, frame_sets=None):
        """Class probabilities for a batch of frame matrices, shape (B, C).

        ``frame_sets`` optionally restricts each video to a subset of frame
        indices; node means are then taken over those frames only.
        """
        cfg = self.config

        def one(i):
            x = videos[i]
            mt = build_partition(len(x), cfg.depth)
            if frame_sets is not None:
                sel = np.asarray(frame_sets[i], dtype=np.intp)
                if sel.size == 0:
                    raise ValueError(f"video {i}: scheduled frame set is empty")
                mt = mt.restrict(sel)
                x = x[sel]
            return self._video_forward(x, mt)

        if cfg.threads > 1 and len(videos) > 1:
            with ThreadPoolExecutor(cfg.threads) as pool:
                outs = list(pool.map(one, range(len(videos))))
        else:
            outs = [one(i) for i in range(len(videos))]
        H = np.stack([h for h, _ in outs])
        vcaches = [c for _, c in outs]
        p = self.params
        red_caches, stats = [], {}
        for j in range(self.n_reduction):
            z = H @ p[f"red{j}.W"].T + p[f"red{j}.b"]
            r = np.maximum(z, 0.0)
            H_next, bc, st = batchnorm_forward(r, p[f"red{j}.gamma"], p[f"red{j}.beta"], training,
                                               self.buffers[f"red{j}.mean"],
                                               self.buffers[f"red{j}.var"], cfg.bn_eps)
            red_caches.append((H, r, bc))
            stats[f"red{j}"] = st
            H = H_next
        if "redout.W" in p:
            red_out_in = H
            H = H @ p["redout.W"].T + p["redout.b"]
        else:
            red_out_in = None
        y, bn_cache, st = batchnorm_forward(H, p["bn.gamma"], p["bn.beta"], training,
                                            self.buffers["bn.mean"], self.buffers["bn.var"],
                                            cfg.bn_eps)
        stats["bn"] = st
        probs = softmax(y @ p["fc.W"].T + p["fc.b"])
        cache = (vcaches, red_caches, red_out_in, bn_cache, y, probs, stats)
        return probs, cache

    def backward(self, cache, dprobs):
        vcaches, red_caches, red_out_in, bn_cache, y, probs, _ = cache
        p = self.params
        grads = {}
        dlogits = softmax_backward(probs, dprobs)
        grads["fc.W"] = dlogits.T @ y
        grads["fc.b"] = dlogits.sum(axis=0)
        dH, grads["bn.gamma"], grads["bn.beta"] = batchnorm_backward(bn_cache, dlogits @ p["fc.W"])
        if red_out_in is not None:
            grads["redout.W"] = dH.T @ red_out_in
            grads["redout.b"] = dH.sum(axis=0)
            dH = dH @ p["redout.W"]
        for j in range(self.n_reduction - 1, -1, -1):
            H_in, r, bc = red_caches[j]
            dr, grads[f"red{j}.gamma"], grads[f"red{j}.beta"] = batchnorm_backward(bc, dH)
            dz = dr * (r > 0)
            grads[f"red{j}.W"] = dz.T @ H_in
            grads[f"red{j}.b"] = dz.sum(axis=0)
            dH = dz @ p[f"red{j}.W"]
        for i, vc in enumerate(vcaches):
            self._video_backward(vc, dH[i], grads)
        for name, value in p.items():
            if name not in grads:
                grads[name] = np.zeros_like(value)
        return grads

    def commit_stats(self, stats, n):
        for name, st in stats.items():
            if st is not None:
                update_running_stats(self.buffers[f"{name}.mean"], self.buffers[f"{name}.var"],
                                     st, n, self.config.bn_momentum)


def _add(grads, name, value):
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = np.array(value, dtype=np.float64)


def late_fusion(p_motion, p_appearance, weights):
    """Convex mix ``w_m * p_motion + w_a * p_appearance`` of stream probabilities."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (2,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("fusion weights must be a point of the 2-simplex")
    return w[0] * np.asarray(p_motion) + w[1] * np.asarray(p_appearance)


def is_decayed(name):
    return not name.endswith(".free")


def cross_entropy_loss(pred, label, params=None, weight_decay=0.0):
    """``-ln pred[label] + weight_decay/2 * sum ||theta||^2`` over decayed blocks."""
    pred = np.asarray(pred, dtype=np.float64)
    loss = -np.log(pred[..., label]) if pred.ndim == 1 else \
        -np.log(pred[np.arange(len(pred)), label]).mean()
    return float(loss) + weight_decay_penalty(params or {}, weight_decay)


def weight_decay_penalty(params, weight_decay):
    if weight_decay == 0:
        return 0.0
    return 0.5 * weight_decay * sum(float(np.sum(v * v)) for k, v in params.items()
                                    if is_decayed(k))


class DeepPyramidModel:
    """Two-stream (or single-stream) pyramid classifier.

    Parameters are exposed as one flat dict with ``"<stream>/<block>"`` keys;
    the fusion weights live under ``"fusion.free"``.
    """

    def __init__(self, config, streams, n_classes, fusion_free=None):
        self.config = config
        self.streams = streams
        self.n_classes = n_classes
        self.fusion_free = np.zeros(2) if fusion_free is None else np.asarray(fusion_free, float)

    @classmethod
    def initialize(cls, config, d_in, n_classes, seed=None):
        """``d_in`` maps stream name to input feature size."""
        rng = np.random.default_rng(config.seed if seed is None else seed)
        streams = {}
        for s in config.streams:
            streams[s] = PyramidStream.initialize(config, d_in[s], n_classes, rng)
        return cls(config, streams, n_classes)

    @property
    def fusion_weights(self):
        return normalize(self.fusion_free)

    def parameters(self):
        out = {}
        for s, st in self.streams.items():
            for k, v in st.params.items():
                out[f"{s}/{k}"] = v
        if len(self.streams) == 2:
            out["fusion.free"] = self.fusion_free
        return out

    def buffers(self):
        return {f"{s}/{k}": v for s, st in self.streams.items() for k, v in st.buffers.items()}

    def forward(self, batch, training=False, frame_sets=None):
        """Per-stream and fused probabilities for ``batch`` (stream -> list of arrays)."""
        out, caches = {}, {}
        for s, st in self.streams.items():
            out[s], caches[s] = st.forward(batch[s], training, frame_sets)
        if len(self.streams) == 2:
            out["fused"] = late_fusion(out["motion"], out["appearance"], self.fusion_weights)
        else:
            out["fused"] = out[next(iter(self.streams))]
        return out, caches

    def predict_proba(self, batch):
        return self.forward(batch, training=False)[0]

    def loss(self, batch, labels, frame_sets=None, training=True):
        out, _ = self.forward(batch, training, frame_sets)
        return cross_entropy_loss(out["fused"], np.asarray(labels), self.parameters(),
                                  self.config.weight_decay)

    def loss_and_grad(self, batch, labels, frame_sets=None):
        """Batch-mean regularized cross-entropy and its gradient for every block."""
        labels = np.asarray(labels)
        out, caches = self.forward(batch, True, frame_sets)
        fused = out["fused"]
        B = len(labels)
        rows = np.arange(B)
        params = self.parameters()
        E = cross_entropy_loss(fused, labels, params, self.config.weight_decay)
        dfused = np.zeros_like(fused)
        dfused[rows, labels] = -1.0 / (B * fused[rows, labels])
        grads = {}
        if len(self.streams) == 2:
            w = self.fusion_weights
            dw = np.array([(dfused * out["motion"]).sum(), (dfused * out["appearance"]).sum()])
            grads["fusion.free"] = backprop_through_simplex(dw, w)
            scale = {"motion": w[0], "appearance": w[1]}
        else:
            scale = {s: 1.0 for s in self.streams}
        for s, st in self.streams.items():
            for k, g in st.backward(caches[s], scale[s] * dfused).items():
                grads[f"{s}/{k}"] = g
        lam = self.config.weight_decay
        if lam:
            for k, v in params.items():
                if is_decayed(k):
                    grads[k] = grads[k] + lam * v
        stats = {s: caches[s][-1] for s in self.streams}
        return E, grads, {"out": out, "stats": stats}

    def commit_stats(self, stats, n):
        for s, st in stats.items():
            self.streams[s].commit_stats(st, n)


@dataclass
class TwoStreamData:
    """Videos as parallel per-stream lists of (T_i, d) arrays plus labels."""

    labels: np.ndarray
    motion: list = None
    appearance: list = None
    video_ids: list = None
    class_names: list = None
    n_classes: int = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.intp)
        n = len(self.labels)
        for s in STREAMS:
            seqs = getattr(self, s)
            if seqs is None:
                continue
            if len(seqs) != n:
                raise ValueError(f"{s} has {len(seqs)} videos, labels has {n}")
            setattr(self, s, [check_frames(x, f"{s}[{i}]") for i, x in enumerate(seqs)])
        if self.motion is not None and self.appearance is not None:
            for i, (m, a) in enumerate(zip(self.motion, self.appearance)):
                if len(m) != len(a):
                    raise ValueError(f"video {i}: streams disagree on frame count")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1 if n else 0
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels out of range")
        if self.video_ids is None:
            self.video_ids = [str(i) for i in range(n)]

    def __len__(self):
        return len(self.labels)

    def lengths(self):
        seqs = self.motion if self.motion is not None else self.appearance
        return [len(x) for x in seqs]

    def batch(self, idx, streams):
        return {s: [getattr(self, s)[i] for i in idx] for s in streams}

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        pick = lambda seqs: None if seqs is None else [seqs[i] for i in idx]
        return TwoStreamData(self.labels[idx], pick(self.motion), pick(self.appearance),
                             [self.video_ids[i] for i in idx], self.class_names, self.n_classes)

    def dims(self):
        return {s: getattr(self, s)[0].shape[1] for s in STREAMS if getattr(self, s) is not None}


def _sgd_step(model, grads, velocity, epoch):
    cfg = model.config
    for name, value in model.parameters().items():
        if name == "fusion.free":
            lr = cfg.lr_fusion
        else:
            lr = cfg.learning_rate(name.split("/", 1)[0], epoch)
        g = grads[name]
        if cfg.momentum:
            v = velocity.setdefault(name, np.zeros_like(value))
            v *= cfg.momentum
            v += g
            g = v
        value -= lr * g


def train(data, config, model=None, callback=None):
    """Fit a :class:`DeepPyramidModel` by mini-batch SGD.

    Epoch ``r`` backpropagates through frames ``t % K == r % K`` only
    (``K = config.speedup_k``); videos left without frames are skipped for that
    epoch. Returns ``(model, trace)`` with one dict per epoch.
    """
    cfg = config
    streams = cfg.streams
    for s in streams:
        if getattr(data, s) is None:
            raise ValueError(f"dataset has no {s} stream")
    if model is None:
        model = DeepPyramidModel.initialize(cfg, data.dims(), data.n_classes)
    rng = np.random.default_rng(cfg.seed)
    lengths = data.lengths()
    velocity = {}
    trace = []
    n = len(data)
    for epoch in range(cfg.epochs):
        schedule = SurrogateSchedule(cfg.speedup_k, epoch)
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        losses, skipped = [], 0
        correct = {s: 0 for s in streams + ("fused",)}
        seen = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            frame_sets = [schedule.frames(lengths[i]) for i in idx]
            keep = [j for j, f in enumerate(frame_sets) if f.size]
            skipped += len(idx) - len(keep)
            if not keep:
                continue
            idx = idx[keep]
            frame_sets = [frame_sets[j] for j in keep]
            if cfg.speedup_k == 1:
                frame_sets = None
            labels = data.labels[idx]
            E, grads, info = model.loss_and_grad(data.batch(idx, streams), labels, frame_sets)
            if not np.isfinite(E) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", trace)
            _sgd_step(model, grads, velocity, epoch)
            model.commit_stats(info["stats"], len(idx))
            losses.append(E)
            seen += len(idx)
            for key, p in info["out"].items():
                if key in correct:
                    correct[key] += int((p.argmax(axis=1) == labels).sum())
        record = {
            "epoch": epoch,
            "loss": float(np.mean(losses)) if losses else float("nan"),
            "accuracy": {k: v / seen if seen else float("nan") for k, v in correct.items()},
            "beta": {s: [b.tolist() for b in model.streams[s].pyramid_weights()] for s in streams},
            "fusion": model.fusion_weights.tolist() if len(streams) == 2 else None,
            "skipped": skipped,
        }
        trace.append(record)
        logger.debug("epoch %d loss %.6f", epoch, record["loss"])
        if callback is not None:
            callback(record)
    return model, trace


def forward_stream(frames, stream, frame_set=None):
    """Evaluation-mode probabilities of one stream for a single sequence."""
    sets = None if frame_set is None else [frame_set]
    probs, _ = stream.forward([check_frames(frames)], training=False, frame_sets=sets)
    return probs[0]


def evaluate(model, data, batch_size=64):
    """Per-class and mean per-class accuracy for every stream and the fusion."""
    streams = tuple(model.streams)
    probs = {k: [] for k in streams + ("fused",)}
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        out = model.predict_proba(data.batch(idx, streams))
        for k in probs:
            probs[k].append(out[k])
    result = {}
    for k, chunks in probs.items():
        pred = np.concatenate(chunks).argmax(axis=1)
        per_class, mean = class_accuracies(data.labels, pred, model.n_classes)
        result[k] = {"mean_class_accuracy": mean, "per_class": per_class}
    return {
        "mean_class_accuracy": result["fused"]["mean_class_accuracy"],
        "per_class": result["fused"]["per_class"],
        "per_stream": {s: result[s] for s in streams},
        "fusion_weights": model.fusion_weights.tolist() if len(streams) == 2 else None,
    }


def gradcheck_model(model, batch, labels, frame_sets=None, eps=1e-6):
    """Max relative error between analytic and central-difference gradients, per block."""
    from .grad import finite_diff_check

    _, grads, _ = model.loss_and_grad(batch, labels, frame_sets)
    report = {}
    for name, value in model.parameters().items():
        saved = value.copy()

        def f(theta, value=value):
            value[...] = theta
            return model.loss(batch, labels, frame_sets)

        res = finite_diff_check(f, lambda _t, g=grads[name]: g, saved, eps)
        value[...] = saved
        report[name] = res.max_rel_error
    return report


def save_model(path, model):
    """Serialize parameters, batch-norm buffers and config to a ``PYRA`` checkpoint."""
    from .io import save_checkpoint

    blocks = dict(model.parameters())
    blocks.update({f"buffer:{k}": v for k, v in model.buffers().items()})
    meta = {"config": model.config.to_dict(), "n_classes": model.n_classes,
            "streams": list(model.streams)}
    save_checkpoint(path, blocks, meta)


def load_model(path):
    from .io import load_checkpoint

    blocks, meta = load_checkpoint(path)
    config = TrainConfig.from_dict(meta["config"])
    streams = {}
    for s in meta["streams"]:
        params = {k.split("/", 1)[1]: v for k, v in blocks.items() if k.startswith(f"{s}/")}
        buffers = {k.split("/", 1)[1]: v for k, v in blocks.items()
                   if k.startswith(f"buffer:{s}/")}
        streams[s] = PyramidStream(config, params, buffers)
    return DeepPyramidModel(config, streams, meta["n_classes"], blocks.get("fusion.free"))


def weight_table(model):
    """Rows ``(stream, pyramid, level, position, beta)`` of every learned node weight."""
    from .pyramid import node_labels

    rows = []
    for s, st in model.streams.items():
        for p, beta in enumerate(st.pyramid_weights()):
            for (k, l), b in zip(node_labels(st.config.depth), beta):
                rows.append((s, p, l, k, float(b)))
    return rows
