"""Acceptance criteria, one test per criterion.

Each test prints a ``criterion N: PASS|FAIL`` line; the lines are repeated in
the terminal summary.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import grid_min, leaf_dataset, qp_dual
from tpyramid.deep import (
    DeepPyramidModel,
    TrainConfig,
    _sgd_step,
    evaluate,
    gradcheck_model,
    train,
)
from tpyramid.grad import GradTape, SurrogateSchedule, assemble_param_gradient, select_frames
from tpyramid.layers import FramewiseEncoder
from tpyramid.mkl import (
    MultipleKernelPyramidClassifier,
    combine,
    compute_grams,
    dual_objective,
    em_train,
    one_vs_rest_labels,
    solve_alpha,
)
from tpyramid.pyramid import aggregate_average, build_partition, node_index
from tpyramid.simplex import jacobian, normalize
from tpyramid.synth import SynthSpec, split_data, synthesize


def report(number, ok, detail, started):
    line = (f"criterion {number}: {'PASS' if ok else 'FAIL'} "
            f"({detail}; {time.perf_counter() - started:.1f}s)")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def tiny_model(rng, **kw):
    cfg = TrainConfig(depth=3, d_enc=5, node_dim=3, weight_decay=1e-3, **kw)
    model = DeepPyramidModel.initialize(cfg, {"motion": 4, "appearance": 4}, 2, seed=1)
    for name, v in model.parameters().items():
        v += 0.3 * rng.standard_normal(v.shape)
    return model


def test_criterion_1_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = {}
    batch = {s: [rng.standard_normal((T, 4)) for T in (1, 5, 7)]
             for s in ("motion", "appearance")}
    labels = np.array([0, 1, 1])
    for variant in ("concat", "average"):
        model = tiny_model(rng, variant=variant)
        errs = gradcheck_model(model, batch, labels, eps=1e-6)
        assert set(errs) == set(model.parameters())
        worst[variant] = max(errs.values())
    # Jacobian of the softmax map against central differences, column by column
    jac_err = 0.0
    for n in (2, 3, 7, 63):
        free = rng.standard_normal(n)
        J = jacobian(normalize(free))
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1e-6
            num = (normalize(free + e) - normalize(free - e)) / 2e-6
            jac_err = max(jac_err, np.abs(num - J[:, j]).max())
    ok = max(worst.values()) <= 1e-4 and jac_err <= 1e-6
    report(1, ok, f"model blocks max rel err {max(worst.values()):.2e}, "
                  f"simplex Jacobian err {jac_err:.2e}", t0)


def test_criterion_2_constraints():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    cfg = TrainConfig(depth=4, pyramids=2, d_enc=4, node_dim=4, reduce_dim=8,
                      lr_motion=0.5, lr_appearance=0.5, lr_fusion=0.5)
    model = DeepPyramidModel.initialize(cfg, {"motion": 3, "appearance": 3}, 3)
    worst = 0.0
    for step in range(1000):
        grads = {k: rng.standard_normal(v.shape) for k, v in model.parameters().items()}
        _sgd_step(model, grads, {}, step)
        simplices = [model.fusion_weights]
        for st in model.streams.values():
            simplices += st.pyramid_weights()
        for w in simplices:
            assert np.all(w >= 0)
            worst = max(worst, abs(w.sum() - 1.0))
    report(2, worst <= 1e-12, f"max |sum - 1| {worst:.1e} over 1000 steps", t0)


def test_criterion_3_partitions():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    for _ in range(1000):
        T = int(rng.integers(1, 501))
        D = int(rng.integers(1, 9))
        mt = build_partition(T, D)
        for l in range(1, D + 1):
            seen = np.zeros(T, dtype=int)
            for k in range(1, 2 ** (l - 1) + 1):
                members = mt.members(k, l)
                lo, hi = np.ceil((k - 1) * T / 2 ** (l - 1)), np.ceil(k * T / 2 ** (l - 1))
                assert members.tolist() == list(range(int(lo), int(hi)))
                seen[members] += 1
            assert np.all(seen == 1)
            # each frame's node at level l is the parent of its node at level l + 1
            if l < D:
                assert np.all((mt.nodes[:, l] - 1) // 2 == mt.nodes[:, l - 1])
        for K in (1, 3, 24):
            flat = np.concatenate([select_frames(T, K, r) for r in range(K)])
            assert np.array_equal(np.sort(flat), np.arange(T))
    report(3, True, "1000 random (T, D) partitions and residue classes for K in {1, 3, 24}", t0)


def test_criterion_4_surrogate_coverage():
    t0 = time.perf_counter()
    T, K = 185, 24
    counts = [len(SurrogateSchedule(K, r).frames(T)) for r in range(K)]
    mean = float(np.mean(counts))
    rng = np.random.default_rng(4)
    enc = FramewiseEncoder([rng.standard_normal((5, 3)), rng.standard_normal((4, 5))],
                           [rng.standard_normal(5), rng.standard_normal(4)], "tanh")
    X = rng.standard_normal((T, 3))
    mt = build_partition(T, 6)
    touched = np.zeros(T, dtype=int)
    schedule = SurrogateSchedule(K, 0)
    for _ in range(K):
        tape = GradTape(rng.standard_normal((mt.n_nodes, 4)))
        assemble_param_gradient(tape, mt, enc, X, schedule=schedule)
        sel = schedule.frames(T)
        touched[sel[np.any(tape.frame_grads != 0, axis=1)]] += 1
        schedule = schedule.advance()
    ok = 7.5 <= mean <= 8.0 and np.all(touched == 1)
    report(4, ok, f"mean selected frames {mean:.3f} (full video {T}); "
                  f"cycle touches every frame once: {bool(np.all(touched == 1))}", t0)


def test_criterion_5_kernels():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_eig, worst_cross = np.inf, 0.0
    for trial in range(200):
        desc = rng.standard_normal((20, 7, 5)) * rng.uniform(0.1, 3.0)
        kernel = ("linear", "gaussian")[trial % 2]
        beta = rng.dirichlet(np.full(7, rng.uniform(0.1, 2.0)))
        for variant in ("linear_combo", "cross_combo"):
            K = combine(compute_grams(desc, kernel, variant), beta)
            worst_eig = min(worst_eig, np.linalg.eigvalsh(K).min() / (np.trace(K) / len(K)))
        if kernel == "linear":
            avg = np.stack([aggregate_average(v, beta) for v in desc])
            K = combine(compute_grams(desc, "linear", "cross_combo"), beta)
            worst_cross = max(worst_cross, np.abs(K - avg @ avg.T).max())
    ok = worst_eig >= -1e-8 and worst_cross <= 1e-10
    report(5, ok, f"min eigenvalue / (trace/n) {worst_eig:.2e}, "
                  f"cross vs averaged map {worst_cross:.1e}", t0)


@pytest.mark.slow
def test_criterion_6_em():
    t0 = time.perf_counter()
    desc, y = leaf_dataset(n=40, seed=0, both_leaves=True)
    details, ok = [], True
    for variant in ("linear_combo", "cross_combo"):
        model = em_train(desc, y, variant=variant, svm_tol=1e-8)
        gs = compute_grams(desc, variant=variant)
        final = dual_objective(gs, model.beta, model.alphas, model.Y)
        f = lambda b: sum(solve_alpha(combine(gs, b), yc, 10.0, 1e-8).objective
                          for yc in model.Y)
        best, at = grid_min(f, 3, 0.01)
        leaf = model.beta[1:].sum()
        ok &= leaf >= 0.9 and final <= best + 1e-3
        details.append(f"{variant}: leaf mass {leaf:.3f}, objective {final:.5f} "
                       f"vs grid {best:.5f} at {np.round(at, 2).tolist()}")
    report(6, ok, "; ".join(details), t0)


def _fine_pair_accuracy(depth, data, tr, te):
    cfg = TrainConfig(depth=depth, d_enc=16, node_dim=16, stream="motion", epochs=40,
                      lr_motion=0.05)
    model, _ = train(data.subset(tr), cfg)
    return evaluate(model, data.subset(te))["mean_class_accuracy"]


def test_criterion_7_granularity():
    t0 = time.perf_counter()
    spec = SynthSpec(n_classes=2, videos_per_class=80, vocab_size=4, pattern_length=2,
                     fine_pairs=True, noise=0.1, d_in=8, seed=3)
    data, _ = synthesize(spec)
    tr, te = split_data(data, 0.5, seed=0)
    assert np.all(np.bincount(data.labels[tr]) == 40) and np.all(np.bincount(data.labels[te]) == 40)
    acc = {D: _fine_pair_accuracy(D, data, tr, te) for D in (1, 2, 3)}
    ok = acc[1] <= 0.6 and acc[2] >= 0.9 and acc[3] >= 0.9
    report(7, ok, "test accuracy by depth " + ", ".join(f"D={k}: {v:.3f}" for k, v in acc.items()),
           t0)


def test_criterion_8_fusion():
    t0 = time.perf_counter()
    spec = SynthSpec(n_classes=4, videos_per_class=40, vocab_size=9, complementary=True,
                     noise=0.1, d_in=12, seed=5)
    data, _ = synthesize(spec)
    tr, te = split_data(data, 0.5, seed=0)
    common = dict(depth=2, d_enc=16, node_dim=16, epochs=40, lr_motion=0.05,
                  lr_appearance=0.05, lr_fusion=0.05)
    joint, _ = train(data.subset(tr), TrainConfig(**common))
    res = evaluate(joint, data.subset(te))
    single = {}
    for s in ("motion", "appearance"):
        alone, _ = train(data.subset(tr), TrainConfig(stream=s, **common))
        single[s] = evaluate(alone, data.subset(te))["mean_class_accuracy"]
        single[f"{s} (joint head)"] = res["per_stream"][s]["mean_class_accuracy"]
    fused = res["mean_class_accuracy"]
    best = max(single.values())
    ok = fused >= best - 0.02 and fused >= best + 0.1
    report(8, ok, f"fused {fused:.3f} vs single streams "
                  + ", ".join(f"{k} {v:.3f}" for k, v in single.items()), t0)


def _torch_mean_pool_trace(model, data, cfg):
    """Loss trace of a mean-pool two-stream network written directly in torch."""
    import torch

    torch.set_default_dtype(torch.float64)
    P = {k: torch.tensor(v.copy(), requires_grad=True) for k, v in model.parameters().items()}

    def stream_probs(s, videos):
        pooled = []
        for x in videos:
            h = torch.tanh(torch.as_tensor(x) @ P[f"{s}/enc.W0"].T + P[f"{s}/enc.b0"])
            h = torch.tanh(h @ P[f"{s}/enc.W1"].T + P[f"{s}/enc.b1"])
            pooled.append(h.mean(dim=0))
        z = torch.stack(pooled) @ P[f"{s}/proj.W"].T
        z = torch.nn.functional.batch_norm(z, None, None, P[f"{s}/bn.gamma"], P[f"{s}/bn.beta"],
                                           training=True, eps=cfg.bn_eps)
        return torch.softmax(z @ P[f"{s}/fc.W"].T + P[f"{s}/fc.b"], dim=1)

    trace = []
    n = len(data)
    for epoch in range(cfg.epochs):
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = list(range(start, min(start + cfg.batch_size, n)))
            y = torch.as_tensor(data.labels[idx])
            w = torch.softmax(P["fusion.free"], dim=0)
            fused = (w[0] * stream_probs("motion", [data.motion[i] for i in idx])
                     + w[1] * stream_probs("appearance", [data.appearance[i] for i in idx]))
            loss = -torch.log(fused[torch.arange(len(idx)), y]).mean()
            decay = sum((v ** 2).sum() for k, v in P.items() if not k.endswith(".free"))
            loss = loss + 0.5 * cfg.weight_decay * decay
            for v in P.values():
                v.grad = None
            loss.backward()
            with torch.no_grad():
                for k, v in P.items():
                    if k == "fusion.free":
                        lr = cfg.lr_fusion
                    else:
                        lr = cfg.learning_rate(k.split("/")[0], epoch)
                    if v.grad is not None:
                        v -= lr * v.grad
            losses.append(loss.item())
        trace.append(float(np.mean(losses)))
    return trace


def test_criterion_9_torch_oracle():
    t0 = time.perf_counter()
    spec = SynthSpec(n_classes=3, videos_per_class=4, noise=0.3, d_in=6, t_min=3, t_max=15,
                     seed=9)
    data, _ = synthesize(spec)
    cfg = TrainConfig(depth=1, d_enc=7, node_dim=5, batch_size=5, epochs=8, lr_motion=0.2,
                      lr_appearance=0.1, lr_fusion=0.3, decay_epochs_motion=(4,),
                      weight_decay=1e-3, shuffle=False, seed=2)
    model = DeepPyramidModel.initialize(cfg, data.dims(), data.n_classes)
    model.fusion_free[:] = [0.4, -0.2]
    torch = pytest.importorskip("torch")
    saved = torch.get_default_dtype()
    try:
        oracle = _torch_mean_pool_trace(model, data, cfg)
    finally:
        torch.set_default_dtype(saved)
    _, trace = train(data, cfg, model=model)
    ours = [r["loss"] for r in trace]
    diff = float(np.max(np.abs(np.array(ours) - np.array(oracle))))
    moved = abs(ours[-1] - ours[0])
    report(9, diff <= 1e-10 and moved > 1e-3,
           f"max loss trace difference {diff:.1e} over {cfg.epochs} epochs "
           f"(loss {ours[0]:.4f} -> {ours[-1]:.4f})", t0)


def test_criterion_10_shallow_depth_one():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    X = [rng.standard_normal((int(rng.integers(4, 30)), 5)) + 0.7 * (c - 1)
         for c in range(3) for _ in range(12)]
    y = np.repeat([0, 1, 2], 12)
    clf = MultipleKernelPyramidClassifier(depth=1, kernel="gaussian", svm_tol=1e-10)
    clf.fit(X, y)
    desc = np.stack([x.mean(axis=0) for x in X])
    sigma = clf.model_.sigma
    K = np.exp(-((desc[:, None] - desc[None]) ** 2).sum(-1) / (2 * sigma ** 2))
    worst = 0.0
    for c, yc in enumerate(one_vs_rest_labels(y, [0, 1, 2])):
        ref, _ = qp_dual(K, yc, clf.C)
        worst = max(worst, np.abs(clf.model_.alphas[c] - ref).max())
    report(10, worst <= 1e-6 and clf.beta_.tolist() == [1.0],
           f"max dual difference to an interior-point SVM {worst:.1e}", t0)
