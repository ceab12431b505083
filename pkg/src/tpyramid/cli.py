"""Command-line entry point: ``tpyramid <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import deep, mkl
from .io import FormatError, load_dataset, load_manifest, precompute_descriptors, save_manifest
from .pyramid import build_partition, node_descriptors
from .synth import SynthSpec, generate_synthetic, nearest_centroid_accuracy, split

logger = logging.getLogger("tpyramid")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

TOP_LEVEL_KEYS = {"mode", "train", "test", "train_config", "shallow"}
SHALLOW_KEYS = {"depth", "variant", "kernel", "sigma", "C", "max_iter", "tol", "svm_tol",
                "damping", "stream"}

# learned stream weights reported at full scale (6-level pyramid, UCF-101)
REFERENCE_FUSION = {"depth": 6, "dataset": "UCF-101", "fusion_weights": [0.60, 0.40]}


class UsageError(Exception):
    pass


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found")
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})")


def _check_keys(values, valid, where):
    unknown = sorted(set(values) - set(valid))
    if unknown:
        raise UsageError(f"unknown {where} key(s) {unknown}; valid keys are {sorted(valid)}")


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args):
    values = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        values["seed"] = args.seed
    try:
        spec = SynthSpec.from_dict(values)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc))
    out = _out_dir(args)
    manifest = generate_synthetic(spec, out)
    data = load_dataset(manifest)
    report = {"videos": len(data), "classes": data.n_classes,
              "nearest_centroid_accuracy": {s: nearest_centroid_accuracy(data, s)
                                            for s in deep.STREAMS}}
    print(json.dumps(report))
    return EXIT_OK


def cmd_split(args):
    manifest = load_manifest(args.manifest)
    train, test = split(manifest, args.ratio, args.seed or 0)
    out = Path(args.manifest).parent
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        train.root = test.root = manifest.root
        for m in (train, test):
            for e in m.entries:
                e.appearance = str((manifest.root / e.appearance).resolve())
                e.motion = str((manifest.root / e.motion).resolve())
    save_manifest(train, out / "train.json")
    save_manifest(test, out / "test.json")
    print(json.dumps({"train": len(train.entries), "test": len(test.entries)}))
    return EXIT_OK


def cmd_descriptors(args):
    manifest = load_manifest(args.manifest)
    path = precompute_descriptors(manifest, args.depth or 3, _out_dir(args))
    print(str(path))
    return EXIT_OK


def _load_train_config(args):
    cfg = _read_json(args.config)
    _check_keys(cfg, TOP_LEVEL_KEYS, "config")
    mode = cfg.get("mode", "deep")
    if mode not in ("deep", "shallow"):
        raise UsageError(f"mode must be 'deep' or 'shallow', got {mode!r}")
    if "train" not in cfg:
        raise UsageError("config needs a 'train' manifest path")
    base = Path(args.config).parent
    for key in ("train", "test"):
        if key in cfg:
            cfg[key] = str(base / cfg[key])
    return mode, cfg


def _deep_config(cfg, args):
    values = dict(cfg.get("train_config", {}))
    overrides = {"seed": args.seed, "depth": args.depth, "variant": args.variant,
                 "pyramids": args.pyramids, "speedup_k": args.speedup_k, "stream": args.stream,
                 "threads": args.threads}
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return deep.TrainConfig.from_dict(values)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc))


def _shallow_config(cfg, args):
    values = {"depth": 3, "variant": "linear_combo", "kernel": "linear", "sigma": None,
              "C": 10.0, "max_iter": 50, "tol": 1e-6, "svm_tol": 1e-5, "damping": 0.0,
              "stream": "motion"}
    given = cfg.get("shallow", {})
    _check_keys(given, SHALLOW_KEYS, "shallow")
    values.update(given)
    for key in ("depth", "variant", "stream"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    if values["stream"] not in deep.STREAMS:
        raise UsageError("the shallow path trains one stream: use --stream motion|appearance")
    if values["variant"] not in mkl.VARIANTS:
        raise UsageError(f"shallow variant must be one of {mkl.VARIANTS}")
    return values


def _shallow_descriptors(manifest, stream, depth):
    data = load_dataset(manifest, streams=(stream,))
    desc = np.stack([node_descriptors(x, build_partition(len(x), depth))
                     for x in getattr(data, stream)])
    return desc, data.labels


def _write_metrics(out, metrics):
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1))
    print(json.dumps({"mean_class_accuracy": metrics["mean_class_accuracy"]}))


def _shallow_metrics(model, desc, labels, n_classes, stream):
    from .metrics import class_accuracies

    pred = model.predict(desc)
    per_class, mean = class_accuracies(labels, pred, n_classes)
    return {"mean_class_accuracy": mean, "per_class": per_class,
            "per_stream": {stream: {"mean_class_accuracy": mean, "per_class": per_class}},
            "fusion_weights": None}


def cmd_train(args):
    mode, cfg = _load_train_config(args)
    out = _out_dir(args)
    train_manifest = load_manifest(cfg["train"])
    test_manifest = load_manifest(cfg["test"]) if "test" in cfg else None
    if mode == "shallow":
        sc = _shallow_config(cfg, args)
        desc, labels = _shallow_descriptors(train_manifest, sc["stream"], sc["depth"])
        model = mkl.em_train(desc, labels, sc["variant"], sc["kernel"], sc["C"], sc["max_iter"],
                             sc["tol"], sc["sigma"], sc["damping"], sc["svm_tol"])
        payload = model.to_dict()
        payload["depth"] = sc["depth"]
        payload["stream"] = sc["stream"]
        payload["n_classes"] = train_manifest.n_classes
        (out / "model.json").write_text(json.dumps(payload))
        if test_manifest is not None:
            tdesc, tlabels = _shallow_descriptors(test_manifest, sc["stream"], sc["depth"])
            _write_metrics(out, _shallow_metrics(model, tdesc, tlabels,
                                                 train_manifest.n_classes, sc["stream"]))
        return EXIT_OK
    tc = _deep_config(cfg, args)
    data = load_dataset(train_manifest, tc.streams)
    (out / "config.json").write_text(json.dumps(tc.to_dict(), indent=1))
    with open(out / "trace.jsonl", "w") as fh:
        def log(record):
            fh.write(json.dumps(record) + "\n")
            fh.flush()
        try:
            model, _ = deep.train(data, tc, callback=log)
        except deep.DivergenceError as exc:
            logger.error("%s", exc)
            return EXIT_NUMERIC
    deep.save_model(out / "model.pyra", model)
    if test_manifest is not None:
        _write_metrics(out, deep.evaluate(model, load_dataset(test_manifest, tc.streams)))
    return EXIT_OK


def _load_any(path):
    path = Path(path)
    if path.suffix == ".json":
        return "shallow", json.loads(path.read_text())
    return "deep", deep.load_model(path)


def cmd_eval(args):
    kind, model = _load_any(args.checkpoint)
    manifest = load_manifest(args.manifest)
    if kind == "shallow":
        km = mkl.KernelModel.from_dict(model)
        desc, labels = _shallow_descriptors(manifest, model["stream"], model["depth"])
        metrics = _shallow_metrics(km, desc, labels, model["n_classes"], model["stream"])
    else:
        metrics = deep.evaluate(model, load_dataset(manifest, model.config.streams))
    out = _out_dir(args)
    _write_metrics(out, metrics)
    return EXIT_OK


def cmd_report(args):
    kind, model = _load_any(args.checkpoint)
    out = _out_dir(args)
    if kind == "shallow":
        from .pyramid import node_labels

        rows = [(model["stream"], 0, l, k, b)
                for (k, l), b in zip(node_labels(model["depth"]), model["beta"])]
        fusion = None
    else:
        rows = deep.weight_table(model)
        fusion = model.fusion_weights.tolist() if len(model.streams) == 2 else None
    files = []
    for stream in sorted({r[0] for r in rows}):
        for p in sorted({r[1] for r in rows if r[0] == stream}):
            path = out / f"beta_{stream}_p{p}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["level", "position", "beta"])
                for _, _, l, k, b in (r for r in rows if r[0] == stream and r[1] == p):
                    w.writerow([l, k, repr(b)])
            files.append(path.name)
    report = {"weights": files, "fusion_weights": fusion,
              "reference_full_scale": REFERENCE_FUSION}
    if args.manifest:
        args.out = str(out)
        cmd_eval(args)
        report["metrics"] = json.loads((out / "metrics.json").read_text())
    (out / "report.json").write_text(json.dumps(report, indent=1))
    print(json.dumps({"fusion_weights": fusion, "weights": files}))
    return EXIT_OK


def cmd_gradcheck(args):
    depth = args.depth or 3
    stream = args.stream or "joint"
    cfg = deep.TrainConfig(depth=depth, d_enc=5, node_dim=3, reduce_dim=4,
                           pyramids=args.pyramids or 1, variant=args.variant or "concat",
                           stream=stream, seed=args.seed or 0, weight_decay=1e-3)
    rng = np.random.default_rng(cfg.seed)
    model = deep.DeepPyramidModel.initialize(cfg, {s: 4 for s in deep.STREAMS}, 2)
    for v in model.parameters().values():
        v += 0.1 * rng.standard_normal(v.shape)
    batch = {s: [rng.standard_normal((T, 4)) for T in (1, 5, 7)] for s in cfg.streams}
    labels = np.array([0, 1, 1])
    frame_sets = None
    if args.speedup_k and args.speedup_k > 1:
        frame_sets = [np.arange(0, T, args.speedup_k) for T in (1, 5, 7)]
    errors = deep.gradcheck_model(model, batch, labels, frame_sets, eps=1e-5)
    worst = max(errors.values())
    result = {"max_relative_error": errors, "worst": worst, "tolerance": 1e-4,
              "passed": worst <= 1e-4}
    text = json.dumps(result, indent=1)
    if args.out:
        (_out_dir(args) / "gradcheck.json").write_text(text)
    print(text)
    return EXIT_OK if result["passed"] else EXIT_NUMERIC


COMMANDS = {"synth": cmd_synth, "split": cmd_split, "descriptors": cmd_descriptors,
            "train": cmd_train, "eval": cmd_eval, "report": cmd_report,
            "gradcheck": cmd_gradcheck}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="tpyramid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--depth", type=int)
        p.add_argument("--variant")
        p.add_argument("--pyramids", type=int)
        p.add_argument("--speedup-k", dest="speedup_k", type=int)
        p.add_argument("--stream", choices=("motion", "appearance", "joint"))
        p.add_argument("--threads", type=int)
        return p

    common(sub.add_parser("synth", help="generate a synthetic two-stream dataset"))
    p = common(sub.add_parser("split", help="stratified train/test split of a manifest"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratio", type=float, default=0.5)
    p = common(sub.add_parser("descriptors", help="precompute node descriptors"))
    p.add_argument("--manifest", required=True)
    common(sub.add_parser("train", help="train the deep or shallow model from a JSON config"))
    for name in ("eval", "report"):
        p = common(sub.add_parser(name))
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--manifest", required=(name == "eval"))
    common(sub.add_parser("gradcheck", help="finite-difference check of the deep model"))
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("synth", "descriptors") and args.out is None:
        print("usage error: --out is required", file=sys.stderr)
        return EXIT_USAGE
    if args.command in ("train", "eval", "report") and args.out is None:
        args.out = "."
    if args.command == "train" and args.config is None:
        print("usage error: --config is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
