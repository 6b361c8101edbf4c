"""Command-line surface tying the pipeline together.

Subcommands: ingest, build-vocab, encode, fuse, train-global,
predict-global, predict-local, knn-baseline, dsd-train, sensitivity-scan,
eval, pipeline.

Exit codes: 0 success, 2 validation error, 3 compute error.  Errors print
``error: <ErrorName>: <detail>`` on stderr.  The ``--seed`` flag falls
back to the LOCALLEARN_SEED environment variable, then to 0.  Timings go
to stderr and sidecar ``timing.txt`` files only, so written reports are
byte-reproducible.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bovw, core, dsd, report, svm
from .errors import ComputeError, MalformedFile, ValidationError
from .features import FusionSpec, fuse
from .local import LocalLearnerConfig, knn_classify_batch, local_predict_batch
from .neighbors import KdForestParams
from .pipeline import ingest_and_fuse, run_pipeline


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("LOCALLEARN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"LOCALLEARN_SEED={env!r} is not an integer")
    return 0


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _load_label_map(args, labels: dict[str, str] | None = None) -> core.LabelMap:
    if getattr(args, "labelmap", None):
        return core.LabelMap.from_file(args.labelmap)
    if labels is None:
        raise ValidationError("a --labelmap file is required here")
    return core.LabelMap(tuple(sorted(set(labels.values()))))


def _labeled_matrix(features_path, labels_path, args):
    matrix = core.load_features(features_path)
    labels = core.read_labels(labels_path)
    label_map = _load_label_map(args, labels)
    return core.attach_labels(matrix, labels, label_map), label_map


def _write_predictions(path, sample_ids, pred_ids, label_map) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sid, p in zip(sample_ids, pred_ids):
            fh.write(f"{sid},{label_map.name_of(int(p))}\n")


def cmd_ingest(args) -> int:
    manifest = core.parse_manifest(args.manifest)
    data = ingest_and_fuse(manifest, seed=_resolve_seed(args.seed))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for split, matrix in sorted(data.fused.items()):
        core.save_features(matrix, out / f"{split}.features", fmt=args.format)
        core.write_labels(
            {sid: data.labels[sid] for sid in matrix.sample_ids},
            out / f"{split}.labels",
        )
        summary.append(f"{split}: {matrix.n_samples} samples, dim {matrix.dim}")
    data.label_map.save(out / "labelmap.txt")
    text = "\n".join(summary) + "\n"
    _write_text(out / "ingest.txt", text)
    sys.stdout.write(text)
    return 0


def _read_bovw_config(path) -> tuple[bovw.DenseSiftConfig, bovw.PyramidConfig, dict]:
    """Key-value config for build-vocab: levels, vocab, bin-sizes, step,
    contrast-threshold, subsample-cap, trees, leaf-capacity, budget."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise MalformedFile(f"{path}:{lineno}: expected 'key value'")
        values[parts[0]] = parts[1].strip()

    def ints(key, default):
        return tuple(int(v) for v in values[key].split(",")) if key in values else default

    sift = bovw.DenseSiftConfig(
        bin_sizes=ints("bin-sizes", (4, 6, 8, 10)),
        step=int(values.get("step", "2")),
        contrast_threshold=float(values.get("contrast-threshold", "0.005")),
    )
    pyramid = bovw.PyramidConfig(
        levels=ints("levels", (1, 2, 3, 4)),
        vocab_sizes=ints("vocab", bovw.FULL_VOCAB_SIZES),
    )
    extras = {
        "subsample_cap": int(values.get("subsample-cap", "200000")),
        "n_trees": int(values.get("trees", "4")),
        "leaf_capacity": int(values.get("leaf-capacity", "96")),
        "budget": int(values.get("budget", "512")),
    }
    return sift, pyramid, extras


def _image_dir(path) -> tuple[list[str], list[np.ndarray]]:
    files = sorted(Path(path).glob("*.pgm"))
    if not files:
        raise ValidationError(f"no .pgm images in {path}")
    return [f.stem for f in files], [bovw.read_pgm(f) for f in files]


def cmd_build_vocab(args) -> int:
    seed = _resolve_seed(args.seed)
    sift, pyramid, extras = _read_bovw_config(args.config)
    _, images = _image_dir(args.images)
    params = KdForestParams(
        n_trees=extras["n_trees"],
        leaf_capacity=extras["leaf_capacity"],
        backtrack_budget=extras["budget"],
        seed=seed,
    )
    vocab = bovw.build_vocab(
        images, sift, pyramid, seed,
        subsample_cap=extras["subsample_cap"], forest_params=params,
        workers=args.workers,
    )
    bovw.save_vocab(vocab, args.out)
    sizes = ", ".join(str(lv.centroids.shape[0]) for lv in vocab.levels)
    sys.stdout.write(f"vocabulary: {len(vocab.levels)} levels ({sizes} words)\n")
    return 0


def cmd_encode(args) -> int:
    vocab = bovw.load_vocab(args.vocab)
    pyramid = bovw.PyramidConfig(
        levels=tuple(lv.grid for lv in vocab.levels),
        vocab_sizes=tuple(lv.centroids.shape[0] for lv in vocab.levels),
    )
    ids, images = _image_dir(args.images)

    def one(img):
        descs = bovw.dense_sift(img, vocab.sift)
        return bovw.encode(descs, vocab, pyramid, (img.shape[1], img.shape[0]))

    if args.workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(one, images))  # in input order
    else:
        rows = [one(img) for img in images]
    matrix = core.FeatureMatrix(np.vstack(rows), ids)
    core.save_features(matrix, args.out, fmt=args.format)
    sys.stdout.write(f"encoded {matrix.n_samples} images, dim {matrix.dim}\n")
    return 0


def cmd_fuse(args) -> int:
    sources = {}
    order = []
    for item in args.source:
        if "=" not in item:
            raise ValidationError(f"--source expects name=path, got {item!r}")
        name, path = item.split("=", 1)
        order.append(name)
        sources[name] = core.load_features(path)
    spec = FusionSpec(
        sources=tuple(order),
        skip_normalize=frozenset(args.no_normalize or ()),
        renormalize=args.renormalize,
    )
    fused = fuse(spec, sources)
    core.save_features(fused, args.out, fmt=args.format)
    sys.stdout.write(f"fused {fused.n_samples} samples, dim {fused.dim}\n")
    return 0


def cmd_train_global(args) -> int:
    seed = _resolve_seed(args.seed)
    matrix, label_map = _labeled_matrix(args.features, args.labels, args)
    cfg = svm.SvmConfig(C=args.C, seed=seed)
    model = svm.train_ova(
        matrix.values, matrix.labels, cfg,
        n_classes=label_map.n_classes, class_names=label_map.names,
    )
    svm.save_ova(model, args.out)
    sys.stdout.write(
        f"trained {len(model.trained_classes)} one-vs-all model(s), dim {matrix.dim}\n"
    )
    return 0


def cmd_predict_global(args) -> int:
    model = svm.load_ova(args.model)
    matrix = core.load_features(args.features)
    if model.class_names is not None and not args.labelmap:
        label_map = core.LabelMap(model.class_names)
    else:
        label_map = _load_label_map(args)
    preds = svm.predict_ova_batch(model, matrix.values)
    _write_predictions(args.out, matrix.sample_ids, preds, label_map)
    sys.stdout.write(f"predicted {matrix.n_samples} samples\n")
    return 0


def cmd_predict_local(args) -> int:
    seed = _resolve_seed(args.seed)
    train, label_map = _labeled_matrix(args.train, args.train_labels, args)
    test = core.load_features(args.test)
    cfg = LocalLearnerConfig(k=args.k, svm=svm.SvmConfig(C=args.C, seed=seed))
    preds, timing = local_predict_batch(train, test, cfg, workers=args.workers)
    _write_predictions(args.out, test.sample_ids, preds, label_map)
    sys.stderr.write(
        f"timing: search {timing.search_s:.2f}s train {timing.train_s:.2f}s "
        f"predict {timing.predict_s:.2f}s wall {timing.total_s:.2f}s\n"
    )
    sys.stdout.write(f"predicted {test.n_samples} samples\n")
    return 0


def cmd_knn_baseline(args) -> int:
    train, label_map = _labeled_matrix(args.train, args.train_labels, args)
    test = core.load_features(args.test)
    preds = knn_classify_batch(train, test, args.k)
    _write_predictions(args.out, test.sample_ids, preds, label_map)
    sys.stdout.write(f"predicted {test.n_samples} samples\n")
    return 0


def cmd_dsd_train(args) -> int:
    seed = _resolve_seed(args.seed)
    matrix, label_map = _labeled_matrix(args.features, args.labels, args)
    schedule = dsd.parse_schedule(args.schedule, exclude=args.exclude or ())
    image_shape = None
    if args.flip_augment:
        try:
            h, w = (int(v) for v in args.flip_augment.lower().split("x"))
            image_shape = (h, w)
        except ValueError:
            raise ValidationError(
                f"--flip-augment expects ROWSxCOLS, got {args.flip_augment!r}"
            )
    cfg = dsd.TrainerConfig(
        lr=args.lr, momentum=args.momentum, batch_size=args.batch,
        patience=args.patience, seed=seed, flip_augment=image_shape is not None,
    )
    if args.val_features and args.val_labels:
        val_matrix, _ = _labeled_matrix(args.val_features, args.val_labels, args)
        Xt, yt = matrix.values, matrix.labels
        Xv, yv = val_matrix.values, val_matrix.labels
    else:
        rng = np.random.default_rng([seed, 41])
        order = rng.permutation(matrix.n_samples)
        n_val = max(1, int(matrix.n_samples * args.val_fraction))
        val_rows, train_rows = order[:n_val], order[n_val:]
        Xt, yt = matrix.values[train_rows], matrix.labels[train_rows]
        Xv, yv = matrix.values[val_rows], matrix.labels[val_rows]
    dims = [matrix.dim] + ([args.hidden] if args.hidden > 0 else []) + [label_map.n_classes]
    model = dsd.init_mlp(dims, seed=seed)
    logs = dsd.dsd_train(model, (Xt, yt), (Xv, yv), schedule, cfg, image_shape=image_shape)
    dsd.save_mlp(model, args.out)
    if args.log:
        layer_names = model.layer_names()
        lines = ["epoch,phase,lr,train_loss,val_acc," +
                 ",".join(f"zeros_{n}" for n in layer_names)]
        for entry in logs:
            zf = ",".join(f"{entry.zero_fracs[n]:.6f}" for n in layer_names)
            lines.append(
                f"{entry.epoch},{entry.phase},{entry.lr:.8g},"
                f"{entry.train_loss:.6f},{entry.val_acc:.6f},{zf}"
            )
        _write_text(args.log, "\n".join(lines) + "\n")
    sys.stdout.write(
        f"trained {schedule.total_epochs} epochs, final val_acc {logs[-1].val_acc:.6f}\n"
    )
    return 0


def cmd_sensitivity_scan(args) -> int:
    model = dsd.load_mlp(args.model)
    matrix, _ = _labeled_matrix(args.features, args.labels, args)
    rates = tuple(float(r) for r in args.rates.split(","))
    table = dsd.sensitivity_scan(model, matrix.values, matrix.labels, rates)
    selected = dsd.select_rates(table, max_drop_points=args.threshold)
    lines = ["layer,rate,val_acc"]
    for layer in table.acc:
        lines.append(f"{layer},0.0,{table.baseline:.6f}")
        for r in table.rates:
            lines.append(f"{layer},{r},{table.acc[layer][r]:.6f}")
    if args.out:
        _write_text(args.out, "\n".join(lines) + "\n")
    for layer, rate in selected.items():
        sys.stdout.write(f"{layer}: rate {rate}\n")
    return 0


def cmd_eval(args) -> int:
    predicted = core.read_labels(args.predictions)
    truth = core.read_labels(args.truth)
    label_map = _load_label_map(args, truth)
    rep = report.evaluate(predicted, truth, label_map)
    if args.out:
        _write_text(str(args.out) + ".txt", report.render_text(rep))
        _write_text(str(args.out) + ".csv", report.render_csv(rep))
    sys.stdout.write(report.render_text(rep))
    return 0


def cmd_pipeline(args) -> int:
    seed = _resolve_seed(args.seed)
    manifest = core.parse_manifest(args.manifest)
    t0 = time.perf_counter()
    result = run_pipeline(
        manifest, k=args.k, C=args.C, workers=args.workers, seed=seed
    )
    wall = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for method, rep in result.reports.items():
        _write_text(out / f"{method}.report.txt", report.render_text(rep))
        _write_text(out / f"{method}.report.csv", report.render_csv(rep))
        with open(out / f"{method}.predictions", "w", encoding="utf-8", newline="\n") as fh:
            for sid in sorted(result.predictions[method]):
                fh.write(f"{sid},{result.predictions[method][sid]}\n")
    comparison = report.render_comparison_text(result.reports)
    _write_text(out / "comparison.txt", comparison)
    _write_text(out / "comparison.csv", report.render_comparison_csv(result.reports))
    timing = result.local_timing
    _write_text(
        out / "timing.txt",
        f"wall_s {wall:.3f}\nlocal_search_s {timing.search_s:.3f}\n"
        f"local_train_s {timing.train_s:.3f}\nlocal_predict_s {timing.predict_s:.3f}\n",
    )
    sys.stderr.write(f"pipeline wall time {wall:.2f}s\n")
    sys.stdout.write(comparison)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="locallearn",
        description="Feature fusion, global/local SVM learning, BOVW encoding, "
        "and dense-sparse-dense training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=None,
                       help="random seed (default: $LOCALLEARN_SEED or 0)")
        return p

    p = add("ingest", cmd_ingest, help="validate a manifest and materialize splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--format", choices=("text", "binary"), default="text")

    p = add("build-vocab", cmd_build_vocab, help="build a visual vocabulary")
    p.add_argument("--images", required=True, help="directory of .pgm images")
    p.add_argument("--config", required=True, help="key-value config file")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)

    p = add("encode", cmd_encode, help="encode images against a vocabulary")
    p.add_argument("--images", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("text", "binary"), default="text")

    p = add("fuse", cmd_fuse, help="L2-normalize and concatenate feature files")
    p.add_argument("--source", action="append", required=True,
                   metavar="NAME=PATH", help="repeatable, order = fusion order")
    p.add_argument("--no-normalize", action="append", metavar="NAME",
                   help="skip L2 normalization for this source")
    p.add_argument("--renormalize", action="store_true",
                   help="L2-normalize the fused vector too")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("text", "binary"), default="text")

    p = add("train-global", cmd_train_global, help="train a one-vs-all linear SVM")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--labelmap")
    p.add_argument("-C", type=float, default=100.0)
    p.add_argument("--out", required=True)

    p = add("predict-global", cmd_predict_global, help="predict with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labelmap")
    p.add_argument("--out", required=True)

    p = add("predict-local", cmd_predict_local, help="per-query local SVM prediction")
    p.add_argument("--train", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--labelmap")
    p.add_argument("-k", type=int, default=200)
    p.add_argument("-C", type=float, default=100.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)

    p = add("knn-baseline", cmd_knn_baseline, help="cosine k-NN majority vote")
    p.add_argument("--train", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--labelmap")
    p.add_argument("-k", type=int, default=200)
    p.add_argument("--out", required=True)

    p = add("dsd-train", cmd_dsd_train, help="dense-sparse-dense MLP training")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--labelmap")
    p.add_argument("--schedule", required=True, help='e.g. "D300,S50@0.6,D50"')
    p.add_argument("--hidden", type=int, default=64, help="0 = linear softmax")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--exclude", action="append", metavar="LAYER",
                   help="layer(s) excluded from pruning")
    p.add_argument("--flip-augment", metavar="ROWSxCOLS",
                   help="add horizontally flipped copies of image-backed rows")
    p.add_argument("--val-features")
    p.add_argument("--val-labels")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="per-epoch CSV log path")

    p = add("sensitivity-scan", cmd_sensitivity_scan,
            help="per-layer pruning sensitivity table")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--labelmap")
    p.add_argument("--rates", default="0.3,0.4,0.5,0.6")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="max accuracy drop in points")
    p.add_argument("--out", help="scan table CSV path")

    p = add("eval", cmd_eval, help="score predictions against ground truth")
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--labelmap")
    p.add_argument("--out", help="report path prefix (.txt/.csv appended)")

    p = add("pipeline", cmd_pipeline,
            help="run global SVM, local SVM, and k-NN end to end")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("-k", type=int, default=200)
    p.add_argument("-C", type=float, default=100.0)
    p.add_argument("--workers", type=int, default=1)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 2
    except ComputeError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
