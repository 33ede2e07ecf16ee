"""Command-line entry point for the full pipeline.

One binary, subcommand style; all randomness is funneled through explicit
``--seed`` flags. Defaults come from PipelineConfig and can be rebased with
``--config file.json`` (explicit flags still win).

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 internal
error. Failures print one machine-readable JSON line to stderr:
``{"error": {"code": "...", "message": "..."}}``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import annotate_server, datagen, evaluation, fixture, labeling, segmenter, ssm
from .config import PipelineConfig, load_config
from .errors import ConfigError, ToolkitError
from .mesh import load_class_table, load_labels, load_mesh, validate_cohort


def _error_line(code: str, message: str) -> None:
    print(json.dumps({"error": {"code": code, "message": message}}),
          file=sys.stderr)


def _int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def _load_cohort(cohort_dir: str) -> list:
    paths = sorted(p for p in Path(cohort_dir).iterdir()
                   if p.suffix.lower() in (".obj", ".ply"))
    if not paths:
        raise ConfigError(f"no .obj/.ply meshes found in {cohort_dir}")
    return [load_mesh(p) for p in paths]


# ---------------------------------------------------------------------------
# Subcommands

def cmd_fixture(args) -> int:
    paths = fixture.write_fixture(args.out, args.n_shapes, args.n_vertices,
                                  args.seed)
    print(f"fixture: {len(paths['meshes'])} meshes, labels at {paths['labels']}")
    return 0


def cmd_build_ssm(args) -> int:
    cohort = validate_cohort(_load_cohort(args.cohort))
    aligned = ssm.gpa_align(cohort, with_scaling=args.with_scaling)
    model = ssm.build_ssm(aligned, variance_fraction=args.variance_fraction,
                          with_scaling=args.with_scaling)
    ssm.save_model(model, args.out)
    print(f"model: {model.n_vertices} vertices, {model.n_modes} modes "
          f"({model.cohort_size} shapes) -> {args.out}")
    return 0


def cmd_generate(args) -> int:
    model = ssm.load_model(args.model)
    table = load_class_table(args.classes)
    mean_labels = load_labels(args.labels, model.n_vertices, table)
    config = datagen.GenerationConfig(
        n_train=args.n_train, n_val=args.n_val, n_test=args.n_test,
        n_points=args.n_points, sigma_lo=args.sigma_lo, sigma_hi=args.sigma_hi,
        rotate_splits=tuple(args.rotate_splits.split(",")) if args.rotate_splits
        else (), fps_start=args.fps_start, downsample=args.downsample,
    )
    manifest = datagen.generate_dataset(model, mean_labels, config, args.seed,
                                        args.out, workers=args.workers)
    print(f"dataset: {len(manifest.records)} shapes "
          f"({config.n_train}/{config.n_val}/{config.n_test}) -> {args.out}")
    return 0


def cmd_transfer_labels(args) -> int:
    table = load_class_table(args.classes)
    target = Path(args.target)
    if target.suffix.lower() == ".xyzl":
        n = sum(1 for line in open(target, encoding="utf-8") if line.strip())
    else:
        n = load_mesh(target).n_vertices
    mean_labels = load_labels(args.labels, n, table)
    from .mesh import save_labels
    save_labels(labeling.transfer_labels(mean_labels, np.zeros((n, 3))), args.out)
    print(f"labels transferred to {n}-vertex target -> {args.out}")
    return 0


def cmd_train(args) -> int:
    train_cfg = segmenter.TrainConfig(
        lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
        seed=args.seed, hidden=args.hidden)
    feat_cfg = segmenter.FeatureConfig(k_local=args.k_local, radii=args.radii)

    def progress(epoch, train_loss, val_loss):
        val = f" val {val_loss:.4f}" if val_loss is not None else ""
        print(f"epoch {epoch + 1}/{args.epochs}: train {train_loss:.4f}{val}")

    model = segmenter.train(args.dataset, train_cfg, feat_cfg,
                            progress=progress if args.verbose else None)
    segmenter.save_segmenter(model, args.out)
    final = model.metadata["train_loss"][-1]
    print(f"segmenter trained ({args.epochs} epochs, final loss {final:.4f}) "
          f"-> {args.out}")
    return 0


def cmd_predict(args) -> int:
    model = segmenter.load_segmenter(args.model)
    manifest = datagen.load_manifest(Path(args.dataset) / "manifest.json")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = manifest.split_records(args.split)
    for rec in records:
        cloud = datagen.load_xyzl(Path(args.dataset) / rec.path,
                                  manifest.class_table, rec.shape_id)
        pred = segmenter.predict(model, cloud.cloud)
        datagen.save_xyzl(datagen.LabeledCloud(cloud.cloud, pred, rec.shape_id),
                          out_dir / f"{rec.shape_id}.xyzl")
    print(f"predicted {len(records)} shapes ({args.split}) -> {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    report = evaluation.evaluate_dataset(
        args.dataset, predictions_dir=args.predictions, split=args.split,
        include_background=not args.exclude_background)
    evaluation.save_report_json(report, args.out)
    if args.csv:
        evaluation.save_report_csv(report, args.csv)
    print(evaluation.format_report_text(report))
    print(f"report -> {args.out}")
    return 0


def cmd_study(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        spec = json.load(fh)
    try:
        table = load_class_table(spec["classes"])
        n_vertices = int(spec["n_vertices"])
        shape_entries = spec["shapes"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{args.spec}: missing/invalid field ({exc})")
    sets, truths = [], {}
    for entry in shape_entries:
        shape_id = str(entry["id"])
        maps = tuple(load_labels(p, n_vertices, table)
                     for p in entry["annotations"])
        ids = tuple(entry.get("annotator_ids",
                              [f"annotator_{i}" for i in range(len(maps))]))
        sets.append(labeling.AnnotationSet(shape_id, ids, maps))
        truths[shape_id] = load_labels(entry["ground_truth"], n_vertices, table)
    rows = labeling.run_study(sets, truths, policy=args.policy)
    labeling.write_study_report(rows, args.out, policy=args.policy)
    if rows:
        overall = float(np.mean([r.accuracy for r in rows]))
        print(f"study: {len(rows)} (shape, class) rows, "
              f"mean accuracy {overall:.4f} -> {args.out}")
    else:
        print(f"study: no scorable rows -> {args.out}")
    return 0


def cmd_annotate_serve(args) -> int:
    mesh = load_mesh(args.mesh)
    table = load_class_table(args.classes)
    state = annotate_server.AnnotationState(mesh, table, args.labels)
    server = annotate_server.make_server(state, host=args.host, port=args.port,
                                         static_dir=args.static)
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# ---------------------------------------------------------------------------
# Parser

def build_parser(cfg: PipelineConfig) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssmseg",
        description="Shape-model based labeled dataset synthesis and "
                    "rotation-invariant point-cloud landmark segmentation.")
    parser.add_argument("--config", help="JSON config file rebasing all defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name: str, help_text: str):
        # defaults are part of the contract; always show them in --help
        return sub.add_parser(
            name, help=help_text,
            formatter_class=argparse.ArgumentDefaultsHelpFormatter)

    p = add_parser("fixture", "emit a synthetic corresponded cohort")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-shapes", type=int, default=10, help="cohort size (>= 2)")
    p.add_argument("--n-vertices", type=int, default=2000,
                   help="approximate vertices per mesh (>= 100)")
    p.add_argument("--seed", type=int, default=cfg.seed, help="master seed")
    p.set_defaults(func=cmd_fixture)

    p = add_parser("build-ssm", "align a cohort and build the shape model")
    p.add_argument("--cohort", default=cfg.cohort_dir,
                   help="directory of corresponded .obj/.ply meshes")
    p.add_argument("--out", default=cfg.model_path, help="model file to write")
    p.add_argument("--with-scaling", action="store_true",
                   default=cfg.with_scaling, help="normalize per-shape scale")
    p.add_argument("--variance-fraction", type=float,
                   default=cfg.variance_fraction,
                   help="keep modes up to this variance fraction (default: all)")
    p.set_defaults(func=cmd_build_ssm)

    p = add_parser("generate", "generate a labeled point-cloud dataset")
    p.add_argument("--model", default=cfg.model_path, help="shape model file")
    p.add_argument("--labels", default=cfg.labels_path, help="mean-shape label CSV")
    p.add_argument("--classes", default=cfg.classes_path, help="class table JSON")
    p.add_argument("--out", default=cfg.dataset_dir, help="dataset directory")
    p.add_argument("--n-train", type=int, default=cfg.n_train,
                   help="training shapes")
    p.add_argument("--n-val", type=int, default=cfg.n_val,
                   help="validation shapes")
    p.add_argument("--n-test", type=int, default=cfg.n_test,
                   help="test shapes")
    p.add_argument("--n-points", type=int, default=cfg.n_points,
                   help="points per cloud after downsampling")
    p.add_argument("--sigma-lo", type=float, default=cfg.sigma_lo,
                   help="lower bound of the uniform mode-coefficient range")
    p.add_argument("--sigma-hi", type=float, default=cfg.sigma_hi,
                   help="upper bound of the uniform mode-coefficient range")
    p.add_argument("--rotate-splits", default=",".join(cfg.rotate_splits),
                   help="comma-separated splits to rotate randomly (default: test)")
    p.add_argument("--fps-start", type=int, default=cfg.fps_start,
                   help="first index picked by farthest point sampling")
    p.add_argument("--downsample", choices=("fps", "random"),
                   default=cfg.downsample)
    p.add_argument("--seed", type=int, default=cfg.seed, help="master seed")
    p.add_argument("--workers", type=int, default=cfg.workers,
                   help="parallel workers (output is identical for any count)")
    p.set_defaults(func=cmd_generate)

    p = add_parser("transfer-labels",
                   "copy mean-shape labels onto a corresponded shape")
    p.add_argument("--labels", default=cfg.labels_path, help="mean-shape label CSV")
    p.add_argument("--classes", default=cfg.classes_path, help="class table JSON")
    p.add_argument("--target", required=True, help="target mesh (.obj/.ply/.xyzl)")
    p.add_argument("--out", required=True, help="label CSV to write")
    p.set_defaults(func=cmd_transfer_labels)

    p = add_parser("train", "train the baseline segmenter")
    p.add_argument("--dataset", default=cfg.dataset_dir, help="dataset directory")
    p.add_argument("--out", default=cfg.segmenter_path, help="model file to write")
    p.add_argument("--lr", type=float, default=cfg.lr, help="Adam learning rate")
    p.add_argument("--batch-size", type=int, default=cfg.batch_size,
                   help="shapes per optimizer step")
    p.add_argument("--epochs", type=int, default=cfg.epochs,
                   help="training epochs")
    p.add_argument("--seed", type=int, default=cfg.train_seed,
                   help="weight initialization seed")
    p.add_argument("--hidden", type=_int_tuple, default=cfg.hidden,
                   help="hidden layer sizes, comma-separated")
    p.add_argument("--k-local", type=int, default=cfg.k_local,
                   help="smallest feature neighborhood size")
    p.add_argument("--radii", type=_int_tuple, default=cfg.radii,
                   help="additional neighborhood sizes, comma-separated")
    p.add_argument("--verbose", action="store_true", help="print per-epoch losses")
    p.set_defaults(func=cmd_train)

    p = add_parser("predict", "write per-point predictions for a split")
    p.add_argument("--model", default=cfg.segmenter_path, help="segmenter file")
    p.add_argument("--dataset", default=cfg.dataset_dir, help="dataset directory")
    p.add_argument("--split", choices=datagen.SPLITS, default="test",
                   help="dataset split to predict")
    p.add_argument("--out", default=cfg.predictions_dir,
                   help="directory for <shape_id>.xyzl predictions")
    p.set_defaults(func=cmd_predict)

    p = add_parser("evaluate", "score predictions against stored labels")
    p.add_argument("--dataset", default=cfg.dataset_dir, help="dataset directory")
    p.add_argument("--predictions", default=cfg.predictions_dir,
                   help="directory of <shape_id>.xyzl predictions")
    p.add_argument("--split", choices=datagen.SPLITS, default="test",
                   help="dataset split to score")
    p.add_argument("--out", default=cfg.report_path, help="JSON report path")
    p.add_argument("--csv", help="also write per-shape rows as CSV")
    p.add_argument("--exclude-background", action="store_true",
                   default=not cfg.include_background,
                   help="exclude class 0 from mIoU averaging")
    p.set_defaults(func=cmd_evaluate)

    p = add_parser("study",
                   "aggregate annotators and report label-transfer accuracy")
    p.add_argument("--spec", required=True,
                   help="JSON: {classes, n_vertices, shapes: [{id, ground_truth, "
                        "annotations: [...]}]}")
    p.add_argument("--policy", choices=labeling.AGGREGATION_POLICIES,
                   default="union")
    p.add_argument("--out", required=True, help="CSV report path")
    p.set_defaults(func=cmd_study)

    p = add_parser("annotate-serve", "serve the annotation UI backend")
    p.add_argument("--mesh", required=True, help="mean-shape mesh (.obj/.ply)")
    p.add_argument("--classes", default=cfg.classes_path, help="class table JSON")
    p.add_argument("--labels", default=cfg.labels_path,
                   help="label CSV to load/persist")
    p.add_argument("--static", help="directory with the UI bundle")
    p.add_argument("--host", default="127.0.0.1", help="bind address")
    p.add_argument("--port", type=int, default=8787, help="0 picks a free port")
    p.set_defaults(func=cmd_annotate_serve)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = PipelineConfig()
        for i, arg in enumerate(argv):
            if arg == "--config" and i + 1 < len(argv):
                cfg = load_config(argv[i + 1])
            elif arg.startswith("--config="):
                cfg = load_config(arg.split("=", 1)[1])
        parser = build_parser(cfg)
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        code = exc.code if exc.code is not None else 0
        return 1 if code == 2 else int(code)  # argparse usage errors -> 1
    except ToolkitError as exc:
        _error_line(exc.code, exc.message)
        return 2
    except OSError as exc:
        _error_line("io.failure", str(exc))
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        _error_line("internal.error", f"{type(exc).__name__}: {exc}")
        return 3


def run() -> int:
    return main()


if __name__ == "__main__":
    sys.exit(main())
