"""
Command-line front end

Subcommands: propose, train, inspect, synth, eval, demo and serve. The
pipeline config is loaded and validated (file + flag overrides) before any
subcommand writes output; errors map to exit codes in one place.
"""
import argparse
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from loguru import logger

from app.core.config import PipelineConfig, load_pipeline_config, settings
from app.core.errors import InspectError, InspectIOError, InvalidArgumentError
from app.core.logging import setup_logging
from app.services.classify import BD_MODEL_NAME, DC_MODEL_NAME

IMAGE_SUFFIXES = (".png", ".pgm", ".pnm")
TRACE_NAME = "trace.json"


def _common_options() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="pipeline config (TOML)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global seed")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker threads")
    common.add_argument("--log-level", default=argparse.SUPPRESS, help="DEBUG, INFO, WARNING, ...")
    common.add_argument("--log-file", default=argparse.SUPPRESS, help="also log to this file")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="glass-inspect",
        description="Localize and classify surface regions on smartphone glass scans",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("propose", parents=[common], help="stage I: region proposals and crops")
    p.add_argument("images", nargs="+", type=Path, help="image files or directories of images")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--luma", action="store_true", default=None, help="convert colour input to luminance")

    p = sub.add_parser("train", parents=[common], help="stages II-IV: cluster filter, BD and DC forests")
    p.add_argument("--crops", type=Path, required=True, help="directory of <crop_id>.png crops")
    p.add_argument("--labels", type=Path, required=True, help="CSV crop_id,class_name")
    p.add_argument("--out", type=Path, required=True, help="directory for the models and the filter trace")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--keep", type=int, default=None)
    p.add_argument("--drop-threshold", type=int, default=None)
    p.add_argument("--strict-drop", action="store_true", default=None, help="labeled defects may be dropped too")
    p.add_argument(
        "--no-spare-clusters", action="store_true", help="drop every cluster outside the top --keep, whatever its labels"
    )
    p.add_argument("--no-bootstrap", action="store_true", help="grow every tree on the full sample set")
    p.add_argument("--model", type=Path, default=None, help="ONNX embedding network (default: baseline descriptor)")

    p = sub.add_parser("inspect", parents=[common], help="run the full pipeline on images")
    p.add_argument("images", nargs="+", type=Path, help="image files or directories of images")
    p.add_argument("--bd", type=Path, default=None, help=f"BD model (default: $MODEL_DIR/{BD_MODEL_NAME})")
    p.add_argument("--dc", type=Path, default=None, help=f"DC model (default: $MODEL_DIR/{DC_MODEL_NAME})")
    p.add_argument("--out", type=Path, required=True, help="directory for <id>.json reports")
    p.add_argument("--render", action="store_true", help="also write <id>.render.png with colored boxes")
    p.add_argument("--dc-scope", choices=["all", "defects-only"], default=None)
    p.add_argument("--luma", action="store_true", default=None)
    p.add_argument("--model", type=Path, default=None)

    p = sub.add_parser("synth", parents=[common], help="generate a ground-truthed synthetic corpus")
    p.add_argument("--profile", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--name", default=None, help="corpus name (default: the profile)")
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)

    p = sub.add_parser("eval", parents=[common], help="match reports to ground truth and tabulate metrics")
    p.add_argument("--reports", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--iou", type=float, default=None)
    p.add_argument("--truth-margin", type=int, default=None)
    p.add_argument(
        "--accounting", choices=["defect", "region"], default=None,
        help="defect: positives are defect verdicts; region: positives are correctly judged regions",
    )
    p.add_argument("--per-image", action="store_true", help="add one row per image")
    p.add_argument("--confusion", type=Path, default=None, help="directory for per-sample class matrices")
    p.add_argument("--out", type=Path, required=True, help="CSV table")

    p = sub.add_parser("demo", parents=[common], help="build a demo corpus, crops, labels and held-out sets")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--train-size", type=int, default=None)
    p.add_argument("--heldout-size", type=int, default=None)
    p.add_argument("--mixed-size", type=int, default=None)

    p = sub.add_parser("serve", parents=[common], help="serve the HTTP inspection API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=19000)
    p.add_argument("--model-dir", type=Path, default=None, help=f"directory holding {BD_MODEL_NAME} and {DC_MODEL_NAME}")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted config keys set by flags; None means the flag was not given."""
    o: Dict[str, Any] = {
        "seed": getattr(args, "seed", None),
        "jobs": getattr(args, "jobs", None),
        "proposals.luma": getattr(args, "luma", None),
        "semisup.k": getattr(args, "k", None),
        "semisup.keep": getattr(args, "keep", None),
        "semisup.drop_threshold": getattr(args, "drop_threshold", None),
        "semisup.strict_drop": getattr(args, "strict_drop", None),
        "semisup.spare_clusters": False if getattr(args, "no_spare_clusters", False) else None,
        "forest.bootstrap": False if getattr(args, "no_bootstrap", False) else None,
        "classify.dc_scope": getattr(args, "dc_scope", None),
        "synth.width": getattr(args, "width", None),
        "synth.height": getattr(args, "height", None),
        "evaluation.iou": getattr(args, "iou", None),
        "evaluation.truth_margin": getattr(args, "truth_margin", None),
        "evaluation.accounting": getattr(args, "accounting", None),
    }
    model = getattr(args, "model", None)
    if model is not None:
        o["embedding.provider"] = "onnx"
        o["embedding.model_path"] = str(model)
    return o


def _expand_images(paths: Iterable[Path]) -> List[Path]:
    files: List[Path] = []
    for path in paths:
        if path.is_dir():
            files.extend(sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES))
        else:
            files.append(path)
    return files


def cmd_propose(args: argparse.Namespace, config: PipelineConfig) -> int:
    from app.services.imaging import load_image
    from app.services.proposals import extract_crops, propose, save_crop, write_proposals

    regions, failed = [], 0
    crops_dir = args.out / "crops"
    for path in _expand_images(args.images):
        try:
            image = load_image(path, luma=config.proposals.luma)
        except InspectError as exc:
            logger.error("{}: {}", path, exc)
            failed += 1
            continue
        found = propose(image, config.proposals, path.stem, jobs=config.jobs)
        for crop in extract_crops(image, found):
            save_crop(crops_dir, crop)
        regions.extend(found)
        logger.info("{}: {} proposals", path.name, len(found))
    crops_dir.mkdir(parents=True, exist_ok=True)
    write_proposals(args.out / "proposals.txt", regions)
    logger.info("Wrote {} proposals to {}", len(regions), args.out)
    return InspectIOError.exit_code if failed else 0


def load_crops(directory: Path):
    """Every `<crop_id>.png` under directory, sorted by crop id."""
    from app.services.imaging import load_image
    from app.services.proposals import Crop

    if not directory.is_dir():
        raise InspectIOError(f"crop directory not found: {directory}")
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise InvalidArgumentError(f"no crops (*.png) in {directory}")
    return [Crop(pixels=load_image(p).pixels, crop_id=p.stem) for p in paths]


def cmd_train(args: argparse.Namespace, config: PipelineConfig) -> int:
    from app.services import forest
    from app.services.classify import read_labels, train_bd, train_dc
    from app.services.embedding import embed_all, make_provider
    from app.services.semisup import cluster_filter, pseudo_labels

    labels = read_labels(args.labels)
    crops = load_crops(args.crops)
    index = {c.crop_id: i for i, c in enumerate(crops)}
    unknown = [cid for cid in labels.entries if cid not in index]
    if unknown:
        raise InvalidArgumentError(f"{len(unknown)} labels name crops missing from {args.crops} (e.g. '{unknown[0]}')")

    provider = make_provider(config.embedding)
    x = embed_all(crops, provider, config.embedding.cache_dir, jobs=config.jobs)
    by_index = {index[cid]: cls for cid, cls in labels.entries.items()}

    s = config.semisup
    trace = cluster_filter(
        x, by_index, k=s.k, keep_count=s.keep, drop_threshold=s.drop_threshold, seed=s.seed,
        strict_drop=s.strict_drop, max_iter=s.max_iter, n_init=s.n_init, spare_clusters=s.spare_clusters,
    )
    bd = train_bd(x, pseudo_labels(trace, by_index), config.forest, jobs=config.jobs)
    dc = train_dc(labels, {c.crop_id: x[i] for i, c in enumerate(crops)}, config.forest, jobs=config.jobs)

    forest.save(bd, args.out / BD_MODEL_NAME)
    forest.save(dc, args.out / DC_MODEL_NAME)
    (args.out / TRACE_NAME).write_text(trace.to_json(), encoding="utf-8")
    logger.info(
        "Trained on {} crops ({} labeled): {} filter rounds, {} pseudo-defects; models in {}",
        len(crops), len(labels), len(trace.rounds), len(trace.retained), args.out,
    )
    return 0


def cmd_inspect(args: argparse.Namespace, config: PipelineConfig) -> int:
    from app.services import forest
    from app.services.classify import Inspector, render_report
    from app.services.embedding import make_provider
    from app.services.imaging import load_image

    bd = forest.load(args.bd or settings.MODEL_DIR / BD_MODEL_NAME)
    dc = forest.load(args.dc or settings.MODEL_DIR / DC_MODEL_NAME)
    inspector = Inspector(bd, dc, make_provider(config.embedding), config)

    failed = 0
    for path in _expand_images(args.images):
        try:
            image = load_image(path, luma=config.proposals.luma)
        except InspectError as exc:
            logger.error("{}: {}", path, exc)
            failed += 1
            continue
        report = inspector.inspect(image, source_id=path.stem)
        out = args.out / f"{path.stem}.json"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.to_json(), encoding="utf-8")
        if args.render:
            render_report(image, report, args.out / f"{path.stem}.render.png")
    return InspectIOError.exit_code if failed else 0


def cmd_synth(args: argparse.Namespace, config: PipelineConfig) -> int:
    from app.services.synth import generate_corpus

    s = config.synth
    generate_corpus(
        args.n, args.profile, config.seed or 0, args.out, name=args.name,
        width=s.width, height=s.height, background_mean=s.background_mean,
        noise_sigma=s.noise_sigma, jobs=config.jobs,
    )
    return 0


def cmd_eval(args: argparse.Namespace, config: PipelineConfig) -> int:
    from app.services.evaluation import evaluate_dirs, write_confusion, write_table

    rows = evaluate_dirs(
        args.reports, args.truth, config.evaluation.iou, config.truth_margin,
        per_image=args.per_image, jobs=config.jobs, accounting=config.evaluation.accounting,
    )
    write_table(args.out, rows)
    if args.confusion is not None:
        for row in rows:
            write_confusion(args.confusion / f"{row.sample}.csv", row)
    for row in rows:
        logger.info("{}: {}", row.sample, ", ".join(row.as_csv()[3:]))
    return 0


def cmd_demo(args: argparse.Namespace, config: PipelineConfig) -> int:
    from app.services import demo

    sizes = {
        "train_size": args.train_size or demo.DEMO_TRAIN_SIZE,
        "heldout_size": args.heldout_size or demo.HELDOUT_SIZE,
        "heldout_mixed_size": args.mixed_size or demo.HELDOUT_MIXED_SIZE,
    }
    demo.build_demo(args.out, config, seed=config.seed or 0, **sizes)
    return 0


def cmd_serve(args: argparse.Namespace, config: PipelineConfig) -> int:
    import uvicorn

    if args.model_dir is not None:
        settings.MODEL_DIR = args.model_dir
    from app.main import create_app

    uvicorn.run(create_app(config), host=args.host, port=args.port, log_level=settings.LOG_LEVEL.lower())
    return 0


COMMANDS = {
    "propose": cmd_propose,
    "train": cmd_train,
    "inspect": cmd_inspect,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "demo": cmd_demo,
    "serve": cmd_serve,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(getattr(args, "log_level", None), getattr(args, "log_file", None))
    try:
        config = load_pipeline_config(getattr(args, "config", None) or settings.CONFIG_FILE, _overrides(args))
        return COMMANDS[args.command](args, config)
    except InspectError as exc:
        logger.error("{}: {}", type(exc).__name__, exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("I/O error: {}", exc)
        return InspectIOError.exit_code
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return 130


if __name__ == "__main__":
    sys.exit(main())
