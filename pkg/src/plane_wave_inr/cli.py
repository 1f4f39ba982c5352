from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Sequence

from .data_io import EXPORT_FORMATS, STACK_ENCODINGS, compression_ratio, compression_report, export_image, load_stack, save_stack
from .encoding import normalize_angle
from .errors import ContractError, FormatError, MeasurementError, NumericalError, SpecParseError
from .event_log import EventLogger, new_run_id
from .manifest import EVAL_MANIFEST_NAME, RunManifest, manifest_beside
from .metrics import SCALES, EvalConfig, evaluate_stack, load_roi_spec
from .model import ModelArch, load_weights, save_weights
from .objective import LossConfig
from .phantom import generate_phantom, load_phantom_spec
from .profiles import apply_profile_overrides, list_profiles, load_profile
from .render import DEFAULT_CHUNK, PsfKernel, make_kernel, render_view
from .run_log import list_run_logs, load_events, loss_curve, summarize
from .sweep import SweepConfig, SweepRunner
from .trainer import VIEW_COUNTS, TrainConfig, train, write_loss_csv

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

# environment defaults outrank presets and config files
ENV_FIELDS = {
    "iterations": "PWINR_ITERATIONS",
    "seed": "PWINR_SEED",
    "precision": "PWINR_PRECISION",
    "deterministic": "PWINR_DETERMINISTIC",
}

TRAIN_FLAGS: dict[str, list[str]] = {
    "layers": ["--layers"],
    "width": ["--width"],
    "skip_layer": ["--skip-layer"],
    "embedding_size": ["--embedding-size"],
    "iterations": ["--iterations"],
    "stripes": ["--stripes"],
    "learning_rate": ["--learning-rate"],
    "final_learning_rate": ["--final-learning-rate"],
    "lam": ["--lam"],
    "views": ["--views"],
    "holdout_orthogonal": ["--holdout-orthogonal", "--no-holdout-orthogonal"],
    "seed": ["--seed"],
    "precision": ["--precision"],
    "deterministic": ["--deterministic", "--no-deterministic"],
    "checkpoint_every": ["--checkpoint-every"],
    "log_every": ["--log-every"],
}


def _env_bool(name: str, default: bool) -> bool:
    raw = os.getenv(name)
    if raw is None:
        return default
    return raw.strip().lower() in {"1", "true", "yes", "on"}


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    return int(raw) if raw and raw.strip() else default


def _add_train_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--profile", default=os.getenv("PWINR_PROFILE", "reference"), choices=list_profiles())
    parser.add_argument("--config", default=os.getenv("PWINR_CONFIG", ""), help="JSON file overriding profile fields")
    parser.add_argument("--layers", type=int, default=8)
    parser.add_argument("--width", type=int, default=256)
    parser.add_argument("--skip-layer", type=int, default=5)
    parser.add_argument("--embedding-size", type=int, default=10, help="Positional encoding frequencies L")
    parser.add_argument("--iterations", type=int, default=_env_int("PWINR_ITERATIONS", 10_000))
    parser.add_argument("--stripes", type=int, default=10, help="Horizontal stripes per image")
    parser.add_argument("--learning-rate", type=float, default=5e-4)
    parser.add_argument("--final-learning-rate", type=float, default=5e-5)
    parser.add_argument("--lam", type=float, default=0.75, help="SSIM weight in the combined loss")
    parser.add_argument(
        "--views",
        default="all",
        help="View count (e.g. 14, 25, 38, 74), 'all', or comma-separated angles in degrees",
    )
    parser.add_argument(
        "--holdout-orthogonal",
        dest="holdout_orthogonal",
        action=argparse.BooleanOptionalAction,
        default=False,
        help="Exclude the angle closest to 0 degrees from training",
    )
    parser.add_argument("--seed", type=int, default=_env_int("PWINR_SEED", 0))
    parser.add_argument("--precision", default=os.getenv("PWINR_PRECISION", "float32"), choices=["float32", "float64"])
    parser.add_argument(
        "--deterministic",
        dest="deterministic",
        action=argparse.BooleanOptionalAction,
        default=_env_bool("PWINR_DETERMINISTIC", True),
        help="Disable the prefetch thread for bitwise reproducible runs",
    )
    parser.add_argument("--checkpoint-every", type=int, default=0)
    parser.add_argument("--log-every", type=int, default=100)
    parser.add_argument("--log-dir", default=os.getenv("PWINR_LOG_DIR", "runs"))


def _add_eval_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--roi", default="", help="ROI text file (default: bundled ROI set)")
    parser.add_argument("--scale", default="normalized", choices=list(SCALES), help="Image scale for CNR/SNR")
    parser.add_argument("--workers", type=int, default=_env_int("PWINR_WORKERS", 1))
    parser.add_argument("--chunk", type=int, default=DEFAULT_CHUNK, help="Samples per inference block")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pwinr", description="Plane-wave ultrasound implicit neural representation")
    sub = parser.add_subparsers(dest="command", required=True)

    phantom = sub.add_parser("phantom", help="Generate a synthetic plane-wave stack")
    phantom.add_argument("--spec", default="", help="Phantom JSON spec (default: bundled 64x64x8 phantom)")
    phantom.add_argument("--seed", type=int, default=_env_int("PWINR_SEED", 0))
    phantom.add_argument("--out", required=True, help="Output PWST file")
    phantom.add_argument("--preview-dir", default="", help="Optionally export every angle as PGM here")

    train_p = sub.add_parser("train", help="Fit a model to a stack")
    train_p.add_argument("stack")
    train_p.add_argument("--out", required=True, help="Output directory")
    train_p.add_argument("--resume", default="", help="Checkpoint to resume from")
    _add_train_args(train_p)

    infer = sub.add_parser("infer", help="Render a view at any angle and grid")
    infer.add_argument("weights")
    infer.add_argument("--angle", type=float, required=True, help="Steering angle in degrees")
    infer.add_argument("--height", type=int, default=0)
    infer.add_argument("--width", type=int, default=0)
    infer.add_argument("--out", required=True)
    infer.add_argument("--which", default="o_prime", choices=["o", "o_prime"])
    infer.add_argument("--format", default="", choices=["", *EXPORT_FORMATS])
    infer.add_argument("--angle-span", nargs=2, type=float, metavar=("MIN", "MAX"), default=None)
    infer.add_argument("--chunk", type=int, default=DEFAULT_CHUNK)

    eval_p = sub.add_parser("eval", help="Compute GT / o / o' metrics")
    eval_p.add_argument("stack")
    eval_p.add_argument("--weights", default="", help="Weights file; omitted together with --sanity")
    eval_p.add_argument("--sanity", action="store_true", help="GT-vs-GT run without a model")
    eval_p.add_argument("--views", default="all", choices=["all", "holdout", "both"])
    eval_p.add_argument("--holdout-index", type=int, default=-1)
    eval_p.add_argument("--out", required=True)
    eval_p.add_argument("--log-dir", default=os.getenv("PWINR_LOG_DIR", "runs"))
    _add_eval_args(eval_p)

    sweep = sub.add_parser("sweep", help="Train and evaluate one model per view count")
    sweep.add_argument("stack")
    sweep.add_argument("--counts", default=",".join(str(c) for c in VIEW_COUNTS), help="Comma-separated view counts")
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--no-figure", action="store_true")
    _add_train_args(sweep)
    _add_eval_args(sweep)

    report = sub.add_parser("report", help="Compression ratio of a weight file against a stack")
    report.add_argument("--weights", default="")
    report.add_argument("--stack", default="")
    report.add_argument("--model-bytes", type=int, default=0)
    report.add_argument("--stack-bytes", type=int, default=0)
    report.add_argument("--encoding", default="float32", choices=list(STACK_ENCODINGS))

    runs = sub.add_parser("runs", help="Inspect run event logs")
    runs.add_argument("--log-dir", default=os.getenv("PWINR_LOG_DIR", "runs"))
    runs.add_argument("--run-id", default="")
    runs.add_argument("--curve", action="store_true", help="Print the loss curve instead of raw events")
    return parser


def parse_views(raw: str | int | list) -> int | str | tuple[float, ...]:
    if isinstance(raw, int):
        return raw
    if isinstance(raw, list):
        return tuple(float(a) for a in raw)
    text = str(raw).strip().lower()
    if text == "all":
        return "all"
    if text.isdigit():
        return int(text)
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ContractError(f"--views expects a count, 'all' or angles, got {raw!r}") from exc


def train_config_from_args(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        iterations=int(args.iterations),
        stripes_per_image=int(args.stripes),
        learning_rate=float(args.learning_rate),
        final_learning_rate=float(args.final_learning_rate),
        seed=int(args.seed),
        views=parse_views(args.views),
        holdout_orthogonal=bool(args.holdout_orthogonal),
        checkpoint_every=int(args.checkpoint_every),
        arch=ModelArch(
            num_layers=int(args.layers),
            width=int(args.width),
            skip_layer_index=int(args.skip_layer),
            embedding_size=int(args.embedding_size),
        ),
        loss=LossConfig(lam=float(args.lam)),
        precision=str(args.precision),
        deterministic=bool(args.deterministic),
        log_every=int(args.log_every),
    ).validate()


def _manifest_kernel(manifest: RunManifest | None) -> PsfKernel:
    psf = (manifest.config.get("psf") if manifest is not None else None) or {}
    return make_kernel(psf.get("axial_sigma", 2.0), psf.get("lateral_sigma", 4.0), psf.get("size", 11))


def _eval_config(args: argparse.Namespace, **extra) -> EvalConfig:
    return EvalConfig(
        scale=args.scale,
        chunk=int(args.chunk),
        workers=1 if getattr(args, "deterministic", _env_bool("PWINR_DETERMINISTIC", True)) else int(args.workers),
        **extra,
    )


def cmd_phantom(args: argparse.Namespace) -> int:
    spec = load_phantom_spec(args.spec or None)
    stack = generate_phantom(spec, seed=args.seed)
    size = save_stack(stack, args.out)
    print(f"phantom={args.out} angles={stack.num_angles} grid={stack.height}x{stack.width} bytes={size}")
    if args.preview_dir:
        for index in range(stack.num_angles):
            export_image(stack.images[index], Path(args.preview_dir) / f"angle_{index:03d}.pgm", "pgm8", stack.dyn_range)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = train_config_from_args(args)
    stack = load_stack(args.stack)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_id = new_run_id("train")
    events = EventLogger.create(args.log_dir, run_id)
    started = time.perf_counter()
    result = train(stack, cfg, out_dir=out_dir, events=events, resume_from=args.resume or None)
    weights_path = out_dir / "weights.pwin"
    save_weights(result.params, weights_path)
    write_loss_csv(out_dir / "loss.csv", result.report.losses)

    config = cfg.to_dict()
    config["grid"] = [stack.height, stack.width]
    manifest = RunManifest(
        command="train",
        config=config,
        seed=cfg.seed,
        train_indices=list(result.report.view_indices),
        holdout_index=result.report.holdout_index,
        angle_span=stack.angle_span,
        timings={"train_s": result.report.wall_time_s, "total_s": time.perf_counter() - started},
        run_id=run_id,
    )
    manifest.add_input("stack", args.stack)
    if args.resume:
        manifest.add_input("resume", args.resume)
    manifest.add_output("weights", weights_path)
    manifest.write(out_dir)
    print(f"weights={weights_path} params={result.report.parameter_count} log={events.events_path}")
    return EXIT_OK


def cmd_infer(args: argparse.Namespace) -> int:
    params = load_weights(args.weights)
    manifest = manifest_beside(args.weights)
    if args.angle_span is not None:
        span = (float(args.angle_span[0]), float(args.angle_span[1]))
    elif manifest is not None and manifest.angle_span is not None:
        span = manifest.angle_span
    else:
        span = (-16.0, 16.0)
    height, width = args.height, args.width
    if (height <= 0 or width <= 0) and manifest is not None and "grid" in manifest.config:
        grid = manifest.config["grid"]
        height, width = height or int(grid[0]), width or int(grid[1])
    if height <= 0 or width <= 0:
        raise ContractError("--height and --width are required when no manifest records the grid")
    kernel = _manifest_kernel(manifest)
    alpha = normalize_angle(args.angle, *span)
    if not -1.0 <= alpha <= 1.0:
        print(f"warning: angle {args.angle} lies outside the trained span {span}", file=sys.stderr)
        alpha = min(1.0, max(-1.0, alpha))
    view = render_view(params, height, width, alpha, kernel, args.chunk)
    fmt = args.format or ("png8" if str(args.out).lower().endswith(".png") else "pgm8")
    image = view.o if args.which == "o" else view.o_prime
    size = export_image(image, args.out, fmt)
    print(f"image={args.out} which={args.which} angle={args.angle} grid={height}x{width} bytes={size}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    if not args.sanity and not args.weights:
        raise ContractError("eval needs --weights or --sanity")
    stack = load_stack(args.stack)
    roi = load_roi_spec(args.roi or None)
    params = None if args.sanity else load_weights(args.weights)
    manifest = manifest_beside(args.weights) if args.weights else None
    holdout = args.holdout_index if args.holdout_index >= 0 else None
    train_indices = None
    if manifest is not None:
        train_indices = tuple(manifest.train_indices) or None
        if holdout is None:
            holdout = manifest.holdout_index
    cfg = _eval_config(args, kernel=_manifest_kernel(manifest), holdout_index=holdout, train_indices=train_indices)

    started = time.perf_counter()
    run_id = new_run_id("eval")
    events = EventLogger.create(args.log_dir, run_id)
    events.write("eval_started", {"stack": args.stack, "weights": args.weights, "views": args.views, "sanity": args.sanity})
    sections = ["all", "holdout"] if args.views == "both" else [args.views]
    report = None
    for section in sections:
        part = evaluate_stack(params, stack, roi, section, cfg)
        report = part if report is None else report.extend(part)
    report.metadata["sanity"] = bool(args.sanity)
    out_dir = Path(args.out)
    csv_path = report.write_csv(out_dir / "metrics.csv")
    report.write_json(out_dir / "metrics.json")
    for error in report.errors:
        print(f"warning: {error}", file=sys.stderr)
    aggregate = report.aggregate()
    events.write("eval_ended", {"metrics": str(csv_path), "aggregate": aggregate, "errors": report.errors})
    for section, by_source in aggregate.items():
        for source, by_metric in by_source.items():
            ssim = by_metric.get("ssim")
            if ssim is not None:
                print(f"section={section} source={source} ssim={ssim['mean']:.4f}+-{ssim['std']:.4f}")
    eval_manifest = RunManifest(
        command="eval",
        config={"views": args.views, "scale": cfg.scale, "sanity": bool(args.sanity), "psf": report.metadata["kernel"]},
        seed=manifest.seed if manifest is not None else 0,
        train_indices=list(train_indices or ()),
        holdout_index=holdout,
        angle_span=stack.angle_span,
        timings={"eval_s": time.perf_counter() - started},
        run_id=run_id,
    )
    eval_manifest.add_input("stack", args.stack)
    if args.weights:
        eval_manifest.add_input("weights", args.weights)
    eval_manifest.add_output("metrics", csv_path)
    eval_manifest.write(out_dir, EVAL_MANIFEST_NAME)
    print(f"metrics={csv_path}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    base = train_config_from_args(args)
    counts = tuple(int(c) for c in str(args.counts).split(",") if c.strip())
    stack = load_stack(args.stack)
    roi = load_roi_spec(args.roi or None)
    runner = SweepRunner(
        SweepConfig(
            counts=counts,
            train=base,
            eval=_eval_config(args, holdout_index=stack.orthogonal_index() if base.holdout_orthogonal else None),
            out_dir=args.out,
            log_dir=args.log_dir,
            figure=not args.no_figure,
        )
    )
    runner.run(stack, roi)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    if args.model_bytes and args.stack_bytes:
        result = compression_ratio(args.model_bytes, args.stack_bytes, args.encoding)
    elif args.weights and args.stack:
        model_bytes = Path(args.weights).stat().st_size
        result = compression_report(model_bytes, load_stack(args.stack), args.encoding)
    else:
        raise ContractError("report needs --weights and --stack, or --model-bytes and --stack-bytes")
    print(
        f"model_bytes={result.model_bytes} stack_bytes={result.stack_bytes} "
        f"encoding={result.encoding} ratio={result.ratio:.2f}:1"
    )
    return EXIT_OK


def cmd_runs(args: argparse.Namespace) -> int:
    if not args.run_id:
        logs = list_run_logs(args.log_dir)
        if not logs:
            print("No run logs found.")
            return EXIT_OK
        for item in logs:
            print(f"{item.run_id} events={item.event_count} mtime={item.modified_ts:.0f}")
        return EXIT_OK
    events = load_events(args.log_dir, args.run_id)
    if args.curve:
        for iteration, loss in loss_curve(events):
            print(f"{iteration},{loss!r}")
        return EXIT_OK
    for event in events:
        print(json.dumps(event, ensure_ascii=True))
    print(json.dumps(summarize(events), ensure_ascii=True))
    return EXIT_OK


COMMANDS = {
    "phantom": cmd_phantom,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "report": cmd_report,
    "runs": cmd_runs,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in {"train", "sweep"}:
            profile = load_profile(args.profile, args.config or None)
            for field, env_name in ENV_FIELDS.items():
                if os.getenv(env_name):
                    profile.pop(field, None)
            apply_profile_overrides(args, profile, TRAIN_FLAGS, argv)
        return COMMANDS[args.command](args)
    except MeasurementError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ContractError, SpecParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
