"""Command-line surface tying the pipeline together.

Six subcommands: ``train``, ``eval``, ``score``, ``ablate``, ``synth-data``,
``export-features``.  Every hyperparameter comes from layered configuration:
built-in defaults, then an optional ``--config`` file, then ``DIQA_<KEY>``
environment variables, then ``--set key=value`` flags.  Writing subcommands
place all artifacts under ``--out-dir`` and record them in a
``produced.json`` manifest there.  Progress goes to stderr; stdout carries
only the command's result.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .bundle import ScoringBundle, build_bundle
from .checkpoint import load_checkpoint, save_checkpoint, write_sidecar_config
from .config import RunConfig, apply_config_text, load_config
from .data import SPLITS, load_image, load_manifest
from .errors import ConfigError, DiffusionIqaError
from .evaluation import (
    EVAL_ONLY_KEYS,
    NOISE_LABEL,
    ablation_grid,
    evaluate_bundle,
    export_features,
    grid_names,
    render_results,
    result_rows,
    run_ablation,
    write_results,
    write_sweep_plot,
)
from .seeding import derive_rng
from .synth import DISTORTIONS, make_dataset
from .training import train_bundle, write_loss_history

__all__ = ["build_parser", "main"]

# Sweep grids with a numeric axis get an SVG curve next to the tables.
_SWEEP_AXES = {
    "noise-range": ("training range lower bound", lambda c: c.timestep_range[0]),
    "denoise-steps": ("denoising steps", lambda c: c.eval_denoise_steps),
    "resolution": ("input resolution", lambda c: c.image_size),
    "eval-timesteps": ("evaluation timesteps", lambda c: c.eval_timestep_count),
}


def _status(args: argparse.Namespace):
    if getattr(args, "quiet", False):
        return None
    return lambda message: print(message, file=sys.stderr)


def _out_dir(args: argparse.Namespace) -> Path:
    out = args.out_dir if args.out_dir is not None else Path("diqa-out") / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_produced(out_dir: Path, produced: dict[str, Path]) -> Path:
    listing = {label: os.path.relpath(path, out_dir) for label, path in produced.items()}
    path = out_dir / "produced.json"
    path.write_text(json.dumps(listing, indent=2) + "\n", encoding="utf-8")
    return path


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    return load_config(args.config, overrides=tuple(args.overrides or ()))


def _bundle_from_args(args: argparse.Namespace) -> ScoringBundle:
    """Build from configuration, or load a checkpoint, never both.

    On a loaded checkpoint only evaluation keys and the seed may be
    overridden; anything else would desync the stored weights from the
    rebuilt topology.
    """
    if args.checkpoint is None:
        return build_bundle(_config_from_args(args))
    if args.config is not None:
        raise ConfigError("pass --config or --checkpoint, not both")
    bundle = load_checkpoint(args.checkpoint)
    overrides = tuple(args.overrides or ())
    if overrides:
        allowed = EVAL_ONLY_KEYS | {"seed"}
        for item in overrides:
            key = item.split("=", 1)[0].strip()
            canonical = {"lambda": "pool_lambda", "prompt_trainable": "fixed_prompts"}.get(key, key)
            if canonical not in allowed:
                raise ConfigError(
                    f"--set {key} cannot change a loaded checkpoint; "
                    f"allowed keys: {', '.join(sorted(allowed))}"
                )
            apply_config_text(bundle.config, item, origin=f"--set {item}")
        bundle.config.validate()
    return bundle


def _cmd_train(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    dataset = load_manifest(args.manifest)
    bundle = build_bundle(config)
    out_dir = _out_dir(args)
    status = _status(args)
    epoch_log = None
    if status is not None:
        def epoch_log(epoch: int, loss: float) -> None:
            status(f"epoch {epoch}: mean loss {loss:.6g}")
    history = train_bundle(bundle, dataset, progress=epoch_log)
    produced = {
        "checkpoint": save_checkpoint(bundle, out_dir / "checkpoint.npz"),
        "loss_history": write_loss_history(history, out_dir / "loss_history.jsonl"),
        "config": write_sidecar_config(bundle, out_dir / "config.txt"),
    }
    _write_produced(out_dir, produced)
    print(
        f"trained {config.epochs} epochs on {len(dataset.split('train'))} images; "
        f"final mean loss {history[-1]:.6g}; checkpoint {produced['checkpoint']}"
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    bundle = _bundle_from_args(args)
    dataset = load_manifest(args.manifest)
    report = evaluate_bundle(bundle, dataset, split=args.split, progress=_status(args))
    out_dir = _out_dir(args)
    scores_path = out_dir / "scores.jsonl"
    with scores_path.open("w", encoding="utf-8", newline="\n") as handle:
        for score in report.scores:
            row = {"image_id": score.image_id, "mos": score.mos, "predicted": score.predicted}
            handle.write(json.dumps(row) + "\n")
    summary_path = out_dir / "summary.json"
    summary = {
        "dataset": report.dataset,
        "split": report.split,
        "images": len(report.scores),
        "srcc": report.srcc,
        "plcc": report.plcc,
        "degenerate": report.degenerate,
        "failures": [list(pair) for pair in report.failures],
    }
    summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    _write_produced(out_dir, {"scores": scores_path, "summary": summary_path})
    note = "  (degenerate)" if report.degenerate else ""
    print(f"srcc {report.srcc:+.4f}  plcc {report.plcc:+.4f}  images {len(report.scores)}{note}")
    return 0


def _cmd_score(args: argparse.Namespace) -> int:
    bundle = _bundle_from_args(args)
    image = load_image(args.image, bundle.config.image_size)
    rng = derive_rng(bundle.config.seed, NOISE_LABEL)
    print(bundle.score_latent(bundle.encode_image(image), rng))
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    spec = ablation_grid(args.grid)
    train_dataset = load_manifest(args.manifest)
    eval_dataset = load_manifest(args.eval_manifest) if args.eval_manifest else None
    results = run_ablation(
        config,
        spec,
        train_dataset,
        eval_dataset,
        split=args.split,
        progress=_status(args),
    )
    rows = result_rows(
        results,
        train_db=train_dataset.name,
        test_db=(eval_dataset or train_dataset).name,
    )
    out_dir = _out_dir(args)
    table = render_results(rows)
    table_path = out_dir / "results.txt"
    table_path.write_text(table, encoding="utf-8")
    produced = {
        "results": write_results(rows, out_dir / "results.jsonl"),
        "table": table_path,
    }
    if spec.name in _SWEEP_AXES:
        x_label, axis = _SWEEP_AXES[spec.name]
        points = [
            (axis(result.config), result.report.srcc)
            for result in results
            if result.report is not None
        ]
        if len(points) >= 2:
            produced["sweep"] = write_sweep_plot(
                points, out_dir / "sweep.svg", x_label=x_label
            )
    _write_produced(out_dir, produced)
    print(table, end="")
    return 0


def _cmd_synth_data(args: argparse.Namespace) -> int:
    out_dir = _out_dir(args)
    dataset = make_dataset(
        out_dir,
        count=args.count,
        distortion=args.distortion,
        seed=args.seed,
        image_size=args.image_size,
        name=args.name,
    )
    _write_produced(
        out_dir, {"manifest": out_dir / "manifest.tsv", "images": out_dir / "images"}
    )
    counts = {split: len(dataset.split(split)) for split in SPLITS}
    print(
        f"wrote {len(dataset)} images "
        f"({counts['train']}/{counts['val']}/{counts['test']} train/val/test) "
        f"under {out_dir}"
    )
    return 0


def _cmd_export_features(args: argparse.Namespace) -> int:
    bundle = _bundle_from_args(args)
    dataset = load_manifest(args.manifest)
    split = None if args.split == "all" else args.split
    out_dir = _out_dir(args)
    path = export_features(
        bundle, dataset, out_dir / "features.jsonl", split=split, progress=_status(args)
    )
    _write_produced(out_dir, {"features": path})
    count = len(dataset.records) if split is None else len(dataset.split(split))
    print(f"wrote {count} feature records to {path}")
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="flat key = value config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key (repeatable; beats file and environment)",
    )


def _add_checkpoint_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--checkpoint", type=Path, default=None, help="load this checkpoint instead of --config"
    )


def _add_out_dir_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--out-dir",
        type=Path,
        default=None,
        help="artifact root (default diqa-out/<subcommand>); a produced.json manifest is written there",
    )


def _add_quiet_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--quiet", action="store_true", help="suppress progress on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffusion-iqa",
        description="Image quality scoring from a denoiser's cross-attention maps.",
        epilog=(
            "Any config key can also be set through DIQA_<KEY> environment "
            "variables; precedence is config file, then environment, then --set."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train adapters and prompts on a manifest")
    _add_config_flags(train)
    _add_out_dir_flag(train)
    _add_quiet_flag(train)
    train.add_argument("--manifest", type=Path, required=True, help="dataset manifest path")
    train.set_defaults(handler=_cmd_train)

    evaluate = sub.add_parser("eval", help="score a split and report SRCC/PLCC")
    _add_config_flags(evaluate)
    _add_checkpoint_flag(evaluate)
    _add_out_dir_flag(evaluate)
    _add_quiet_flag(evaluate)
    evaluate.add_argument("--manifest", type=Path, required=True)
    evaluate.add_argument("--split", choices=SPLITS, default="test")
    evaluate.set_defaults(handler=_cmd_eval)

    score = sub.add_parser("score", help="print one quality score for one image")
    _add_config_flags(score)
    _add_checkpoint_flag(score)
    score.add_argument("--image", type=Path, required=True)
    score.set_defaults(handler=_cmd_score)

    ablate = sub.add_parser("ablate", help="train and evaluate a named config grid")
    _add_config_flags(ablate)
    _add_out_dir_flag(ablate)
    _add_quiet_flag(ablate)
    ablate.add_argument("--manifest", type=Path, required=True, help="training dataset manifest")
    ablate.add_argument(
        "--eval-manifest", type=Path, default=None, help="separate evaluation manifest"
    )
    ablate.add_argument(
        "--grid",
        required=True,
        help=f"grid name: {', '.join(grid_names())} (aliases table2/fig5/... accepted)",
    )
    ablate.add_argument("--split", choices=SPLITS, default="test")
    ablate.set_defaults(handler=_cmd_ablate)

    synth = sub.add_parser("synth-data", help="generate the synthetic scored dataset")
    _add_out_dir_flag(synth)
    synth.add_argument("--count", type=int, default=500)
    synth.add_argument("--distortion", choices=sorted(DISTORTIONS), default="blur")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--image-size", type=int, default=128)
    synth.add_argument("--name", default=None, help="dataset name recorded in the manifest")
    synth.set_defaults(handler=_cmd_synth_data)

    export = sub.add_parser("export-features", help="dump attention profiles and g values")
    _add_config_flags(export)
    _add_checkpoint_flag(export)
    _add_out_dir_flag(export)
    _add_quiet_flag(export)
    export.add_argument("--manifest", type=Path, required=True)
    export.add_argument("--split", choices=(*SPLITS, "all"), default="all")
    export.set_defaults(handler=_cmd_export_features)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as status:
        return int(status.code or 0)
    try:
        return args.handler(args)
    except (DiffusionIqaError, OSError) as error:
        print(f"error: {error}", file=sys.stderr)
        return 1
