"""Dataset scoring, configuration-grid sweeps, and attention-feature export.

Evaluation recreates one derived noise stream per image, so every image is
scored against identical noise draws.  Sharing the draws removes a common
source of ranking jitter: score differences between images then reflect the
images, not the luck of their noise samples.

A sweep (:func:`run_ablation`) varies a base configuration along named
grids, trains each distinct variant once, and evaluates every cell with the
same protocol.  Results are written as line-delimited records next to a
rendered text table and optional SVG sweep curves.
"""

from __future__ import annotations

import json
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path

import torch

from .bundle import ScoringBundle, build_bundle
from .config import RunConfig, apply_config_text
from .data import ImageDataset, load_image
from .errors import AblationError, ConfigError, DiffusionIqaError, EvaluationError
from .metrics import CorrelationSummary, summarize_correlations
from .readout import quality_score
from .schedule import forward_noise, policy_timesteps
from .seeding import derive_rng
from .training import train_bundle

__all__ = [
    "AblationCell",
    "AblationSpec",
    "CellResult",
    "EvalReport",
    "ImageScore",
    "NOISE_LABEL",
    "ablation_grid",
    "cell_config",
    "evaluate_bundle",
    "export_features",
    "grid_names",
    "render_results",
    "result_rows",
    "run_ablation",
    "write_results",
    "write_sweep_plot",
]

# Label of the derived generator that supplies evaluation noise.  Recreated
# per image so all images share the same draws.
NOISE_LABEL = "eval-noise"

# Config keys that only affect how a trained bundle is read out, not what
# was trained.  Cells differing only in these reuse one trained bundle.
EVAL_ONLY_KEYS = frozenset(
    {"eval_timestep_count", "eval_timestep_mode", "eval_denoise_steps", "eval_denoise_delta"}
)


@dataclass(frozen=True)
class ImageScore:
    """Predicted quality for one image alongside its reference score."""

    image_id: str
    mos: float
    predicted: float


@dataclass(frozen=True)
class EvalReport:
    """Scores and correlations for one dataset split.

    ``failures`` lists (image_id, reason) pairs for images that could not be
    scored; they are excluded from the correlations.  With fewer than two
    usable scores the summary is reported as degenerate.
    """

    dataset: str
    split: str
    scores: tuple[ImageScore, ...]
    summary: CorrelationSummary
    failures: tuple[tuple[str, str], ...] = ()

    @property
    def srcc(self) -> float:
        return self.summary.srcc

    @property
    def plcc(self) -> float:
        return self.summary.plcc

    @property
    def degenerate(self) -> bool:
        return self.summary.degenerate


def evaluate_bundle(
    bundle: ScoringBundle,
    dataset: ImageDataset,
    split: str = "test",
    progress: Callable[[str], None] | None = None,
) -> EvalReport:
    """Score every image in a split and correlate against its opinion scores.

    Per-image failures are recorded in the report instead of aborting the
    run; only a split where no image can be scored raises.  Each image is
    scored with a freshly derived generator, so all images see the same
    noise and the report is deterministic for a given seed.
    """
    records = dataset.split(split)
    if not records:
        raise EvaluationError(f"dataset {dataset.name!r} has no {split!r} images")
    scores: list[ImageScore] = []
    failures: list[tuple[str, str]] = []
    for record in records:
        rng = derive_rng(bundle.config.seed, NOISE_LABEL)
        try:
            image = load_image(record.path, bundle.config.image_size)
            predicted = bundle.score_image(image, rng)
        except (DiffusionIqaError, OSError, ValueError) as error:
            failures.append((record.image_id, str(error)))
            if progress is not None:
                progress(f"skipping {record.image_id}: {error}")
            continue
        scores.append(ImageScore(record.image_id, record.mos, predicted))
    if not scores:
        raise EvaluationError(
            f"all {len(records)} images failed; first: {failures[0][0]}: {failures[0][1]}"
        )
    if len(scores) < 2:
        summary = CorrelationSummary(srcc=0.0, plcc=0.0, degenerate=True)
    else:
        summary = summarize_correlations(
            [s.predicted for s in scores], [s.mos for s in scores]
        )
    return EvalReport(
        dataset=dataset.name,
        split=split,
        scores=tuple(scores),
        summary=summary,
        failures=tuple(failures),
    )


@dataclass(frozen=True)
class AblationCell:
    """One grid point: a name plus ``key = value`` overrides."""

    name: str
    overrides: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class AblationSpec:
    """A named list of cells swept against a shared base configuration."""

    name: str
    cells: tuple[AblationCell, ...]


def _cell(name: str, **overrides: str) -> AblationCell:
    return AblationCell(name, tuple((key, str(value)) for key, value in overrides.items()))


def cell_config(base: RunConfig, cell: AblationCell) -> RunConfig:
    """Base configuration with the cell's overrides applied and validated."""
    config = replace(base)
    lines = "\n".join(f'{key} = "{value}"' for key, value in cell.overrides)
    try:
        apply_config_text(config, lines, origin=f"cell {cell.name}")
        return config.validate()
    except ConfigError as error:
        raise AblationError(str(error)) from error


def _components_grid() -> AblationSpec:
    return AblationSpec(
        "components",
        (
            _cell("zero-shot", fixed_prompts="true", freeze_cross_attention="true"),
            _cell("fixed-prompts", fixed_prompts="true"),
            _cell("frozen-attention", freeze_cross_attention="true"),
            _cell("mean-pool", mean_pool_instead_of_lse="true"),
            _cell("full"),
        ),
    )


def _noise_range_grid() -> AblationSpec:
    bounds = ((0, 100), (100, 200), (200, 300), (400, 500), (600, 700), (900, 1000))
    cells = tuple(
        _cell(f"t{lo}-{hi}", timestep_range=f"{lo}:{hi}") for lo, hi in bounds
    )
    return AblationSpec("noise-range", cells)


def _denoise_steps_grid() -> AblationSpec:
    cells = tuple(_cell(f"steps-{n}", eval_denoise_steps=str(n)) for n in (1, 3, 5))
    return AblationSpec("denoise-steps", cells)


def _resolution_grid() -> AblationSpec:
    cells = tuple(_cell(f"res-{n}", image_size=str(n)) for n in (128, 256, 512))
    return AblationSpec("resolution", cells)


def _prompts_grid() -> AblationSpec:
    return AblationSpec(
        "prompts",
        (
            _cell("good-bad-photo"),
            _cell("good-bad-picture", pos_attribute="Good Picture.", neg_attribute="Bad Picture."),
            _cell(
                "high-low-quality",
                pos_attribute="High Quality Photo.",
                neg_attribute="Low Quality Photo.",
            ),
            _cell("sharp-blurry-photo", pos_attribute="Sharp Photo.", neg_attribute="Blurry Photo."),
            _cell("single-good-photo", prompt_mode="single"),
        ),
    )


def _eval_timesteps_grid() -> AblationSpec:
    cells = tuple(_cell(f"k-{n}", eval_timestep_count=str(n)) for n in (1, 2, 4, 8))
    return AblationSpec("eval-timesteps", cells)


def _trainable_weights_grid() -> AblationSpec:
    return AblationSpec(
        "trainable-weights",
        (
            _cell("key-value"),
            _cell("query-key-value", train_query_weights="true"),
            _cell("prompts-only", freeze_cross_attention="true"),
        ),
    )


_GRID_BUILDERS: dict[str, Callable[[], AblationSpec]] = {
    "components": _components_grid,
    "noise-range": _noise_range_grid,
    "denoise-steps": _denoise_steps_grid,
    "resolution": _resolution_grid,
    "prompts": _prompts_grid,
    "eval-timesteps": _eval_timesteps_grid,
    "trainable-weights": _trainable_weights_grid,
}

# Compatibility aliases accepted wherever a grid name is taken.
_GRID_ALIASES = {
    "table2": "components",
    "fig5": "noise-range",
    "table4": "denoise-steps",
    "table3": "resolution",
    "table5": "prompts",
    "fig6": "eval-timesteps",
    "table7": "trainable-weights",
}


def grid_names() -> tuple[str, ...]:
    """Canonical grid names, selectable by ``ablation_grid``."""
    return tuple(sorted(_GRID_BUILDERS))


def ablation_grid(name: str) -> AblationSpec:
    """Look up a named sweep; aliases map onto the canonical names."""
    canonical = _GRID_ALIASES.get(name, name)
    builder = _GRID_BUILDERS.get(canonical)
    if builder is None:
        known = ", ".join(grid_names())
        raise AblationError(f"unknown grid {name!r}; known grids: {known}")
    return builder()


@dataclass(frozen=True)
class CellResult:
    """Outcome of one grid cell: its config, report or error, and timing."""

    name: str
    config: RunConfig
    report: EvalReport | None
    runtime_s: float
    trained: bool
    loss_history: tuple[float, ...]
    error: str | None


def _train_signature(config: RunConfig) -> tuple[tuple[str, str], ...]:
    items = config.to_file_dict()
    return tuple(sorted((k, v) for k, v in items.items() if k not in EVAL_ONLY_KEYS))


def run_ablation(
    base: RunConfig,
    spec: AblationSpec,
    train_dataset: ImageDataset,
    eval_dataset: ImageDataset | None = None,
    split: str = "test",
    progress: Callable[[str], None] | None = None,
) -> tuple[CellResult, ...]:
    """Train and evaluate every cell of a sweep against a base config.

    All cell configurations are resolved and validated up front, so a typo
    in any override fails fast.  Cells that share every training-relevant
    setting reuse one trained bundle; cells with nothing trainable skip
    training.  A cell failing at runtime is recorded and the sweep
    continues.  An empty spec evaluates the base configuration as a single
    cell named ``base``.
    """
    if eval_dataset is None:
        eval_dataset = train_dataset
    cells = spec.cells if spec.cells else (AblationCell("base"),)
    configs = [cell_config(base, cell) for cell in cells]
    cache: dict[tuple, tuple[ScoringBundle, bool, tuple[float, ...]]] = {}
    results: list[CellResult] = []
    for cell, config in zip(cells, configs):
        start = time.perf_counter()
        report: EvalReport | None = None
        error: str | None = None
        trained = False
        history: tuple[float, ...] = ()
        try:
            signature = _train_signature(config)
            if signature in cache:
                cached_bundle, trained, history = cache[signature]
                bundle = replace(cached_bundle, config=config)
            else:
                bundle = build_bundle(config)
                if bundle.trainable_parameters():
                    epoch_log = None
                    if progress is not None:
                        cell_name = cell.name

                        def epoch_log(epoch: int, loss: float) -> None:
                            progress(f"{cell_name}: epoch {epoch} mean loss {loss:.6g}")

                    history = tuple(train_bundle(bundle, train_dataset, progress=epoch_log))
                    trained = True
                cache[signature] = (bundle, trained, history)
            report = evaluate_bundle(bundle, eval_dataset, split=split)
        except (DiffusionIqaError, OSError) as err:
            error = str(err)
        runtime = time.perf_counter() - start
        results.append(
            CellResult(
                name=cell.name,
                config=config,
                report=report,
                runtime_s=runtime,
                trained=trained,
                loss_history=history,
                error=error,
            )
        )
        if progress is not None:
            if error is not None:
                progress(f"{cell.name}: failed: {error}")
            else:
                assert report is not None
                note = " (degenerate)" if report.degenerate else ""
                progress(f"{cell.name}: srcc {report.srcc:.4f}{note} in {runtime:.1f}s")
    return tuple(results)


def result_rows(
    results: Sequence[CellResult], train_db: str, test_db: str
) -> list[dict[str, object]]:
    """Flatten cell results into records ready for line-delimited output."""
    rows: list[dict[str, object]] = []
    for result in results:
        summary = None if result.report is None else result.report.summary
        rows.append(
            {
                "cell_name": result.name,
                "train_db": train_db,
                "test_db": test_db,
                "srcc": None if summary is None else summary.srcc,
                "plcc": None if summary is None else summary.plcc,
                "runtime_s": round(result.runtime_s, 3),
                "degenerate": None if summary is None else summary.degenerate,
                "error": result.error,
            }
        )
    return rows


def write_results(rows: Sequence[dict[str, object]], path: str | Path) -> Path:
    """Write result records as one JSON object per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for row in rows:
            handle.write(json.dumps(row) + "\n")
    return path


def render_results(rows: Sequence[dict[str, object]]) -> str:
    """Fixed-width comparison table for terminal output."""

    def fmt(value: object, spec: str) -> str:
        if value is None:
            return "-"
        return format(value, spec)

    header = ("cell", "srcc", "plcc", "time", "note")
    body: list[tuple[str, ...]] = []
    for row in rows:
        if row["error"] is not None:
            note = f"failed: {row['error']}"
        elif row["degenerate"]:
            note = "degenerate"
        else:
            note = ""
        body.append(
            (
                str(row["cell_name"]),
                fmt(row["srcc"], ".4f"),
                fmt(row["plcc"], ".4f"),
                f"{row['runtime_s']:.1f}s",
                note,
            )
        )
    widths = [max(len(line[i]) for line in [header, *body]) for i in range(len(header))]
    lines = []
    for line in [header, *body]:
        lines.append("  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip())
    return "\n".join(lines) + "\n"


def write_sweep_plot(
    points: Sequence[tuple[float, float]],
    path: str | Path,
    x_label: str,
    y_label: str = "SRCC",
) -> Path:
    """Plot one sweep curve as an SVG file.

    Uses the object-oriented matplotlib API so no backend or global state is
    touched; the hash salt and empty date keep the output stable across runs.
    """
    import matplotlib as mpl
    from matplotlib.figure import Figure

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    with mpl.rc_context({"svg.hashsalt": "diffusion-iqa"}):
        fig = Figure(figsize=(5.0, 3.2))
        ax = fig.add_subplot()
        ax.plot(xs, ys, marker="o")
        ax.set_xlabel(x_label)
        ax.set_ylabel(y_label)
        ax.grid(True, alpha=0.3)
        fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    return path


def export_features(
    bundle: ScoringBundle,
    dataset: ImageDataset,
    path: str | Path,
    split: str | None = None,
    progress: Callable[[str], None] | None = None,
) -> Path:
    """Write per-image attention features as line-delimited JSON records.

    Each record carries the attention-map column profile (length M, averaged
    over image tokens, blocks, prompts, and evaluation timesteps) plus the
    per-timestep pooled quality values ``g_pos`` and ``g_neg`` (``g_neg`` is
    null in single-prompt mode).  Features are read from directly noised
    latents at the evaluation timesteps with the same derived noise stream
    the evaluator uses, so single-step scores equal the mean of the exported
    g values.
    """
    records = dataset.records if split is None else dataset.split(split)
    config = bundle.config
    prompts = bundle.prompts.encoded_prompts()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            rng = derive_rng(config.seed, NOISE_LABEL)
            image = load_image(record.path, config.image_size)
            z0 = bundle.encode_image(image)
            timesteps = policy_timesteps(bundle.eval_policy(), rng)
            per_prompt_g: list[list[float]] = [[] for _ in prompts]
            profile_sum: torch.Tensor | None = None
            profile_count = 0
            with torch.no_grad():
                for t in timesteps:
                    eps = torch.as_tensor(rng.standard_normal(tuple(z0.shape)))
                    z_t = forward_noise(z0, t, eps, bundle.schedule)
                    for index, text in enumerate(prompts):
                        _, features = bundle.backbone(z_t, t, text, bundle.readout)
                        maps = bundle.readout.attention_maps(features, text)
                        g = quality_score(maps, config.pool_lambda, bundle.pool_mode)
                        per_prompt_g[index].append(float(g))
                        for attn in maps:
                            column_profile = attn.mean(dim=0)
                            if profile_sum is None:
                                profile_sum = column_profile.clone()
                            else:
                                profile_sum += column_profile
                            profile_count += 1
            assert profile_sum is not None
            vector = (profile_sum / profile_count).tolist()
            g_pos = per_prompt_g[0]
            g_neg = per_prompt_g[1] if len(per_prompt_g) > 1 else None
            row = {
                "image_id": record.image_id,
                "split": record.split,
                "mos": record.mos,
                "features": vector,
                "g_pos": g_pos,
                "g_neg": g_neg,
            }
            handle.write(json.dumps(row) + "\n")
            if progress is not None:
                progress(f"exported {record.image_id}")
    return path
