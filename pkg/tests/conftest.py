"""Session-scoped desk-scale benchmark shared by the acceptance criteria.

Building the 500-image dataset and training the five distinct cells takes a
few minutes, so both live here behind session fixtures and only the
acceptance tests request them.
"""

import time

import pytest

from diffusion_iqa.config import RunConfig
from diffusion_iqa.evaluation import AblationSpec, ablation_grid, run_ablation
from diffusion_iqa.synth import make_dataset


def combined_acceptance_spec() -> AblationSpec:
    """Every benchmark cell in one grid so eval-only cells share a training.

    Cells are pulled from the canonical grids rather than restated, so the
    benchmark measures exactly what `ablate` ships.  Order matters: `full`
    must run before the eval-only cells that reuse its trained weights.
    """
    by_name = {}
    for grid in ("components", "noise-range", "denoise-steps", "eval-timesteps"):
        for cell in ablation_grid(grid).cells:
            by_name.setdefault(cell.name, cell)
    wanted = (
        "zero-shot", "fixed-prompts", "frozen-attention", "mean-pool", "full",
        "t900-1000", "steps-3", "steps-5", "k-4", "k-2", "k-1",
    )
    return AblationSpec(name="acceptance", cells=tuple(by_name[name] for name in wanted))


@pytest.fixture(scope="session")
def benchmark_dataset(tmp_path_factory):
    """500 blur-ladder images at the default resolution, fixed seed."""
    root = tmp_path_factory.mktemp("benchmark")
    return make_dataset(root, count=500, distortion="blur", seed=0, image_size=128)


@pytest.fixture(scope="session")
def benchmark_run(benchmark_dataset):
    """One training-and-ablation pass at library defaults."""
    started = time.monotonic()
    results = run_ablation(RunConfig(), combined_acceptance_spec(), benchmark_dataset)
    wall_s = time.monotonic() - started
    cells = {result.name: result for result in results}
    failed = {name: cell.error for name, cell in cells.items() if cell.report is None}
    assert not failed, f"benchmark cells failed: {failed}"
    return {"cells": cells, "wall_s": wall_s}
