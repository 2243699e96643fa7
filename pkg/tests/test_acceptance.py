"""Acceptance gate: eight criteria, one test and one printed verdict each."""

import json
import math
import time

import numpy as np
import pytest
import scipy.stats
import torch

from diffusion_iqa.bundle import build_bundle
from diffusion_iqa.checkpoint import load_checkpoint, save_checkpoint
from diffusion_iqa.cli import main as cli_main
from diffusion_iqa.config import RunConfig
from diffusion_iqa.data import load_image
from diffusion_iqa.metrics import plcc, srcc
from diffusion_iqa.readout import LowRankAdapter, attention_map, lse_pool, quality_score
from diffusion_iqa.schedule import build_linear_schedule, forward_noise
from diffusion_iqa.seeding import derive_rng
from diffusion_iqa.synth import make_dataset
from diffusion_iqa.training import train_bundle

from test_cli import TINY_CONF
from test_gradients import TINY, finite_difference_report, prepared_bundle, score_inputs


def test_criterion_1_invariant_suite():
    started = time.monotonic()
    rng = derive_rng(0, "acceptance-invariants")

    rows = attention_map(rng.standard_normal((7, 5)), rng.standard_normal((9, 5)))
    assert np.allclose(rows.sum(dim=1).numpy(), 1.0, atol=1e-5)

    lam = 0.14
    X = torch.as_tensor(rng.random((6, 4)))
    pooled = float(lse_pool(X, lam))
    col_max = float(X.max(dim=0).values.mean())
    assert col_max <= pooled + 1e-12
    assert pooled <= col_max + math.log(X.shape[0]) / lam + 1e-12
    assert float(lse_pool(X + 0.37, lam)) == pytest.approx(pooled + 0.37, abs=1e-9)
    bigger = X + torch.as_tensor(rng.random((6, 4)))
    assert float(lse_pool(bigger, lam)) >= pooled - 1e-12

    schedule = build_linear_schedule(1000, 1e-4, 0.02)
    assert np.all(np.diff(schedule.alpha_bars) < 0)

    z0 = rng.standard_normal((2, 3, 3))
    e1 = rng.standard_normal(z0.shape)
    e2 = rng.standard_normal(z0.shape)
    zero = np.zeros_like(z0)
    linearity = (
        forward_noise(z0, 50, e1 + e2, schedule)
        - forward_noise(z0, 50, e1, schedule)
        - forward_noise(z0, 50, e2, schedule)
        + forward_noise(z0, 50, zero, schedule)
    )
    assert np.max(np.abs(linearity)) < 1e-12
    identity = forward_noise(z0, 50, zero, schedule)
    assert np.array_equal(identity, math.sqrt(schedule.alpha_bar(50)) * z0)

    bundle = build_bundle(RunConfig(**TINY))
    z = torch.as_tensor(rng.standard_normal(bundle.codec.latent_shape))
    eps = torch.as_tensor(rng.standard_normal(tuple(z.shape)))
    score = float(bundle.timestep_score(z, 50, eps).detach())
    z_t = forward_noise(z, 50, eps, bundle.schedule)
    per_prompt = []
    for text in bundle.prompts.encoded_prompts():
        _, features = bundle.backbone(z_t, 50, text, bundle.readout)
        maps = bundle.readout.attention_maps(features, text)
        pooled_maps = quality_score(maps, bundle.config.pool_lambda, bundle.pool_mode)
        per_prompt.append(float(pooled_maps.detach()))
    assert score == pytest.approx(sum(per_prompt) / len(per_prompt), abs=1e-12)

    x = rng.standard_normal(40)
    y = rng.standard_normal(40)
    assert srcc(np.exp(x), y) == pytest.approx(srcc(x, y), abs=1e-12)
    assert plcc(3.5 * x - 2.0, y) == pytest.approx(plcc(x, y), abs=1e-12)

    wall = time.monotonic() - started
    assert wall < 60.0
    print(f"criterion 1: PASS - invariant suite holds in {wall:.1f}s")


def test_criterion_2_oracle_equivalence():
    started = time.monotonic()
    rng = derive_rng(1, "acceptance-oracles")

    Q = rng.standard_normal((6, 8))
    K = rng.standard_normal((4, 8))
    fast = attention_map(Q, K).numpy()
    slow = np.zeros((6, 4))
    for i in range(6):
        logits = [float(Q[i] @ K[j]) / math.sqrt(8) for j in range(4)]
        peak = max(logits)
        exps = [math.exp(v - peak) for v in logits]
        for j in range(4):
            slow[i, j] = exps[j] / sum(exps)
    assert np.max(np.abs(fast - slow)) < 1e-12

    adapter = LowRankAdapter(5, 7, rank=2, scale=0.5, rng=derive_rng(2, "oracle-adapter"))
    with torch.no_grad():
        adapter.lora_B.add_(torch.as_tensor(rng.standard_normal((5, 2))))
    x = torch.as_tensor(rng.standard_normal((3, 7)))
    weight = (
        adapter.base.numpy()
        + 0.5 * adapter.lora_B.detach().numpy() @ adapter.lora_A.detach().numpy()
    )
    assert np.max(np.abs(adapter(x).detach().numpy() - x.numpy() @ weight.T)) < 1e-12

    attn = rng.random((5, 3))
    lam = 0.14
    columns = [
        math.log(sum(math.exp(lam * attn[n, m]) for n in range(5))) / lam
        for m in range(3)
    ]
    assert float(lse_pool(attn, lam)) == pytest.approx(sum(columns) / 3, abs=1e-12)

    with_ties_x = rng.integers(0, 5, size=30).astype(float)
    with_ties_y = rng.integers(0, 5, size=30).astype(float)
    reference = float(scipy.stats.spearmanr(with_ties_x, with_ties_y).statistic)
    assert srcc(with_ties_x, with_ties_y) == pytest.approx(reference, abs=1e-12)

    xf = rng.standard_normal(25)
    yf = rng.standard_normal(25)
    assert plcc(xf, yf) == pytest.approx(float(np.corrcoef(xf, yf)[0, 1]), abs=1e-12)

    wall = time.monotonic() - started
    assert wall < 60.0
    print(f"criterion 2: PASS - all five oracles agree in {wall:.1f}s")


def test_criterion_3_gradient_check():
    started = time.monotonic()
    bundle = prepared_bundle()
    z0, eps = score_inputs(bundle)
    checked, worst = finite_difference_report(bundle, z0, t=50, eps=eps)
    wall = time.monotonic() - started
    assert checked >= 50
    assert worst < 1e-3
    assert wall < 300.0
    print(
        f"criterion 3: PASS - worst relative error {worst:.2e} over "
        f"{checked} coordinates in {wall:.1f}s"
    )


def test_criterion_4_zero_init_and_frozen_contract(tmp_path):
    started = time.monotonic()
    rng = derive_rng(4, "acceptance-zero-init")
    shape = build_bundle(RunConfig(**TINY)).codec.latent_shape
    z0 = torch.as_tensor(rng.standard_normal(shape))
    eps = torch.as_tensor(rng.standard_normal(shape))
    # Zero-init B makes the adapter update vanish, so the rank (and with it
    # the random down-projection) must not leak into a fresh bundle's score.
    narrow = build_bundle(RunConfig(**{**TINY, "lora_rank": 1}))
    wide = build_bundle(RunConfig(**{**TINY, "lora_rank": 4}))
    score_narrow = float(narrow.timestep_score(z0, 50, eps).detach())
    score_wide = float(wide.timestep_score(z0, 50, eps).detach())
    assert score_narrow == score_wide

    dataset = make_dataset(tmp_path / "c4", count=40, distortion="blur",
                           seed=3, image_size=64)
    config = RunConfig(**{**TINY, "epochs": 5, "batch_size": 16})
    bundle = build_bundle(config)
    steps = config.epochs * math.ceil(len(dataset.split("train")) / config.batch_size)
    assert steps >= 10
    frozen_before = {n: p.detach().clone() for n, p in bundle.named_frozen()}
    buffers_before = {n: b.detach().clone() for n, b in bundle.readout.named_buffers()}
    trainable_before = {n: p.detach().clone() for n, p in bundle.named_trainable()}
    train_bundle(bundle, dataset)
    for name, param in bundle.named_frozen():
        assert torch.equal(param.detach(), frozen_before[name]), name
    for name, buffer in bundle.readout.named_buffers():
        assert torch.equal(buffer.detach(), buffers_before[name]), name
    moved = [
        name for name, param in bundle.named_trainable()
        if not torch.equal(param.detach(), trainable_before[name])
    ]
    assert moved

    wall = time.monotonic() - started
    assert wall < 120.0
    print(
        f"criterion 4: PASS - zero-init transparent; {len(frozen_before)} frozen "
        f"tensors untouched and {len(moved)} trainable moved after {steps} steps "
        f"in {wall:.1f}s"
    )


def test_criterion_5_desk_scale_end_to_end(benchmark_run, benchmark_dataset):
    full = benchmark_run["cells"]["full"]
    config = full.config
    assert (config.epochs, config.batch_size) == (15, 16)
    assert config.timestep_range == (0, 100)
    assert config.pool_lambda == 0.14
    assert config.eval_timestep_count == 8
    assert full.trained
    held_out = len(full.report.scores)
    assert held_out == len(benchmark_dataset.split("test")) == 100
    assert full.report.srcc >= 0.8
    assert full.runtime_s < 900.0
    print(
        f"criterion 5: PASS - SRCC {full.report.srcc:.4f} >= 0.8 on "
        f"{held_out} held-out images (train+eval {full.runtime_s:.0f}s)"
    )


def test_criterion_6_trend_reproductions(benchmark_run):
    cells = benchmark_run["cells"]
    score = {name: cell.report.srcc for name, cell in cells.items()}
    assert cells["full"].config.eval_denoise_steps == 1

    range_gap = score["full"] - score["t900-1000"]
    assert range_gap >= 0.1

    assert score["full"] > score["steps-3"] > score["steps-5"]

    component_rows = ("zero-shot", "fixed-prompts", "frozen-attention", "mean-pool")
    runner_up = max(score[name] for name in component_rows)
    assert score["full"] > runner_up

    saturation = abs(score["full"] - score["k-4"])
    assert saturation < 0.05

    assert benchmark_run["wall_s"] < 3600.0
    print(
        "criterion 6: PASS - "
        f"(a) range gap {range_gap:.4f} >= 0.1; "
        f"(b) steps {score['full']:.4f} > {score['steps-3']:.4f} > {score['steps-5']:.4f}; "
        f"(c) full {score['full']:.4f} > runner-up {runner_up:.4f}; "
        f"(d) |K8-K4| {saturation:.4f} < 0.05 "
        f"(grid {benchmark_run['wall_s']:.0f}s)"
    )


def test_criterion_7_checkpoint_round_trip(tmp_path):
    started = time.monotonic()
    dataset = make_dataset(tmp_path / "c7", count=16, distortion="blur",
                           seed=6, image_size=64)
    bundle = build_bundle(RunConfig(**TINY))
    train_bundle(bundle, dataset)
    path = tmp_path / "round-trip.npz"
    save_checkpoint(bundle, path)
    loaded = load_checkpoint(path)
    records = dataset.records[:10]
    assert len(records) == 10
    for index, record in enumerate(records):
        latent = bundle.encode_image(load_image(record.path, 64))
        direct = bundle.score_latent(latent, derive_rng(7, "round-trip", index))
        reloaded = loaded.score_latent(latent, derive_rng(7, "round-trip", index))
        assert direct == reloaded, record.image_id
    wall = time.monotonic() - started
    assert wall < 60.0
    print(f"criterion 7: PASS - save/load scores bit-identical on 10 images in {wall:.1f}s")


def test_criterion_8_cli_contract(tmp_path, capsys):
    started = time.monotonic()
    conf = tmp_path / "run.conf"
    conf.write_text(TINY_CONF, encoding="utf-8")
    data = tmp_path / "data"
    run = tmp_path / "run"
    manifest = str(data / "manifest.tsv")
    checkpoint = str(run / "checkpoint.npz")

    assert cli_main(["synth-data", "--out-dir", str(data), "--count", "24",
                     "--image-size", "64", "--seed", "9"]) == 0
    assert cli_main(["train", "--manifest", manifest, "--config", str(conf),
                     "--out-dir", str(run), "--quiet"]) == 0
    assert cli_main(["eval", "--manifest", manifest, "--checkpoint", checkpoint,
                     "--out-dir", str(tmp_path / "evalout"), "--quiet"]) == 0
    capsys.readouterr()
    image = str(data / "images" / "blur-00000.png")
    assert cli_main(["score", "--image", image, "--checkpoint", checkpoint]) == 0
    out_lines = capsys.readouterr().out.splitlines()
    assert len(out_lines) == 1
    assert math.isfinite(float(out_lines[0]))
    assert cli_main(["ablate", "--manifest", manifest, "--grid", "components",
                     "--config", str(conf), "--out-dir", str(tmp_path / "abl"),
                     "--quiet"]) == 0
    assert cli_main(["export-features", "--manifest", manifest,
                     "--checkpoint", checkpoint, "--split", "test",
                     "--out-dir", str(tmp_path / "feats"), "--quiet"]) == 0
    summary = json.loads((tmp_path / "evalout" / "summary.json").read_text())
    assert summary["images"] > 0
    wall = time.monotonic() - started
    assert wall < 1200.0
    print(
        f"criterion 8: PASS - six subcommands succeeded on one config file "
        f"in {wall:.1f}s; score printed exactly one number"
    )
