"""Score a blur ladder with a completely untrained bundle.

The attention readout orders blur levels before any parameter has moved:
blur flattens the latent's spatial contrast, which flattens the attention
columns, which lowers the pooled score.  Training sharpens this ordering
but does not create it.

Every image is scored under the same derived noise stream, the protocol
`evaluate_bundle` uses, so the tiny per-image differences come from the
images and not from the noise draw.  Runs in about a minute on a CPU.
"""

import statistics
import tempfile
from pathlib import Path

from diffusion_iqa import (
    RunConfig,
    build_bundle,
    derive_rng,
    load_image,
    make_dataset,
    srcc,
)

work = Path(tempfile.mkdtemp(prefix="blur-ladder-"))
dataset = make_dataset(work, count=33, distortion="blur", seed=1, image_size=128)
bundle = build_bundle(RunConfig(eval_timestep_count=4))

mos_values = []
scores = []
by_level = {}
for record in dataset.records:
    latent = bundle.encode_image(load_image(record.path, bundle.config.image_size))
    score = bundle.score_latent(latent, derive_rng(0, "eval-noise"))
    mos_values.append(record.mos)
    scores.append(score)
    by_level.setdefault(record.mos, []).append(score)

floor = statistics.mean(scores)
print("mos    images  mean score - ladder mean")
for mos in sorted(by_level, reverse=True):
    level = by_level[mos]
    print(f"{mos:5.0f}  {len(level):6d}  {statistics.mean(level) - floor:+.6f}")

print(f"\nrank correlation against mos over all {len(scores)} images:"
      f" {srcc(scores, mos_values):+.4f}")
print("(an untrained readout; training tightens this, it does not create it)")
