"""
Overfit one patch, then binarize a whole page
=============================================

Train the desk model on a single 256x256 patch with the default recipe,
then run tiled inference over the full page it came from.
Takes about two minutes on one CPU core.
"""

import logging
import tempfile

import numpy as np
import torch

from docbin.data import PairedSample, synth_sample
from docbin.inference import binarize_document, plan_stitch
from docbin.metrics import evaluate_pair
from docbin.network import ModelConfig, build_model, count_parameters
from docbin.trainer import TrainConfig, train

torch.set_num_threads(1)
logging.basicConfig(level=logging.INFO, format="%(message)s")

page = synth_sample(0, 0)
patch = PairedSample(page.image[100:356, 100:356], page.mask[100:356, 100:356], "patch")

model = build_model(ModelConfig.from_preset("desk"), seed=0)
print("parameters:", count_parameters(model))

with tempfile.TemporaryDirectory() as ckpt:
    result = train(model, [patch], TrainConfig(total_steps=500, val_every=100, checkpoint_dir=ckpt),
                   val_set=[patch])

losses = np.array(result.losses).reshape(-1, 100).mean(axis=1)
print("mean loss per 100 steps:", np.round(losses, 4))
print("val FM by step:", [(r["step"] + 1, round(r["val_fm"], 2)) for r in result.records if r["val_fm"]])

###############################################################################
# The whole page is tiled with half-overlapping 256 patches; each pixel is
# taken from the patch whose centre is closest.

plan = plan_stitch(*page.mask.shape, 256, 128)
print(f"page {page.mask.shape}: {len(plan.grid)} patches, "
      f"{len(np.unique(plan.owner_map))} of them own pixels")

mask = binarize_document(model, page.image, 256, 128)
scores = evaluate_pair(mask, page.mask)
print(f"whole page: FM {scores.fm:.2f}  PSNR {scores.psnr:.2f}  DRD {scores.drd:.3f}")

###############################################################################
# Only 256x256 of the page was seen in training, so the page-level FM is
# lower than on the patch itself.
