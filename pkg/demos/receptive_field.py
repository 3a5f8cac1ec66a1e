"""
How far does one pixel reach?
=============================

Nudge a single input pixel and look at which output pixels move, once for
the FFC model and once for the convolution-only baseline.
"""

import numpy as np
import torch

from docbin.network import ModelConfig, build_conv_baseline, build_model, receptive_field_radius

torch.set_num_threads(1)
cfg = ModelConfig.from_preset("desk")
radius = receptive_field_radius(cfg)
print("conv receptive-field radius:", radius, "px")

# an input big enough that most of it lies outside that radius
size = 2 * radius + 72
size += -size % 8
x = torch.rand(1, 3, size, size, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
bumped = x.clone()
bumped[0, :, 4, 4] += 1.0

###############################################################################
# Fresh BN layers carry placeholder statistics (mean 0, variance 1), which
# shrink the eval-mode signal at every layer.  A few train-mode passes with a
# cumulative average give both models realistic statistics.


def calibrate(model):
    for m in model.modules():
        if isinstance(m, torch.nn.BatchNorm2d):
            m.reset_running_stats()
            m.momentum = None
    model.train()
    gen = torch.Generator().manual_seed(1)
    with torch.no_grad():
        for _ in range(4):
            model(torch.rand(2, 3, 128, 128, dtype=torch.float64, generator=gen))
    return model.eval()


rows, cols = np.ogrid[:size, :size]
far = (np.abs(rows - 4) > radius) | (np.abs(cols - 4) > radius)

for name, build in [("ffc", build_model), ("conv baseline", build_conv_baseline)]:
    model = calibrate(build(cfg, seed=0).double())
    with torch.no_grad():
        delta = (model(bumped) - model(x)).abs()[0, 0].numpy()
    print(f"{name:14s} changed far pixels: {np.mean(delta[far] > 0):6.1%}   "
          f"smallest far change: {delta[far].min():.2e}")

###############################################################################
# The spectral branch mixes every position, so the FFC output moves
# everywhere; the baseline's stack of 3x3 convs stops at ``radius``.
