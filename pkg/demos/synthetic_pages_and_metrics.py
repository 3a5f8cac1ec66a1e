"""
Synthetic pages and the four scores
===================================

Generate a few degraded pages, binarize them with a plain global threshold,
and score the result with FM, pseudo-FM, PSNR and DRD.
"""

import numpy as np

from docbin.data import synth_corpus
from docbin.metrics import MetricReport, evaluate_pair, skeletonize

pages = synth_corpus(4, seed=0, size=(256, 320))
page = pages[0]
print("image", page.image.shape, page.image.dtype, " ink fraction %.3f" % page.mask.mean())

###############################################################################
# Stains and bleed-through shift the paper tone from page to page, so no
# single global threshold suits them all.  Try a few.

report = {}
for t in (0.3, 0.45, 0.6):
    r = MetricReport(label=f"threshold {t}")
    for p in pages:
        pred = (p.image.mean(axis=2) < t).astype(np.uint8)
        r.per_image.append(evaluate_pair(pred, p.mask, p.source_id))
    report[t] = r
    agg = r.aggregate
    print(f"t={t:<5} FM {agg['fm']:6.2f}  pFM {agg['pfm']:6.2f}  PSNR {agg['psnr']:6.2f}  DRD {agg['drd']:6.2f}")

###############################################################################
# pFM scores recall on the stroke skeleton: a prediction that keeps only the
# skeleton loses FM but keeps full pseudo-recall.

skel = skeletonize(page.mask)
thin_pred = evaluate_pair(skel, page.mask)
print("skeleton-only prediction: FM %.2f  pFM %.2f" % (thin_pred.fm, thin_pred.pfm))

print()
print(report[0.6].to_text())
