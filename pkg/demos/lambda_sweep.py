"""
Sweeping the KL weight
======================

Train the desk profile once per lambda on the same dataset and compare the
held-out PSNR with the ratio-image KL. lambda = 0 is plain MSE training.

    python demos/lambda_sweep.py [epochs] [lambda ...]
"""

import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from specklelab import build_dataset, bundled_scene_path, load_config, train
from specklelab.pipeline import load_dataset

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20
lams = [float(v) for v in sys.argv[2:]] or [0.0, 0.1, 0.3, 1.0]

base = load_config("desk")
work = Path(tempfile.mkdtemp(prefix="specklelab-sweep-"))
build_dataset(bundled_scene_path().parent, base.dataset, work / "dataset")
_, stores = load_dataset(work / "dataset")

print(f"{'lambda':>7} {'val PSNR':>9} {'ratio KL':>9} {'pooled':>8}")
for lam in lams:
    cfg = base.with_overrides(lam=lam)
    rep = train(stores, cfg.model, replace(cfg.train, epochs=epochs)).report
    print(f"{lam:7.2f} {rep.val_psnr[-1]:9.2f} {rep.val_ratio_kl[-1]:9.4f} {rep.val_ratio_kl_pooled[-1]:8.4f}")
