"""
Training a despeckler at desk scale
===================================

Cut the bundled scene into 33x33 patches, speckle them, train the small
network with the MSE + KL cost, then filter the whole scene. Takes a few
minutes on one core.

    python demos/train_desk.py [output-dir]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from specklelab import (SpeckleConfig, apply_speckle, build_dataset, bundled_scene_path,
                        despeckle_image, gamma_speckle_field, load_config, load_image, psnr,
                        ratio_kl, ssim, train)

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="specklelab-"))
cfg = load_config("desk")
print("working in", out)

manifest = build_dataset(bundled_scene_path().parent, cfg.dataset, out / "dataset")
print("patches:", manifest.splits)

result = train(out / "dataset", cfg.model, cfg.train, out / "run", log=print)
report = result.report
print(f"best epoch {report.best_epoch}, noisy validation PSNR {report.noisy_psnr:.2f} dB")

# the scene the patches came from, speckled with a fresh seed
x = load_image(bundled_scene_path())
y = apply_speckle(x, gamma_speckle_field(SpeckleConfig(1, 99), *x.shape))
x_hat, r = despeckle_image(result.files["best"], y, with_ratio=True)
print(f"noisy:    PSNR {psnr(x, y):.2f} dB  SSIM {ssim(x, y):.3f}")
print(f"filtered: PSNR {psnr(x, x_hat):.2f} dB  SSIM {ssim(x, x_hat):.3f}  ratio KL {ratio_kl(r, 1):.4f}")
print("ratio image mean", np.round(r.mean(), 4))
