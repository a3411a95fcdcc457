"""Train a small EDSR-unrolled model and compare it with the zero-filled input.

A deliberately short run (48 slices, N=3, 4 epochs) that finishes in under a
minute on one CPU core; the full benchmark uses the CLI (see
``run_benchmark.sh``).

    python demos/02_train_unrolled.py
"""

import logging

import numpy as np

from unrollrecon.networks import NetConfig
from unrollrecon.phantom import build_dataset
from unrollrecon.pipeline import psnr_median, zero_filled
from unrollrecon.unrolled import TrainConfig, build_model, evaluate_model, train

logging.basicConfig(level=logging.INFO, format="%(message)s")

ds = build_dataset(48)
model = build_model("edsr-unrolled", n_unroll=3, net_config=NetConfig(base_channels=8, residual_blocks_per_stage=1))
print(f"{model.prox.num_params()} network parameters shared by all {model.n_unroll} iterations")

train(model, ds, TrainConfig(epochs=4, batch_size=4, lr=1e-3))
print(f"learned data-consistency weight lambda = {model.lam:.4f}")

test = list(ds.splits["test"])
recons, psnrs, _ = evaluate_model(model, ds, test, R=4)
print(f"zero-filled   median test PSNR {psnr_median(zero_filled(ds, test, 4), ds):.2f} dB")
print(f"edsr-unrolled median test PSNR {np.median(psnrs):.2f} dB")
