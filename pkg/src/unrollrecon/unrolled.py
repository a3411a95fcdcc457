"""Unrolled proximal / data-consistency reconstruction and its training loop."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import evalkit
from .mri import SenseSystem, make_mask
from .networks import NetConfig, build_network, to_complex, to_tensor
from .solvers import NumericError, dc_step
from .tensor import sum as tensor_sum
from .tensor import Graph, Tensor, adam_step, backward, exp, l2_loss, load_checkpoint, no_grad, save_checkpoint

logger = logging.getLogger(__name__)

LOG_LAMBDA = "dc.log_lambda"
METHOD_KINDS = {"edsr-unrolled": "edsr-prox", "unet-unrolled": "unet-denoiser"}


class UnrolledModel:
    """Shared-weight proximal network alternated ``n_unroll`` times with CG data consistency.

    The data-consistency weight is stored as ``log(lambda)`` in the same
    parameter store as the network, so ``lambda = exp(.)`` stays positive.
    """

    def __init__(self, prox, n_unroll=5, cg_iterations=10, lam=0.05):
        if n_unroll < 0:
            raise ValueError("n_unroll must be >= 0")
        self.prox = prox
        self.n_unroll = n_unroll
        self.cg_iterations = cg_iterations
        self.params = prox.params
        if LOG_LAMBDA not in self.params:
            self.params.add(LOG_LAMBDA, np.array(math.log(lam)), prox.params[next(iter(prox.params))].dtype)

    @property
    def lam(self):
        return float(np.exp(self.params[LOG_LAMBDA].data))

    @property
    def dtype(self):
        return self.params[LOG_LAMBDA].dtype

    def meta(self):
        m = self.prox.meta()
        m.update(n_unroll=self.n_unroll, cg_iterations=self.cg_iterations)
        return m

    def save(self, directory, extra=None):
        meta = self.meta()
        if extra:
            meta.update(extra)
        save_checkpoint(self.params, directory, meta)

    @classmethod
    def load(cls, directory):
        _, meta = load_checkpoint(directory)
        net = build_network(meta["kind"], NetConfig(**meta["config"]))
        model = cls(net, meta["n_unroll"], meta["cg_iterations"])
        load_checkpoint(directory, model.params)
        return model, meta


def build_model(method="edsr-unrolled", n_unroll=5, net_config=None, cg_iterations=10, lam=0.05):
    if method not in METHOD_KINDS:
        raise ValueError(f"unknown trained method {method!r}; choose from {sorted(METHOD_KINDS)}")
    return UnrolledModel(build_network(METHOD_KINDS[method], net_config), n_unroll, cg_iterations, lam)


def init_recon(system, y):
    """Zero-filled adjoint reconstruction ``A^H y``."""
    return system.adjoint(y)


def unrolled_forward(model, system, y, trace=None):
    """Run the unrolled reconstruction; returns a ``[B, 2, H, W]`` tensor.

    ``system`` is a batched :class:`SenseSystem` and ``y`` the matching
    ``[B, C, H, W]`` k-space. When ``trace`` is a list, each iteration's
    ``(x_half, x_next)`` complex arrays are appended to it.
    """
    if y.ndim == 3:
        y = y[None]
    x = to_tensor(init_recon(system, y), dtype=model.dtype)
    lam = exp(model.params[LOG_LAMBDA])
    for n in range(model.n_unroll):
        half = model.prox(x)
        if not np.all(np.isfinite(half.data)):
            raise NumericError(f"non-finite values after the proximal step of iteration {n}")
        x = dc_step(half, lam, system, y, model.cg_iterations)
        if not np.all(np.isfinite(x.data)):
            raise NumericError(f"non-finite values after data consistency in iteration {n}")
        if trace is not None:
            trace.append((to_complex(half), to_complex(x)))
    return x


def activation_count(model, system, y):
    """Values held by the recorded graph of one forward pass (a memory estimate).

    ``system``/``y`` describe a single batched sample; the count includes
    every intermediate tensor the backward pass would keep alive.
    """
    out = unrolled_forward(model, system, y)
    graph = Graph(tensor_sum(out))
    return int(sum(t.data.size for t in graph.tensors))


def reconstruct_batch(model, systems, ys):
    """Complex reconstructions for a list of single-slice systems (no graph recorded)."""
    with no_grad():
        out = unrolled_forward(model, SenseSystem.stack(systems), np.stack(ys))
    return to_complex(out)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 3e-5
    lr_floor: float = 0.1
    R_list: list = field(default_factory=lambda: [4, 6])
    seed: int = 0
    freeze_lambda: bool = False
    val_R: float = 4
    max_train_slices: int | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


REFERENCE_TRAIN = TrainConfig(epochs=1000, batch_size=32, lr=3e-5)


def cosine_lr(step, total, lr, floor_frac):
    floor = floor_frac * lr
    return floor + (lr - floor) * 0.5 * (1 + math.cos(math.pi * min(step, total) / max(total, 1)))


def _sample_batch(dataset, indices, rng, R_list):
    systems, ys, gts = [], [], []
    for i in indices:
        r = float(rng.choice(R_list))
        mask = make_mask(dataset.H, r, dataset.center_fraction, seed=int(rng.integers(2**31)), width=dataset.W)
        y, _ = dataset.kspace(i, r, mask=mask, noise_seed=int(rng.integers(2**31)))
        systems.append(SenseSystem(mask, dataset.coil_maps(i)))
        ys.append(y)
        gts.append(dataset.image(i))
    return SenseSystem.stack(systems), np.stack(ys), np.stack(gts)


def evaluate_model(model, dataset, indices, R, batch_size=16):
    """Magnitude reconstructions and per-slice PSNR/SSIM on fixed evaluation masks."""
    recons, psnrs, ssims = {}, [], []
    for start in range(0, len(indices), batch_size):
        chunk = indices[start : start + batch_size]
        systems, ys = [], []
        for i in chunk:
            y, mask = dataset.kspace(i, R)
            systems.append(SenseSystem(mask, dataset.coil_maps(i)))
            ys.append(y)
        out = np.abs(reconstruct_batch(model, systems, ys))
        for i, mag in zip(chunk, out):
            truth = np.abs(dataset.image(i))
            recons[i] = mag.astype(np.float32)
            psnrs.append(evalkit.psnr(mag, truth))
            ssims.append(evalkit.ssim(mag, truth))
    return recons, psnrs, ssims


def train(model, dataset, cfg, out_dir=None, log=None):
    """End-to-end training on the l2 distance to the complex ground truth.

    Every step draws a fresh mask (R from ``cfg.R_list``) and fresh noise per
    slice from the run's seed stream. Validation uses the fixed manifest
    masks at ``cfg.val_R``. The best-validation parameters are restored into
    ``model`` at the end (and checkpointed when ``out_dir`` is given).
    Returns the list of per-epoch log records.
    """
    train_idx = list(dataset.splits["train"])
    val_idx = list(dataset.splits.get("val", []))
    if not train_idx or not val_idx:
        raise ValueError("training needs nonempty train and val splits")
    if cfg.max_train_slices:
        train_idx = train_idx[: cfg.max_train_slices]
    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = math.ceil(len(train_idx) / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    frozen = (LOG_LAMBDA,) if cfg.freeze_lambda else ()
    out_dir = Path(out_dir) if out_dir else None
    log_file = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "train_log.jsonl", "w")
    records = [] if log is None else log
    best_psnr, best_state = -math.inf, model.params.state()
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.time()
            order = rng.permutation(train_idx)
            losses = []
            for b in range(steps_per_epoch):
                batch = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                system, y, gt = _sample_batch(dataset, batch, rng, cfg.R_list)
                pred = unrolled_forward(model, system, y)
                loss = l2_loss(pred, Tensor(np.stack([gt.real, gt.imag], axis=1).astype(model.dtype)))
                if not np.isfinite(loss.item()):
                    raise NumericError(f"non-finite training loss at epoch {epoch}")
                backward(loss)
                lr = cosine_lr(step, total, cfg.lr, cfg.lr_floor)
                if frozen:
                    model.params[LOG_LAMBDA].grad = None
                adam_step(model.params, lr, frozen=frozen)
                losses.append(loss.item() / math.sqrt(len(batch)))
                step += 1
            _, vp, vs = evaluate_model(model, dataset, val_idx, cfg.val_R)
            rec = {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_psnr": float(np.mean(vp)),
                "val_ssim": float(np.mean(vs)),
                "lr": lr,
                "lambda": model.lam,
                "seconds": round(time.time() - t0, 2),
            }
            records.append(rec)
            logger.info("epoch %d loss %.4f val %.2f dB", epoch, rec["train_loss"], rec["val_psnr"])
            if log_file:
                log_file.write(json.dumps(rec) + "\n")
                log_file.flush()
            if rec["val_psnr"] > best_psnr:
                best_psnr, best_state = rec["val_psnr"], model.params.state()
                if out_dir:
                    model.save(out_dir / "checkpoint", {"epoch": epoch, "val_psnr": best_psnr})
    finally:
        if log_file:
            log_file.close()
    model.params.load_state(best_state)
    return records


def train_config_dict(cfg):
    return asdict(cfg)
