"""Self-guided deep image prior: per-slice unsupervised reconstruction.

An untrained residual U-Net ``f`` and its input ``z`` are fitted jointly to
one slice's k-space by minimizing::

    ||A f(z + eta) - y||^2 + alpha * ||f(z + eta) - z||^2

with one Gaussian draw ``eta`` per step. The reconstruction is the Monte
Carlo mean of ``f(z* + eta)`` over fresh draws. Nothing here can see a
ground-truth image: the only inputs are the acquisition system and its
measurements.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .networks import NetConfig, build_network, to_complex, to_tensor
from .solvers import NumericError
from .tensor import Function, ParamStore, ShapeError, Tensor, add_const, adam_step, backward, no_grad, sum_squares

logger = logging.getLogger(__name__)


@dataclass
class DipConfig:
    alpha: float = 0.5
    steps: int = 2000
    eta_sigma: float = 0.1
    mc_samples_final: int = 8
    lr: float = 3e-3
    seed: int = 0
    base_channels: int = 8
    residual_blocks_per_stage: int = 1

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.mc_samples_final < 1:
            raise ValueError("mc_samples_final must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.eta_sigma < 0:
            raise ValueError("eta_sigma must be >= 0")


class DataFidelity(Function):
    """``||A x - y||^2`` for a 2-channel image batch ``x``; gradient ``2 A^H (A x - y)``."""

    def forward(self, x, system=None, y=None):
        z = x[:, 0].astype(np.complex128) + 1j * x[:, 1]
        if system.batched:
            r = system.forward(z) - y
        else:
            r = (system.forward(z[0]) - y)[None]
        self.system, self.r, self.dtype = system, r, x.dtype
        return np.array(np.sum(np.abs(r) ** 2), dtype=x.dtype)

    def backward(self, g):
        r = self.r if self.system.batched else self.r[0]
        gz = self.system.adjoint(r)
        if not self.system.batched:
            gz = gz[None]
        out = 2 * float(g) * np.stack([gz.real, gz.imag], axis=1)
        return (out.astype(self.dtype),)


def data_fidelity(x, system, y):
    return DataFidelity.apply(x, system=system, y=y)


def _check_extent(y):
    h, w = y.shape[-2:]
    if h % 4 or w % 4:
        raise ShapeError(f"height/width {(h, w)} must be divisible by 4")


def dip_optimize(system, y, cfg=None, log=None):
    """Fit a fresh ``resunet-dip`` and its input to one slice.

    ``system`` is a single-slice :class:`SenseSystem` and ``y`` its
    ``[C, H, W]`` k-space. Returns ``(net, z, objectives)`` where ``z`` is the
    optimized ``[1, 2, H, W]`` input and ``objectives`` the per-step values.
    When ``log`` is a callable it receives ``(step, objective)`` each step.
    """
    cfg = cfg or DipConfig()
    _check_extent(y)
    net = build_network(
        "resunet-dip",
        NetConfig(
            base_channels=cfg.base_channels,
            residual_blocks_per_stage=cfg.residual_blocks_per_stage,
            weight_init_seed=cfg.seed,
        ),
    )
    z0 = to_tensor(system.adjoint(y), dtype=np.float32).data
    zstore = ParamStore()
    z = zstore.add("dip.z", z0, np.float32)
    rng = np.random.default_rng(cfg.seed)
    objectives = []
    for step in range(cfg.steps):
        eta_std = cfg.eta_sigma * float(z.data.std())
        noisy = add_const(z, (eta_std * rng.standard_normal(z0.shape)).astype(np.float32))
        out = net(noisy)
        obj = data_fidelity(out, system, y)
        if cfg.alpha > 0:
            obj = obj + sum_squares(out, z) * cfg.alpha
        value = obj.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite DIP objective at step {step}")
        objectives.append(value)
        if log is not None:
            log(step, value)
        backward(obj)
        adam_step(net.params, cfg.lr)
        adam_step(zstore, cfg.lr)
    return net, z.data.copy(), objectives


def dip_reconstruct(net, z, cfg=None, seed=None):
    """Monte Carlo mean of ``net(z + eta)`` over ``cfg.mc_samples_final`` draws (complex ``[H, W]``)."""
    cfg = cfg or DipConfig()
    rng = np.random.default_rng(cfg.seed + 1 if seed is None else seed)
    z = np.asarray(z, dtype=np.float32)
    eta_std = cfg.eta_sigma * float(z.std())
    acc = np.zeros(z.shape, dtype=np.float64)
    with no_grad():
        for _ in range(cfg.mc_samples_final):
            noise = (eta_std * rng.standard_normal(z.shape)).astype(np.float32) if eta_std > 0 else 0
            acc += net(Tensor((z + noise).astype(np.float32))).data
    return to_complex(acc / cfg.mc_samples_final)[0]


def dip_slice(system, y, cfg=None, log=None):
    """Optimize and reconstruct one slice; returns the complex image."""
    cfg = cfg or DipConfig()
    net, z, _ = dip_optimize(system, y, cfg, log)
    return dip_reconstruct(net, z, cfg)
