"""Conjugate-gradient data consistency and the TV compressed-sensing baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .tensor import Function, Tensor

logger = logging.getLogger(__name__)


class SingularSystemError(ValueError):
    """lambda = 0 with an undersampled mask leaves the normal operator singular."""


class NumericError(FloatingPointError):
    """Non-finite values or divergence during an iterative solve."""


class StepSizeError(NumericError):
    """Gradient descent diverged; the step size is too large."""


@dataclass
class CGConfig:
    iterations: int = 10
    lam: float = 0.05
    record_for_backward: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("CG needs at least one iteration")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


def _dot(a, b):
    """Real inner product ``Re <a, b>`` per image, broadcastable over the batch."""
    return np.real(np.sum(np.conj(a) * b, axis=(-2, -1), keepdims=True))


def _cg(system, b, x0, lam, iterations, record):
    def Q(v):
        return system.normal(v) + lam * v

    tiny = np.finfo(np.real(b).dtype).eps ** 2
    x = x0
    r = b - Q(x0)
    p = r
    gamma = _dot(r, r)
    active = gamma > tiny * np.maximum(_dot(b, b), 1e-300)
    tape = []
    res_norms = [np.sqrt(gamma)]
    for _ in range(iterations):
        q = Q(p)
        delta = _dot(p, q)
        act = active & (delta > 0)
        alpha = np.where(act, gamma / np.where(act, delta, 1), 0)
        x_new = x + alpha * p
        r_new = r - alpha * q
        gamma_new = _dot(r_new, r_new)
        beta = np.where(act, gamma_new / np.where(act, gamma, 1), 0)
        p_new = r_new + beta * p
        if record:
            tape.append((p, q, r, gamma, delta, alpha, beta, act, r_new, gamma_new))
        x = np.where(act, x_new, x)
        r = np.where(act, r_new, r)
        p = np.where(act, p_new, p)
        gamma = np.where(act, gamma_new, gamma)
        active = act & (gamma_new > tiny * gamma)
        res_norms.append(np.sqrt(gamma))
        if not np.all(np.isfinite(gamma)):
            raise NumericError("NaN detected in CG residual")
    return x, tape, res_norms


def _cg_reverse(system, tape, lam, x0, prior, gx):
    """Adjoint of the recorded CG iterations; returns (d prior, d lambda per image)."""

    def Q(v):
        return system.normal(v) + lam * v

    xb = gx
    rb = np.zeros_like(gx)
    pb = np.zeros_like(gx)
    lamb = np.zeros(gx.shape[:-2] + (1, 1))
    for p, q, r, gamma, delta, alpha, beta, act, r_new, gamma_new in reversed(tape):
        rbn = rb + pb
        betab = _dot(pb, p)
        pbk = beta * pb
        gsafe = np.where(act, gamma, 1)
        dsafe = np.where(act, delta, 1)
        gnb = betab / gsafe
        gb = -betab * gamma_new / gsafe**2
        rbn = rbn + 2 * gnb * r_new
        alphab = -_dot(rbn, q) + _dot(xb, p)
        qb = -alpha * rbn
        pbk = pbk + alpha * xb
        gb = gb + alphab / dsafe
        deltab = -alphab * gamma / dsafe**2
        pbk = pbk + deltab * q
        qb = qb + deltab * p
        rbk = rbn + 2 * gb * r
        pbk = pbk + Q(qb)
        lamb = lamb + np.where(act, _dot(qb, p), 0)
        rb = np.where(act, rbk, rb)
        pb = np.where(act, pbk, pb)
    rb = rb + pb
    xb = xb - Q(rb)
    lamb = lamb - _dot(rb, x0) + _dot(rb, prior)
    return xb + lam * rb, lamb


def _check_lambda(system, lam):
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if lam == 0 and not system.fully_sampled:
        raise SingularSystemError("lambda = 0 requires a fully sampled mask")


def cg_solve(system, y, prior, cfg=None):
    """Solve ``(A^H A + lam I) x = A^H y + lam * prior`` with a fixed CG budget.

    Starts from ``x0 = prior`` and returns the last iterate. Works on single
    images ``[H, W]`` or batches ``[B, H, W]`` against a stacked system.
    """
    cfg = cfg or CGConfig()
    _check_lambda(system, cfg.lam)
    prior = np.asarray(prior)
    b = system.adjoint(y) + cfg.lam * prior
    x, _, _ = _cg(system, b, prior, cfg.lam, cfg.iterations, record=False)
    if not np.all(np.isfinite(x)):
        raise NumericError("NaN detected in CG output")
    return x


def cg_residuals(system, y, prior, cfg=None):
    """Residual norms ``||r_k||`` of the CG run, one row per iteration."""
    cfg = cfg or CGConfig()
    _check_lambda(system, cfg.lam)
    b = system.adjoint(y) + cfg.lam * prior
    _, _, res = _cg(system, b, prior, cfg.lam, cfg.iterations, record=False)
    return np.array([np.squeeze(v) for v in res])


def to_complex(x2):
    """``[..., 2, H, W]`` real/imag planes to a complex ``[..., H, W]`` array."""
    return x2[..., 0, :, :] + 1j * x2[..., 1, :, :]


def to_channels(z, dtype=None):
    out = np.stack([z.real, z.imag], axis=-3)
    return out.astype(dtype) if dtype is not None else out


class CGSolve(Function):
    """Data-consistency solve as a graph node: inputs are a 2-channel prior and lambda."""

    def forward(self, prior2, lam, system=None, y=None, iterations=10):
        lam_v = float(np.asarray(lam).reshape(()))
        _check_lambda(system, lam_v)
        prior = to_complex(prior2.astype(np.float64))
        ctype = np.complex128
        b = system.adjoint(y.astype(ctype)) + lam_v * prior
        x, tape, _ = _cg(system, b, prior, lam_v, iterations, record=True)
        if not np.all(np.isfinite(x)):
            raise NumericError("NaN detected in CG output")
        self.system, self.tape, self.lam, self.prior = system, tape, lam_v, prior
        self.dtype, self.lam_shape = prior2.dtype, np.shape(lam)
        return to_channels(x, prior2.dtype)

    def backward(self, g):
        gx = to_complex(g.astype(np.float64))
        gp, glam = _cg_reverse(self.system, self.tape, self.lam, self.prior, self.prior, gx)
        gprior = to_channels(gp, self.dtype) if self.needs[0] else None
        glam_out = np.full(self.lam_shape, glam.sum(), dtype=self.dtype) if self.needs[1] else None
        return gprior, glam_out


def dc_step(prior2, lam, system, y, iterations=10):
    """Differentiable CG data consistency on a ``[B, 2, H, W]`` tensor."""
    if not isinstance(lam, Tensor):
        lam = Tensor(np.asarray(lam, dtype=prior2.dtype))
    return CGSolve.apply(prior2, lam, system=system, y=y, iterations=iterations)


# ---------------------------------------------------------------------------
# total variation and compressed sensing


def _fdiff(u):
    """Forward differences with replicate boundary (last difference is 0)."""
    dy = np.zeros_like(u)
    dx = np.zeros_like(u)
    dy[..., :-1, :] = u[..., 1:, :] - u[..., :-1, :]
    dx[..., :, :-1] = u[..., :, 1:] - u[..., :, :-1]
    return dy, dx


def _fdiff_adj(py, px):
    """Adjoint of :func:`_fdiff` (negative divergence)."""
    out = np.zeros_like(py)
    out[..., :-1, :] -= py[..., :-1, :]
    out[..., 1:, :] += py[..., :-1, :]
    out[..., :, :-1] -= px[..., :, :-1]
    out[..., :, 1:] += px[..., :, :-1]
    return out


def _tv_real(u, eps):
    dy, dx = _fdiff(u)
    mag = np.sqrt(dy**2 + dx**2 + eps**2)
    return np.sum(mag - eps), _fdiff_adj(dy / mag, dx / mag)


def tv_value(image, epsilon=1e-6):
    """Smoothed isotropic TV, summed over the real and imaginary planes."""
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    image = np.asarray(image)
    return float(_tv_real(image.real, epsilon)[0] + _tv_real(np.imag(image), epsilon)[0])


def tv_grad(image, epsilon=1e-6):
    """Gradient of :func:`tv_value` as a complex array (real + i imag parts)."""
    image = np.asarray(image)
    gr = _tv_real(image.real, epsilon)[1]
    gi = _tv_real(np.imag(image), epsilon)[1]
    return gr + 1j * gi


@dataclass
class CSConfig:
    lambda_dc: float = 1.0
    lambda_tv: float = 1e-3
    tv_epsilon: float = 1e-6
    step_size: float = 0.5
    iterations: int = 500
    backtrack: bool = True

    def __post_init__(self):
        if min(self.lambda_dc, self.lambda_tv, self.step_size) < 0:
            raise ValueError("CS weights and step size must be >= 0")
        if self.tv_epsilon <= 0:
            raise ValueError("tv_epsilon must be > 0")


def cs_objective(system, y, x, cfg):
    res = system.forward(x) - y
    return cfg.lambda_dc * float(np.sum(np.abs(res) ** 2)) + cfg.lambda_tv * tv_value(x, cfg.tv_epsilon)


def cs_reconstruct(system, y, cfg=None, return_history=False):
    """Gradient descent on ``lambda_dc ||Ax - y||^2 + lambda_tv TV(x)`` from ``A^H y``.

    With ``backtrack`` a step that raises the objective is rejected and the
    step halved; accepted iterates therefore never increase the objective.
    The best iterate seen is returned.
    """
    cfg = cfg or CSConfig()
    x = system.adjoint(y).astype(np.complex128)
    f = f0 = cs_objective(system, y, x, cfg)
    best_x, best_f = x, f
    step = cfg.step_size
    history = [f]
    for _ in range(cfg.iterations):
        g = 2 * cfg.lambda_dc * system.adjoint(system.forward(x) - y)
        if cfg.lambda_tv:
            g = g + cfg.lambda_tv * tv_grad(x, cfg.tv_epsilon)
        cand = x - step * g
        fc = cs_objective(system, y, cand, cfg)
        if cfg.backtrack:
            while fc > f and step > 1e-12 * cfg.step_size:
                step *= 0.5
                cand = x - step * g
                fc = cs_objective(system, y, cand, cfg)
        if not np.isfinite(fc):
            raise NumericError("non-finite CS objective")
        if fc > 10 * f0:
            raise StepSizeError(f"CS objective grew from {f0:.4g} to {fc:.4g}; reduce step_size")
        if cfg.backtrack and fc > f:
            break
        x, f = cand, fc
        if cfg.backtrack:
            step = min(step * 1.25, cfg.step_size)
        if f < best_f:
            best_x, best_f = x, f
        history.append(best_f)
    return (best_x, history) if return_history else best_x
