"""Fast invariant suite: operator, solver, gradient and metric oracles.

Each check is a function returning ``(passed, detail)``; :func:`run_checks`
runs them all by name. The fixtures here are shared with the test-suite.
"""

from __future__ import annotations

import time

import numpy as np
from scipy import ndimage

from . import evalkit
from .mri import SenseSystem, fft2c, full_mask, ifft2c, make_mask, normalize_maps
from .networks import KINDS, NetConfig, build_network, to_tensor
from .phantom import make_coil_maps, simulate_kspace
from .solvers import CGConfig, cg_solve, dc_step
from .tensor import Tensor, gradcheck, no_grad, sum_squares
from .unrolled import UnrolledModel, unrolled_forward


def random_maps(rng, c, h, w):
    """Unit-rSoS random complex maps (rough; a hard spectrum for CG)."""
    maps = rng.standard_normal((c, h, w)) + 1j * rng.standard_normal((c, h, w))
    return normalize_maps(maps)


def smooth_maps(c, h, w, seed=0):
    """Smooth maps: the central ``h x w`` window of 128x128 analytic maps, renormalized."""
    big = make_coil_maps(c, 128, 128, seed=seed).maps.astype(np.complex128)
    y0, x0 = 64 - h // 2, 64 - w // 2
    return normalize_maps(big[:, y0 : y0 + h, x0 : x0 + w])


def random_image(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def cg_oracle_fixture(seed=0, h=8, c=2, r=2, maps="smooth"):
    rng = np.random.default_rng(seed)
    m = smooth_maps(c, h, h, seed) if maps == "smooth" else random_maps(rng, c, h, h)
    system = SenseSystem(make_mask(h, r, seed=seed), m)
    y = system.forward(random_image(rng, h, h))
    prior = random_image(rng, h, h)
    return system, y, prior


def dense_solve(system, y, prior, lam):
    """Direct solve of ``(A^H A + lam I) x = A^H y + lam prior`` from the explicit matrix."""
    a = system.as_matrix()
    lhs = a.conj().T @ a + lam * np.eye(a.shape[1])
    rhs = a.conj().T @ y.ravel() + lam * prior.ravel()
    return np.linalg.solve(lhs, rhs).reshape(prior.shape)


# -- brute-force metric oracles --------------------------------------------


def psnr_oracle(recon, truth):
    mse = sum((float(a) - float(b)) ** 2 for a, b in zip(np.ravel(recon), np.ravel(truth))) / np.size(truth)
    return 10 * np.log10(float(np.max(truth)) ** 2 / mse)


def ssim_oracle(x, y, win=11, sigma=1.5, k1=0.01, k2=0.03):
    """Explicit per-window SSIM loop."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ax = np.arange(win) - (win - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g) / np.outer(g, g).sum()
    L = y.max() - y.min()
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    vals = []
    for i in range(x.shape[0] - win + 1):
        for j in range(x.shape[1] - win + 1):
            px, py = x[i : i + win, j : j + win], y[i : i + win, j : j + win]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * (px - mx) ** 2).sum()
            vy = (w * (py - my) ** 2).sum()
            cxy = (w * (px - mx) * (py - my)).sum()
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def dice_oracle(a, b):
    inter = sum(1 for p, q in zip(np.ravel(a), np.ravel(b)) if p and q)
    return 2 * inter / (int(np.sum(a)) + int(np.sum(b)))


# -- checks -----------------------------------------------------------------


def check_fft_unitary():
    rng = np.random.default_rng(1)
    x = random_image(rng, 4, 16, 16)
    k = fft2c(x)
    rt = np.abs(ifft2c(k) - x).max() / np.abs(x).max()
    pars = abs(np.linalg.norm(k) - np.linalg.norm(x)) / np.linalg.norm(x)
    err = max(rt, pars)
    return err <= 1e-6, f"round-trip/Parseval error {err:.2e}"


def check_sense_adjoint(n=100):
    rng = np.random.default_rng(2)
    worst = 0.0
    for i in range(n):
        system = SenseSystem(make_mask(16, 4, seed=i), random_maps(rng, 4, 16, 16))
        x = random_image(rng, 16, 16)
        y = random_image(rng, 4, 16, 16)
        ax = system.forward(x)
        lhs = np.vdot(y, ax)
        rhs = np.vdot(system.adjoint(y), x)
        worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(ax) * np.linalg.norm(y)))
    return worst <= 1e-6, f"max normalized adjoint mismatch {worst:.2e} over {n} systems"


def check_cg_dense():
    system, y, prior = cg_oracle_fixture()
    x = cg_solve(system, y, prior, CGConfig(iterations=10, lam=0.05))
    ref = dense_solve(system, y, prior, 0.05)
    err = np.linalg.norm(x - ref) / np.linalg.norm(ref)
    return err <= 1e-5, f"relative error vs dense solve {err:.2e}"


def _net_gradcheck(kind):
    net = build_network(kind, NetConfig(base_channels=2, residual_blocks_per_stage=1), dtype=np.float64)
    rng = np.random.default_rng(3)
    for name, t in net.params.items():
        if name.endswith(".b") or np.all(t.data == 0):
            t.data = 0.3 * rng.standard_normal(t.shape)
    x = Tensor(rng.standard_normal((1, 2, 8, 8)))
    target = rng.standard_normal((1, 2, 8, 8))
    leaves = [x] + [net.params[n] for n in net.params]

    def f(_):
        return sum_squares(net(x), Tensor(target))

    return gradcheck(f, leaves, eps=1e-6, max_entries=12)


def check_gradcheck_networks():
    errs = {k: _net_gradcheck(k) for k in KINDS}
    worst = max(errs.values())
    return worst <= 1e-3, ", ".join(f"{k} {v:.1e}" for k, v in errs.items())


def check_gradcheck_cg():
    system, y, prior = cg_oracle_fixture(seed=4)
    rng = np.random.default_rng(4)
    stacked = SenseSystem.stack([system])
    p = Tensor(to_tensor(prior, dtype=np.float64).data)
    lam = Tensor(np.array(0.05))
    target = rng.standard_normal((1, 2, 8, 8))

    def f(_):
        return sum_squares(dc_step(p, lam, stacked, y[None], 10), Tensor(target))

    err = gradcheck(f, [p, lam], eps=1e-6)
    return err <= 1e-3, f"max relative gradient error {err:.2e}"


def check_identity_at_init():
    rng = np.random.default_rng(5)
    maps = make_coil_maps(4, 16, 16, seed=5)
    system = SenseSystem(full_mask(16), maps)
    x = random_image(rng, 16, 16)
    y = simulate_kspace(x, maps, full_mask(16), 0.0)
    model = UnrolledModel(build_network("edsr-prox", NetConfig(base_channels=4, residual_blocks_per_stage=1)), 3)
    with no_grad():
        out = unrolled_forward(model, SenseSystem.stack([system]), y[None])
    zf = system.adjoint(y)
    err = np.abs(out.data[0, 0] + 1j * out.data[0, 1] - zf).max() / np.abs(zf).max()
    return err <= 1e-5, f"max deviation from A^H y {err:.2e}"


def check_metric_oracles():
    rng = np.random.default_rng(6)
    truth = rng.uniform(0, 1, (24, 24))
    recon = truth + 0.05 * rng.standard_normal((24, 24))
    a = ndimage.binary_dilation(rng.uniform(size=(24, 24)) > 0.8)
    b = ndimage.binary_dilation(rng.uniform(size=(24, 24)) > 0.8)
    errs = {
        "psnr": abs(evalkit.psnr(recon, truth) - psnr_oracle(recon, truth)),
        "ssim": abs(evalkit.ssim(recon, truth) - ssim_oracle(recon, truth)),
        "dice": abs(evalkit.dice(a, b) - dice_oracle(a, b)),
    }
    worst = max(errs.values())
    return worst <= 1e-6, ", ".join(f"{k} {v:.1e}" for k, v in errs.items())


CHECKS = {
    "fft_unitary": check_fft_unitary,
    "sense_adjoint": check_sense_adjoint,
    "cg_dense_oracle": check_cg_dense,
    "gradcheck_networks": check_gradcheck_networks,
    "gradcheck_cg": check_gradcheck_cg,
    "identity_at_init": check_identity_at_init,
    "metric_oracles": check_metric_oracles,
}


def run_checks(names=None, report=print):
    """Run checks by name; returns ``[(name, passed, detail, seconds)]``."""
    results = []
    for name in names or CHECKS:
        t0 = time.time()
        try:
            ok, detail = CHECKS[name]()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        dt = time.time() - t0
        results.append((name, ok, detail, dt))
        if report:
            report(f"{'PASS' if ok else 'FAIL'} {name}: {detail} ({dt:.1f}s)")
    return results

