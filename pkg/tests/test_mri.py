import numpy as np
import pytest

from unrollrecon.mri import (
    ConfigError,
    SenseSystem,
    center_block,
    estimate_sensitivities,
    fft2c,
    full_mask,
    ifft2c,
    make_mask,
    sense_adjoint,
    sense_forward,
)
from unrollrecon.phantom import make_coil_maps, make_phantom, simulate_kspace
from unrollrecon.verify import random_image, random_maps


def dft_matrix(n):
    """Centered unitary DFT: F[k, x] = exp(-2 pi i (k - n/2)(x - n/2) / n) / sqrt(n)."""
    k = np.arange(n) - n // 2
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def test_fft2c_impulse_and_constant():
    x = np.zeros((8, 8), complex)
    x[4, 4] = 1
    np.testing.assert_allclose(fft2c(x), np.full((8, 8), 1 / 8), atol=1e-12)
    np.testing.assert_allclose(ifft2c(np.full((8, 8), 1 / 8, complex)), x, atol=1e-12)


def test_fft2c_matches_dft_matrix(rng):
    x = random_image(rng, 4, 4)
    f = dft_matrix(4)
    np.testing.assert_allclose(fft2c(x), f @ x @ f.T, atol=1e-12)
    np.testing.assert_allclose(ifft2c(x), f.conj().T @ x @ f.conj(), atol=1e-12)


def test_fft_round_trip_and_parseval(rng):
    x = random_image(rng, 16, 16)
    np.testing.assert_allclose(ifft2c(fft2c(x)), x, atol=1e-12)
    assert abs(np.linalg.norm(fft2c(x)) - np.linalg.norm(x)) <= 1e-9 * np.linalg.norm(x)


def test_mask_line_counts():
    m4 = make_mask(64, 4, 0.06, seed=0)
    assert m4.n_sampled == 16
    assert np.all(m4.lines[center_block(64, 0.06)]) and center_block(64, 0.06).size == 4
    m6 = make_mask(64, 6, 0.06, seed=0)
    assert m6.n_sampled == 11
    assert make_mask(64, 1, 0.06).n_sampled == 64


def test_mask_center_block_is_contiguous_and_centered():
    block = center_block(64, 0.06)
    assert list(block) == [30, 31, 32, 33]
    odd = center_block(64, 3 / 64)
    assert list(odd) == [31, 32, 33]


def test_mask_determinism():
    a = make_mask(64, 4, seed=3)
    b = make_mask(64, 4, seed=3)
    c = make_mask(64, 4, seed=4)
    np.testing.assert_array_equal(a.lines, b.lines)
    assert not np.array_equal(a.lines, c.lines)
    assert a.n_sampled == c.n_sampled


def test_mask_errors():
    with pytest.raises(ConfigError):
        make_mask(64, 40, 0.06)  # round(64/40) = 2 < 4 center lines
    with pytest.raises(ConfigError):
        make_mask(64, 0.5)


def test_single_coil_full_mask_is_fft(rng):
    x = random_image(rng, 8, 8)
    system = SenseSystem(full_mask(8), np.ones((1, 8, 8), complex))
    np.testing.assert_allclose(sense_forward(system, x)[0], fft2c(x), atol=1e-12)
    assert np.all(sense_forward(system, np.zeros((8, 8))) == 0)


def test_sense_linearity(rng):
    system = SenseSystem(make_mask(16, 4, seed=1), random_maps(rng, 4, 16, 16))
    x1, x2 = random_image(rng, 16, 16), random_image(rng, 16, 16)
    a = 0.3 - 1.2j
    lhs = system.forward(a * x1 + x2)
    rhs = a * system.forward(x1) + system.forward(x2)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(lhs)


def test_adjoint_identity_100_draws(rng):
    worst = 0
    for i in range(100):
        system = SenseSystem(make_mask(16, 4, seed=i), random_maps(rng, 4, 16, 16))
        x, y = random_image(rng, 16, 16), random_image(rng, 4, 16, 16)
        ax = system.forward(x)
        worst = max(worst, abs(np.vdot(y, ax) - np.vdot(sense_adjoint(system, y), x)) / (np.linalg.norm(ax) * np.linalg.norm(y)))
    assert worst <= 1e-6


def test_full_mask_normal_operator_is_identity(rng):
    system = SenseSystem(full_mask(16), make_coil_maps(4, 16, 16, seed=2))
    x = random_image(rng, 16, 16)
    np.testing.assert_allclose(system.normal(x), x, atol=1e-6)


def test_normal_operator_hermitian_psd(rng):
    system = SenseSystem(make_mask(16, 4, seed=5), random_maps(rng, 4, 16, 16))
    for _ in range(10):
        x = random_image(rng, 16, 16)
        q = np.vdot(x, system.normal(x))
        assert q.real >= 0 and abs(q.imag) <= 1e-6 * abs(q)


def test_center_only_kspace_is_low_pass(rng):
    mask = make_mask(16, 4, 0.25, seed=0)
    center = np.zeros(16, bool)
    center[center_block(16, 0.25)] = True
    system = SenseSystem(full_mask(16), np.ones((1, 16, 16), complex))
    y = random_image(rng, 1, 16, 16) * center[:, None]
    out = sense_adjoint(system, y)
    leak = fft2c(out) * (~center)[:, None]
    assert np.linalg.norm(leak) <= 1e-6 * np.linalg.norm(out)
    assert mask.n_sampled == 4


def test_as_matrix_matches_forward(rng):
    system = SenseSystem(make_mask(8, 2, seed=0), random_maps(rng, 2, 8, 8))
    x = random_image(rng, 8, 8)
    np.testing.assert_allclose(system.as_matrix() @ x.ravel(), system.forward(x).ravel(), atol=1e-12)


def test_stacked_system_matches_per_slice(rng):
    systems = [SenseSystem(make_mask(16, 4, seed=i), random_maps(rng, 3, 16, 16)) for i in range(3)]
    xs = random_image(rng, 3, 16, 16)
    batch = SenseSystem.stack(systems)
    y = batch.forward(xs)
    for i, s in enumerate(systems):
        np.testing.assert_allclose(y[i], s.forward(xs[i]), atol=1e-12)
        np.testing.assert_allclose(batch.adjoint(y)[i], s.adjoint(y[i]), atol=1e-12)


def test_extent_mismatch_rejected():
    with pytest.raises(ValueError):
        SenseSystem(make_mask(16, 2), np.ones((2, 8, 8)))


def test_estimate_sensitivities_recovers_analytic_maps():
    for seed in range(3):
        maps = make_coil_maps(4, 64, 64, seed=seed)
        ph = make_phantom(seed)
        y = simulate_kspace(ph, maps, full_mask(64), 0.0)
        est = estimate_sensitivities(y, 24)
        support = ph.image > 0.1
        err = np.abs(np.abs(est.maps) - np.abs(maps.maps))[:, support].mean()
        assert err <= 0.05
        rss = np.sum(np.abs(est.maps) ** 2, axis=0)
        np.testing.assert_allclose(rss[rss > 0], 1.0, atol=1e-6)


def test_estimate_sensitivities_single_coil():
    ph = make_phantom(1)
    y = simulate_kspace(ph, make_coil_maps(1, 64, 64), full_mask(64), 0.0)
    est = estimate_sensitivities(y, 8)
    mag = np.abs(est.maps[0])
    np.testing.assert_allclose(mag[mag > 0], 1.0, atol=1e-6)
