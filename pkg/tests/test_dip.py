import inspect

import numpy as np
import pytest

from unrollrecon import dip, pipeline
from unrollrecon.dip import DipConfig, dip_optimize, dip_reconstruct
from unrollrecon.mri import SenseSystem, full_mask
from unrollrecon.networks import NetConfig, build_network, to_tensor
from unrollrecon.phantom import build_dataset, make_coil_maps, make_phantom, simulate_kspace
from unrollrecon.solvers import NumericError
from unrollrecon.tensor import ShapeError, Tensor, no_grad

SMALL = dict(base_channels=4, residual_blocks_per_stage=1)


@pytest.fixture(scope="module")
def slice32():
    ds = build_dataset(3, 32, 32)
    y, mask = ds.kspace(0, 4)
    return SenseSystem(mask, ds.coil_maps(0)), y


def test_zero_steps_returns_initial_state(slice32):
    system, y = slice32
    cfg = DipConfig(steps=0, seed=3, **SMALL)
    net, z, objectives = dip_optimize(system, y, cfg)
    fresh = build_network("resunet-dip", NetConfig(weight_init_seed=3, **SMALL))
    for n in fresh.params:
        np.testing.assert_array_equal(net.params[n].data, fresh.params[n].data)
    np.testing.assert_array_equal(z, to_tensor(system.adjoint(y)).data)
    assert objectives == []


def test_zero_eta_average_equals_single_pass(slice32):
    system, y = slice32
    cfg = DipConfig(steps=3, eta_sigma=0.0, mc_samples_final=8, **SMALL)
    net, z, _ = dip_optimize(system, y, cfg)
    with no_grad():
        single = net(Tensor(z)).data
    np.testing.assert_allclose(dip_reconstruct(net, z, cfg), single[0, 0] + 1j * single[0, 1], atol=1e-6)


def test_more_mc_samples_lower_variance(slice32):
    system, y = slice32
    net, z, _ = dip_optimize(system, y, DipConfig(steps=5, **SMALL))

    def spread(k):
        cfg = DipConfig(mc_samples_final=k, eta_sigma=0.1, **SMALL)
        draws = np.stack([dip_reconstruct(net, z, cfg, seed=s) for s in range(12)])
        return draws.std(axis=0).mean()

    assert spread(8) / spread(1) < 1


def test_optimization_is_deterministic(slice32):
    system, y = slice32
    cfg = DipConfig(steps=4, seed=1, **SMALL)
    _, z1, o1 = dip_optimize(system, y, cfg)
    _, z2, o2 = dip_optimize(system, y, cfg)
    assert o1 == o2
    np.testing.assert_array_equal(z1, z2)
    _, _, o3 = dip_optimize(system, y, DipConfig(steps=4, seed=2, **SMALL))
    assert o3 != o1


def test_alpha_zero_full_mask_objective_drops_100x():
    ph = make_phantom(0)
    maps = make_coil_maps(4, 64, 64, seed=0)
    system = SenseSystem(full_mask(64), maps)
    y = simulate_kspace(ph, maps, full_mask(64), 0.0)
    cfg = DipConfig(alpha=0.0, steps=300)
    _, _, objectives = dip_optimize(system, y, cfg)
    assert min(objectives) <= 1e-2 * objectives[0]


def test_log_callback_and_errors(slice32):
    system, y = slice32
    seen = []
    dip_optimize(system, y, DipConfig(steps=3, **SMALL), log=lambda s, v: seen.append(s))
    assert seen == [0, 1, 2]
    with pytest.raises(NumericError):
        dip_optimize(system, np.full_like(y, np.nan), DipConfig(steps=2, **SMALL))
    with pytest.raises(ValueError):
        DipConfig(alpha=-1)
    with pytest.raises(ValueError):
        DipConfig(mc_samples_final=0)


def test_indivisible_extent_rejected():
    maps = make_coil_maps(2, 30, 30)
    system = SenseSystem(full_mask(30), maps)
    with pytest.raises(ShapeError):
        dip_optimize(system, np.zeros((2, 30, 30), complex), DipConfig(steps=1))


class _NoTruth:
    """Dataset view that fails loudly on any ground-truth access."""

    def __init__(self, ds):
        self._ds = ds

    def image(self, i):
        raise AssertionError("DIP read the ground-truth image")

    def la_mask(self, i):
        raise AssertionError("DIP read the ground-truth mask")

    def __getattr__(self, name):
        return getattr(self._ds, name)


def test_api_audit_no_ground_truth(tmp_path):
    for fn in (dip.dip_optimize, dip.dip_reconstruct, dip.dip_slice):
        params = set(inspect.signature(fn).parameters)
        assert not params & {"truth", "gt", "x_gt", "image", "dataset"}
    ds = build_dataset(3, 32, 32)
    out = pipeline.dip_split(_NoTruth(ds), [0], 4, DipConfig(steps=2, **SMALL), jobs=1, log_dir=tmp_path)
    assert out[0].shape == (32, 32)
    assert (tmp_path / "dip_log_slice_0.jsonl").read_text().count("\n") == 2
