import numpy as np
import pytest

from unrollrecon.networks import KINDS, NetConfig, build_network, expected_param_count
from unrollrecon.tensor import ShapeError, Tensor, gradcheck, sum_squares

# Layer arithmetic for the default width (base 32, 2 blocks per stage), pinned.
PINNED_DEFAULT_COUNTS = {"edsr-prox": 1186594, "unet-denoiser": 650786, "resunet-dip": 1186594}


@pytest.mark.parametrize("kind", KINDS)
def test_parameter_count_matches_layer_arithmetic(kind):
    assert build_network(kind).num_params() == PINNED_DEFAULT_COUNTS[kind]
    assert expected_param_count(kind, 32, 2) == PINNED_DEFAULT_COUNTS[kind]
    for base, blocks in [(4, 1), (8, 3)]:
        net = build_network(kind, NetConfig(base_channels=base, residual_blocks_per_stage=blocks))
        assert net.num_params() == expected_param_count(kind, base, blocks)


@pytest.mark.parametrize("kind", KINDS)
def test_shape_preserved(kind, rng):
    net = build_network(kind, NetConfig(base_channels=4, residual_blocks_per_stage=1))
    x = Tensor(rng.standard_normal((2, 2, 64, 64)).astype(np.float32))
    assert net(x).shape == (2, 2, 64, 64)


def test_edsr_prox_is_identity_at_init(rng):
    net = build_network("edsr-prox", NetConfig(base_channels=8))
    x = rng.standard_normal((1, 2, 16, 16)).astype(np.float32)
    np.testing.assert_array_equal(net(Tensor(x)).data, x)


@pytest.mark.parametrize("kind", ["unet-denoiser", "resunet-dip"])
def test_other_kinds_are_not_identity(kind, rng):
    net = build_network(kind, NetConfig(base_channels=4))
    x = rng.standard_normal((1, 2, 16, 16)).astype(np.float32)
    assert not np.allclose(net(Tensor(x)).data, x)


@pytest.mark.parametrize("kind", KINDS)
def test_deterministic_init_and_no_batch_coupling(kind, rng):
    cfg = NetConfig(base_channels=4, weight_init_seed=3)
    a, b = build_network(kind, cfg), build_network(kind, cfg)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
    x = rng.standard_normal((1, 2, 16, 16)).astype(np.float32)
    out = a(Tensor(np.concatenate([x, x]))).data
    np.testing.assert_array_equal(out[0], out[1])
    other = build_network(kind, NetConfig(base_channels=4, weight_init_seed=4))
    assert any(not np.array_equal(a.params[n].data, other.params[n].data) for n in a.params if n.endswith(".w") and a.params[n].data.any())


@pytest.mark.parametrize("kind", KINDS)
def test_network_gradcheck(kind):
    net = build_network(kind, NetConfig(base_channels=4, residual_blocks_per_stage=1), dtype=np.float64)
    rng = np.random.default_rng(7)
    for name, t in net.params.items():
        if name.endswith(".b") or not t.data.any():
            t.data = 0.3 * rng.standard_normal(t.shape)
    x = Tensor(rng.standard_normal((1, 2, 8, 8)))
    target = Tensor(rng.standard_normal((1, 2, 8, 8)))
    leaves = [x] + [net.params[n] for n in net.params]
    err = gradcheck(lambda _: sum_squares(net(x), target), leaves, eps=1e-6, max_entries=6)
    assert err <= 1e-3


def test_shape_errors():
    net = build_network("edsr-prox", NetConfig(base_channels=4))
    with pytest.raises(ShapeError, match="divisible by 4"):
        net(Tensor(np.zeros((1, 2, 10, 12), np.float32)))
    with pytest.raises(ShapeError):
        net(Tensor(np.zeros((1, 3, 8, 8), np.float32)))
    with pytest.raises(ValueError):
        NetConfig(in_channels=1)
    with pytest.raises(ValueError):
        build_network("vgg")
