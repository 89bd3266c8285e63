import math

import numpy as np
import pytest
import torch

from spikingssm.numerics import Rng, rng_normal
from spikingssm.s4d import (
    DiscreteSsm,
    S4DLayer,
    discretize_params,
    discretize_zoh,
    s4d_lin_init,
    ssm_forward_conv,
    ssm_forward_recurrent,
    ssm_kernel,
)


@pytest.fixture
def params():
    return s4d_lin_init(3, 64, (0.001, 0.1), Rng(42))


def _single_mode():
    return DiscreteSsm(np.array([0.5 + 0j]), np.array([0.5 + 0j])), np.array([1.0 + 0j])


class TestInit:
    def test_real_part_and_delta_range(self, params):
        np.testing.assert_array_equal(params.A.real, -0.5)
        np.testing.assert_allclose(params.A.imag, np.pi * np.arange(32) * np.ones((3, 1)))
        assert np.all((params.delta >= 0.001) & (params.delta <= 0.1))
        assert params.state_size == 64

    def test_deterministic(self):
        a = s4d_lin_init(2, 8, rng=Rng(1))
        b = s4d_lin_init(2, 8, rng=Rng(1))
        for f in ("A", "B", "C", "log_delta"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    @pytest.mark.parametrize("N, rng", [(7, (0.001, 0.1)), (8, (0.1, 0.01)), (8, (0.0, 0.1))])
    def test_rejects(self, N, rng):
        with pytest.raises(ValueError):
            s4d_lin_init(1, N, rng)


class TestDiscretize:
    def test_half_example(self):
        d = discretize_zoh(np.array([-1.0]), np.array([1.0]), math.log(2))
        np.testing.assert_allclose(d.A_bar, [0.5], atol=1e-15)
        np.testing.assert_allclose(d.B_bar, [0.5], atol=1e-15)

    def test_zero_limit(self):
        d = discretize_zoh(np.array([0.0 + 0j]), np.array([2.0 + 0j]), 0.05)
        np.testing.assert_allclose(d.A_bar, [1.0])
        np.testing.assert_allclose(d.B_bar, [0.1])

    def test_stable(self, params):
        d = discretize_params(params)
        assert np.all(np.abs(d.A_bar) < 1)

    def test_rejects_unstable(self):
        with pytest.raises(ValueError):
            discretize_zoh(np.array([0.1 + 1j]), np.array([1.0]), 0.1)


class TestPaths:
    def test_single_mode_impulse(self):
        d, C = _single_mode()
        x = np.zeros(6)
        x[0] = 1.0
        expected = 0.5 ** np.arange(1, 7)
        np.testing.assert_allclose(ssm_forward_recurrent(d, C, x, conj_double=False), expected, atol=1e-15)
        np.testing.assert_allclose(ssm_kernel(d, C, 6, conj_double=False), expected, atol=1e-15)

    def test_memoryless(self, params):
        d = discretize_params(params)
        d0 = DiscreteSsm(np.zeros_like(d.A_bar), d.B_bar)
        x = rng_normal(Rng(0), 20)
        gain = 2 * np.sum(params.C * d.B_bar, axis=-1).real
        np.testing.assert_allclose(ssm_forward_recurrent(d0, params.C, x), gain[:, None] * x, atol=1e-12)

    def test_kernel_first_tap(self, params):
        d = discretize_params(params)
        np.testing.assert_allclose(ssm_kernel(d, params.C, 4)[:, 0], 2 * np.sum(params.C * d.B_bar, -1).real)

    def test_zero_input(self, params):
        d = discretize_params(params)
        assert not ssm_forward_recurrent(d, params.C, np.zeros(16)).any()
        assert not np.abs(ssm_forward_conv(d, params.C, np.zeros(16))).max() > 0

    @pytest.mark.parametrize("N", [2, 64])
    @pytest.mark.parametrize("length", [16, 256, 1024])
    def test_conv_equals_recurrent(self, N, length):
        p = s4d_lin_init(2, N, rng=Rng(N + length))
        d = discretize_params(p)
        x = rng_normal(Rng(length), (2, length))
        diff = np.abs(ssm_forward_conv(d, p.C, x) - ssm_forward_recurrent(d, p.C, x)).max()
        assert diff <= 1e-8

    def test_kernel_decays(self, params):
        d = discretize_params(params)
        k = ssm_kernel(d, params.C, 4096)
        assert np.all(np.abs(k[:, -1]) < np.abs(k[:, 0]))


class TestTorchLayer:
    def test_float64_matches_recurrent(self, params):
        layer = S4DLayer.from_params(params)
        x = rng_normal(Rng(3), (2, 3, 300))
        with torch.no_grad():
            y = layer(torch.from_numpy(x)).numpy()
        ref = ssm_forward_recurrent(discretize_params(params), params.C, x)
        assert np.abs(y - ref).max() <= 1e-8

    def test_float32_close(self, params):
        layer = S4DLayer.from_params(params, dtype=torch.float32)
        x = rng_normal(Rng(3), (1, 3, 1024))
        with torch.no_grad():
            y = layer(torch.from_numpy(x).float()).numpy()
        ref = ssm_forward_recurrent(discretize_params(params), params.C, x)
        assert np.abs(y - ref).max() <= 1e-3

    def test_gradients_reach_every_parameter(self):
        layer = S4DLayer(4, 8, seed=1)
        layer(torch.randn(2, 4, 32)).pow(2).sum().backward()
        for name, p in layer.named_parameters():
            assert p.grad is not None and torch.isfinite(p.grad).all(), name
            assert p.grad.abs().sum() > 0, name
