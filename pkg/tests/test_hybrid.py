import numpy as np
import pytest
from scipy import integrate

from rbergomi_mc.hybrid import (
    MAX_ELEMENTS,
    TimeGrid,
    bstar_weights,
    check_alpha,
    direct_convolution_reference,
    fft_convolve,
    hybrid_weights,
    kernel_pair_covariance,
    simulate_volterra,
)

# b_k at alpha = -0.43, computed with mpmath at 40 digits
B_REFERENCE = {2: 1.4591263460127543, 3: 2.4759270614300421, 10: 9.4937237845061783}


def test_bstar_matches_high_precision_values():
    b = bstar_weights(-0.43, 10)
    for k, ref in B_REFERENCE.items():
        assert b[k - 2] == pytest.approx(ref, rel=1e-13)


@pytest.mark.parametrize("alpha", [-0.49, -0.43, -0.2, -0.01])
def test_bstar_lies_inside_its_interval(alpha):
    b = bstar_weights(alpha, 500)
    k = np.arange(2, 501)
    assert np.all(b > k - 1) and np.all(b < k)


def test_bstar_rejects_zero_alpha():
    with pytest.raises(ValueError):
        bstar_weights(0.0, 10)
    with pytest.raises(ValueError):
        bstar_weights(-0.3, 1)


@pytest.mark.parametrize("alpha", [-0.6, -0.5, 0.1])
def test_check_alpha_rejects_out_of_range(alpha):
    with pytest.raises(ValueError):
        check_alpha(alpha)


@pytest.mark.parametrize("alpha", [-0.43, -0.2])
def test_kernel_covariance_against_quadrature(alpha):
    dt = 1.0 / 312
    cov = kernel_pair_covariance(alpha, dt)
    # algebraic weight handles the endpoint singularity exactly
    c12, _ = integrate.quad(lambda s: 1.0, 0, dt, weight="alg", wvar=(0, alpha), epsabs=0, epsrel=1e-13)
    c22, _ = integrate.quad(lambda s: 1.0, 0, dt, weight="alg", wvar=(0, 2 * alpha), epsabs=0, epsrel=1e-13)
    assert cov[0, 0] == dt
    assert cov[0, 1] == cov[1, 0] == pytest.approx(c12, rel=1e-12)
    assert cov[1, 1] == pytest.approx(c22, rel=1e-12)
    assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_hybrid_weights_layout():
    grid = TimeGrid(6, 1.0)
    g = hybrid_weights(-0.43, grid)
    assert g.shape == (7,)
    assert g[0] == g[1] == 0.0
    np.testing.assert_allclose(g[2:], (bstar_weights(-0.43, 6) / 6) ** -0.43, rtol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 7, 64, 128])
def test_fft_matches_direct_convolution(n):
    rng = np.random.default_rng(n)
    dw = rng.standard_normal((3, n))
    w = rng.standard_normal(n + 1)
    fast = fft_convolve(dw, w)
    for row in range(3):
        np.testing.assert_allclose(fast[row], direct_convolution_reference(dw[row], w), atol=1e-10, rtol=0)


def test_time_grid():
    g = TimeGrid(3, 0.1)
    assert g.times[-1] == 0.1
    assert g.dt == pytest.approx(0.1 / 3)
    with pytest.raises(ValueError):
        TimeGrid(0, 1.0)
    with pytest.raises(ValueError):
        TimeGrid(10, -1.0)


def test_alpha_zero_is_cumulative_brownian_sum():
    vp = simulate_volterra(0.0, TimeGrid(50, 1.0), 10, seed=3)
    assert np.array_equal(vp.walpha[:, 1:], np.cumsum(vp.dw1, axis=1))
    assert np.all(vp.walpha[:, 0] == 0)


def test_antithetic_rows_are_negated():
    vp = simulate_volterra(-0.43, TimeGrid(20, 0.25), 8, seed=5)
    assert np.array_equal(vp.dw1[1::2], -vp.dw1[0::2])
    assert np.array_equal(vp.walpha[1::2], -vp.walpha[0::2])


def test_walpha_reconstructs_from_its_parts():
    # W = sqrt(2a+1) * (exact term + history convolution); recover the exact term
    # and check its joint law with dw1 through the sample covariance
    alpha, grid = -0.43, TimeGrid(4, 1.0)
    vp = simulate_volterra(alpha, grid, 200_000, seed=11, antithetic=False)
    hist = fft_convolve(vp.dw1, hybrid_weights(alpha, grid))
    exact = vp.walpha[:, 1:] / np.sqrt(2 * alpha + 1) - hist[:, 1:]
    cov = kernel_pair_covariance(alpha, grid.dt)
    emp = np.cov(vp.dw1[:, 2], exact[:, 2])
    np.testing.assert_allclose(emp, cov, rtol=0.02)


def test_same_seed_same_paths():
    g = TimeGrid(16, 0.5)
    a = simulate_volterra(-0.3, g, 6, seed=42)
    b = simulate_volterra(-0.3, g, 6, seed=42)
    assert np.array_equal(a.walpha, b.walpha)


def test_input_validation():
    g = TimeGrid(10, 1.0)
    with pytest.raises(ValueError):
        simulate_volterra(-0.43, g, 3, seed=0)
    simulate_volterra(-0.43, g, 3, seed=0, antithetic=False)
    with pytest.raises(ValueError):
        simulate_volterra(-0.43, TimeGrid(1000, 1.0), MAX_ELEMENTS // 1000 + 2, seed=0)
