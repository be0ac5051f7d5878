import math

import numpy as np
import pytest
from scipy.special import eval_genlaguerre, gamma as gamma_fn, iv

from warpflow.core_geometry import cone_constants
from warpflow.spectral import (
    QuadratureDivergence,
    alpha_k,
    b2_h,
    b2_lambda,
    binom,
    bessel_i,
    c_const,
    c_prime_closed,
    d_const,
    eigen_data,
    eigenfunction_u,
    eigenfunction_z,
    exp_a,
    exp_tail,
    gram_matrix_u,
    gram_matrix_z,
    hardy_constants_check,
    interlacing_index,
    laguerre,
    laguerre_alpha,
    resolvent_residual,
    resolvent_z_lambda,
    semigroup_apply,
    u_mode_series,
    weighted_ip,
    z_lambda_series,
)

P55 = cone_constants(5, 5)
P510 = cone_constants(5, 10)


def test_laguerre_base_cases():
    x = np.linspace(0, 5, 11)
    assert np.all(laguerre(0, 0.7, x) == 1.0)
    assert np.allclose(laguerre(1, 0.7, x), 1.7 - x)


def test_laguerre_matches_scipy():
    x = np.linspace(0, 20, 50)
    for j in range(9):
        assert np.allclose(laguerre(j, 2.5, x), eval_genlaguerre(j, 2.5, x), rtol=1e-12, atol=1e-12)


def test_laguerre_rejects_bad_arguments():
    with pytest.raises(ValueError):
        laguerre(2, -1.0, 0.5)
    with pytest.raises(ValueError):
        laguerre(-1, 0.0, 0.5)


def test_laguerre_orthogonality():
    from scipy.special import roots_genlaguerre

    al = 1.5
    x, w = roots_genlaguerre(40, al)
    for j in range(5):
        for m in range(5):
            val = np.sum(w * laguerre(j, al, x) * laguerre(m, al, x))
            expected = gamma_fn(j + al + 1) / math.factorial(j) if j == m else 0.0
            assert val == pytest.approx(expected, abs=1e-10 * max(1.0, expected))


def test_eigenvalues_n10_closed_form():
    for k in range(8):
        assert b2_lambda(P55, k) == 1.5 - k
        assert b2_h(P55, k) == -(k + 1)
    assert exp_a(P55) == 3.0
    assert b2_lambda(P55, 2) == -0.5 and b2_lambda(P55, 3) == -1.5


def test_eigenvalue_formula_general_n():
    params = cone_constants(6, 9)
    n = params.n
    for k in range(5):
        closed = -k + (n - 1) / 4 - 0.25 * math.sqrt((n - 9) * (n - 1))
        assert b2_lambda(params, k) == pytest.approx(closed, rel=1e-14)


def test_alpha_k_values():
    assert alpha_k(P55, 4) == pytest.approx(5 / 6)
    assert alpha_k(P55, 3) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        alpha_k(P55, 1)


def test_spectral_needs_n_at_least_10():
    with pytest.raises(ValueError):
        exp_a(cone_constants(4, 4))


def test_interlacing_index_n10_k3():
    assert interlacing_index(P55, 3) == 0
    assert interlacing_index(P55, 4) == 1


def test_eigenfunction_rejects_nonpositive_gamma():
    with pytest.raises(ValueError):
        eigenfunction_u(P55, 2, np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        eigenfunction_z(P55, 2, -1.0)


def test_u_small_gamma_law():
    al = laguerre_alpha(P510)
    e = exp_a(P510)
    for k in (0, 2, 5):
        g = 1e-6
        val = eigenfunction_u(P510, k, g) * g**e
        assert val == pytest.approx(c_const(P510, k) * binom(k + al, k), rel=1e-9)


def test_u_large_gamma_law():
    e = exp_a(P55)
    for k in (1, 3):
        g = 1e4
        val = eigenfunction_u(P55, k, g) * g ** (2 * b2_lambda(P55, k))
        lead = c_const(P55, k) / math.factorial(k) * (-4 * P55.B2) ** (-k)
        assert val == pytest.approx(lead, rel=1e-6)
        assert 2 * b2_lambda(P55, k) == pytest.approx(e - 2 * k)


def test_z_small_gamma_law():
    be = 0.5 * (P55.n + 1)
    for j in (0, 3):
        g = 1e-6
        assert eigenfunction_z(P55, j, g) / g**2 == pytest.approx(d_const(P55, j) * binom(j + be, j), rel=1e-9)


def test_gram_matrices_identity():
    assert np.max(np.abs(gram_matrix_u(P55, 8) - np.eye(9))) < 1e-8
    assert np.max(np.abs(gram_matrix_z(P55, 8) - np.eye(9))) < 1e-8


def test_weighted_ip_gamma_integral():
    for a, b in ((0, 1.0), (3, 0.5), (9, 2.25)):
        val = weighted_ip(lambda r: np.ones_like(r), a=a, b=b)
        expected = gamma_fn((a + 1) / 2) * (2 / b) ** ((a + 1) / 2) / 2
        assert val == pytest.approx(expected, rel=1e-12)


def test_weighted_ip_flags_divergence():
    with pytest.raises(QuadratureDivergence):
        weighted_ip(lambda r: np.exp(0.5 * r * r), a=2, b=1.0)


def test_hardy_ratios_stable_for_gaussian():
    u = lambda r: np.exp(-r * r)  # noqa: E731
    du = lambda r: -2 * r * np.exp(-r * r)  # noqa: E731
    r128 = hardy_constants_check(u, 9, 1.0, du, nodes=128)
    r256 = hardy_constants_check(u, 9, 1.0, du, nodes=256)
    # e^{-4x} is not polynomial in the Laguerre variable, so convergence is algebraic
    assert np.allclose(r128, r256, rtol=1e-3)
    # adaptive-quadrature oracle for the division ratio
    from scipy.integrate import quad

    w = lambda r: r**9 * math.exp(-r * r / 2)  # noqa: E731
    h1 = quad(lambda r: (u(r) ** 2 + du(r) ** 2) * w(r), 0, np.inf, epsrel=1e-13)[0]
    div = quad(lambda r: (u(r) / r) ** 2 * w(r), 0, np.inf, epsrel=1e-13)[0]
    assert r256[1] == pytest.approx(math.sqrt(div / h1), rel=1e-4)


def test_hardy_division_diverges_at_a_equal_one():
    u = lambda r: np.exp(-r * r)  # noqa: E731
    du = lambda r: -2 * r * np.exp(-r * r)  # noqa: E731
    ratios = [hardy_constants_check(u, 1, 1.0, du, nodes=n)[1] for n in (16, 64, 256)]
    assert ratios[0] < ratios[1] < ratios[2]


def test_hardy_ratios_scale_consistently():
    # u(lambda r) in L^2_{a,b} equals u in L^2_{a, b/lambda^2} after r -> r/lambda
    lam = 2.0
    u = lambda r: np.exp(-r * r)  # noqa: E731
    du = lambda r: -2 * r * np.exp(-r * r)  # noqa: E731
    base = hardy_constants_check(lambda r: u(lam * r), 9, 1.0, lambda r: lam * du(lam * r))
    # same integrals computed in the stretched variable
    kw = dict(a=9, b=1.0 / lam**2, check=False)
    mult = weighted_ip(lambda r: r * u(r), lambda r: r * u(r), **kw) / lam**2
    h1 = weighted_ip(u, u, **kw) + lam**2 * weighted_ip(du, du, **kw)
    assert base[0] == pytest.approx(math.sqrt(mult / h1), rel=1e-10)


def test_z_lambda_series_and_bvp_agree():
    for k in (2, 3, 4):
        res = resolvent_z_lambda(P55, k, n_out=2001)
        exact = z_lambda_series(P55, k)(res.gamma)
        mid = (res.gamma > 0.1) & (res.gamma < 10)
        assert np.max(np.abs(res.Z - exact)[mid]) < 1e-6 * np.max(np.abs(exact[mid]))
        assert resolvent_residual(P55, k, res) < 1e-6


def test_resolvent_small_gamma_constant():
    for k in (2, 3, 4):
        data = eigen_data(P55, k)
        assert data.z_small == pytest.approx(c_prime_closed(P55, k), rel=1e-10)


def test_bessel_special_values():
    assert bessel_i(0.0, 0.0) == 1.0
    assert bessel_i(1.5, 0.0) == 0.0
    x = np.array([0.1, 1.0, 10.0, 40.0, 200.0])
    assert np.allclose(bessel_i(0.5, x), np.sqrt(2 / (np.pi * x)) * np.sinh(x), rtol=1e-12)


def test_bessel_matches_scipy_and_bound():
    x = np.geomspace(1e-3, 500, 200)
    for nu in (0.0, 2.5, 7.3):
        assert np.allclose(bessel_i(nu, x), iv(nu, x), rtol=1e-10)
        ratio = bessel_i(nu, x, scaled=True) * (1 + x) ** (nu + 0.5) / x**nu
        assert np.max(ratio) < 10 * np.max(ratio[:5]) + 10


def test_bessel_rejects_negative():
    with pytest.raises(ValueError):
        bessel_i(-1.0, 1.0)
    with pytest.raises(ValueError):
        bessel_i(1.0, -1.0)


def test_exp_tail_kappa_one_exact():
    for R in (0.5, 2.0, 6.0):
        val, _ = exp_tail(R, 1.0, 1.3)
        assert val == pytest.approx(math.exp(-1.3 * R * R / 2) / 1.3, rel=1e-12)


def test_exp_tail_leading_term_and_monotone():
    _, ratio = exp_tail(6.0, 3.0, 1.0)
    # next-order correction (kappa-1)/(b R^2) is 2/36 here
    assert ratio == pytest.approx(1 + 2 / 36, rel=1e-3)
    assert abs(ratio - 1) < 0.06
    vals = [exp_tail(R, 3.0, 1.0)[0] for R in (1, 2, 3, 4)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_semigroup_on_eigenfunction():
    g = np.linspace(0.3, 5.0, 20)
    k = 2
    f = lambda x: eigenfunction_u(P55, k, x)  # noqa: E731
    out = semigroup_apply(P55, f, 0.3, g, "U", "eigen", n_modes=6)
    assert np.allclose(out, math.exp(b2_lambda(P55, k) * 0.3) * f(g), rtol=1e-8)
    out = semigroup_apply(P55, f, 0.3, g, "U", "kernel", support=(1e-6, 30.0))
    assert np.allclose(out, math.exp(b2_lambda(P55, k) * 0.3) * f(g), rtol=1e-6)


def test_semigroup_identity_and_errors():
    g = np.array([1.0, 2.0])
    f = lambda x: x**2  # noqa: E731
    assert np.array_equal(semigroup_apply(P55, f, 0.0, g), g**2)
    with pytest.raises(ValueError):
        semigroup_apply(P55, f, -0.1, g)
    with pytest.raises(ValueError):
        semigroup_apply(P55, f, 0.1, g, method="fft")


def test_kernel_preserves_positivity():
    from warpflow.spectral import bump

    f = bump(0.5, 4.5)
    g = np.linspace(0.1, 8.0, 40)
    out = semigroup_apply(P55, f, 0.2, g, "Z", "kernel", support=(0.5, 4.5))
    assert np.all(out >= 0)


def test_u_mode_series_matches_eigenfunction():
    g = np.geomspace(0.1, 10, 30)
    for k in range(5):
        assert np.allclose(u_mode_series(P55, k)(g), eigenfunction_u(P55, k, g), rtol=1e-12)
