import dataclasses
import math

import mpmath
import numpy as np
import pytest
import sympy as sp

from warpflow.barriers import (
    LEMMAS,
    BarrierSpec,
    constants_to_use,
    extend_Z,
    far_U,
    far_U_weak,
    far_Z,
    far_Z_coefficients,
    inner_cone_U,
    inner_cone_Z,
    inner_grad_U,
    inner_second_deriv_sign,
    membership_check,
    outer_sine_cone,
    parab_outer_barrier,
    parab_outer_U,
    parab_outer_Z,
    reference_region,
    residual,
    run_lemma,
    sine_cone_barrier,
    xi_window,
)
from warpflow.core_geometry import cone_constants
from warpflow.spectral import b2_lambda, exp_a, u_mode_series, z_lambda_series

P510 = cone_constants(5, 10)
REGION = reference_region(5, 10, 4)
CONSTS = constants_to_use(5, 10, 4)


# ---------------------------------------------------------------------------
# constants


def test_constants_to_use_constraints():
    c = CONSTS
    e = exp_a(P510)
    assert all(c.checks.values())
    assert 0 < c.l < 0.5 * e
    assert 0 < c.kappa < math.sqrt((P510.n - 9) * (P510.n - 1))
    # base point inequality of the equal-dimension case
    base = cone_constants(5, 5)
    eb = exp_a(base)
    r = 0.5 * math.sqrt((base.n - 9) * (base.n - 1))
    a0 = 0.5 * (base.n - 1) - r
    assert (2 * 4 + 2 * b2_lambda(base, 4)) / a0 + 1 / 3 > 1
    assert eb / a0 + 1 / 3 > 1


def test_constants_to_use_needs_q_at_least_10():
    with pytest.raises(ValueError):
        constants_to_use(5, 5, 4)
    loose = constants_to_use(5, 5, 4, strict=False)
    assert loose.interval_kind == "n"
    assert all(loose.checks.values())


def test_far_quadratic_coefficient_example():
    q, a = 10, 4.5
    assert a**2 - (q - 1) * a + 2 * (q - 1) == pytest.approx(-2.25)
    lo, hi = CONSTS.interval
    assert lo < a < hi


def test_far_Z_coefficients_at_b_equal_three():
    consts = dataclasses.replace(CONSTS, b=3.0)
    co = far_Z_coefficients(P510, consts, 1.0, 2.0, consts.a, 1e3)
    assert co["linear"] == pytest.approx(9 - 12 * 3 - 28)
    assert co["quadratic"] == pytest.approx(-7.5)
    assert co["linear"] < 0 and co["quadratic"] < 0


def test_far_Z_reference_coefficients_negative():
    co = far_Z_coefficients(P510, CONSTS, 1.0, 2.0, CONSTS.a, REGION.Upsilon_U)
    assert co["linear"] < 0
    assert co["quadratic"] < 0
    assert co["interaction"] <= co["third"]


def test_xi_window_bracket():
    win = xi_window(P510, CONSTS, 1.0, 1.0, 1e4)
    assert win["in_window"]
    assert win["Xi"] <= win["xi_star"]
    assert win["exponent"] <= win["upper"]
    with pytest.raises(ValueError):
        xi_window(P510, CONSTS, 1e30, 1.0, 1e4)


# ---------------------------------------------------------------------------
# closed-form residuals


def test_inner_cone_U_residual_example():
    spec = inner_cone_U(P510, REGION, c=1.0)
    g = np.array([1.0])
    assert spec.display(g, 40.0)[0] == pytest.approx(5.0)
    assert sum(spec.generic(g, 40.0, Z=0.37))[0] == pytest.approx(5.0)


def test_inner_cone_U_borderline_angle():
    c = math.sqrt((P510.p - 1) / (P510.q - 1))
    spec = inner_cone_U(P510, REGION, c=c)
    g = np.geomspace(0.01, 10, 20)
    assert np.all(np.abs(spec.display(g, 40.0)) * g**2 < 1e-12 * (P510.q - 1))


def test_inner_cone_Z_bracket_nonnegative():
    spec = inner_cone_Z(P510, REGION)
    g = np.geomspace(0.01, 10, 200)
    worst = spec.display(g, 40.0, Ug=1 / g)
    assert np.all(worst * g**2 >= -1e-12)
    assert spec.checks["bracket>=0"]


def test_sine_cone_barrier_values():
    psi, z, star = sine_cone_barrier(1.0, 1.0, 0.0, P510)
    a0 = (P510.q - 1) / (P510.q - 1 + P510.p)
    assert z[0] == pytest.approx(a0)
    assert star == pytest.approx(math.sqrt(2 * a0))
    assert np.all(z >= 0)
    with pytest.raises(ValueError):
        sine_cone_barrier(1.0, 1.0, 1.0, P510)
    with pytest.raises(ValueError):
        sine_cone_barrier(0.0, 1.0, 0.0, P510)


def test_sine_cone_barrier_is_sine_cone_profile_when_C_is_one():
    # with C = 1 the positive branch is a0 - K psi^2 / 2 and a0 = (q-1)/(n-1) = B^2
    params = cone_constants(5, 5)
    psi, z, _ = sine_cone_barrier(1.0, 2.0, 0.0, params, psi=np.linspace(0, 0.5, 11))
    lam2 = 1.0  # K0 / 2 = 1 / lam^2
    assert np.allclose(z, np.maximum(0, params.B2 - psi**2 / lam2))


def test_outer_sine_cone_residual_is_exact():
    spec = outer_sine_cone(P510)
    X, T, R, rep = residual(spec, n_x=50, n_t=10)
    assert rep.passed
    scale = np.max(np.abs(np.vstack([np.ravel(t) for t in spec.generic(X, T)])), axis=0)
    assert np.max(np.abs(R.ravel()) / scale) < 1e-12


def test_parab_outer_Z_D_condition_flags():
    k = 4
    C = z_lambda_series(P510, k).leading[0]
    good = parab_outer_Z(P510, k, "lower", C, D=100.0, C_U=1.0, Gamma=1e3, rho=1e-3, tau0=40.0)
    bad = parab_outer_Z(P510, k, "lower", C, D=-100.0, C_U=1.0, Gamma=1e3, rho=1e-3, tau0=40.0)
    assert good.checks["D/2-4pB^4C_U>0"]
    assert not bad.checks["D/2-4pB^4C_U>0"]


def test_parab_outer_U_nonlinear_smallness_and_concavity():
    rep = parab_outer_barrier(P510, 4, "U-", n_x=60, n_t=10)
    assert rep.params["nonlinear_ratio"] < 0.5
    rep = parab_outer_barrier(P510, 4, "U+", n_x=60, n_t=10)
    assert rep.checks["1-e^{-2U}-2U<=0"]


def test_parab_outer_U_rejects_nonnegative_lambda():
    with pytest.raises(ValueError):
        parab_outer_U(P510, 0, "lower", 1.0, 1.0, 10.0, 1e-3, 40.0)


def test_candidate_leaving_domain_is_reported():
    spec = inner_cone_U(P510, REGION, c=-1.0)
    with np.errstate(invalid="ignore"), pytest.raises(ValueError):
        residual(spec, REGION, n_x=10, n_t=3)


def test_barrier_spec_validation():
    with pytest.raises(ValueError):
        BarrierSpec("x", "nope", "sub", None, None, None, None)
    with pytest.raises(ValueError):
        BarrierSpec("x", "inner_U", "both", None, None, None, None)


def test_run_lemma_unknown_name():
    with pytest.raises(ValueError):
        run_lemma("no_such_lemma")


@pytest.mark.parametrize("name", LEMMAS)
def test_reference_suite_has_no_sign_violations(name):
    rep = run_lemma(name)
    assert rep.n_samples == 200 * 50
    assert rep.violation_fraction == 0.0, rep.worst_point
    assert rep.passed, rep.checks


# ---------------------------------------------------------------------------
# displays against generic operators, and both against a symbolic oracle


def _specs():
    k = 4
    C_U = u_mode_series(P510, k).leading[0]
    C_Z = z_lambda_series(P510, k).leading[0]
    aC = abs(C_U)
    s = -2 * b2_lambda(P510, k)
    need = aC * s**2 + (P510.q - 1) * aC * s + 2 * (P510.q - 1) * aC
    base = 4 * P510.p * P510.B2**2
    return [
        inner_cone_U(P510, REGION),
        inner_cone_Z(P510, REGION),
        inner_grad_U(P510, REGION),
        inner_second_deriv_sign(P510, REGION),
        far_U_weak(P510, REGION, CONSTS),
        far_Z(P510, REGION, CONSTS),
        far_U(P510, REGION, CONSTS),
        extend_Z(P510, REGION, k, "minus"),
        extend_Z(P510, REGION, k, "plus"),
        parab_outer_U(P510, k, "lower", C_U, 2 * need + 1, 1e3, 1e-3, 40.0),
        parab_outer_U(P510, k, "upper", C_U, -(2 * need + 1), 1e3, 1e-3, 40.0),
        parab_outer_Z(P510, k, "lower", C_Z, 2 * (base + 1), 1.0, 1e3, 1e-3, 40.0),
        parab_outer_Z(P510, k, "upper", C_Z, -2 * (base + 1), 1.0, 1e3, 1e-3, 40.0),
        outer_sine_cone(P510),
    ]


def _random_points(spec, rng, n=100):
    X, T = spec.sampler(200, 50)
    idx = rng.integers(0, X.size, n)
    x, t = X.ravel()[idx], T.ravel()[idx]
    amb = {}
    for name, bounds, _ in spec.ambient:
        lo, hi = np.broadcast_arrays(*[np.asarray(b, float) for b in bounds(x, t)])
        amb[name] = lo + rng.random(n) * (hi - lo)
    return x, t, amb


@pytest.mark.parametrize("spec", _specs(), ids=lambda s: s.name)
def test_display_matches_generic_operator(spec):
    rng = np.random.default_rng(7)
    x, t, amb = _random_points(spec, rng)
    terms = np.broadcast_arrays(*spec.generic(x, t, **amb))
    generic = np.sum(terms, axis=0)
    scale = np.max(np.abs(terms), axis=0)
    if spec.name == "outer_sine_cone":
        # display is the exact value 0 of the residual on the positive branch
        assert np.all(np.abs(generic) <= 1e-12 * scale)
        return
    display = spec.display(x, t, **amb)
    assert np.all(np.abs(generic - display) <= 1e-10 * scale)


# The oracle writes every candidate in the unrescaled sideways chart and
# differentiates the sideways Ricci flow equations symbolically.  Rescaled
# time tau = -log(T - t), gamma = psi e^{tau/2}, u = U - tau/2; the
# xi-region uses xi = gamma e^{alpha tau}.

psi_s, t_s, Tsym, zsym, Ug_s = sp.symbols("psi t T z Ug", real=True)
p_s, q_s = P510.p, P510.q
A = sp.sqrt(sp.Rational(p_s - 1, p_s + q_s - 1))
B = sp.sqrt(sp.Rational(q_s - 1, p_s + q_s - 1))
tau_s = -sp.log(Tsym - t_s)
gam_s = psi_s * sp.exp(tau_s / 2)


def _u_residual(u, z):
    return z * sp.diff(u, psi_s, 2) + sp.diff(u, psi_s) * (z + q_s - 1) / psi_s - (p_s - 1) * sp.exp(-2 * u) - sp.diff(u, t_s)


def _z_residual(z, u_psi):
    z1, z2 = sp.diff(z, psi_s), sp.diff(z, psi_s, 2)
    return (
        z * z2
        + z1 * ((q_s - 1) / psi_s - z / psi_s)
        - z1**2 / 2
        + 2 * (q_s - 1) * z * (1 - z) / psi_s**2
        - 2 * p_s * z**2 * u_psi**2
        - sp.diff(z, t_s)
    )


def _oracle(spec):
    """(sympy residual in (psi, t, T, ambient), factor to the code's scaling, ambient symbol map)."""
    P = spec.params
    cone_u = sp.log(A * gam_s / B)
    al = sp.Float(REGION.alpha, 30)
    xi = gam_s * sp.exp(al * tau_s)
    rescale = sp.exp(-tau_s)
    xi_scale = sp.exp(-tau_s - 2 * al * tau_s)
    name = spec.name
    if name == "inner_cone_U":
        u = sp.log(sp.Float(P["c"], 30) * gam_s) - tau_s / 2
        return _u_residual(u, zsym), rescale, {"Z": zsym}
    if name == "inner_cone_Z":
        z = sp.Float(P["c"], 30) + 0 * psi_s
        return _z_residual(z, sp.exp(tau_s / 2) * Ug_s), rescale, {"Ug": Ug_s}
    if name in ("far_U_weak", "far_U"):
        C, m = (P["C0"], P["a"]) if name == "far_U_weak" else (P["C1p"], P["m"])
        u = cone_u + sp.Float(C, 30) * xi ** (-sp.Float(m, 30)) - tau_s / 2
        return _u_residual(u, zsym), xi_scale, {"Z": zsym}
    if name in ("far_Z", "extend_Z_minus", "extend_Z_plus"):
        D, b = (P["D0p"], P["b"]) if name == "far_Z" else (P["D"], exp_a(P510))
        z = B**2 + sp.Float(D, 30) * xi ** (-sp.Float(b, 30))
        u_psi = sp.exp(tau_s / 2) * (1 / gam_s + sp.exp(al * tau_s) * Ug_s)
        return _z_residual(z, u_psi), xi_scale, {"Ux": Ug_s}
    if name.startswith("parab_outer_U"):
        C, D, s, h = (sp.Float(P[k_], 30) for k_ in ("C", "D", "s", "h"))
        u = cone_u + (C * gam_s**s + D * gam_s ** (s - 2)) * sp.exp(h * tau_s) - tau_s / 2
        return _u_residual(u, zsym), rescale, {"Z": zsym}
    if name.startswith("parab_outer_Z"):
        C, D, s, h = (sp.Float(P[k_], 30) for k_ in ("C", "D", "s", "h"))
        z = B**2 + (C * gam_s**s + D * gam_s ** (s - 1)) * sp.exp(h * tau_s)
        u_psi = sp.exp(tau_s / 2) * (1 / gam_s + Ug_s)
        return _z_residual(z, u_psi), rescale, {"Ug": Ug_s}
    if name == "outer_sine_cone":
        K0, C = sp.Float(P["K0"], 30), sp.Float(P["C"], 30)
        K = K0 / (1 - K0 * (C**2 * p_s + q_s) * t_s)
        z = sp.Float(P["z0"], 30) - K * psi_s**2 / 2
        return _z_residual(z, C / psi_s), sp.Integer(1), {}
    return None


@pytest.mark.parametrize("spec", [s for s in _specs() if not s.name.startswith("inner_grad") and s.name != "inner_second_deriv"], ids=lambda s: s.name)
def test_generic_operator_matches_symbolic_oracle(spec):
    expr, factor, amb_syms = _oracle(spec)
    f = sp.lambdify((psi_s, t_s, Tsym, *amb_syms.values()), expr * factor, "mpmath")
    rng = np.random.default_rng(11)
    x, tau, amb = _random_points(spec, rng)
    terms = np.broadcast_arrays(*spec.generic(x, tau, **amb))
    generic = np.sum(terms, axis=0)
    scale = np.max(np.abs(terms), axis=0)
    # perturbations reach e^{-90}; cone-level terms cancel, so carry plenty of digits
    mpmath.mp.dps = 120
    Tval = mpmath.mpf(1)
    for i in range(x.size):
        if spec.name == "outer_sine_cone":
            args = (mpmath.mpf(x[i]), mpmath.mpf(tau[i]), Tval)
        else:
            ta = mpmath.mpf(tau[i])
            g = mpmath.mpf(x[i])
            if spec.labels[0] == "xi":
                g = g * mpmath.exp(-mpmath.mpf(REGION.alpha) * ta)
            args = (g * mpmath.exp(-ta / 2), Tval - mpmath.exp(-ta), Tval)
        vals = [mpmath.mpf(float(amb[k_][i])) for k_ in amb_syms]
        ref = float(f(*args, *vals))
        assert abs(ref - generic[i]) <= 1e-9 * scale[i], (i, ref, generic[i])


# ---------------------------------------------------------------------------
# membership


def _mode_history(k=4, tau=40.0):
    g = np.geomspace(1e-6, 30, 3000)
    E = math.exp(b2_lambda(P510, k) * tau)
    return [(tau, g, E * z_lambda_series(P510, k)(g), E * u_mode_series(P510, k)(g))]


def test_separable_mode_passes_B_membership():
    region = dataclasses.replace(REGION, eta=(1e-3,) * 6)
    res = membership_check(_mode_history(), region, "B", 5, 10, 4)
    assert res.passed
    for cond in res.conditions.values():
        assert cond["max_violation"] <= -1e-3 * 0.99


def test_rfc_passes_inner_barriers():
    top = REGION.Upsilon_Z * math.exp(-REGION.alpha * 40.0)
    g = np.geomspace(1e-6 * top, top, 500)
    hist = [(40.0, g, np.zeros_like(g), np.zeros_like(g))]
    res = membership_check(hist, REGION, "I", 5, 10, 4, CONSTS)
    assert res.passed
    assert res.conditions["Z<=1-B^2"]["max_violation"] == pytest.approx(-(1 - P510.B2) - 1e-6)


def test_membership_reports_violation_location():
    top = REGION.Upsilon_U * math.exp(-REGION.alpha * 40.0)
    g = np.geomspace(1e-6 * top, top, 200)
    U = np.zeros_like(g)
    U[50] = -0.25
    res = membership_check([(40.0, g, np.zeros_like(g), U)], REGION, "I", 5, 10, 4, CONSTS)
    assert not res.passed
    cond = res.conditions["U>=0"]
    assert cond["gamma"] == pytest.approx(g[50])
    assert cond["max_violation"] == pytest.approx(0.25 - 1e-6)


def test_membership_rejects_unknown_set():
    with pytest.raises(ValueError):
        membership_check(_mode_history(), REGION, "X", 5, 10, 4)


def test_region_validation():
    with pytest.raises(ValueError):
        reference_region(Upsilon_U=1e5, Upsilon_Z=1e3)
    with pytest.raises(ValueError):
        reference_region(beta=0.3, beta_bar=0.2)
