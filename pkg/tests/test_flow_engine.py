import math

import numpy as np
import pytest

from warpflow.core_geometry import (
    RescaledProfile,
    SidewaysProfile,
    cone_constants,
    einstein_product,
    rescaled_sine_cone,
    special_solution,
    warped_sine_cone,
)
from warpflow.flow_engine import (
    Boundary,
    PerturbationFields,
    StepperConfig,
    commutator_terms,
    cutoff,
    err_terms,
    evolve,
    neumann,
    rhs_arclength,
    rhs_perturbation,
    rhs_rescaled,
    rhs_sideways,
    smoothstep,
    system_for,
)
from warpflow.spectral import b2_lambda, u_mode_series, z_lambda_series


P55 = cone_constants(5, 5)


def test_rfc_sideways_rhs_vanishes():
    prof = special_solution("rfc", P55, psi=np.linspace(1.0, 2.0, 512))
    zt, ut = rhs_sideways(prof, P55)
    assert np.max(np.abs(zt[2:-2])) < 1e-8
    assert np.max(np.abs(ut[2:-2])) < 1e-8


def test_sine_cone_sideways_rhs_matches_closed_form():
    lam0 = 1.0
    psi = np.linspace(0.2, 0.6, 801)
    prof = special_solution("sine_cone", P55, psi=psi, lam0=lam0)
    zt, ut = rhs_sideways(prof, P55)
    exact = -2 * (P55.p + P55.q) * psi**2 / lam0**4
    assert np.max(np.abs(zt - exact)[2:-2]) < 1e-7
    assert np.max(np.abs(ut[2:-2])) < 1e-7


def test_slab_reaction_term_only():
    psi = np.linspace(0.5, 1.0, 50)
    u0 = 0.3
    prof = SidewaysProfile(psi, np.ones_like(psi), np.full_like(psi, u0))
    zt, ut = rhs_sideways(prof, P55)
    assert np.allclose(ut, -(P55.p - 1) * math.exp(-2 * u0), atol=1e-10)
    assert np.allclose(zt, 0.0, atol=1e-10)


def test_sideways_rhs_rejects_nonpositive_z():
    prof = SidewaysProfile(np.linspace(0.1, 1, 10), np.zeros(10), np.zeros(10))
    with pytest.raises(ValueError):
        rhs_sideways(prof, P55)


def test_rescaled_rhs_cone_and_sine_cone_static():
    g = np.linspace(1.0, 2.0, 512)
    cone = RescaledProfile(g, np.full_like(g, P55.B2), np.log(P55.A * g / P55.B), 0.0)
    Zt, Ut = rhs_rescaled(cone, P55)
    assert max(np.max(np.abs(Zt[2:-2])), np.max(np.abs(Ut[2:-2]))) < 1e-8
    sc = rescaled_sine_cone(P55, np.linspace(1.0, 2.0, 512))
    Zt, Ut = rhs_rescaled(sc, P55)
    assert np.max(np.abs(Zt[2:-2])) < 1e-8
    assert np.max(np.abs(Ut[2:-2])) < 1e-8


def test_rescaled_drift_only_follows_characteristics():
    g = np.linspace(0.5, 3.0, 300)
    Z0 = lambda x: np.exp(-x**2)  # noqa: E731
    prof = RescaledProfile(g, Z0(g), np.sin(g), 0.0)
    Zt, Ut = rhs_rescaled(prof, P55, terms="drift")
    # Z(g, tau) = Z0(g e^{-tau/2}) and U(g, tau) = U0(g e^{-tau/2}) + tau/2
    assert np.allclose(Zt[2:-2], (-0.5 * g * (-2 * g) * np.exp(-g**2))[2:-2], atol=1e-6)
    assert np.allclose(Ut[2:-2], (-0.5 * g * np.cos(g) + 0.5)[2:-2], atol=1e-6)
    with pytest.raises(ValueError):
        rhs_rescaled(prof, P55, terms="half")


def test_arclength_rhs_sine_cone():
    x = np.linspace(0.3, 1.2, 401)
    prof = warped_sine_cone(P55, x)
    chi_t, phi_t, psi_t = rhs_arclength(prof, P55)
    n = P55.p + P55.q
    # g(t) = (lambda/lam0)^2 g(0) and d(lambda)/dt = -n / lambda
    assert np.allclose(chi_t[2:-2], -n, rtol=1e-6)
    assert np.allclose(phi_t[2:-2], -n * P55.A * np.sin(x[2:-2]), rtol=1e-6)
    assert np.allclose(psi_t[2:-2], -n * P55.B * np.sin(x[2:-2]), rtol=1e-6)


def test_arclength_rhs_einstein_product():
    params = cone_constants(3, 4)
    prof = einstein_product(params, np.linspace(-1, 1, 401))
    chi_t, phi_t, psi_t = rhs_arclength(prof, params)
    c = params.q
    assert np.allclose(chi_t, -c * prof.chi, rtol=1e-5)
    assert np.allclose(phi_t, -c * prof.phi, rtol=1e-5)
    assert np.allclose(psi_t[1:-1], -c * prof.psi[1:-1], rtol=1e-4, atol=1e-8)


def test_arclength_rhs_rejects_degenerate_metric():
    prof = warped_sine_cone(P55, np.linspace(0.3, 1.2, 20))
    prof.phi[5] = -1.0
    with pytest.raises(ValueError):
        rhs_arclength(prof, P55)


def test_perturbation_origin_is_fixed():
    g = np.geomspace(0.1, 10, 200)
    f = PerturbationFields(g, np.zeros_like(g), np.zeros_like(g))
    zt, ut = rhs_perturbation(f, P55, include_err=True)
    assert np.all(zt == 0) and np.all(ut == 0)
    ez, eu = err_terms(g, f.Ztilde, f.Utilde, P55)
    assert np.all(ez == 0) and np.all(eu == 0)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_perturbation_eigen_relation(k):
    g = np.geomspace(0.3, 6.0, 3000)
    eps = 1e-3
    Z = eps * z_lambda_series(P55, k)(g)
    U = eps * u_mode_series(P55, k)(g)
    zt, ut = rhs_perturbation(PerturbationFields(g, Z, U), P55)
    rate = b2_lambda(P55, k)
    sl = slice(3, -3)
    assert np.max(np.abs(ut - rate * U)[sl]) < 1e-6 * np.max(np.abs(U))
    assert np.max(np.abs(zt - rate * Z)[sl]) < 1e-6 * np.max(np.abs(Z))


def test_err_u_second_order_term():
    g = np.linspace(1.0, 2.0, 100)
    Ut = np.full_like(g, 1e-3)
    _, eu = err_terms(g, np.zeros_like(g), Ut, P55)
    leading = -2 * (P55.q - 1) * Ut**2 / g**2
    assert np.allclose(eu, leading, rtol=2e-3)


def test_linear_plus_err_equals_full_rescaled_rhs():
    g = np.geomspace(0.5, 4.0, 600)
    Zt = 0.05 * np.exp(-g)
    Ut = 0.03 * np.sin(g)
    zt, ut = rhs_perturbation(PerturbationFields(g, Zt, Ut), P55, include_err=True)
    full = RescaledProfile.from_perturbation(P55, g, Zt, Ut, 0.0)
    Zf, Uf = rhs_rescaled(full, P55)
    # the two paths differ only by stencil error on log(A g / B)
    assert np.max(np.abs(zt - Zf)[3:-3]) < 1e-7 * np.max(np.abs(Zf))
    assert np.max(np.abs(ut - Uf)[3:-3]) < 1e-7 * np.max(np.abs(Uf))


def test_smoothstep_and_cutoff():
    s, s1, s2 = smoothstep(np.array([-1.0, 0.0, 0.5, 1.0, 2.0]))
    assert np.allclose(s, [0, 0, 0.5, 1, 1])
    assert s1[2] > 0
    val, d1, d2, dt = cutoff(np.array([0.5, 1.0 + 0.5, 3.0]), 0.0, 1.0, 0.25)
    assert val[0] == 1.0 and val[2] == 0.0 and 0 < val[1] < 1


def test_commutator_vanishes_off_collar():
    g = np.geomspace(0.1, 8.0, 500)
    f = PerturbationFields(g, np.sin(g), np.cos(g), tau=0.0, M=1.0, beta=0.25)
    com = commutator_terms(f, P55)
    off = (g < 1.0) | (g > 2.0)
    for key in ("DZ", "DU", "N", "tau_Z", "tau_U", "total_Z", "total_U"):
        assert np.all(com[key][off] == 0.0)


def test_commutator_constant_u_in_collar():
    g = np.linspace(0.5, 3.0, 2001)
    u0 = 0.7
    f = PerturbationFields(g, np.zeros_like(g), np.full_like(g, u0), tau=0.0, M=1.0, beta=0.25)
    c, c1, c2, _ = f.cutoff()
    com = commutator_terms(f, P55)
    expected = -u0 * (c1 * (P55.n / g - g / (2 * P55.B2)) + c2)
    assert np.allclose(com["DU"], expected, atol=1e-9)


def test_stepper_config_errors():
    with pytest.raises(ValueError):
        StepperConfig(cfl_safety=1.5)
    with pytest.raises(ValueError):
        StepperConfig(dt_init=0.0)
    with pytest.raises(ValueError):
        StepperConfig(scheme="euler")
    with pytest.raises(ValueError):
        Boundary("periodic")
    with pytest.raises(ValueError):
        Boundary("dirichlet", values=1.0)


def test_system_for_unknown_type():
    with pytest.raises(TypeError):
        system_for(object(), P55)


def test_evolve_rejects_backwards_time():
    prof = special_solution("rfc", P55, t=1.0, psi=np.linspace(1, 2, 20))
    with pytest.raises(ValueError):
        evolve(prof, P55, StepperConfig(), 0.5)


def test_rfc_window_stays_stationary():
    psi = np.linspace(1.0, 2.0, 128)
    prof = special_solution("rfc", P55, psi=psi)
    ends = [Boundary("dirichlet", lambda t, x=x: (P55.B2, math.log(P55.A * x / P55.B))) for x in (psi[0], psi[-1])]
    tr = evolve(prof, P55, StepperConfig(dt_init=1e-3, cfl_safety=0.9), 0.05, left=ends[0], right=ends[1])
    assert tr.status == "ok"
    assert np.max(np.abs(tr.final.z - prof.z)) < 1e-8
    assert np.max(np.abs(tr.final.u - prof.u)) < 1e-8


def test_cylinder_phi_squared_slope():
    psi = np.linspace(0.5, 1.0, 30)
    prof = special_solution("cylinder", P55, psi=psi)
    tr = evolve(prof, P55, StepperConfig(dt_init=1e-3, cfl_safety=0.9), 0.1, left=neumann(), right=neumann())
    phi2 = np.exp(2 * tr.final.u)
    assert np.allclose(phi2, 1 - 2 * (P55.p - 1) * 0.1, rtol=1e-9)


def test_imex_linear_mode_decays_at_eigenrate():
    k = 3
    g = np.geomspace(1e-3, 14.0, 1500)
    e = 3.0
    start = PerturbationFields(g, 1e-4 * z_lambda_series(P55, k)(g), 1e-4 * u_mode_series(P55, k)(g))
    sk = 2 * k - e
    tr = evolve(
        start,
        P55,
        StepperConfig(dt_init=1e-3, scheme="imex"),
        0.5,
        left=Boundary("robin", powers=(-e, -e)),
        right=Boundary("robin", powers=(sk, sk)),
    )
    i = int(np.searchsorted(g, 1.0))
    ratio = tr.final.Utilde[i] / start.Utilde[i]
    assert ratio == pytest.approx(math.exp(b2_lambda(P55, k) * 0.5), rel=1e-3)
    assert tr.manifest("imex")["steps"] == 500
