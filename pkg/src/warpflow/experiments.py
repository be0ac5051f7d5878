"""Reproducible runs shared by the command line and the acceptance tests.

Each function returns plain numbers (and the raw objects where useful) so
callers can decide what to print, store or assert.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .core_geometry import RescaledProfile, cone_constants, sine_cone_lambda2, special_solution
from .diagnostics import (
    DiagnosticsRecord,
    cylinder_envelope,
    gradient_bounds,
    leakage,
    mode_decay_fit,
    phi_squared,
    rm_and_r,
    sturm_count,
)
from .fd import Stencil
from .flow_engine import Boundary, PerturbationFields, StepperConfig, evolve, rhs_rescaled, rhs_sideways
from .initial_data import ModeCoefficients, assemble, fixture_region
from .spectral import (
    b2_h,
    b2_lambda,
    eigenfunction_u,
    eigenfunction_z,
    exp_a,
    u_mode_series,
    z_lambda_series,
)


def rfc_stationarity(p=5, q=5, n_points=512, window=(1.0, 2.0)):
    """Max interior residual of both charts on the exact cone, and the wall time.

    The same uniform grid serves as psi and gamma; the residual is pure
    truncation error of the stencil on log psi.
    """
    params = cone_constants(p, q)
    t0 = time.perf_counter()
    g = np.linspace(window[0], window[1], n_points)
    side = special_solution("rfc", params, psi=g)
    zt, ut = rhs_sideways(side, params)
    resc = RescaledProfile(g, np.full_like(g, params.B2), np.log(params.A * g / params.B), 0.0)
    Zt, Ut = rhs_rescaled(resc, params)
    res = max(np.max(np.abs(a[2:-2])) for a in (zt, ut, Zt, Ut))
    return float(res), time.perf_counter() - t0


def sine_cone_tracking(p=5, q=5, lam0=1.0, hs=(1 / 128, 1 / 256, 1 / 512), frac=0.4, window=(0.1, 0.5)):
    """Evolve the sine cone in the sideways chart with exact Dirichlet ends.

    Returns (errors, observed orders, wall time); errors are max relative
    z-errors at t = frac lam0^2 / (2 (p + q)).
    """
    params = cone_constants(p, q)
    t_end = frac * lam0**2 / (2 * (p + q))

    def ends(x):
        return lambda t: (params.B2 - x**2 / sine_cone_lambda2(params, lam0, t), math.log(params.A * x / params.B))

    t0 = time.perf_counter()
    errs = []
    for h in hs:
        psi = np.arange(window[0], window[1] + h / 2, h)
        prof = special_solution("sine_cone", params, psi=psi, lam0=lam0)
        cfg = StepperConfig(dt_init=1.0, cfl_safety=0.9)
        tr = evolve(prof, params, cfg, t_end, left=Boundary("dirichlet", ends(psi[0])), right=Boundary("dirichlet", ends(psi[-1])))
        exact = special_solution("sine_cone", params, t=t_end, psi=psi, lam0=lam0)
        errs.append(float(np.max(np.abs(tr.final.z - exact.z) / np.abs(exact.z))))
    orders = [math.log(errs[i] / errs[i + 1], hs[i] / hs[i + 1]) for i in range(len(hs) - 1)]
    return errs, orders, time.perf_counter() - t0


def eigen_residuals(params, kmax=8, lo=0.2, hi=8.0, n_points=4001):
    """Relative FD residuals of the U- and Z-eigenproblems on [lo, hi].

    A geometric grid resolves the gamma^{-e} growth of the U-modes near lo.
    """
    g = np.geomspace(lo, hi, n_points)
    st = Stencil(g)
    n, B2 = params.n, params.B2
    out = {"U": [], "Z": []}
    for k in range(kmax + 1):
        u = eigenfunction_u(params, k, g)
        du = st.d2(u) + (n / g - g / (2 * B2)) * st.d1(u) + 2 * (n - 1) / g**2 * u
        z = eigenfunction_z(params, k, g)
        dz = st.d2(z) + ((n - 2) / g - g / (2 * B2)) * st.d1(z) - 2 * (n - 1) / g**2 * z
        ru = B2 * du - b2_lambda(params, k) * u
        rz = B2 * dz - b2_h(params, k) * z
        out["U"].append(float(np.max(np.abs(ru[2:-2])) / np.max(np.abs(B2 * du[2:-2]))))
        out["Z"].append(float(np.max(np.abs(rz[2:-2])) / np.max(np.abs(B2 * dz[2:-2]))))
    return out


def linear_decay(p=5, q=5, k=4, eps=1e-4, dtau=2.0, gamma=(1e-3, 14.0), n_points=4000, dt=1e-3, n_checkpoints=10):
    """Evolve eps (Ztilde_lambda_k, Utilde_lambda_k) with the linear system.

    Robin ends impose the mode's power laws: gamma^{-e} at the tip and
    gamma^{2k-e} at large gamma.  Returns (fitted rate, B^2 lambda_k,
    leakage, wall time).
    """
    params = cone_constants(p, q)
    e = exp_a(params)
    g = np.geomspace(gamma[0], gamma[1], n_points)
    t0 = time.perf_counter()
    Z0 = eps * z_lambda_series(params, k)(g)
    U0 = eps * u_mode_series(params, k)(g)
    start = PerturbationFields(g, Z0, U0, 0.0)
    cfg = StepperConfig(dt_init=dt, scheme="imex")
    ck = list(np.linspace(0.0, dtau, n_checkpoints + 1)[1:])
    sk = 2 * k - e
    tr = evolve(start, params, cfg, dtau, checkpoints=ck, left=Boundary("robin", powers=(-e, -e)), right=Boundary("robin", powers=(sk, sk)))
    fit = mode_decay_fit(tr.times, tr.states, params, [k], "U")
    leak = leakage(start, tr.final, params, k, dtau)
    return float(fit.rates[0]), b2_lambda(params, k), leak, time.perf_counter() - t0


def fixture_flow(p=5, q=5, k=4, tau_span=3.0, gamma_left=1e-6, stride=4, n_checkpoints=12, coeffs=None):
    """Nonlinear flow of the initial-data fixture with monitors.

    The tip (gamma < gamma_left) is left out: it relaxes on tau-scales of
    order gamma_tip^2, far below double precision in tau.  The left end uses
    the mode's gamma^{-e} Robin closure and the right end the exact sine cone.
    The clock runs from 0 to shield the tiny early steps from the size of tau0.
    """
    params = cone_constants(p, q)
    region = fixture_region(p, q, k)
    coeffs = ModeCoefficients.zero(params, k) if coeffs is None else coeffs
    data = assemble(coeffs, params, region)
    tau0 = data.tau0
    g = data.gamma
    keep = np.nonzero((g >= gamma_left) & (g <= 2.5 * data.outer.Gamma))[0][::stride]
    gg = g[keep]
    lam = data.constants["lambda"]
    gb = gg[-1]
    e = exp_a(params)
    start = PerturbationFields(gg, data.Ztilde[keep], data.Utilde[keep], 0.0)
    cfg = StepperConfig(scheme="bdf", dt_init=1e-20, tol_newton=1e-6, atol=1e-60)
    ck = list(np.linspace(0.0, tau_span, n_checkpoints + 1)[1:])
    t0 = time.perf_counter()
    tr = evolve(
        start,
        params,
        cfg,
        tau_span,
        checkpoints=ck,
        left=Boundary("robin", powers=(-e, -e)),
        right=Boundary("dirichlet", lambda s: (-(gb**2) * math.exp(-tau0 - s) / lam**2, 0.0)),
        include_err=True,
    )
    wall = time.perf_counter() - t0
    record = DiagnosticsRecord()
    profiles = []
    for s, st in zip(tr.times, tr.states):
        prof = RescaledProfile.from_perturbation(params, st.gamma, st.Ztilde, st.Utilde, tau0 + s, data.T)
        profiles.append(prof)
        rm, r = rm_and_r(prof, params)
        record.append(tau0 + s, rm, r, sturm_count(prof), gradient_bounds(prof))
    phi0 = phi_squared(profiles[0])
    grads0 = gradient_bounds(profiles[0])
    envelope = []
    for prof in profiles:
        dt = math.exp(-tau0) - math.exp(-prof.tau)
        envelope.append(cylinder_envelope(params, phi0, phi_squared(prof), dt))
    return {
        "status": tr.status,
        "record": record,
        "profiles": profiles,
        "sturm_counts": [sturm_count(pr) for pr in profiles],
        "initial_grads": grads0,
        "grads": [gradient_bounds(pr) for pr in profiles],
        "envelope": envelope,
        "wall": wall,
        "data": data,
    }


def oracle_suite():
    """Exact-solution regression checks: list of (name, passed, value)."""
    out = []
    res, wall = rfc_stationarity()
    out.append(("rfc_stationarity", res < 1e-8 and wall < 1.0, res))
    errs, orders, wall = sine_cone_tracking()
    out.append(("sine_cone_tracking", errs[-1] < 1e-4 and min(orders) >= 2.0 and wall < 30.0, errs[-1]))
    params = cone_constants(5, 5)
    er = eigen_residuals(params)
    worst = max(max(er["U"]), max(er["Z"]))
    out.append(("eigen_residuals", worst < 1e-6, worst))
    return out
