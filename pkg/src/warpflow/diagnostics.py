"""Singularity diagnostics: mode projections, blow-up fits and monitors.

Everything here is a pure function of profiles or recorded series, so the
same routines serve live monitoring during ``evolve`` and offline analysis
of saved trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.interpolate import make_interp_spline
from scipy.optimize import least_squares

from .core_geometry import (
    RescaledProfile,
    cone_perturbation_scalar,
    from_rescaled,
    rm_proxy,
    scalar_curvature_field,
    sign_changes,
)
from .fd import Stencil
from .flow_engine import PerturbationFields
from .spectral import alpha_k, b2_h, b2_lambda, exp_a, mode_coefficients, z_lambda_series


# ---------------------------------------------------------------------------
# record


@dataclass
class DiagnosticsRecord:
    """Time series collected along a run.

    ``sign_count`` is the latest Sturmian count; ``append`` refuses an
    increase, which would contradict the zero-counting principle.
    """

    times: list = field(default_factory=list)
    max_abs_rm: list = field(default_factory=list)
    max_abs_r: list = field(default_factory=list)
    sign_count: int | None = None
    grad_bounds: tuple = (0.0, 0.0)
    mode_amps: list = field(default_factory=list)
    fitted_exponents: dict = field(default_factory=dict)

    def append(self, t, rm=np.nan, r=np.nan, sign_count=None, grads=None, amps=None):
        if self.times and t <= self.times[-1]:
            raise ValueError("record times must increase")
        if sign_count is not None:
            if self.sign_count is not None and sign_count > self.sign_count:
                raise ValueError(f"sign count increased from {self.sign_count} to {sign_count}")
            self.sign_count = int(sign_count)
        if grads is not None:
            self.grad_bounds = (max(self.grad_bounds[0], grads[0]), max(self.grad_bounds[1], grads[1]))
        self.times.append(float(t))
        self.max_abs_rm.append(float(rm))
        self.max_abs_r.append(float(r))
        if amps is not None:
            self.mode_amps.append(np.asarray(amps, dtype=float))

    def arrays(self):
        return np.asarray(self.times), np.asarray(self.max_abs_rm), np.asarray(self.max_abs_r)

    def to_dict(self):
        return {
            "times": list(self.times),
            "max_abs_rm": list(self.max_abs_rm),
            "max_abs_r": list(self.max_abs_r),
            "sign_count": self.sign_count,
            "grad_bounds": list(self.grad_bounds),
            "mode_amps": [a.tolist() for a in self.mode_amps],
            "fitted_exponents": dict(self.fitted_exponents),
        }


# ---------------------------------------------------------------------------
# projections onto eigenmodes


def _log_spline(gamma, values, power):
    """Quintic spline of gamma^power * values in log gamma, returned as f(g)."""
    g = np.asarray(gamma, dtype=float)
    deg = 5 if g.size > 5 else max(1, g.size - 1)
    spl = make_interp_spline(np.log(g), g**power * values, k=deg)
    return lambda x: float(spl(math.log(x))) * x**-power


def mode_amplitudes(params, gamma, values, which, jmax, scale=None, hi=None):
    """Weighted inner products of a grid function with modes 0..jmax.

    The field is interpolated in log gamma after multiplying by gamma^e (so
    the singular U-mode behaviour at the tip is smooth).  Quadrature
    tolerances are absolute, so the field is divided by ``scale`` first
    (default: its maximum modulus) and the result multiplied back.
    """
    values = np.asarray(values, dtype=float)
    if scale is None:
        scale = float(np.max(np.abs(values)))
    if scale == 0.0:
        return np.zeros(jmax + 1)
    f = _log_spline(gamma, values / scale, exp_a(params))
    top = 48.0 * math.sqrt(params.B2) if hi is None else hi
    top = min(top, float(gamma[-1]))
    return scale * mode_coefficients(params, f, which, jmax, support=(float(gamma[0]), top))


def projection_vector(fields: PerturbationFields, params, k, K, subtract_mode=True, use_cutoff=True, scale=None):
    """Coefficient vector of the localised perturbation at ``fields.tau``.

    Entries 0..k-1 project chi * Utilde onto the U-modes below k; entries
    k..k+K project chi * Ztilde - e^{B^2 lambda_k tau} Ztilde_lambda_k onto
    the Z-modes 0..K.  With ``subtract_mode=False`` the map is linear in the
    fields.
    """
    g = fields.gamma
    chi = fields.cutoff()[0] if use_cutoff else np.ones_like(g)
    E = math.exp(b2_lambda(params, k) * fields.tau)
    sc = E if scale is None else scale
    U = chi * fields.Utilde
    Z = chi * fields.Ztilde
    if subtract_mode:
        Z = Z - E * z_lambda_series(params, k)(g)
    pu = mode_amplitudes(params, g, U, "U", max(k - 1, 0), scale=sc)[:k]
    pz = mode_amplitudes(params, g, Z, "Z", K, scale=sc)[: K + 1]
    return np.concatenate([pu, pz])


@dataclass
class DecayFit:
    modes: list
    rates: np.ndarray
    expected: np.ndarray
    amplitudes: np.ndarray

    @property
    def relative_error(self):
        return np.abs(self.rates / self.expected - 1.0)


def mode_decay_fit(times, states, params, modes, which="U", noise=1e-300):
    """Fit amplitude(tau) = a e^{rate tau} for each listed mode.

    ``states`` are PerturbationFields; ``modes`` are mode indices of the
    chosen family.  Amplitudes at or below ``noise`` are reported with a nan
    rate.
    """
    modes = list(modes)
    jmax = max(modes)
    amps = np.array([mode_amplitudes(params, s.gamma, s.Utilde if which == "U" else s.Ztilde, which, jmax)[modes] for s in states])
    t = np.asarray(times, dtype=float)
    rates = np.full(len(modes), np.nan)
    for i in range(len(modes)):
        a = np.abs(amps[:, i])
        if np.all(a > noise):
            rates[i] = np.polyfit(t, np.log(a), 1)[0]
    rate_of = (lambda j: b2_lambda(params, j)) if which == "U" else (lambda j: b2_h(params, j))
    expected = np.array([rate_of(j) for j in modes])
    return DecayFit(modes, rates, expected, amps)


def leakage(initial, final, params, k, dtau, jmax=8, scale=None):
    """Largest projection of final - e^{B^2 lambda_k dtau} initial onto other modes.

    ``initial`` and ``final`` are PerturbationFields of a linear run started
    from a pure k-mode.  The result is relative to ``scale`` (default: the
    initial U amplitude on mode k).
    """
    g = initial.gamma
    decay = math.exp(b2_lambda(params, k) * dtau)
    du = final.Utilde - decay * initial.Utilde
    dz = final.Ztilde - decay * initial.Ztilde
    if scale is None:
        scale = abs(mode_amplitudes(params, g, initial.Utilde, "U", k)[k])
    ref = float(np.max(np.abs(initial.Utilde)))
    pu = mode_amplitudes(params, g, du, "U", jmax, scale=ref)
    pz = mode_amplitudes(params, g, dz, "Z", jmax, scale=ref)
    others = np.concatenate([np.delete(pu, k), pz])
    return float(np.max(np.abs(others)) / scale)


# ---------------------------------------------------------------------------
# blow-up rate


@dataclass
class BlowupFit:
    T: float
    exponent: float
    stderr: float
    kind: str
    ratio_growth: float

    def to_dict(self):
        return {"T_est": self.T, "exponent": self.exponent, "stderr": self.stderr, "type": self.kind, "ratio_growth": self.ratio_growth}


def _richardson_T(t, rm):
    """Extinction time from linear extrapolation of rm^{-1/2} over the last samples."""
    y = rm ** -0.5
    slope = (y[-1] - y[-2]) / (t[-1] - t[-2])
    if slope >= 0:
        return t[-1] + (t[-1] - t[0])
    return t[-1] - y[-1] / slope


def fit_blowup(times, rm, window=None):
    """Fit rm = C (T - t)^{-exponent} by least squares in log space.

    Returns a :class:`BlowupFit`.  ``kind`` is "type I" when the exponent is
    consistent with 1 (so (T - t) rm stays bounded over the window), else
    "type II".
    """
    t = np.asarray(times, dtype=float)
    rm = np.asarray(rm, dtype=float)
    if window is not None:
        m = (t >= window[0]) & (t <= window[1])
        t, rm = t[m], rm[m]
    if t.size < 4:
        raise ValueError("need at least four samples")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must increase")
    if np.any(~np.isfinite(rm)) or np.any(rm <= 0) or np.any(np.diff(rm) <= 0):
        raise ValueError("no blow-up trend")
    t_last, span = t[-1], t[-1] - t[0]
    T0 = _richardson_T(t, rm)
    dT0 = max(T0 - t_last, 1e-12 * span)

    def resid(x):
        logC, expo, theta = x
        left = np.maximum((t_last - t) + math.exp(theta), np.finfo(float).tiny)
        return logC - expo * np.log(left) - np.log(rm)

    best = None
    for shift in (0.0, -2.0, 2.0, -5.0, 5.0):
        th0 = math.log(dT0) + shift
        lt = np.log(t_last + math.exp(th0) - t)
        expo0, logC0 = np.polyfit(-lt, np.log(rm), 1)
        sol = least_squares(resid, [logC0, expo0, th0], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=4000)
        if best is None or sol.cost < best.cost:
            best = sol
    logC, expo, theta = best.x
    J = best.jac
    dof = max(t.size - 3, 1)
    s2 = 2 * best.cost / dof
    try:
        cov = np.linalg.inv(J.T @ J) * s2
        stderr = float(math.sqrt(max(cov[1, 1], 0.0)))
    except np.linalg.LinAlgError:
        stderr = float("inf")
    T = t_last + math.exp(theta)
    ratio = (T - t) * rm
    growth = float(ratio[-1] / ratio[0])
    kind = "type I" if expo <= 1.0 + max(3 * stderr, 0.02) else "type II"
    return BlowupFit(float(T), float(expo), stderr, kind, growth)


def predicted_exponent(params, k):
    """Curvature blow-up exponent 1 + 2 alpha_k expected for mode k."""
    return 1.0 + 2.0 * alpha_k(params, k)


def typeI_scalar_monitor(times, max_abs_r, T, slope_tol=0.1):
    """Series (T - t) max|R| with its supremum and a divergence flag.

    The flag is raised when (T - t) max|R| grows like a positive power of
    1 / (T - t) (log-log slope above ``slope_tol``).
    """
    t = np.asarray(times, dtype=float)
    r = np.abs(np.asarray(max_abs_r, dtype=float))
    left = T - t
    if np.any(left <= 0):
        raise ValueError("all samples must precede T")
    series = left * r
    slope = 0.0
    if t.size >= 2 and np.all(series > 0):
        slope = float(np.polyfit(-np.log(left), np.log(series), 1)[0])
    return {"series": series, "sup": float(np.max(series)), "slope": slope, "diverging": bool(slope > slope_tol)}


# ---------------------------------------------------------------------------
# curvature at the tip


@dataclass
class PoleCurvature:
    lower: float
    actual: float
    gamma_star: float
    Utilde_star: float

    @property
    def holds(self):
        return self.actual >= self.lower


def pole_curvature_lower(profile: RescaledProfile, params, k, Upsilon_U):
    """Lower bound for the curvature of the S^p factor at the pole.

    lower = e^tau (B^2 / A^2) Upsilon_U^{-2} e^{2 alpha_k tau} e^{-2 Utilde(gamma*)}
    with gamma* = Upsilon_U e^{-alpha_k tau}; ``actual`` is
    (1 - phi_s^2) / phi^2 at the first grid node (the pole side).
    """
    tau = profile.tau
    al = alpha_k(params, k)
    g_star = Upsilon_U * math.exp(-al * tau)
    g = profile.gamma
    if not g[0] <= g_star <= g[-1]:
        raise ValueError("gamma* lies outside the profile grid")
    Ut = profile.Utilde(params)
    u_star = float(np.interp(math.log(g_star), np.log(g), Ut))
    lower = math.exp(tau + 2 * al * tau - 2 * u_star) * params.B2 / (params.A2 * Upsilon_U**2)
    U, Z = profile.U, profile.Z
    U1 = Stencil(g).d1(U)
    phi_s = math.exp(U[0]) * U1[0] * math.sqrt(max(Z[0], 0.0))
    actual = math.exp(tau - 2 * U[0]) * (1.0 - phi_s**2)
    return PoleCurvature(lower, actual, g_star, u_star)


# ---------------------------------------------------------------------------
# scalar curvature of the overlap ansatz


def coupled_d(params, c, a=None):
    """d with -d (a-2)(n+a-1) = -4 p B^2 a c, for the ansatz exponent a."""
    a = -exp_a(params) if a is None else a
    return 4 * params.p * params.B2 * a * c / ((a - 2) * (params.n + a - 1))


def ansatz_scalar(params, psi, c, a=None):
    """Exact scalar curvature of z = B^2 + d psi^a, u = log(A psi / B) + c psi^a."""
    a = -exp_a(params) if a is None else a
    psi = np.asarray(psi, dtype=float)
    d = coupled_d(params, c, a)
    dz = d * psi**a
    du = c * psi**a
    return cone_perturbation_scalar(params, psi, dz, a * dz / psi, du, a * du / psi, a * (a - 1) * du / psi**2)


def taylor_recombination(c, psi):
    """Both sides of the cubic truncation identity, evaluated in floats and exactly.

    Returns (lhs, rhs, exact, size) where ``exact`` is True when the
    rational coefficients of the two polynomials in (c, psi^3) agree and
    ``size`` is the largest single term (the scale of rounding errors).
    """
    # coefficients of c^3, c^2 psi^3, c psi^6 after expanding 3 psi^9 (-2x + 2x^2 - 4x^3/3), x = c / psi^3
    lhs_coef = (Fraction(-36) + 3 * Fraction(-4, 3), Fraction(4) + 3 * Fraction(2), Fraction(6) + 3 * Fraction(-2))
    exact = lhs_coef == (Fraction(-40), Fraction(10), Fraction(0))
    c, psi = np.broadcast_arrays(np.asarray(c, dtype=float), np.asarray(psi, dtype=float))
    x = c / psi**3
    terms = np.array([-36 * c**3, 4 * c**2 * psi**3, 6 * c * psi**6, -6 * x * psi**9, 6 * x**2 * psi**9, -4 * x**3 * psi**9])
    lhs = terms.sum(axis=0)
    rhs = -40 * c**3 + 10 * c**2 * psi**3
    return lhs, rhs, exact, np.max(np.abs(terms), axis=0)


def scalar_overlap_check(params, ctilde, upsilons, tau, k=4):
    """Compare the exact ansatz curvature with the closed p = q = 5 forms.

    Returns a dict of columns over ``upsilons``: x = ctilde Upsilon^{-3},
    the exact R, the psi-form and the leading expansion, their ratios and
    (T - t) R = e^{-tau} R.
    """
    if (params.p, params.q) != (5, 5):
        raise ValueError("formula unavailable; exact path only")
    ups = np.asarray(upsilons, dtype=float)
    al = alpha_k(params, k)
    s = math.exp(-(al * tau + tau / 2))
    c = ctilde * s**3
    psi = ups * s
    x = ctilde * ups**-3.0
    exact = ansatz_scalar(params, psi, c)
    psi_form = 20.0 / (3.0 * psi**11) * (-36 * c**3 + 4 * c**2 * psi**3 + 6 * c * psi**6 + 3 * np.expm1(-2 * c / psi**3) * psi**9)
    expansion = 20.0 / (3.0 * ups**2) * (-40 * ctilde**3 * ups**-9.0 + 10 * ctilde**2 * ups**-6.0) * math.exp(2 * al * tau + tau)
    lhs, rhs, exact_poly, size = taylor_recombination(c, psi)
    return {
        "Upsilon": ups,
        "x": x,
        "R_exact": exact,
        "R_psi_form": psi_form,
        "R_expansion": expansion,
        "ratio_exact": exact / expansion,
        "ratio_psi_form": psi_form / expansion,
        "typeI_ratio": math.exp(-tau) * exact,
        "taylor_residual": np.abs(lhs - rhs) / size,
        "taylor_exact": exact_poly,
    }


# ---------------------------------------------------------------------------
# maximum-principle monitors


def psi_s_half(profile: RescaledProfile):
    """|psi_s| = sqrt(Z) on the computed half of a reflection-symmetric metric."""
    return np.sqrt(np.clip(profile.Z, 0.0, None))


def sturm_count(profile: RescaledProfile, floor=1e-10):
    """Zeros of psi_s on the reflection-symmetric manifold built from a half.

    psi_s is sqrt(Z) on the computed half and -sqrt(Z) on its mirror image,
    so the equator contributes one forced sign change.
    """
    half = psi_s_half(profile)
    full = np.concatenate([half, -half[::-1]])
    return sign_changes(full, floor=floor)


def gradient_bounds(profile: RescaledProfile):
    """(max |phi_s|, max |psi_s|); both are invariant under parabolic rescaling."""
    g = profile.gamma
    U1 = Stencil(g).d1(profile.U)
    root = psi_s_half(profile)
    phi_s = np.exp(profile.U) * U1 * root
    return float(np.max(np.abs(phi_s))), float(np.max(root))


def phi_squared(profile: RescaledProfile):
    """phi^2 in unrescaled units, e^{2U - tau}."""
    return np.exp(2 * profile.U - profile.tau)


def cylinder_envelope(params, phi2_initial, phi2_now, dt):
    """Check min phi0^2 - 2(p-1) dt <= phi^2 <= max phi0^2.

    Returns (holds, lower_margin, upper_margin) with margins >= 0 when the
    bound holds.
    """
    lo = float(np.min(phi2_initial)) - 2.0 * (params.p - 1) * dt
    hi = float(np.max(phi2_initial))
    lower_margin = float(np.min(phi2_now)) - lo
    upper_margin = hi - float(np.max(phi2_now))
    return lower_margin >= 0 and upper_margin >= 0, lower_margin, upper_margin


def rm_and_r(profile: RescaledProfile, params):
    """max |Rm| proxy and max |R| in unrescaled units for a rescaled profile."""
    side = from_rescaled(profile)
    rm = float(np.max(rm_proxy(side)))
    r = float(np.max(np.abs(scalar_curvature_field(side, params))))
    return rm, r
