"""Numerical sub/supersolution checks for the barrier arguments.

Every check evaluates a closed-form candidate under the parabolic operator
of the relevant equation, on a sampled spacetime region, and reports
whether the residual has the required sign.  A *sub*solution needs
``residual >= 0`` and a *super*solution ``residual <= 0``, where the
residual is (right-hand side of the evolution equation) minus (time
derivative of the candidate).

When a check assumes bounds on the ambient solution (for example
``0 < Z <= 1``) rather than a specific profile, the residual is taken at
the adversarial value of each ambient quantity.  Ambient quantities that
enter linearly are tried at both end points; those that enter
quadratically are also tried at the vertex of the parabola.

Coordinates used below:

* ``gamma``: parabolically rescaled sideways coordinate, drift ``-gamma/2 d``.
* ``xi = gamma e^{alpha tau}``: inner coordinate.  After the time change
  ``dr = e^{2 alpha tau} d tau`` the drift becomes
  ``-e^{-2 alpha tau} (alpha + 1/2) xi d``.
* ``psi``: unrescaled sideways coordinate (outer sine-cone barrier).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .core_geometry import cone_constants, from_rescaled, rm_proxy
from .fd import Stencil
from .spectral import alpha_k, b2_lambda, exp_a, u_mode_series, z_lambda_series

SIGN_TOL = 1e-12

OPERATORS = (
    "inner_U",
    "inner_Z",
    "inner_grad_U",
    "xi_U",
    "xi_Z",
    "parab_outer_U",
    "parab_outer_Z",
    "outer_z",
)


# ---------------------------------------------------------------------------
# region and constants


@dataclass(frozen=True)
class RegionParams:
    """Scales and exponents describing the inner, parabolic and outer regions."""

    Upsilon_U: float
    Upsilon_Z: float
    Upsilon_bar: float
    M: float
    alpha: float
    beta: float
    beta_bar: float
    tau0: float
    tau1: float
    eta: tuple = (1e-3,) * 6
    D_consts: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (1.0 < self.Upsilon_bar <= self.Upsilon_U <= self.Upsilon_Z):
            raise ValueError("need 1 < Upsilon_bar <= Upsilon_U <= Upsilon_Z")
        if not (0.0 < self.beta < self.beta_bar < 0.5):
            raise ValueError("need 0 < beta < beta_bar < 1/2")
        if not self.tau1 > self.tau0:
            raise ValueError("need tau1 > tau0")
        if self.M <= 0 or self.alpha <= 0:
            raise ValueError("M and alpha must be positive")
        if len(self.eta) != 6 or any(x < 0 for x in self.eta):
            raise ValueError("eta must be six non-negative tolerances")

    def D(self, name, default):
        return self.D_consts.get(name, default)


def reference_region(p=5, q=10, k=4, Upsilon_U=1e3, Upsilon_Z=1e5, tau0=40.0, tau1=None, **kw):
    """Reference region used by the barrier suite (tau1 defaults to tau0 + 1)."""
    params = cone_constants(p, q)
    al = alpha_k(params, k)
    s = -2 * b2_lambda(params, k)
    beta_low = 0.5 * s / (s + 1)
    opts = dict(
        Upsilon_bar=min(50.0, Upsilon_U),
        M=1.0,
        beta=0.5 * beta_low,
        beta_bar=0.5 * (beta_low + 0.5),
    )
    opts.update(kw)
    return RegionParams(
        Upsilon_U=Upsilon_U,
        Upsilon_Z=Upsilon_Z,
        alpha=al,
        tau0=tau0,
        tau1=tau0 + 1.0 if tau1 is None else tau1,
        **opts,
    )


@dataclass(frozen=True)
class FarConstants:
    a: float
    b: float
    c: float
    kappa: float
    eps: float
    l: float
    C_pq: float
    delta: float
    interval: tuple
    interval_kind: str
    checks: dict


def _far_checks(a, b, c, kappa, eps, l, e, n, q, interval):
    lo, hi = interval
    return {
        "a_in_interval": lo < a < hi,
        "0<b<a": 0 < b < a,
        "b<2sqrt(q)+2": b < 2 * math.sqrt(q) + 2,
        "0<eps<e/a": 0 < eps < e / a,
        "0<kappa<sqrt((n-9)(n-1))": 0 < kappa < math.sqrt((n - 9) * (n - 1)),
        "kappa<c<kappa+e": kappa < c < kappa + e,
        "1+eps/b<e/a+c/(e+kappa)": 1 + eps / b < e / a + c / (e + kappa),
        "0<l<e/2": 0 < l < 0.5 * e,
    }


def constants_to_use(p, q, k, strict=True, max_halvings=40):
    """Exponents (a, b, c, kappa, eps, l) for the far inner-region barriers.

    Starts from a = (q-1)/2 - sqrt((q-9)(q-1))/2, c = kappa = e/2, b = e,
    where C_pq = e/a + 1/3 > 1, then moves a up and c, kappa down by a
    step that is halved until every constraint holds.

    The q-interval for a is empty when q < 9.  With ``strict=False`` the
    n-based interval (e, n-1-e), on which a^2 - (n-1)a + 2(n-1) < 0, is
    used instead.
    """
    params = cone_constants(p, q)
    n = params.n
    e = exp_a(params)
    b2_lambda(params, k)  # validates k
    if q >= 10:
        r = 0.5 * math.sqrt((q - 9) * (q - 1))
        interval = (0.5 * (q - 1) - r, 0.5 * (q - 1) + r)
        kind = "q"
    elif strict:
        raise ValueError("constants_to_use needs q >= 10 (pass strict=False for the n-based interval)")
    else:
        r = 0.5 * math.sqrt((n - 9) * (n - 1))
        interval = (0.5 * (n - 1) - r, 0.5 * (n - 1) + r)
        kind = "n"
    a0 = interval[0]
    b = e
    C_pq = e / a0 + 1.0 / 3.0
    if C_pq <= 1:
        raise ValueError(f"base point infeasible: e/a + 1/3 = {C_pq:.6g} <= 1")
    l = 0.25 * e
    delta = 0.5
    checks = {}
    for _ in range(max_halvings):
        a = a0 + delta * (interval[1] - interval[0])
        kappa = 0.5 * e * (1 - 2 * delta)
        c = 0.5 * e * (1 - delta)
        slack = e / a + c / (e + kappa) - 1
        eps = 0.5 * min(e / a, b * slack) if slack > 0 else 0.0
        checks = _far_checks(a, b, c, kappa, eps, l, e, n, q, interval)
        if all(checks.values()):
            return FarConstants(a, b, c, kappa, eps, l, C_pq, delta, interval, kind, checks)
        delta *= 0.5
    failed = [k_ for k_, ok in checks.items() if not ok]
    raise ValueError(f"constants_to_use: infeasible, failing inequalities {failed}")


# ---------------------------------------------------------------------------
# reports


@dataclass
class SignReport:
    lemma: str
    side: str
    min_residual: float
    max_residual: float
    violation_fraction: float
    worst_point: dict
    n_samples: int
    grid: dict
    params: dict
    checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.violation_fraction == 0.0 and all(bool(v) for v in self.checks.values())

    def to_dict(self):
        out = asdict(self)
        out["passed"] = self.passed
        return out


def _report(name, side, x, tau, r, scale, grid, params, checks, labels=("x", "tau")):
    r = np.asarray(r, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if not np.all(np.isfinite(r)):
        raise FloatingPointError(f"{name}: non-finite residual on the sample grid")
    tol = SIGN_TOL * np.maximum(scale, np.finfo(float).tiny)
    if side == "sub":
        bad = r < -tol
        idx = np.unravel_index(np.argmin(r / np.maximum(scale, 1e-300)), r.shape)
    elif side == "super":
        bad = r > tol
        idx = np.unravel_index(np.argmax(r / np.maximum(scale, 1e-300)), r.shape)
    else:
        raise ValueError("side must be 'sub' or 'super'")
    worst = {
        labels[0]: float(np.broadcast_to(x, r.shape)[idx]),
        labels[1]: float(np.broadcast_to(tau, r.shape)[idx]),
        "residual": float(r[idx]),
        "scale": float(scale[idx]),
    }
    return SignReport(
        lemma=name,
        side=side,
        min_residual=float(r.min()),
        max_residual=float(r.max()),
        violation_fraction=float(bad.mean()),
        worst_point=worst,
        n_samples=int(r.size),
        grid=grid,
        params={k_: (float(v) if isinstance(v, (int, float, np.floating)) else v) for k_, v in params.items()},
        checks={k_: bool(v) for k_, v in checks.items()},
    )


# ---------------------------------------------------------------------------
# operators (each returns the list of additive terms)


def terms_inner_U(g, U, Ug, Ugg, Ut, Z, params):
    """Full U equation in gamma: Z U'' + (Z+q-1)U'/g - (p-1)e^{-2U} - g U'/2 + 1/2 - U_tau."""
    p, q = params.p, params.q
    return [Z * Ugg, (Z + q - 1) * Ug / g, -(p - 1) * np.exp(-2 * U), -0.5 * g * Ug, 0.5 + 0 * g, -Ut]


def terms_inner_Z(g, Z, Zg, Zgg, Zt, Ug, params):
    """Full Z equation: F^l + F^q - 2p Z^2 U_g^2 - g Z_g / 2 - Z_tau."""
    p, q = params.p, params.q
    return [
        (q - 1) * Zg / g,
        2 * (q - 1) * Z / g**2,
        Z * Zgg,
        -0.5 * Zg**2,
        -Z * Zg / g,
        -2 * (q - 1) * Z**2 / g**2,
        -2 * p * Z**2 * Ug**2,
        -0.5 * g * Zg,
        -Zt,
    ]


def terms_inner_grad_U(g, V, Vg, Vgg, Vt, Z, Zg, w, params):
    """Equation for V = U_g, with w = e^{-2U}."""
    p, q = params.p, params.q
    a = Z
    b = Zg + (Z + q - 1) / g - 0.5 * g
    c = Zg / g - (Z + q - 1) / g**2 + 2 * (p - 1) * w - 0.5
    return [a * Vgg, b * Vg, c * V, -Vt]


def terms_U_tilde(x, U, Ux, Uxx, Ut, Z, params, drift):
    """Perturbation U equation with drift -drift * x * U_x."""
    q = params.q
    return [
        Z * (Uxx + Ux / x),
        (q - 1) * Ux / x,
        -(q - 1) * np.expm1(-2 * U) / x**2,
        -drift * x * Ux,
        -Ut,
    ]


def terms_Z_tilde(x, Zt_, Zx, Zxx, Zt_t, Utx, params, drift):
    """Perturbation Z equation with the ambient U_tilde_x and drift -drift * x * Z_x."""
    p, q, B2 = params.p, params.q, params.B2
    Z = B2 + Zt_
    Ux = 1.0 / x + Utx
    return [
        Z * Zxx,
        Zx * (q - 1 - Z) / x,
        -0.5 * Zx**2,
        2 * (q - 1) * Zt_ * (1 - B2 - Z) / x**2,
        -2 * p * (Z * Ux + B2 / x) * (B2 * Utx + Ux * Zt_),
        -drift * x * Zx,
        -Zt_t,
    ]


def _sum(terms):
    total = sum(terms)
    scale = np.max(np.abs(np.broadcast_arrays(*terms)), axis=0)
    return total, scale


# ---------------------------------------------------------------------------
# adversarial evaluation over ambient bounds


def _pick(side, a, b):
    return np.minimum(a, b) if side == "sub" else np.maximum(a, b)


def _worst(fn, ambient, x, tau, side, fixed=None):
    """Worst residual over ambient bounds; returns (residual, scale).

    ``ambient`` is a list of (name, bounds_fn, kind) with kind 'linear' or
    'quadratic'.  A quadratic variable must come last.
    """
    fixed = dict(fixed or {})
    if not ambient:
        return _sum(fn(x, tau, **fixed))
    (name, bounds, kind), rest = ambient[0], ambient[1:]
    lo, hi = bounds(x, tau)
    lo, hi = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
    if kind == "quadratic" and rest:
        raise ValueError("quadratic ambient variable must be last")
    cands = [lo, hi]
    if kind == "quadratic":
        mid = 0.5 * (lo + hi)
        r0 = _worst(fn, rest, x, tau, side, {**fixed, name: lo})[0]
        r1 = _worst(fn, rest, x, tau, side, {**fixed, name: mid})[0]
        r2 = _worst(fn, rest, x, tau, side, {**fixed, name: hi})[0]
        A2 = 2 * (r0 - 2 * r1 + r2)
        B1 = -3 * r0 + 4 * r1 - r2
        with np.errstate(divide="ignore", invalid="ignore"):
            ts = np.where(np.abs(A2) > 0, -B1 / (2 * A2), 0.5)
        ts = np.clip(np.nan_to_num(ts, nan=0.5), 0.0, 1.0)
        cands.append(lo + ts * (hi - lo))
        cands.append(mid)
    best_r = best_s = None
    for v in cands:
        r, s = _worst(fn, rest, x, tau, side, {**fixed, name: v})
        if best_r is None:
            best_r, best_s = r, s
            continue
        take = (r < best_r) if side == "sub" else (r > best_r)
        best_r = np.where(take, r, best_r)
        best_s = np.where(take, s, best_s)
    return best_r, best_s


# ---------------------------------------------------------------------------
# specs and samplers


@dataclass
class BarrierSpec:
    """A barrier candidate with its operator, side and sampling domain.

    ``generic(x, tau, **ambient)`` returns the operator's term list for the
    candidate; ``display(x, tau, **ambient)`` is the hand-simplified
    residual; ``ambient`` lists the assumed bounds on the ambient solution.
    """

    name: str
    operator: str
    side: str
    candidate: Callable
    generic: Callable
    display: Callable
    sampler: Callable
    ambient: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    labels: tuple = ("x", "tau")

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ValueError(f"unknown operator {self.operator!r}")
        if self.side not in ("sub", "super"):
            raise ValueError("side must be 'sub' or 'super'")


def log_samples(lo, hi, n):
    if not (0 < lo < hi):
        raise ValueError(f"empty sample interval ({lo}, {hi})")
    return np.geomspace(lo, hi, n)


def fixed_box(lo, hi, t0, t1):
    """Sampler on [lo, hi] x [t0, t1], log-uniform in space."""

    def sampler(nx, nt):
        X, T = np.meshgrid(log_samples(lo, hi, nx), np.linspace(t0, t1, nt))
        return X, T

    return sampler


def moving_box(lo_fn, hi_fn, t0, t1):
    """Sampler on lo(t) < x < hi(t), log-uniform in space at each time."""

    def sampler(nx, nt):
        T = np.linspace(t0, t1, nt)[:, None]
        u = np.linspace(0.0, 1.0, nx)[None, :]
        lo, hi = lo_fn(T), hi_fn(T)
        if np.any(hi <= lo):
            raise ValueError("sampling domain is empty at some time")
        X = lo * (hi / lo) ** u
        return X, np.broadcast_to(T, X.shape).copy()

    return sampler


def residual(spec, region=None, ambient=None, n_x=200, n_t=50):
    """Sample the residual of ``spec`` and report its sign behaviour.

    ``ambient`` may replace the spec's assumed bounds with a list of
    (name, bounds_fn, kind) triples, e.g. bounds read off a simulation.
    Returns ``(X, T, R, report)``.
    """
    X, T = spec.sampler(n_x, n_t)
    amb = spec.ambient if ambient is None else ambient
    v = spec.candidate(X, T)[0]
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{spec.name}: candidate leaves its domain on the sample grid")
    R, S = _worst(spec.generic, amb, X, T, spec.side)
    params = dict(spec.params)
    if region is not None:
        params.update({"tau0": region.tau0, "tau1": region.tau1})
    rep = _report(spec.name, spec.side, X, T, R, S, {"n_x": n_x, "n_t": n_t}, params, spec.checks, spec.labels)
    return X, T, R, rep


# ---------------------------------------------------------------------------
# inner cone barriers (gamma coordinates, Omega = {gamma < Upsilon e^{-alpha tau}})


def _inner_sampler(region, Upsilon, floor=1e-6):
    a = region.alpha
    return moving_box(
        lambda t: floor * Upsilon * np.exp(-a * t),
        lambda t: Upsilon * np.exp(-a * t),
        region.tau0,
        region.tau1,
    )


def inner_cone_U(params, region, c=None, Upsilon=None, z_min=1e-3):
    """Subsolution U_- = log(c gamma) for c >= A/B; Z is any coefficient in (0, 1]."""
    c = params.A / params.B if c is None else c
    Upsilon = 4 * region.Upsilon_Z if Upsilon is None else Upsilon

    def cand(g, t):
        return np.log(c * g), 1 / g, -1 / g**2, 0 * g

    def generic(g, t, Z):
        U, Ug, Ugg, Ut = cand(g, t)
        return terms_inner_U(g, U, Ug, Ugg, Ut, Z, params)

    def display(g, t, Z=None):
        return (params.q - 1) / g**2 - (params.p - 1) / (c**2 * g**2)

    return BarrierSpec(
        "inner_cone_U",
        "inner_U",
        "sub",
        cand,
        generic,
        display,
        _inner_sampler(region, Upsilon),
        [("Z", lambda g, t: (z_min, 1.0), "linear")],
        {"c": c, "Upsilon": Upsilon},
        {"c>=A/B": c >= params.A / params.B * (1 - 1e-14)},
        ("gamma", "tau"),
    )


def inner_cone_Z(params, region, c=None, Upsilon=None):
    """Subsolution Z_- = c for 0 < c <= B^2 when 0 <= U_g <= 1/g."""
    c = params.B2 if c is None else c
    Upsilon = 4 * region.Upsilon_Z if Upsilon is None else Upsilon
    p, q = params.p, params.q

    def cand(g, t):
        return c + 0 * g, 0 * g, 0 * g, 0 * g

    def generic(g, t, Ug):
        Z, Zg, Zgg, Zt = cand(g, t)
        return terms_inner_Z(g, Z, Zg, Zgg, Zt, Ug, params)

    def display(g, t, Ug):
        return 2 * (q - 1) * c * (1 - c) / g**2 - 2 * p * c**2 * Ug**2

    return BarrierSpec(
        "inner_cone_Z",
        "inner_Z",
        "sub",
        cand,
        generic,
        display,
        _inner_sampler(region, Upsilon),
        [("Ug", lambda g, t: (0 * g, 1 / g), "quadratic")],
        {"c": c, "Upsilon": Upsilon},
        {"0<c<=B^2": 0 < c <= params.B2 * (1 + 1e-14), "bracket>=0": 2 * (q - 1) * c * (1 - c) - 2 * p * c**2 >= -1e-12},
        ("gamma", "tau"),
    )


def inner_grad_U(params, region, Upsilon=None, z_min=1e-3, zg_bound=10.0):
    """Supersolution V+ = 1/g for V = U_g, given U >= log(A g / B).

    Z and Z_g enter the V equation but cancel for this candidate; they are
    still sampled over Z in [z_min, 1] and |g Z_g| <= zg_bound.
    """
    Upsilon = 4 * region.Upsilon_Z if Upsilon is None else Upsilon
    p, q = params.p, params.q
    w_max = params.B2 / params.A2

    def cand(g, t):
        return 1 / g, -1 / g**2, 2 / g**3, 0 * g

    def generic(g, t, Z, Zg, w):
        V, Vg, Vgg, Vt = cand(g, t)
        return terms_inner_grad_U(g, V, Vg, Vgg, Vt, Z, Zg, w, params)

    def display(g, t, Z=None, Zg=None, w=None):
        return -2 * (q - 1) / g**3 + 2 * (p - 1) * w / g

    return BarrierSpec(
        "inner_grad_U",
        "inner_grad_U",
        "super",
        cand,
        generic,
        display,
        _inner_sampler(region, Upsilon),
        [
            ("Z", lambda g, t: (z_min, 1.0), "linear"),
            ("Zg", lambda g, t: (-zg_bound / g, zg_bound / g), "linear"),
            ("w", lambda g, t: (0 * g, w_max / g**2), "linear"),
        ],
        {"Upsilon": Upsilon},
        {},
        ("gamma", "tau"),
    )


def inner_second_deriv_sign(params, region, Upsilon=None):
    """Sign of the only nonlinear term 4(q-1)V/g^3 - 4(p-1)e^{-2U}V^2 (must be >= 0)."""
    Upsilon = 4 * region.Upsilon_Z if Upsilon is None else Upsilon
    p, q = params.p, params.q
    w_max = params.B2 / params.A2

    def cand(g, t):
        return 0 * g, 0 * g, 0 * g, 0 * g

    def generic(g, t, w, V):
        return [4 * (q - 1) * V / g**3, -4 * (p - 1) * w * V**2]

    def display(g, t, w, V):
        return 4 * (q - 1) * V / g**3 - 4 * (p - 1) * w * V**2

    return BarrierSpec(
        "inner_second_deriv",
        "inner_grad_U",
        "sub",
        cand,
        generic,
        display,
        _inner_sampler(region, Upsilon),
        [("w", lambda g, t: (0 * g, w_max / g**2), "linear"), ("V", lambda g, t: (0 * g, 1 / g), "quadratic")],
        {"Upsilon": Upsilon},
        {},
        ("gamma", "tau"),
    )


# ---------------------------------------------------------------------------
# xi-region barriers


def _xi_drift(region):
    a = region.alpha
    return lambda t: np.exp(-2 * a * t) * (a + 0.5)


def far_U_weak(params, region, consts, C0=None, Upsilon=None, floor=1e-8):
    """Supersolution U+ = C0 xi^{-a} on (0, Upsilon) with B^2 <= Z <= 1."""
    a, q = consts.a, params.q
    e = exp_a(params)
    Upsilon = region.Upsilon_U if Upsilon is None else Upsilon
    C0 = Upsilon ** (a - e) if C0 is None else C0
    drift = _xi_drift(region)

    def cand(x, t):
        return C0 * x**-a, -a * C0 * x ** (-a - 1), a * (a + 1) * C0 * x ** (-a - 2), 0 * x

    def generic(x, t, Z):
        U, Ux, Uxx, Ut = cand(x, t)
        return terms_U_tilde(x, U, Ux, Uxx, Ut, Z, params, drift(t))

    def display(x, t, Z):
        return (
            (Z * a**2 - (q - 1) * a) * C0 * x ** (-a - 2)
            - (q - 1) * np.expm1(-2 * C0 * x**-a) / x**2
            + drift(t) * a * C0 * x**-a
        )

    quad = a**2 - (q - 1) * a + 2 * (q - 1)
    tau_term = a * Upsilon**2 * math.exp(-2 * region.alpha * region.tau0) * (region.alpha + 0.5)
    return BarrierSpec(
        "far_U_weak",
        "xi_U",
        "super",
        cand,
        generic,
        display,
        fixed_box(floor * Upsilon, Upsilon, region.tau0, region.tau1),
        [("Z", lambda x, t: (params.B2, 1.0), "linear")],
        {"a": a, "C0": C0, "Upsilon": Upsilon, "quadratic_coeff": quad, "tau0_term": tau_term},
        {"a^2-(q-1)a+2(q-1)<0": quad < 0, "tau0_large": tau_term < abs(quad)},
        ("xi", "tau"),
    )


def far_Z_coefficients(params, consts, C0, D0, M, Upsilon):
    """Coefficient checks of the far Z barrier.

    Returns the two leading coefficients (both should be negative), the
    interaction coefficient and the one-third bound it has to meet.
    """
    n, q, p, B2 = params.n, params.q, params.p, params.B2
    a, b, eps = consts.a, consts.b, consts.eps
    lin = b**2 - (n - 3) * b - 2 * (n - 1)
    quad = 0.5 * b**2 + 2 * b - 2 * (q - 1)
    inter = 4 * p * B2**2 * M / (1 - B2) * (1 - B2) ** (a / b) * C0 * D0 ** (-a / b) * Upsilon ** (-a * eps / b)
    return {"linear": lin, "quadratic": quad, "interaction": inter, "third": abs(B2 * lin) / 3.0}


def far_Z(params, region, consts, C0=1.0, D0=2.0, M=None, Upsilon=None):
    """Supersolution Z+ = D0' xi^{-b} on [Xi, Upsilon], D0' Xi^{-b} = 1 - B^2.

    Ambient: -min(1/xi, M C0' xi^{-a-1}) <= U_xi <= 0 with C0' = C0 Upsilon^{a-e}.
    """
    a, b, eps = consts.a, consts.b, consts.eps
    e = exp_a(params)
    B2 = params.B2
    Upsilon = region.Upsilon_U if Upsilon is None else Upsilon
    M = a if M is None else M
    C0p = C0 * Upsilon ** (a - e)
    D0p = D0 * Upsilon ** (b / a * (a - e) + eps)
    Xi = (D0p / (1 - B2)) ** (1 / b)
    drift = _xi_drift(region)

    def cand(x, t):
        return D0p * x**-b, -b * D0p * x ** (-b - 1), b * (b + 1) * D0p * x ** (-b - 2), 0 * x

    def generic(x, t, Ux):
        Z, Zx, Zxx, Zt = cand(x, t)
        return terms_Z_tilde(x, Z, Zx, Zxx, Zt, Ux, params, drift(t))

    def display(x, t, Ux):
        n, p, q = params.n, params.p, params.q
        Zt = D0p * x**-b
        Ut = 1 / x + Ux
        return (
            B2 * (b**2 - (n - 3) * b - 2 * (n - 1)) * D0p * x ** (-b - 2)
            + (0.5 * b**2 + 2 * b - 2 * (q - 1)) * D0p**2 * x ** (-2 * b - 2)
            - 4 * p * B2**2 * Ux / x
            - 2 * p * B2**2 * Ux**2
            - 4 * p * B2 * (Ut**2 - 1 / x**2) * Zt
            - 2 * p * Zt**2 * Ut**2
            + drift(t) * b * D0p * x**-b
        )

    co = far_Z_coefficients(params, consts, C0, D0, M, Upsilon)
    checks = {
        "b^2-(n-3)b-2(n-1)<0": co["linear"] < 0,
        "b^2/2+2b-2(q-1)<0": co["quadratic"] < 0,
        "interaction<=third": co["interaction"] <= co["third"],
        "Xi<Upsilon": Xi < Upsilon,
    }
    return BarrierSpec(
        "far_Z",
        "xi_Z",
        "super",
        cand,
        generic,
        display,
        fixed_box(Xi, Upsilon, region.tau0, region.tau1),
        [("Ux", lambda x, t: (-np.minimum(1 / x, M * C0p * x ** (-a - 1)), 0 * x), "quadratic")],
        {"a": a, "b": b, "eps": eps, "C0": C0, "D0": D0, "M": M, "Upsilon": Upsilon, "Xi": Xi, "D0p": D0p, **co},
        checks,
        ("xi", "tau"),
    )


def xi_window(params, consts, C1, C_low, Upsilon):
    """Smallest root Xi of C1' xi^{-m} = -log xi + C_Upsilon, m = e + kappa.

    Returns a dict with Xi, the minimiser xi_* of f = log xi + C1' xi^{-m},
    and the exponent log Xi / log Upsilon next to the predicted window
    (eta, c/m) with eta = c/(2m).
    """
    e = exp_a(params)
    m = e + consts.kappa
    C1p = C1 * Upsilon**consts.c
    CU = C_low * Upsilon ** (-e) + math.log(Upsilon)
    xs = (m * C1p) ** (1 / m)

    def f(x):
        return math.log(x) + C1p * x**-m - CU

    if f(xs) >= 0:
        raise ValueError("no root: f(xi_*) >= C_Upsilon, Upsilon too small")
    lo = xs
    while f(lo) <= 0:
        lo *= 0.5
    Xi = brentq(f, lo, xs, xtol=1e-14 * xs, rtol=1e-14)
    upper = consts.c / m
    return {
        "Xi": Xi,
        "xi_star": xs,
        "exponent": math.log(Xi) / math.log(Upsilon),
        "eta": 0.5 * upper,
        "upper": upper,
        "in_window": Upsilon ** (0.5 * upper) <= Xi <= xs,
    }


def far_U(params, region, consts, C1=1.0, C_low=1.0, D0=2.0, Upsilon=None):
    """Supersolution U+ = C1 Upsilon^c xi^{-e-kappa} on [Xi, Upsilon].

    Ambient: Z = B^2 + Zt with 0 <= Zt <= min(1 - B^2, D0' xi^{-b}).
    """
    a, b, c, kappa, eps = consts.a, consts.b, consts.c, consts.kappa, consts.eps
    e = exp_a(params)
    n, q, B2 = params.n, params.q, params.B2
    Upsilon = region.Upsilon_U if Upsilon is None else Upsilon
    m = e + kappa
    C1p = C1 * Upsilon**c
    D0p = D0 * Upsilon ** (b / a * (a - e) + eps)
    win = xi_window(params, consts, C1, C_low, Upsilon)
    drift = _xi_drift(region)

    def cand(x, t):
        return C1p * x**-m, -m * C1p * x ** (-m - 1), m * (m + 1) * C1p * x ** (-m - 2), 0 * x

    def generic(x, t, Z):
        U, Ux, Uxx, Ut = cand(x, t)
        return terms_U_tilde(x, U, Ux, Uxx, Ut, Z, params, drift(t))

    def display(x, t, Z):
        return (
            (Z * m**2 - (q - 1) * m) * C1p * x ** (-m - 2)
            - (q - 1) * np.expm1(-2 * C1p * x**-m) / x**2
            + drift(t) * m * C1p * x**-m
        )

    coeff = m**2 - (n - 1) * m + 2 * (n - 1)
    return BarrierSpec(
        "far_U",
        "xi_U",
        "super",
        cand,
        generic,
        display,
        fixed_box(win["Xi"], Upsilon, region.tau0, region.tau1),
        [("Z", lambda x, t: (B2 + 0 * x, B2 + np.minimum(1 - B2, D0p * x**-b)), "linear")],
        {"m": m, "C1p": C1p, "D0p": D0p, "Upsilon": Upsilon, "coefficient": coeff, **win},
        {"m^2-(n-1)m+2(n-1)<0": coeff < 0, "Xi_in_window": win["in_window"], "Xi<Upsilon": win["Xi"] < Upsilon},
        ("xi", "tau"),
    )


def extend_Z_constants(params, k, rel_eta=0.1, margin=0.1):
    """(C, eta, D_minus, D_plus) for the Z extension on [Upsilon_U, Upsilon_Z].

    C = -e u_0 is the xi^{-e-1} coefficient of U_xi for the k-th mode.
    """
    e = exp_a(params)
    n, p, B2 = params.n, params.p, params.B2
    u0 = u_mode_series(params, k).coeffs[0]
    C = -e * u0
    eta = rel_eta * abs(C)
    P = e**2 - (n - 3) * e - 2 * (n - 1)
    lo = 4 * p * B2 * (C + eta) / P
    hi = 4 * p * B2 * (C - eta) / P
    return C, eta, (1 - margin) * lo, (1 + margin) * hi, P


def extend_Z(params, region, k, which="minus", rel_eta=0.1, margin=0.1):
    """Sub (D_-) or super (D_+) solution D xi^{-e} on [Upsilon_U, Upsilon_Z]."""
    e = exp_a(params)
    p, B2 = params.p, params.B2
    C, eta, Dm, Dp, P = extend_Z_constants(params, k, rel_eta, margin)
    if which not in ("minus", "plus"):
        raise ValueError("which must be 'minus' or 'plus'")
    D = Dm if which == "minus" else Dp
    drift = _xi_drift(region)

    def cand(x, t):
        return D * x**-e, -e * D * x ** (-e - 1), e * (e + 1) * D * x ** (-e - 2), 0 * x

    def generic(x, t, Ux):
        Z, Zx, Zxx, Zt = cand(x, t)
        return terms_Z_tilde(x, Z, Zx, Zxx, Zt, Ux, params, drift(t))

    def display(x, t, Ux):
        q = params.q
        Zt = D * x**-e
        Ut = 1 / x + Ux
        return (
            B2 * P * D * x ** (-e - 2)
            - 4 * p * B2**2 * Ux / x
            + (0.5 * e**2 + 2 * e - 2 * (q - 1)) * D**2 * x ** (-2 * e - 2)
            - 2 * p * B2**2 * Ux**2
            - 4 * p * B2 * (Ut**2 - 1 / x**2) * Zt
            - 2 * p * Zt**2 * Ut**2
            + drift(t) * e * D * x**-e
        )

    checks = {"D-<X(C+eta)<X(C-eta)<D+": Dm < 4 * p * B2 * (C + eta) / P < 4 * p * B2 * (C - eta) / P < Dp, "0<eta<-C": 0 < eta < -C}
    return BarrierSpec(
        f"extend_Z_{which}",
        "xi_Z",
        "sub" if which == "minus" else "super",
        cand,
        generic,
        display,
        fixed_box(region.Upsilon_U, region.Upsilon_Z, region.tau0, region.tau1),
        [("Ux", lambda x, t: ((C - eta) * x ** (-e - 1), (C + eta) * x ** (-e - 1)), "quadratic")],
        {"C": C, "eta": eta, "D": D, "P": P},
        checks,
        ("xi", "tau"),
    )


# ---------------------------------------------------------------------------
# parabolic-outer interface


def _outer_sampler(Gamma, rho, beta, tau0, tau1):
    return moving_box(lambda t: Gamma + 0 * t, lambda t: rho * np.exp(beta * t), tau0, tau1)


def parab_outer_U(params, k, which, C, D, Gamma, rho, tau0, dtau=1.0, z_min=0.01):
    """U barriers C g^s e^{h tau} + D g^{s-2} e^{h tau}, h = B^2 lambda_k, s = -2h.

    which = 'lower' (subsolution, needs D large positive) or 'upper'
    (supersolution, D large negative).  Z ranges over [z_min, 1].
    """
    q = params.q
    h = b2_lambda(params, k)
    s = -2 * h
    if s <= 0:
        raise ValueError("need lambda_k < 0")

    def cand(g, t):
        E = np.exp(h * t)
        v = (C * g**s + D * g ** (s - 2)) * E
        vg = (C * s * g ** (s - 1) + D * (s - 2) * g ** (s - 3)) * E
        vgg = (C * s * (s - 1) * g ** (s - 2) + D * (s - 2) * (s - 3) * g ** (s - 4)) * E
        return v, vg, vgg, h * v

    def generic(g, t, Z):
        U, Ug, Ugg, Ut = cand(g, t)
        return terms_U_tilde(g, U, Ug, Ugg, Ut, Z, params, 0.5)

    def display(g, t, Z):
        E = np.exp(h * t)
        U = cand(g, t)[0]
        return (
            E * g ** (s - 2) * (Z * C * s**2 + (q - 1) * C * s + D + 2 * (q - 1) * C)
            + E * g ** (s - 4) * D * (Z * (s - 2) ** 2 + (q - 1) * (s - 2) + 2 * (q - 1))
            - (q - 1) / g**2 * (np.expm1(-2 * U) + 2 * U)
        )

    aC = abs(C)
    lead_lower = -aC * s**2 - (q - 1) * aC * s + D - 2 * (q - 1) * aC
    lead_upper = aC * s**2 + (q - 1) * aC * s + D + 2 * (q - 1) * aC
    if which == "lower":
        checks = {"-|C|s^2-(q-1)|C|s+D-2(q-1)|C|>0": lead_lower > 0}
        side = "sub"
    elif which == "upper":
        checks = {"|C|s^2+(q-1)|C|s+D+2(q-1)|C|<0": lead_upper < 0}
        side = "super"
    else:
        raise ValueError("which must be 'lower' or 'upper'")
    return BarrierSpec(
        f"parab_outer_U_{which}",
        "parab_outer_U",
        side,
        cand,
        generic,
        display,
        _outer_sampler(Gamma, rho, 0.5, tau0, tau0 + dtau),
        [("Z", lambda g, t: (z_min, 1.0), "linear")],
        {"C": C, "D": D, "Gamma": Gamma, "rho": rho, "s": s, "h": h, "q": q},
        checks,
        ("gamma", "tau"),
    )


def nonlinear_smallness(spec, n_x=200, n_t=50):
    """Max over samples of |(q-1)(1-e^{-2U}-2U)/g^2| / |dominant g^{s-2} term|.

    Applies to the U barriers of the parabolic-outer interface; the proof
    needs this ratio below 1/2.
    """
    X, T = spec.sampler(n_x, n_t)
    C, D, s, h = (spec.params[k_] for k_ in ("C", "D", "s", "h"))
    U = spec.candidate(X, T)[0]
    nl = (spec.params["q"] - 1) * np.abs(np.expm1(-2 * U) + 2 * U) / X**2
    dom = np.abs(D) * np.exp(h * T) * X ** (s - 2)
    return float(np.max(nl / dom)), bool(np.all(np.expm1(-2 * U) + 2 * U >= -1e-15 * np.abs(U)))


def parab_outer_Z(params, k, which, C, D, C_U, Gamma, rho, tau0, dtau=1.0):
    """Z barriers C g^s e^{h tau} + D g^{s-1} e^{h tau} given |U_g| <= C_U g^s e^{h tau}.

    'upper' uses beta = 1/2, 'lower' uses beta = s / (2(s+1)).
    """
    p, B2 = params.p, params.B2
    h = b2_lambda(params, k)
    s = -2 * h

    def cand(g, t):
        E = np.exp(h * t)
        v = (C * g**s + D * g ** (s - 1)) * E
        vg = (C * s * g ** (s - 1) + D * (s - 1) * g ** (s - 2)) * E
        vgg = (C * s * (s - 1) * g ** (s - 2) + D * (s - 1) * (s - 2) * g ** (s - 3)) * E
        return v, vg, vgg, h * v

    def generic(g, t, Ug):
        Z, Zg, Zgg, Zt = cand(g, t)
        return terms_Z_tilde(g, Z, Zg, Zgg, Zt, Ug, params, 0.5)

    def display(g, t, Ug):
        # drift and time derivative collapse to D g^{s-1} e^{h tau} / 2
        q = params.q
        Zt, Zg, Zgg, _ = cand(g, t)
        Z = B2 + Zt
        Ux = 1 / g + Ug
        return (
            0.5 * D * g ** (s - 1) * np.exp(h * t)
            + Z * Zgg
            + Zg * (q - 1 - Z) / g
            - 0.5 * Zg**2
            + 2 * (q - 1) * Zt * (1 - B2 - Z) / g**2
            - 2 * p * (Z * Ux + B2 / g) * (B2 * Ug + Ux * Zt)
        )

    bound = lambda g, t: C_U * g**s * np.exp(h * t)  # noqa: E731
    if which == "upper":
        beta = 0.5
        side = "super"
        checks = {"D/2<-4pB^4C_U": D / 2 < -4 * p * B2**2 * C_U}
    elif which == "lower":
        beta = 0.5 * s / (s + 1)
        side = "sub"
        checks = {
            "D/2-4pB^4C_U>0": D / 2 - 4 * p * B2**2 * C_U > 0,
            "printed: D/2>-4pB^4C_U": D / 2 > -4 * p * B2**2 * C_U,
        }
    else:
        raise ValueError("which must be 'lower' or 'upper'")
    return BarrierSpec(
        f"parab_outer_Z_{which}",
        "parab_outer_Z",
        side,
        cand,
        generic,
        display,
        _outer_sampler(Gamma, rho, beta, tau0, tau0 + dtau),
        [("Ug", lambda g, t: (-bound(g, t), bound(g, t)), "quadratic")],
        {"C": C, "D": D, "C_U": C_U, "Gamma": Gamma, "rho": rho, "beta": beta, "s": s, "h": h},
        checks,
        ("gamma", "tau"),
    )


def parab_outer_barrier(params, k, which, C=None, D=None, Gamma=1e3, rho=1e-3, tau0=40.0, dtau=1.0, C_U=1.0, n_x=200, n_t=50):
    """Run one of the four interface barriers: 'U-', 'U+', 'Z-', 'Z+'.

    C defaults to the large-gamma constant of the k-th mode; D defaults to
    a value meeting the leading-coefficient condition with unit margin.
    """
    p, q, B2 = params.p, params.q, params.B2
    s = -2 * b2_lambda(params, k)
    if which in ("U-", "U+"):
        C = u_mode_series(params, k).leading[0] if C is None else C
        aC = abs(C)
        need = aC * s**2 + (q - 1) * aC * s + 2 * (q - 1) * aC
        if D is None:
            D = 2 * need + 1 if which == "U-" else -(2 * need + 1)
        spec = parab_outer_U(params, k, "lower" if which == "U-" else "upper", C, D, Gamma, rho, tau0, dtau)
        rep = residual(spec, n_x=n_x, n_t=n_t)[3]
        ratio, concave = nonlinear_smallness(spec, n_x, n_t)
        rep.params["nonlinear_ratio"] = ratio
        if which == "U-":
            rep.checks["nonlinear<half_dominant"] = ratio < 0.5
        else:
            rep.checks["1-e^{-2U}-2U<=0"] = concave
        return rep
    if which in ("Z-", "Z+"):
        C = z_lambda_series(params, k).leading[0] if C is None else C
        base = 4 * p * B2**2 * C_U
        if D is None:
            D = 2 * (base + 1) if which == "Z-" else -2 * (base + 1)
        spec = parab_outer_Z(params, k, "lower" if which == "Z-" else "upper", C, D, C_U, Gamma, rho, tau0, dtau)
        return residual(spec, n_x=n_x, n_t=n_t)[3]
    raise ValueError("which must be one of 'U-', 'U+', 'Z-', 'Z+'")


# ---------------------------------------------------------------------------
# outer sine-cone barrier (unrescaled sideways coordinates)


def sine_cone_K(K0, C, params, t):
    t = np.asarray(t, dtype=float)
    den = 1 - K0 * (C**2 * params.p + params.q) * t
    if np.any(den <= 0):
        raise ValueError("t is at or past the pole of K(t)")
    return K0 / den


def sine_cone_barrier(C, K0, t, params, psi=None, n_points=257):
    """Lower barrier z_- = max(0, (q-1)/(q-1+pC^2) - K(t) psi^2 / 2).

    Returns ``(psi, z_minus, psi_star)`` where psi_star is the zero of the
    positive branch.
    """
    p, q = params.p, params.q
    if C <= 0 or K0 <= 0:
        raise ValueError("C and K0 must be positive")
    K = float(sine_cone_K(K0, C, params, t))
    a0 = (q - 1) / (q - 1 + p * C**2)
    psi_star = math.sqrt(2 * a0 / K)
    if psi is None:
        psi = np.linspace(0.0, 1.5 * psi_star, n_points)
    psi = np.asarray(psi, dtype=float)
    return psi, np.maximum(0.0, a0 - 0.5 * K * psi**2), psi_star


def outer_sine_cone(params, C=1.0, K0=1.0, t_frac=0.9, floor=1e-4):
    """Subsolution check of z_- under F^l + F^q - 2pC^2 z^2/psi^2 on its positive branch."""
    p, q = params.p, params.q
    a0 = (q - 1) / (q - 1 + p * C**2)
    t_pole = 1.0 / (K0 * (C**2 * p + q))

    def Kt(t):
        return K0 / (1 - K0 * (C**2 * p + q) * t)

    def cand(x, t):
        K = Kt(t)
        Kd = K**2 * (C**2 * p + q)
        return a0 - 0.5 * K * x**2, -K * x, -K + 0 * x, -0.5 * Kd * x**2

    def generic(x, t):
        z, zx, zxx, zt = cand(x, t)
        return [
            (q - 1) * zx / x,
            2 * (q - 1) * z / x**2,
            z * zxx,
            -0.5 * zx**2,
            -z * zx / x,
            -2 * (q - 1) * z**2 / x**2,
            -2 * p * C**2 * z**2 / x**2,
            -zt,
        ]

    def display(x, t):
        return 0 * x

    def star(t):
        return np.sqrt(2 * a0 / Kt(t))

    return BarrierSpec(
        "outer_sine_cone",
        "outer_z",
        "sub",
        cand,
        generic,
        display,
        moving_box(lambda t: floor * star(t), lambda t: (1 - 1e-9) * star(t), 0.0, t_frac * t_pole),
        [],
        {"C": C, "K0": K0, "t_pole": t_pole, "z0": a0},
        {},
        ("psi", "t"),
    )


# ---------------------------------------------------------------------------
# suite


def xi_region_barrier(which, params, region, consts, n_x=200, n_t=50, **kw):
    """Run one of 'far_U_weak', 'far_Z', 'far_U', 'extend_Z_minus', 'extend_Z_plus'."""
    if which == "far_U_weak":
        spec = far_U_weak(params, region, consts, **kw)
    elif which == "far_Z":
        spec = far_Z(params, region, consts, **kw)
    elif which == "far_U":
        spec = far_U(params, region, consts, **kw)
    elif which in ("extend_Z_minus", "extend_Z_plus"):
        k = kw.pop("k")
        spec = extend_Z(params, region, k, which.rsplit("_", 1)[1], **kw)
    else:
        raise ValueError(f"unknown xi-region barrier {which!r}")
    return residual(spec, region, n_x=n_x, n_t=n_t)[3]


LEMMAS = (
    "inner_cone_U",
    "inner_cone_Z",
    "inner_grad_U",
    "inner_second_deriv",
    "far_U_weak",
    "far_Z",
    "far_U",
    "extend_Z_minus",
    "extend_Z_plus",
    "parab_outer_U_lower",
    "parab_outer_U_upper",
    "parab_outer_Z_upper",
    "parab_outer_Z_lower",
    "outer_sine_cone",
)


def run_lemma(name, p=5, q=10, k=4, region=None, n_x=200, n_t=50, strict=True):
    """Evaluate one named lemma at the reference configuration."""
    params = cone_constants(p, q)
    region = reference_region(p, q, k) if region is None else region
    if name == "inner_cone_U":
        return residual(inner_cone_U(params, region), region, n_x=n_x, n_t=n_t)[3]
    if name == "inner_cone_Z":
        return residual(inner_cone_Z(params, region), region, n_x=n_x, n_t=n_t)[3]
    if name == "inner_grad_U":
        return residual(inner_grad_U(params, region), region, n_x=n_x, n_t=n_t)[3]
    if name == "inner_second_deriv":
        return residual(inner_second_deriv_sign(params, region), region, n_x=n_x, n_t=n_t)[3]
    if name in ("far_U_weak", "far_Z", "far_U", "extend_Z_minus", "extend_Z_plus"):
        consts = constants_to_use(p, q, k, strict=strict)
        extra = {"k": k} if name.startswith("extend") else {}
        return xi_region_barrier(name, params, region, consts, n_x, n_t, **extra)
    if name.startswith("parab_outer"):
        which = {
            "parab_outer_U_lower": "U-",
            "parab_outer_U_upper": "U+",
            "parab_outer_Z_lower": "Z-",
            "parab_outer_Z_upper": "Z+",
        }[name]
        return parab_outer_barrier(params, k, which, tau0=region.tau0, dtau=region.tau1 - region.tau0, n_x=n_x, n_t=n_t)
    if name == "outer_sine_cone":
        return residual(outer_sine_cone(params), n_x=n_x, n_t=n_t)[3]
    raise ValueError(f"unknown lemma {name!r}; choose from {LEMMAS}")


def reference_suite(p=5, q=10, k=4, n_x=200, n_t=50, **region_kw):
    """All lemma reports at the reference configuration."""
    region = reference_region(p, q, k, **region_kw)
    return {name: run_lemma(name, p, q, k, region, n_x, n_t) for name in LEMMAS}


# ---------------------------------------------------------------------------
# membership of profile histories in the region sets


@dataclass
class MembershipResult:
    which: str
    conditions: dict
    passed: bool

    def to_dict(self):
        return {"which": self.which, "passed": self.passed, "conditions": self.conditions}


def log_derivatives(gamma, f):
    """(f_gamma, f_gammagamma) from a stencil in log gamma.

    On geometric grids this keeps the uniform-grid accuracy and
    differentiates log gamma exactly.
    """
    st = Stencil(np.log(gamma))
    f1, f2 = st.d1(f), st.d2(f)
    return f1 / gamma, (f2 - f1) / gamma**2


_derivs = log_derivatives


def _cond(store, name, excess, gamma, tau):
    """Record max(excess) (positive = violated) and where it occurs."""
    excess = np.asarray(excess, dtype=float)
    if excess.size == 0:
        store.setdefault(name, {"max_violation": -math.inf, "gamma": None, "tau": None, "samples": 0})
        return
    i = int(np.argmax(excess))
    entry = store.get(name)
    val = float(excess[i])
    if entry is None or val > entry["max_violation"]:
        store[name] = {
            "max_violation": val,
            "gamma": float(gamma[i]),
            "tau": float(tau),
            "samples": (entry["samples"] if entry else 0) + excess.size,
        }
    else:
        entry["samples"] += excess.size


def _snapshots(history):
    for snap in history:
        if hasattr(snap, "Ztilde") and hasattr(snap, "gamma"):
            if hasattr(snap, "Zt"):
                yield snap.tau, snap.gamma, snap.Zt, snap.Ut
            else:
                yield snap.tau, snap.gamma, None, None
        else:
            tau, gamma, Zt, Ut = snap
            yield tau, np.asarray(gamma, float), np.asarray(Zt, float), np.asarray(Ut, float)


def membership_check(history, region, which, p, q, k, consts=None, tol=1e-6, **overrides):
    """Evaluate every inequality of the set ``which`` in {B, I, O, P}.

    ``history`` is an iterable of ``(tau, gamma, Z_tilde, U_tilde)``
    snapshots.  ``overrides`` may replace the region scales used by the
    set (``Upsilon_U``, ``Upsilon_Z``, ``Upsilon`` for the Barrier II
    prefactors, ``beta``, ``Gamma`` for the outer set) and the constants
    ``D0U, D0Z, D1, D2, D3`` (inner), ``DO0, DO1, DO2`` (outer) or
    ``DP0U, DP0Ug, DP0Z, DP1U, DP1Z, DP2U, DP2Z`` (P set).

    Each condition reports its largest violation (positive means the
    inequality fails) and where it happens.  Sign conditions are compared
    in scale-free form against ``tol``, which absorbs finite-difference
    noise where an inequality holds with equality.
    """
    params = cone_constants(p, q)
    B2 = params.B2
    e = exp_a(params)
    lam = b2_lambda(params, k)
    al = region.alpha
    UpsU = overrides.get("Upsilon_U", region.Upsilon_U)
    UpsZ = overrides.get("Upsilon_Z", region.Upsilon_Z)
    beta = overrides.get("beta", region.beta)
    M = overrides.get("M", region.M)
    D = lambda name, default: overrides.get(name, region.D(name, default))  # noqa: E731
    uk, zk = u_mode_series(params, k), z_lambda_series(params, k)
    out = {}
    if which not in ("B", "I", "O", "P"):
        raise ValueError("which must be one of B, I, O, P")
    if which in ("I", "P") and consts is None:
        consts = constants_to_use(p, q, k, strict=q >= 10)
    for tau, g, Zt, Ut in _snapshots(history):
        Ug, Ugg = _derivs(g, Ut)
        Zg, Zgg = _derivs(g, Zt)
        E = math.exp(lam * tau)
        if which == "B":
            etaU0, etaU1, etaU2, etaZ0, etaZ1, etaZ2 = region.eta
            mU = (g > UpsU * math.exp(-al * tau)) & (g < M * math.exp(beta * tau))
            mZ = (g > UpsZ * math.exp(-al * tau)) & (g < M * math.exp(beta * tau))
            w0 = (g ** (-e) + g ** (-2 * lam)) * E
            w1 = (g ** (-e - 1) + g ** (-2 * lam)) * E
            w2 = (g ** (-e - 2) + g ** (-2 * lam)) * E
            # compared relative to the weight: |diff| / w - eta <= 0
            for name, diff, eta_, w, m in (
                ("U0", Ut - E * uk(g), etaU0, w0, mU),
                ("U1", Ug - E * uk(g, 1), etaU1, w1, mU),
                ("U2", Ugg - E * uk(g, 2), etaU2, w2, mU),
                ("Z0", Zt - E * zk(g), etaZ0, w0, mZ),
                ("Z1", Zg - E * zk(g, 1), etaZ1, w1, mZ),
                ("Z2", Zgg - E * zk(g, 2), etaZ2, w2, mZ),
            ):
                _cond(out, name, (np.abs(diff) / w - eta_)[m], g[m], tau)
        elif which == "I":
            Ups = overrides.get("Upsilon", UpsU)
            a, b, c, kappa, eps = consts.a, consts.b, consts.c, consts.kappa, consts.eps
            mU = g <= UpsU * math.exp(-al * tau)
            mZ = g <= UpsZ * math.exp(-al * tau)
            xi = g * math.exp(al * tau)
            _cond(out, "U>=0", (-Ut)[mU] - tol, g[mU], tau)
            # scaled by gamma (resp. gamma^2): both hold with equality where
            # the tip closes smoothly
            _cond(out, "U_g>=-1/g", (-1 - g * Ug)[mU] - tol, g[mU], tau)
            _cond(out, "U_g<=0", (g * Ug)[mU] - tol, g[mU], tau)
            _cond(out, "U_gg+U_g/g>=0", (-(g**2 * Ugg + g * Ug))[mU] - tol, g[mU], tau)
            _cond(out, "Z>=0", (-Zt)[mZ] - tol, g[mZ], tau)
            _cond(out, "Z<=1-B^2", (Zt - (1 - B2))[mZ] - tol, g[mZ], tau)
            _cond(out, "weighted_C2_U", (np.abs(g * Ug) + np.abs(g**2 * Ugg) - D("D0U", 2.0))[mU], g[mU], tau)
            _cond(out, "weighted_C2_Z", (np.abs(Zt) + np.abs(g * Zg) + np.abs(g**2 * Zgg) - D("D0Z", 2.0))[mZ], g[mZ], tau)
            _cond(out, "barrier_II_a", (Ut - D("D1", 1.0) * Ups ** (a - e) * xi**-a)[mU], g[mU], tau)
            _cond(out, "barrier_II_b", (Zt - D("D2", 1.0) * Ups ** (b / a * (a - e) + eps) * xi**-b)[mZ], g[mZ], tau)
            _cond(out, "barrier_II_c", (Ut - D("D3", 1.0) * Ups**c * xi ** (-e - kappa))[mU], g[mU], tau)
        elif which == "O":
            Gamma = overrides.get("Gamma", M * math.exp(region.beta_bar * tau))
            T = overrides.get("T", math.exp(-tau))
            D0, D1, D2 = D("DO0", 1.0), D("DO1", 1.0), D("DO2", None)
            m = g >= Gamma
            Z = B2 + Zt
            t = T - math.exp(-tau)
            psi = g * math.exp(-tau / 2)
            zlow = sine_cone_barrier(D0 + 1.0, D1, t, params, psi=psi)[1]
            _cond(out, "U>=0", (-Ut)[m] - tol, g[m], tau)
            _cond(out, "U_g<=D0/g", (g * Ug - D0)[m] - tol, g[m], tau)
            _cond(out, "Z>=z_minus", (zlow - Z)[m] - tol, g[m], tau)
            _cond(out, "Z<=1", (Z - 1)[m] - tol, g[m], tau)
            if D2 is not None:
                from .core_geometry import RescaledProfile

                prof = from_rescaled(RescaledProfile.from_perturbation(params, g, Zt, Ut, tau, T))
                rm = rm_proxy(prof)
                _cond(out, "|Rm|<=D2 e^tau", (rm - D2 * math.exp(tau))[m], g[m], tau)
        else:  # P
            l, kappa = consts.l, consts.kappa
            eU = math.exp(-al * tau)
            m1 = g <= UpsU * eU
            m2 = g <= eU
            m3 = (g >= eU) & (g <= UpsU * eU)
            m3z = (g >= eU) & (g <= UpsZ * eU)
            xi = g * math.exp(al * tau)
            m4 = (g >= M * math.exp(beta * tau)) & (g <= M * math.exp(beta * tau) + 1)
            _cond(out, "U>=0", (-Ut)[m1] - tol, g[m1], tau)
            _cond(out, "|U_g|<=1/g", (np.abs(Ug) - 1 / g)[m1] - tol, g[m1], tau)
            cap = D("DP0U", 2.0) * np.minimum(np.abs(np.log(g)), UpsU**l * xi ** (-e - kappa))
            _cond(out, "|U|<=D0 min(|log g|, ...)", (np.abs(Ut) - cap)[m2], g[m2], tau)
            _cond(out, "weighted_C2_U_core", (np.abs(g * Ug) + np.abs(g**2 * Ugg) - D("DP0Ug", 2.0))[m2], g[m2], tau)
            _cond(out, "weighted_C2_Z_core", (np.abs(Zt) + np.abs(g * Zg) + np.abs(g**2 * Zgg) - D("DP0Z", 2.0))[m2], g[m2], tau)
            wU = np.abs(Ut) + np.abs(g * Ug) + np.abs(g**2 * Ugg)
            wZ = np.abs(Zt) + np.abs(g * Zg) + np.abs(g**2 * Zgg)
            _cond(out, "inner_U_decay", (wU - D("DP1U", 10.0) * UpsU**l * xi**-e)[m3], g[m3], tau)
            _cond(out, "inner_Z_decay", (wZ - D("DP1Z", 10.0) * UpsU**l * xi**-e)[m3z], g[m3z], tau)
            gw = g ** (-2 * lam) * E
            _cond(out, "outer_U", (np.abs(Ut) + np.abs(Ug) + np.abs(Ugg) - D("DP2U", 10.0) * gw)[m4], g[m4], tau)
            _cond(out, "outer_Z", (np.abs(Zt) + np.abs(Zg) + np.abs(Zgg) - D("DP2Z", 10.0) * gw)[m4], g[m4], tau)
    passed = all(v["max_violation"] <= 0 for v in out.values())
    return MembershipResult(which, out, passed)
