"""Initial data near the Ricci-flat cone, perturbed by a chosen eigenmode.

The construction has three pieces, all at the initial time tau0:

* parabolic block: a finite sum of separable modes on
  ``Upsilon_bar e^{-alpha tau0} < gamma < M e^{beta_bar tau0}``;
* inner extension: the tip is closed smoothly (Z -> 1, U bounded) by
  prescribing the two-dimensional Laplacian ``f = U'' + U'/gamma >= 0``;
* outer extension: a smooth blend onto an exact sine cone, which reaches
  the equator psi = B lambda where the metric is reflected.

``assemble`` glues the pieces, builds the arclength profile of one half of
the reflection-symmetric metric and checks membership in the inner,
parabolic and outer sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, quad
from scipy.interpolate import CubicSpline

from .barriers import RegionParams, constants_to_use, log_derivatives, membership_check, sine_cone_barrier
from .core_geometry import RescaledProfile, WarpedProfile, cone_constants, from_rescaled, rm_proxy
from .diagnostics import projection_vector
from .flow_engine import PerturbationFields, smoothstep
from .spectral import (
    alpha_k,
    b2_lambda,
    exp_a,
    interlacing_index,
    u_mode_series,
    z_lambda_series,
    z_mode_series,
)


@dataclass
class ModeCoefficients:
    """Amplitudes of the slower modes added to the k-th separable mode."""

    p_vec: np.ndarray
    q_vec: np.ndarray
    k: int
    K: int
    eps0: float = 0.1

    def __post_init__(self):
        self.p_vec = np.atleast_1d(np.asarray(self.p_vec, dtype=float))
        self.q_vec = np.atleast_1d(np.asarray(self.q_vec, dtype=float))
        if self.p_vec.size != self.k:
            raise ValueError(f"p_vec needs {self.k} entries, got {self.p_vec.size}")
        if self.q_vec.size != self.K + 1:
            raise ValueError(f"q_vec needs K+1 = {self.K + 1} entries, got {self.q_vec.size}")
        if self.eps0 <= 0:
            raise ValueError("eps0 must be positive")

    @classmethod
    def zero(cls, params, k, eps0=0.1):
        K = interlacing_index(params, k)
        return cls(np.zeros(k), np.zeros(K + 1), k, K, eps0)

    @classmethod
    def on_sphere(cls, params, k, tau0, direction, radius=1.0, eps0=0.1):
        """Coefficients ``radius * eps0 e^{B^2 lambda_k tau0} * direction/|direction|``."""
        K = interlacing_index(params, k)
        d = np.asarray(direction, dtype=float)
        if d.size != k + K + 1 or not np.any(d):
            raise ValueError(f"direction needs {k + K + 1} entries, not all zero")
        v = radius * eps0 * math.exp(b2_lambda(params, k) * tau0) * d / np.linalg.norm(d)
        return cls(v[:k], v[k:], k, K, eps0)

    @property
    def vector(self):
        return np.concatenate([self.p_vec, self.q_vec])

    def validate(self, params, tau0, rtol=1e-12):
        K = interlacing_index(params, self.k)
        if K != self.K:
            raise ValueError(f"K = {self.K} disagrees with the interlacing index {K}")
        bound = self.eps0 * math.exp(b2_lambda(params, self.k) * tau0)
        if np.linalg.norm(self.vector) > bound * (1 + rtol):
            raise ValueError("coefficients lie outside the ball of radius eps0 e^{B^2 lambda_k tau0}")
        return True


def parabolic_series(coeffs, params, tau0):
    """(Z_tilde, U_tilde) of the parabolic block as power series in gamma."""
    k = coeffs.k
    E = math.exp(b2_lambda(params, k) * tau0)
    U = u_mode_series(params, k).scaled(E)
    for j, pj in enumerate(coeffs.p_vec):
        U = U + u_mode_series(params, j).scaled(pj)
    Z = z_lambda_series(params, k).scaled(E)
    for j, qj in enumerate(coeffs.q_vec):
        Z = Z + z_mode_series(params, j).scaled(qj)
    return Z, U


def parabolic_block(coeffs, params, tau0, gamma, deriv=0):
    """Samples of the parabolic block (Z_tilde, U_tilde) or its derivatives."""
    coeffs.validate(params, tau0)
    Z, U = parabolic_series(coeffs, params, tau0)
    g = np.asarray(gamma, dtype=float)
    return Z(g, deriv), U(g, deriv)


# ---------------------------------------------------------------------------
# inner extension


def _bump(y):
    y = np.asarray(y, dtype=float)
    inside = np.abs(y) < 1
    return np.where(inside, np.exp(-1.0 / np.where(inside, 1 - y * y, 1.0)), 0.0)


_BUMP_MASS = quad(lambda y: math.exp(-1.0 / (1 - y * y)), -1, 1, epsabs=1e-15)[0]


@dataclass
class InnerExtension:
    """Fields on 0 < gamma <= Upsilon_bar e^{-alpha tau0}.

    With w a smooth step in log gamma from ``g1`` to ``g2`` and b a bump
    centred at ``gc`` (log half-width ``L``), the Laplacian of U is
    f = w f_par + c b / gamma^2 with c fixed by gamma U_gamma -> -1 at 0,
    and Z = (1 - w)(1 - B^2) + w Z_par.  On [g2, gamma_b] both fields equal
    the parabolic block exactly.
    """

    params: object
    series: tuple
    g1: float
    g2: float
    gc: float
    L: float
    c: float
    ell: np.ndarray
    G: np.ndarray
    U: np.ndarray
    checks: dict = field(default_factory=dict)

    def w(self, gamma):
        y = (np.log(gamma) - math.log(self.g1)) / math.log(self.g2 / self.g1)
        return smoothstep(y)[0]

    def f(self, gamma):
        g = np.asarray(gamma, dtype=float)
        Zs, Us = self.series
        fpar = Us(g, 2) + Us(g, 1) / g
        return self.w(g) * fpar + self.c * _bump(np.log(g / self.gc) / self.L) / g**2

    def fields(self, gamma):
        """(Z_tilde, U_tilde) at gamma < g2."""
        g = np.asarray(gamma, dtype=float)
        Zs, _ = self.series
        B2 = self.params.B2
        w = self.w(g)
        Z = (1 - w) * (1 - B2) + w * Zs(g)
        ell = np.log(g)
        lo = self.ell[0]
        below = ell < lo
        # below the fine grid U_tilde = U(lo) - (ell - lo) since f = 0 there
        U = np.where(below, self.U[0] - (ell - lo), CubicSpline(self.ell, self.U)(np.clip(ell, lo, None)))
        return Z, U


def inner_extension(coeffs, params, region, tau0, xi1=10.0, xi2=25.0, xi_c=1.0, L=1.5, n_fine=40001):
    """Close the tip smoothly below the parabolic block.

    ``xi*`` are positions in xi = gamma e^{alpha tau0}; they must satisfy
    xi_c e^{L} < xi1 < xi2 < Upsilon_bar.  Raises if the integral
    constraint cannot be met with f >= 0.
    """
    if coeffs.k % 2:
        raise ValueError("k must be even: the small-gamma constant of U_tilde must be positive")
    al = alpha_k(params, coeffs.k)
    if not (xi_c * math.exp(L) < xi1 < xi2 < region.Upsilon_bar):
        raise ValueError("need xi_c e^L < xi1 < xi2 < Upsilon_bar")
    sc = math.exp(-al * tau0)
    g1, g2, gc = xi1 * sc, xi2 * sc, xi_c * sc
    gb = region.Upsilon_bar * sc
    Zs, Us = parabolic_series(coeffs, params, tau0)
    B2 = params.B2
    probe = np.geomspace(g1, gb, 400)
    fpar = Us(probe, 2) + Us(probe, 1) / probe
    # fine log grid for gamma U_gamma = -1 + int_0^gamma s f(s) ds
    ell = np.linspace(math.log(gc) - L, math.log(g2), n_fine)
    g = np.exp(ell)
    y = (ell - math.log(g1)) / math.log(g2 / g1)
    w = smoothstep(y)[0]
    fp = Us(g, 2) + Us(g, 1) / g
    bump = _bump((ell - math.log(gc)) / L)
    I_w = cumulative_simpson(g * g * w * fp, x=ell, initial=0.0)
    I_b = L * _BUMP_MASS
    target = g2 * Us(g2, 1)
    c = (target + 1 - I_w[-1]) / I_b
    checks = {
        "f_par>=0 on [g1, gamma_b]": bool(np.all(fpar >= 0)),
        "c>=0": c >= 0,
        "0<=Z_par<=1-B^2 on [g1, g2]": bool(np.all((Zs(probe[probe <= g2]) >= 0) & (Zs(probe[probe <= g2]) <= 1 - B2))),
        "U_par_gamma(gamma_b)<=0": float(Us(gb, 1)) <= 0,
    }
    if not (checks["c>=0"] and checks["f_par>=0 on [g1, gamma_b]"]):
        raise ValueError(
            f"inner extension infeasible: c = {c:.6g}, gamma U_gamma(gamma_b) = {gb * float(Us(gb, 1)):.6g}, "
            f"min f_par = {fpar.min():.6g}"
        )
    G = -1 + c * cumulative_simpson(bump, x=ell, initial=0.0) * 1.0 + I_w
    # G is gamma U_gamma; U(ell) = U_par(g2) - int_ell^{ell2} G
    Gint = cumulative_simpson(G, x=ell, initial=0.0)
    U = float(Us(g2)) - (Gint[-1] - Gint)
    ext = InnerExtension(params, (Zs, Us), g1, g2, gc, L, c, ell, G, U, checks)
    ext.checks["match_gamma_U_gamma"] = abs(G[-1] - target) < 1e-9
    ext.checks["sup|gamma^2 f|<=1"] = float(np.max(np.abs(g * g * ext.f(g)))) <= 1.0
    return ext


# ---------------------------------------------------------------------------
# outer extension


@dataclass
class OuterExtension:
    """Blend on [Gamma, 2 Gamma] onto the sine cone Z = B^2 - psi^2/lambda^2, U_tilde = 0."""

    params: object
    series: tuple
    Gamma: float
    tau0: float
    lam: float
    D0: float
    D1: float
    checks: dict = field(default_factory=dict)

    def chi(self, gamma):
        s, s1, s2 = smoothstep((np.asarray(gamma, dtype=float) - self.Gamma) / self.Gamma)
        return 1 - s

    @property
    def gamma_equator(self):
        return self.params.B * self.lam * math.exp(self.tau0 / 2)

    def fields(self, gamma):
        g = np.asarray(gamma, dtype=float)
        Zs, Us = self.series
        chi = self.chi(g)
        psi = g * math.exp(-self.tau0 / 2)
        Zt = chi * Zs(g) - (1 - chi) * psi**2 / self.lam**2
        Ut = chi * Us(g)
        return Zt, Ut


def outer_extension(coeffs, params, region, tau0, D0=1.0, D1=None, lam=1.0, T=None):
    """Outer completion through the equator.

    D1 defaults to the smallest K0 with z_-(.; D0+1, K0) <= z on the
    sine cone, times 1.25.  Raises if the interface data is not above the
    cone (U_tilde < 0 there) or if the sine cone does not dominate z_-.
    """
    if coeffs.k % 2:
        raise ValueError("k must be even")
    B2 = params.B2
    Gamma = region.M * math.exp(region.beta_bar * tau0)
    psi_I = Gamma * math.exp(-tau0 / 2)
    if 2 * psi_I >= 0.5 * params.B * lam:
        raise ValueError("outer blend reaches the equator: increase tau0 or lam")
    Zs, Us = parabolic_series(coeffs, params, tau0)
    C = D0 + 1
    a0 = (params.q - 1) / (params.q - 1 + params.p * C**2)
    D1_min = 2 * a0 / (B2 * lam**2)
    D1 = 1.25 * D1_min if D1 is None else D1
    T = math.exp(-tau0) if T is None else T
    t = T - math.exp(-tau0)
    ext = OuterExtension(params, (Zs, Us), Gamma, tau0, lam, D0, D1)
    g = np.geomspace(Gamma, 0.999 * ext.gamma_equator, 2000)
    Zt, Ut = ext.fields(g)
    psi = g * math.exp(-tau0 / 2)
    zlow = sine_cone_barrier(C, D1, t, params, psi=psi)[1]
    if float(Us(Gamma)) < 0:
        raise ValueError("interface U_tilde < 0: log(phi/psi) < log(A/B); k even and tau0 >> 1 are needed")
    ext.checks = {
        "U_tilde(Gamma)>=0": float(Us(Gamma)) >= 0,
        "D1>=D1_min": D1 >= D1_min,
        "z>=z_minus": bool(np.all(B2 + Zt >= zlow)),
        "z<=1": bool(np.all(B2 + Zt <= 1)),
        "phi>=(A/B)psi": bool(np.all(Ut >= 0)),
    }
    return ext


# ---------------------------------------------------------------------------
# assembly


@dataclass
class InitialData:
    params: object
    coeffs: ModeCoefficients
    region: RegionParams
    tau0: float
    T: float
    gamma: np.ndarray
    Ztilde: np.ndarray
    Utilde: np.ndarray
    profile: WarpedProfile
    inner: InnerExtension
    outer: OuterExtension
    membership: dict
    constants: dict

    @property
    def passed(self):
        ok = all(m.passed for m in self.membership.values())
        return ok and all(self.inner.checks.values()) and all(self.outer.checks.values())

    def rescaled(self):
        return RescaledProfile.from_perturbation(self.params, self.gamma, self.Ztilde, self.Utilde, self.tau0, self.T)

    def fields(self, M=None, beta=None):
        r = self.region
        return PerturbationFields(self.gamma, self.Ztilde, self.Utilde, self.tau0, r.M if M is None else M, r.beta if beta is None else beta)

    def report(self):
        return {
            "p": self.params.p,
            "q": self.params.q,
            "k": self.coeffs.k,
            "K": self.coeffs.K,
            "tau0": self.tau0,
            "coefficients": self.coeffs.vector.tolist(),
            "passed": self.passed,
            "inner_checks": {k: bool(v) for k, v in self.inner.checks.items()},
            "outer_checks": {k: bool(v) for k, v in self.outer.checks.items()},
            "constants": self.constants,
            "membership": {k: v.to_dict() for k, v in self.membership.items()},
        }


def ball_eta(params, k, eps0, margin=2.0, gamma=None):
    """Parabolic tolerances eta that contain the whole coefficient ball.

    By Cauchy-Schwarz, |sum c_j f_j| <= |c| (sum f_j^2)^{1/2}; the returned
    eta_i is ``margin * eps0 * sup (sum_j |d^i f_j|^2)^{1/2} / weight_i``.
    """
    K = interlacing_index(params, k)
    e = exp_a(params)
    s = -2 * b2_lambda(params, k)
    g = np.geomspace(1e-12, 1e12, 6000) if gamma is None else np.asarray(gamma, dtype=float)
    out = []
    for fam in ("U", "Z"):
        modes = [u_mode_series(params, j) for j in range(k)] if fam == "U" else [z_mode_series(params, j) for j in range(K + 1)]
        for d in range(3):
            vals = np.sqrt(sum(m(g, d) ** 2 for m in modes))
            w = g ** (-e - d) + g**s
            out.append(margin * eps0 * float(np.max(vals / w)))
    return tuple(out)


def fixture_region(p=5, q=5, k=4, eps0=0.1, **kw):
    """Reference region for the initial-data fixture."""
    params = cone_constants(p, q)
    opts = dict(
        Upsilon_U=1e3,
        Upsilon_Z=1e5,
        Upsilon_bar=50.0,
        M=1.0,
        alpha=alpha_k(params, k),
        beta=0.25,
        beta_bar=0.45,
        tau0=40.0,
        tau1=43.0,
        eta=ball_eta(params, k, eps0),
    )
    opts.update(kw)
    return RegionParams(**opts)


def _gamma_grid(inner, outer, per_decade):
    lo = inner.gc * math.exp(-inner.L) * 1e-3
    hi = 0.999 * outer.gamma_equator
    n = int(per_decade * math.log10(hi / lo)) + 1
    return np.geomspace(lo, hi, n)


def _arclength_profile(params, gamma, Zt, Ut, tau0, t, outer, n_pole=8):
    """Arclength profile from the pole to the equator (one half)."""
    sc = math.exp(-tau0 / 2)
    psi = gamma * sc
    z = params.B2 + Zt
    u = np.log(params.A * gamma / params.B) + Ut - tau0 / 2
    ell = np.log(psi)
    # s(psi) = int dpsi / sqrt(z); near the pole z = 1 exactly so s = psi there
    s = psi[0] + cumulative_simpson(psi / np.sqrt(z), x=ell, initial=0.0)
    # sine-cone part: replace by the exact arclength, which also reaches the equator
    lam, B = outer.lam, params.B
    cone = gamma >= 2 * outer.Gamma
    i0 = int(np.argmax(cone))
    shift = s[i0] - lam * math.asin(psi[i0] / (lam * B))
    s[cone] = shift + lam * np.arcsin(psi[cone] / (lam * B))
    s_eq = shift + lam * math.pi / 2
    # close the equator with a few exact sine-cone points
    th = np.linspace(math.asin(psi[-1] / (lam * B)), math.pi / 2, 6)[1:]
    s_tail = shift + lam * th
    psi_tail = lam * B * np.sin(th)
    phi_tail = params.A / B * psi_tail
    s_head = np.linspace(0.0, s[0], n_pole + 1)[:-1]
    x = np.concatenate([s_head, s, s_tail])
    psi_all = np.concatenate([s_head, psi, psi_tail])
    phi_all = np.concatenate([np.full(n_pole, math.exp(u[0])), np.exp(u), phi_tail])
    prof = WarpedProfile(x, np.ones_like(x), phi_all, psi_all, t, poles=(True, False), symmetric=True)
    return prof, s_eq


def assemble(coeffs, params, region, tau0=None, T=None, per_decade=120, D0=1.0, D1=None, lam=1.0, consts=None, D_inner=None):
    """Glue the three pieces and check membership at tau0.

    The inner set is checked up to Upsilon_bar e^{-alpha tau0} with the
    Barrier II prefactors built from Upsilon_U, the parabolic set on
    (Upsilon_U e^{-alpha tau0}, M e^{beta tau0}) and the outer set beyond
    M e^{beta_bar tau0}.  Returns an :class:`InitialData`.
    """
    tau0 = region.tau0 if tau0 is None else tau0
    T = math.exp(-tau0) if T is None else T
    if coeffs.k % 2:
        raise ValueError("k must be even")
    coeffs.validate(params, tau0)
    p, q, k = params.p, params.q, coeffs.k
    inner = inner_extension(coeffs, params, region, tau0)
    outer = outer_extension(coeffs, params, region, tau0, D0=D0, D1=D1, lam=lam, T=T)
    g = _gamma_grid(inner, outer, per_decade)
    Zs, Us = parabolic_series(coeffs, params, tau0)
    Zt, Ut = Zs(g), Us(g)
    m_in = g < inner.g2
    Zt[m_in], Ut[m_in] = inner.fields(g[m_in])
    m_out = g > outer.Gamma
    Zt[m_out], Ut[m_out] = outer.fields(g[m_out])
    t = T - math.exp(-tau0)
    prof, s_eq = _arclength_profile(params, g, Zt, Ut, tau0, t, outer)

    if consts is None:
        consts = constants_to_use(p, q, k, strict=q >= 10)
    al = alpha_k(params, k)
    xi = g * math.exp(al * tau0)
    mI = g <= region.Upsilon_bar * math.exp(-al * tau0)
    # rm_proxy over the outer region, in unrescaled units
    side = from_rescaled(RescaledProfile.from_perturbation(params, g, Zt, Ut, tau0, T))
    rm = rm_proxy(side)
    D2_meas = float(np.max(rm[m_out]) * math.exp(-tau0))
    if D_inner is None:
        D_inner = _measure_inner_constants(g[mI], Zt[mI], Ut[mI], xi[mI], region, consts, exp_a(params))
    D_all = dict(D_inner)
    D_all.update({"DO0": D0, "DO1": outer.D1, "DO2": 2 * D2_meas})
    snap = [(tau0, g, Zt, Ut)]
    membership = {
        "I": membership_check(snap, region, "I", p, q, k, consts, Upsilon_U=region.Upsilon_bar, Upsilon_Z=region.Upsilon_bar, Upsilon=region.Upsilon_U, **D_all),
        "B": membership_check(snap, region, "B", p, q, k),
        "O": membership_check(snap, region, "O", p, q, k, T=T, **D_all),
    }
    constants = {
        "eps0": coeffs.eps0,
        "T": T,
        "lambda": lam,
        "s_equator": s_eq,
        "D2_measured": D2_meas,
        "inner_c": inner.c,
        "a": consts.a,
        "b": consts.b,
        "c": consts.c,
        "kappa": consts.kappa,
        "eps": consts.eps,
        "eta": list(region.eta),
        **{k_: float(v) for k_, v in D_all.items()},
    }
    return InitialData(params, coeffs, region, tau0, T, g, Zt, Ut, prof, inner, outer, membership, constants)


def _measure_inner_constants(g, Zt, Ut, xi, region, consts, e, margin=2.0):
    """Inner-set constants D as ``margin`` times the values the data needs."""
    Ug, Ugg = log_derivatives(g, Ut)
    Zg, Zgg = log_derivatives(g, Zt)
    Ups = region.Upsilon_U
    a, b, c, kappa, eps = consts.a, consts.b, consts.c, consts.kappa, consts.eps
    need = {
        "D0U": np.max(np.abs(g * Ug) + np.abs(g**2 * Ugg)),
        "D0Z": np.max(np.abs(Zt) + np.abs(g * Zg) + np.abs(g**2 * Zgg)),
        "D1": np.max(Ut / (Ups ** (a - e) * xi**-a)),
        "D2": np.max(Zt / (Ups ** (b / a * (a - e) + eps) * xi**-b)),
        "D3": np.max(Ut / (Ups**c * xi ** (-e - kappa))),
    }
    return {k_: margin * max(float(v), 1e-12) for k_, v in need.items()}


def project(data):
    """Recover (p, q) from assembled data by weighted projection at tau0."""
    k, K = data.coeffs.k, data.coeffs.K
    vec = projection_vector(data.fields(), data.params, k, K)
    return vec[:k], vec[k:]
