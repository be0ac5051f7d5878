"""Spectral theory of the flow linearised at the Ricci-flat cone.

With b = 1/(2B^2) the operators

    D_U = d^2 + (n/g - g/(2B^2)) d + 2(n-1)/g^2
    D_Z = d^2 + ((n-2)/g - g/(2B^2)) d - 2(n-1)/g^2

are self-adjoint on L^2(g^n e^{-b g^2/2}) and L^2(g^{n-2} e^{-b g^2/2}).
Their eigenfunctions are generalised Laguerre polynomials in
x = g^2/(4B^2) times a power of g.  This module evaluates those modes,
weighted inner products, the forced mode Z_lambda = (lambda - D_Z)^{-1} N U,
and the semigroups generated by B^2 D_U and B^2 D_Z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad, quad_vec, solve_bvp
from scipy.special import gammaln, roots_genlaguerre

# ---------------------------------------------------------------------------
# constants


def _require_spectral(params):
    if not params.spectral_ok:
        raise ValueError(f"spectral features unavailable for n = {params.n} < 10")


def laguerre_alpha(params):
    """alpha = sqrt((n-9)(n-1)) / 2, the Laguerre parameter of the U-modes."""
    _require_spectral(params)
    return 0.5 * math.sqrt((params.n - 9) * (params.n - 1))


def exp_a(params):
    """Small-gamma decay exponent e = (n-1)/2 - sqrt((n-9)(n-1))/2."""
    _require_spectral(params)
    return 0.5 * (params.n - 1) - laguerre_alpha(params)


def b2_lambda(params, k):
    """B^2 lambda_k = -k + e/2."""
    if k < 0:
        raise ValueError("mode index must be >= 0")
    return -k + 0.5 * exp_a(params)


def b2_h(params, j):
    """B^2 h_j = -(j + 1)."""
    if j < 0:
        raise ValueError("mode index must be >= 0")
    return -(j + 1.0)


def eigenvalue_u(params, k):
    return b2_lambda(params, k) / params.B2


def eigenvalue_z(params, j):
    return b2_h(params, j) / params.B2


def alpha_k(params, k):
    """Rate exponent -B^2 lambda_k / e; defined when lambda_k < 0."""
    lam = b2_lambda(params, k)
    if lam >= 0:
        raise ValueError(f"alpha_k needs lambda_k < 0 (k = {k})")
    return -2.0 * lam / (params.n - 1 - math.sqrt((params.n - 9) * (params.n - 1)))


def interlacing_index(params, k):
    """K with h_{K+1} < lambda_k < h_K, or raise if lambda_k is resonant."""
    lam = b2_lambda(params, k)
    if lam >= -1.0:
        raise ValueError("lambda_k must lie below h_0")
    K = math.floor(-lam) - 1
    if abs(lam + K + 1) < 1e-12 or abs(lam + K + 2) < 1e-12:
        raise ValueError("resonant mode: lambda_k coincides with some h_j")
    return K


@dataclass(frozen=True)
class SpectralIndex:
    k: int
    j: int
    lambda_k: float
    h_j: float
    b2_lambda_k: float
    b2_h_j: float
    alpha_k: float
    exp_a: float


def spectral_index(params, k, j=0):
    lam = b2_lambda(params, k)
    a = alpha_k(params, k) if lam < 0 else float("nan")
    return SpectralIndex(k, j, lam / params.B2, b2_h(params, j) / params.B2, lam, b2_h(params, j), a, exp_a(params))


# ---------------------------------------------------------------------------
# Laguerre polynomials


def laguerre(j, alpha, x):
    """L_j^{(alpha)}(x) by the three-term recurrence."""
    if j < 0 or int(j) != j:
        raise ValueError("degree must be a non-negative integer")
    if alpha <= -1:
        raise ValueError("alpha must exceed -1")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if j == 0:
        return prev if prev.ndim else float(prev)
    cur = 1.0 + alpha - x
    for m in range(1, int(j)):
        prev, cur = cur, ((2 * m + 1 + alpha - x) * cur - (m + alpha) * prev) / (m + 1)
    return cur if cur.ndim else float(cur)


def laguerre_table(jmax, alpha, x):
    """Array ``L[j, ...] = L_j^{(alpha)}(x)`` for j = 0..jmax."""
    if alpha <= -1:
        raise ValueError("alpha must exceed -1")
    x = np.asarray(x, dtype=float)
    out = np.empty((jmax + 1,) + x.shape)
    out[0] = 1.0
    if jmax >= 1:
        out[1] = 1.0 + alpha - x
    for m in range(1, jmax):
        out[m + 1] = ((2 * m + 1 + alpha - x) * out[m] - (m + alpha) * out[m - 1]) / (m + 1)
    return out


def log_binom(a, k):
    return gammaln(a + 1) - gammaln(k + 1) - gammaln(a - k + 1)


def binom(a, k):
    return math.exp(log_binom(a, k))


# ---------------------------------------------------------------------------
# power series in gamma (finite sums of c * gamma^s)


@dataclass(frozen=True)
class PowerSeries:
    coeffs: tuple
    powers: tuple

    def __call__(self, g, deriv=0):
        g = np.asarray(g, dtype=float)
        out = np.zeros_like(g)
        for c, s in zip(self.coeffs, self.powers):
            fac = 1.0
            for d in range(deriv):
                fac *= s - d
            if fac != 0.0:
                out = out + c * fac * g ** (s - deriv)
        return out

    def scaled(self, a):
        return PowerSeries(tuple(a * c for c in self.coeffs), self.powers)

    def __add__(self, other):
        terms = {}
        for c, s in list(zip(self.coeffs, self.powers)) + list(zip(other.coeffs, other.powers)):
            terms[s] = terms.get(s, 0.0) + c
        ps = sorted(terms)
        return PowerSeries(tuple(terms[s] for s in ps), tuple(ps))

    @property
    def leading(self):
        """(coefficient, power) of the largest power."""
        i = int(np.argmax(self.powers))
        return self.coeffs[i], self.powers[i]


# ---------------------------------------------------------------------------
# eigenfunctions


def c_const(params, k):
    """Normalisation c_k of the U-modes."""
    al = laguerre_alpha(params)
    B2 = params.B2
    return math.exp(0.5 * (-math.log(2 * B2) - al * math.log(4 * B2) + gammaln(k + 1) - gammaln(k + al + 1)))


def d_const(params, j):
    """Normalisation d_j of the Z-modes."""
    _require_spectral(params)
    B2 = params.B2
    be = 0.5 * (params.n + 1)
    return math.exp(0.5 * (-0.5 * math.log(B2) - 0.5 * (params.n + 2) * math.log(4 * B2) + gammaln(j + 1) - gammaln(j + be + 1)))


def eigenfunction_u(params, k, gamma):
    """U_{lambda_k}(g) = c_k g^{-e} L_k^{(alpha)}(g^2 / 4B^2)."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g <= 0):
        raise ValueError("U-modes are singular at gamma = 0; need gamma > 0")
    return c_const(params, k) * g ** (-exp_a(params)) * laguerre(k, laguerre_alpha(params), g * g / (4 * params.B2))


def eigenfunction_z(params, j, gamma):
    """Z_{h_j}(g) = d_j g^2 L_j^{((n+1)/2)}(g^2 / 4B^2)."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g <= 0):
        raise ValueError("gamma must be positive")
    return d_const(params, j) * g**2 * laguerre(j, 0.5 * (params.n + 1), g * g / (4 * params.B2))


def u_mode_series(params, k):
    """U_{lambda_k} as a finite power series in gamma."""
    al, e, B2 = laguerre_alpha(params), exp_a(params), params.B2
    ck = c_const(params, k)
    coeffs, powers = [], []
    for i in range(k + 1):
        coeffs.append(ck * (-1) ** i * binom(k + al, k - i) / (math.factorial(i) * (4 * B2) ** i))
        powers.append(-e + 2 * i)
    return PowerSeries(tuple(coeffs), tuple(powers))


def z_mode_series(params, j):
    be, B2 = 0.5 * (params.n + 1), params.B2
    dj = d_const(params, j)
    coeffs = [dj * (-1) ** i * binom(j + be, j - i) / (math.factorial(i) * (4 * B2) ** i) for i in range(j + 1)]
    return PowerSeries(tuple(coeffs), tuple(2.0 + 2 * i for i in range(j + 1)))


def z_lambda_series(params, k):
    """Exact forced mode Z_{lambda_k} = (lambda_k - D_Z)^{-1} N U_{lambda_k}.

    The coefficients of g^{-e+2i}, i = 0..k, follow from matching powers:
    z_i P(s_i) = z_{i-1} (i-1-k)/B^2 + 4 p B^2 s_i u_i with
    P(s) = (s-2)(s+n-1).  The recursion terminates at i = k.
    """
    n, p, B2 = params.n, params.p, params.B2
    u = u_mode_series(params, k)
    z = []
    for i, (ui, si) in enumerate(zip(u.coeffs, u.powers)):
        P = (si - 2) * (si + n - 1)
        if abs(P) < 1e-12:
            raise ValueError("resonant mode: exponent hits an indicial root of D_Z")
        prev = z[-1] * (i - 1 - k) / B2 if i else 0.0
        z.append((prev + 4 * p * B2 * si * ui) / P)
    return PowerSeries(tuple(z), u.powers)


@dataclass(frozen=True)
class EigenData:
    k: int
    c_k: float
    d_k: float
    c_k_prime: float
    c_k_doubleprime: float
    u_small: float
    u_large: float
    z_small: float
    z_large: float
    z_large_power: float


def c_prime_closed(params, k):
    """Small-gamma constant of Z_{lambda_k} as a closed form."""
    e, n, p, B2 = exp_a(params), params.n, params.p, params.B2
    al = laguerre_alpha(params)
    return 4 * p * B2 * (-e) / ((-e - 2) * (n - 1 - e)) * c_const(params, k) * binom(k + al, k)


def c_doubleprime_closed(params, k):
    """The closed-form large-gamma constant 8pB^6 lam/(2B^2 lam + 1) c_k (-4B^2)^{-k}/k!.

    Infinite when 2 B^2 lambda_k = -1.
    """
    B2, p = params.B2, params.p
    lam = eigenvalue_u(params, k)
    den = 2 * B2 * lam + 1
    lead = c_const(params, k) * (-4 * B2) ** (-k) / math.factorial(k)
    if abs(den) < 1e-14:
        return math.inf
    return 8 * p * B2**3 * lam / den * lead


def eigen_data(params, k):
    u = u_mode_series(params, k)
    z = z_lambda_series(params, k)
    zl, zp = z.leading
    return EigenData(
        k=k,
        c_k=c_const(params, k),
        d_k=d_const(params, k),
        c_k_prime=c_prime_closed(params, k),
        c_k_doubleprime=c_doubleprime_closed(params, k),
        u_small=u.coeffs[0],
        u_large=u.leading[0],
        z_small=z.coeffs[0],
        z_large=zl,
        z_large_power=zp,
    )


# ---------------------------------------------------------------------------
# weighted inner products


class QuadratureDivergence(ValueError):
    pass


def weighted_ip(f, g=None, a=0, b=1.0, nodes=128, shift=0.0, check=True):
    """<f, g> = int_0^inf f g r^a exp(-b r^2 / 2) dr by Gauss-Laguerre.

    After x = b r^2 / 2 the integral becomes
    (2/b)^{(a+s)/2} (2b)^{-1/2} int f g r^{-s} x^{(a+s-1)/2} e^{-x} dx
    where ``shift`` s moves a power of r from the integrand into the weight
    (for example s = -2e for products of U-modes, which makes the integrand
    polynomial in x).
    """
    al = 0.5 * (a + shift - 1)
    if al <= -1:
        raise QuadratureDivergence("weight exponent makes the integral diverge at r = 0")
    x, w = roots_genlaguerre(nodes, al)
    r = np.sqrt(2 * x / b)
    vals = np.asarray(f(r), dtype=float)
    if g is not None:
        vals = vals * np.asarray(g(r), dtype=float)
    vals = vals * r ** (-shift)
    terms = w * vals
    scale = (2 / b) ** (0.5 * (a + shift)) / math.sqrt(2 * b)
    total = float(np.sum(terms))
    if check:
        tail = np.max(np.abs(terms[-3:]))
        if not np.isfinite(total) or tail > 1e-8 * max(np.sum(np.abs(terms)), 1e-300):
            raise QuadratureDivergence("integrand tail does not decay; divergent or under-resolved")
    return scale * total


def gram_matrix_u(params, jmax, nodes=128):
    """Gram matrix of U_{lambda_0..jmax} in L^2_{n, 1/(2B^2)}."""
    b = 1 / (2 * params.B2)
    e = exp_a(params)
    G = np.empty((jmax + 1, jmax + 1))
    for i in range(jmax + 1):
        for j in range(i, jmax + 1):
            G[i, j] = G[j, i] = weighted_ip(
                lambda r: eigenfunction_u(params, i, r), lambda r: eigenfunction_u(params, j, r), params.n, b, nodes, shift=-2 * e
            )
    return G


def gram_matrix_z(params, jmax, nodes=128):
    b = 1 / (2 * params.B2)
    G = np.empty((jmax + 1, jmax + 1))
    for i in range(jmax + 1):
        for j in range(i, jmax + 1):
            G[i, j] = G[j, i] = weighted_ip(
                lambda r: eigenfunction_z(params, i, r), lambda r: eigenfunction_z(params, j, r), params.n - 2, b, nodes, shift=4
            )
    return G


def hardy_constants_check(u, a, b, du=None, nodes=128, shift=0.0):
    """Ratios ||r u|| / ||u||_{H^1} and ||u / r|| / ||u||_{H^1} in L^2_{a,b}.

    The division bound needs a > 1; for a = 1 and u(0) != 0 the second
    ratio grows without bound as ``nodes`` increases.
    """
    if du is None:
        def du(r, h=1e-6):
            return (u(r + h) - u(r - h)) / (2 * h)
    kw = dict(a=a, b=b, nodes=nodes, shift=shift, check=False)
    h1 = weighted_ip(u, u, **kw) + weighted_ip(du, du, **kw)
    mult = weighted_ip(lambda r: r * u(r), lambda r: r * u(r), **kw)
    div = weighted_ip(lambda r: u(r) / r, lambda r: u(r) / r, **kw)
    return math.sqrt(mult / h1), math.sqrt(div / h1)


# ---------------------------------------------------------------------------
# forced mode by boundary value problem


@dataclass
class ResolventResult:
    gamma: np.ndarray
    Z: np.ndarray
    small_const: float
    large_const: float
    residual: float
    status: int
    message: str


def resolvent_z_lambda(params, k, gamma_min=1e-3, gamma_max=30.0, n_out=4001, tol=1e-8):
    """Solve (lambda_k - D_Z) Z = N U_{lambda_k} as a two-point BVP.

    In x = log g with W = Z g^e the equation reads
      W'' + (n-3-2e) W' + P(-e) W = e^{2x}[lambda W + (W' - e W)/(2B^2)] + 4pB^2 (V' - e V)
    with U = V g^{-e}.  Robin conditions fix the two power laws:
    W' = 0 at the inner end (Z ~ g^{-e}) and W' = 2k W at the outer end
    (Z ~ g^{-2 B^2 lambda_k}).
    """
    if abs(b2_lambda(params, k) - round(b2_lambda(params, k))) < 1e-12 and b2_lambda(params, k) <= -1:
        raise ValueError("resonant mode: lambda_k is an eigenvalue of D_Z")
    n, p, B2 = params.n, params.p, params.B2
    e = exp_a(params)
    al = laguerre_alpha(params)
    lam = eigenvalue_u(params, k)
    ck = c_const(params, k)
    Pm = e * e - (n - 3) * e - 2 * (n - 1)

    def forcing(x):
        xi = np.exp(2 * x) / (4 * B2)
        V = ck * laguerre(k, al, xi)
        dV = -ck * laguerre(k - 1, al + 1, xi) * 2 * xi if k > 0 else np.zeros_like(xi)
        return 4 * p * B2 * (dV - e * V)

    def fun(x, y):
        W, Wx = y
        ex = np.exp(2 * x)
        rhs = ex * (lam * W + (Wx - e * W) / (2 * B2)) + forcing(x)
        return np.vstack([Wx, rhs - (n - 3 - 2 * e) * Wx - Pm * W])

    def bc(ya, yb):
        return np.array([ya[1], yb[1] - 2 * k * yb[0]])

    xa, xb = math.log(gamma_min), math.log(gamma_max)
    x = np.linspace(xa, xb, 2001)
    y0 = np.zeros((2, x.size))
    sol = solve_bvp(fun, bc, x, y0, tol=tol, max_nodes=400000)
    gx = np.geomspace(gamma_min, gamma_max, n_out)
    W, Wx = sol.sol(np.log(gx))
    Z = W * gx ** (-e)
    rel = float(np.max(np.abs(sol.rms_residuals))) if sol.rms_residuals is not None else float("nan")
    # leading large-gamma constant: fit W g^{-2k} by a cubic in g^{-2} on the outer third
    outer = gx > gamma_max / 3
    coef = np.polyfit(gx[outer] ** -2.0, W[outer] * gx[outer] ** (-2.0 * k), 3)
    return ResolventResult(gx, Z, float(W[0]), float(coef[-1]), rel, sol.status, sol.message)


def resolvent_residual(params, k, res, lo=1e-2, hi=10.0):
    """Relative interior residual of (lambda - D_Z) Z - N U by finite differences."""
    from .fd import Stencil

    g = res.gamma
    st = Stencil(g)
    n, B2 = params.n, params.B2
    lam = eigenvalue_u(params, k)
    Z = res.Z
    DZ = st.d2(Z) + ((n - 2) / g - g / (2 * B2)) * st.d1(Z) - 2 * (n - 1) / g**2 * Z
    U = eigenfunction_u(params, k, g)
    NU = -4 * params.p * B2 / g * st.d1(U)
    r = lam * Z - DZ - NU
    m = (g >= lo) & (g <= hi)
    return float(np.max(np.abs(r[m])) / np.max(np.abs(NU[m])))


# ---------------------------------------------------------------------------
# modified Bessel functions


def _log_bessel_series(nu, x):
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, -np.inf if nu > 0 else 0.0)
    pos = x > 0
    if not np.any(pos):
        return out
    xp = x[pos]
    kmax = int(np.max(xp)) + int(12 * math.sqrt(np.max(xp) + 1)) + 40
    ks = np.arange(kmax)[:, None]
    lt = (2 * ks + nu) * np.log(xp / 2)[None, :] - gammaln(ks + 1) - gammaln(ks + nu + 1)
    mx = np.max(lt, axis=0)
    out[pos] = mx + np.log(np.sum(np.exp(lt - mx), axis=0))
    return out


def _hankel(nu, x, max_terms=80):
    """e^{-x} sqrt(2 pi x) I_nu(x) ~ sum (-1)^k a_k(nu) / x^k; returns (value, ok).

    The sum is cut at its smallest term beyond k = nu + 1/2, where the
    terms stop alternating in growth.  ``ok`` marks arguments at which that
    smallest term is below 1e-14 of the sum.
    """
    mu = 4 * nu * nu
    ks = np.arange(1, max_terms)
    fac = -(mu - (2 * ks - 1) ** 2)[:, None] / (8 * ks[:, None] * x[None, :])
    terms = np.vstack([np.ones((1, x.size)), np.cumprod(fac, axis=0)])
    csum = np.cumsum(terms, axis=0)
    k0 = int(math.ceil(nu + 0.5))
    mag = np.abs(terms)
    mag[:k0] = np.inf
    kstar = np.argmin(mag, axis=0)
    cols = np.arange(x.size)
    total = csum[np.maximum(kstar - 1, 0), cols]
    ok = mag[kstar, cols] < 1e-14 * np.abs(total)
    return total, ok


def log_bessel_i(nu, x, x_switch=None):
    """log I_nu(x) for real nu >= 0, x >= 0."""
    if nu < 0:
        raise ValueError("order must be non-negative")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("argument must be non-negative")
    xs = max(10.0, 2.0 * nu) if x_switch is None else x_switch
    out = np.empty(x.shape)
    # the dropped e^{-x} branch is relatively e^{-2x}; below x = 16 it
    # exceeds the accuracy target, so the series is used there
    big = x > max(xs, 16.0)
    if np.any(big):
        xb = x[big]
        val, ok = _hankel(nu, xb)
        res = xb - 0.5 * np.log(2 * np.pi * xb) + np.log(np.where(ok, val, 1.0))
        if not np.all(ok):
            res[~ok] = _log_bessel_series(nu, xb[~ok])
        out[big] = res
    if np.any(~big):
        out[~big] = _log_bessel_series(nu, x[~big])
    return out if out.ndim else float(out)


def bessel_i(nu, x, scaled=False):
    """Modified Bessel function I_nu(x); ``scaled`` returns I_nu(x) e^{-x}."""
    x = np.asarray(x, dtype=float)
    lv = np.asarray(log_bessel_i(nu, x))
    if scaled:
        lv = lv - x
    out = np.exp(lv)
    return out if out.ndim else float(out)


def exp_tail(R, kappa, b):
    """int_R^inf r^kappa e^{-b r^2/2} dr and its ratio to R^{kappa-1} e^{-bR^2/2}/b."""
    val, _ = quad(lambda r: r**kappa * math.exp(-b * (r * r - R * R) / 2), R, math.inf, epsabs=0, epsrel=1e-13, limit=200)
    lead = R ** (kappa - 1) / b
    return val * math.exp(-b * R * R / 2), val / lead


# ---------------------------------------------------------------------------
# semigroups


def _family(params, which):
    B2 = params.B2
    x_of = lambda g: g * g / (4 * B2)
    if which == "U":
        al = laguerre_alpha(params)
        e = exp_a(params)
        pref = lambda j: c_const(params, j)
        return dict(a=params.n, al=al, gpow=-e, rate=lambda j: b2_lambda(params, j), pref=pref, x_of=x_of,
                    log_c=-math.log(2 * B2) - al * math.log(4 * B2), shift=-e)
    if which == "Z":
        be = 0.5 * (params.n + 1)
        return dict(a=params.n - 2, al=be, gpow=2.0, rate=lambda j: b2_h(params, j), pref=lambda j: d_const(params, j), x_of=x_of,
                    log_c=-0.5 * math.log(B2) - 0.5 * (params.n + 2) * math.log(4 * B2), shift=-1.0)
    raise ValueError("which must be 'U' or 'Z'")


def mode_values(params, which, jmax, gamma):
    fam = _family(params, which)
    g = np.asarray(gamma, dtype=float)
    L = laguerre_table(jmax, fam["al"], fam["x_of"](g))
    pref = np.array([fam["pref"](j) for j in range(jmax + 1)])
    return pref[:, None] * L * g[None, :] ** fam["gpow"]


def mode_coefficients(params, f, which, jmax, support=(0.0, np.inf)):
    """Weighted projections of ``f`` onto modes 0..jmax (adaptive quadrature)."""
    fam = _family(params, which)
    a, B2 = fam["a"], params.B2

    def integrand(g):
        if g <= 0:
            return np.zeros(jmax + 1)
        return mode_values(params, which, jmax, np.array([g]))[:, 0] * f(g) * g**a * math.exp(-g * g / (4 * B2))

    lo, hi = support
    res, _ = quad_vec(integrand, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=400)
    return res


def weighted_norm2(params, f, which, support=(0.0, np.inf)):
    fam = _family(params, which)
    a, B2 = fam["a"], params.B2
    val, _ = quad(lambda g: f(g) ** 2 * g**a * math.exp(-g * g / (4 * B2)), *support, epsabs=0, epsrel=1e-12, limit=400)
    return val


def semigroup_kernel(params, which, dtau, gamma, gbar):
    """Kernel of exp(B^2 D dtau) from the Hille-Hardy bilinear formula.

    Includes the weight, so (T f)(g) = int K(g, gbar) f(gbar) dgbar.
    """
    fam = _family(params, which)
    al, a = fam["al"], fam["a"]
    g = np.asarray(gamma, dtype=float)[..., None]
    gb = np.asarray(gbar, dtype=float)[None, ...] if np.ndim(gbar) else np.asarray([gbar], dtype=float)[None, :]
    t = math.exp(-dtau)
    x, xb = fam["x_of"](g), fam["x_of"](gb)
    y = 2 * np.sqrt(x * xb * t) / (1 - t)
    # rate of mode 0 multiplies every term; the sum runs over t^j
    log_k = (
        fam["rate"](0) * dtau
        + fam["log_c"]
        + fam["gpow"] * (np.log(g) + np.log(gb))
        + a * np.log(gb)
        - 0.5 * al * np.log(x * xb * t)
        - math.log(1 - t)
        - (xb + x * t) / (1 - t)
        + np.asarray(log_bessel_i(al, y.ravel())).reshape(y.shape)
    )
    return np.exp(log_k)


def semigroup_apply(params, f, dtau, gamma, which="U", method="eigen", n_modes=40, support=(0.0, np.inf), report=None):
    """Samples of exp(B^2 D dtau) f at ``gamma``.

    ``method="eigen"`` truncates the mode expansion after ``n_modes`` terms;
    ``method="kernel"`` integrates the Bessel kernel adaptively.  A dict
    passed as ``report`` receives the tail energy (eigen) or the quadrature
    error estimate (kernel).
    """
    g = np.asarray(gamma, dtype=float)
    if dtau == 0:
        return np.asarray([f(x) for x in g])
    if dtau < 0:
        raise ValueError("dtau must be non-negative")
    if method == "eigen":
        fam = _family(params, which)
        coef = mode_coefficients(params, f, which, n_modes - 1, support)
        decay = np.exp([fam["rate"](j) * dtau for j in range(n_modes)])
        if report is not None:
            report["tail_energy"] = weighted_norm2(params, f, which, support) - float(np.sum(coef**2))
            report["coefficients"] = coef
        return (decay * coef) @ mode_values(params, which, n_modes - 1, g)
    if method == "kernel":
        def integrand(x):
            return semigroup_kernel(params, which, dtau, g, np.array([x]))[:, 0] * f(x)
        lo, hi = support
        val, err = quad_vec(integrand, lo, hi, epsabs=1e-14, epsrel=1e-11, limit=400)
        if report is not None:
            report["quad_error"] = float(np.max(err))
        if not np.all(np.isfinite(val)):
            raise RuntimeError("kernel quadrature did not converge")
        return val
    raise ValueError("method must be 'eigen' or 'kernel'")


def bump(lo=0.5, hi=4.5):
    """Smooth compactly supported bump on (lo, hi)."""
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)

    def f(g):
        y = (np.asarray(g, dtype=float) - mid) / half
        inside = np.abs(y) < 1
        return np.where(inside, np.exp(-1.0 / np.where(inside, 1 - y * y, 1.0)), 0.0)

    return f


def weighted_l2_distance(params, which, gamma, a, b):
    """Weighted L^2 norm of a - b sampled on ``gamma`` (Simpson's rule)."""
    from scipy.integrate import simpson

    fam = _family(params, which)
    g = np.asarray(gamma, dtype=float)
    w = g ** fam["a"] * np.exp(-g * g / (4 * params.B2))
    return math.sqrt(simpson((np.asarray(a) - np.asarray(b)) ** 2 * w, x=g))


def semigroup_composition_error(params, f, s, t, which="U", support=(0.05, 9.0), gamma=None, g_max=14.0, n_nodes=600):
    """Weighted L^2 gap between T_t(T_s f) and T_{s+t} f, both by kernels.

    T_s f is tabulated at Gauss-Legendre nodes on (0, g_max) and the outer
    application uses that fixed rule.
    """
    if gamma is None:
        gamma = np.linspace(0.05, 10.0, 400)
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    y = 0.5 * g_max * (x + 1)
    wy = 0.5 * g_max * w
    inner = semigroup_apply(params, f, s, y, which, "kernel", support=support)
    K = semigroup_kernel(params, which, t, np.asarray(gamma, dtype=float), y)
    two_step = K @ (wy * inner)
    one_step = semigroup_apply(params, f, s + t, gamma, which, "kernel", support=support)
    return weighted_l2_distance(params, which, gamma, two_step, one_step)
