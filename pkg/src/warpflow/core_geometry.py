"""Doubly-warped product metrics ds^2 + phi^2 g_{S^p} + psi^2 g_{S^q}.

Three charts are supported:

* ``WarpedProfile``: (chi, phi, psi) on an x-interval whose ends may be
  smooth poles where psi vanishes.
* ``SidewaysProfile``: psi itself is the coordinate, with z = psi_s^2 and
  u = log(phi).
* ``RescaledProfile``: gamma = e^{tau/2} psi, tau = -log(T - t), with
  Z = z and U = u + tau/2.  ``Ztilde``/``Utilde`` measure the offset from
  the Ricci-flat cone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import PchipInterpolator

from .fd import Stencil, parity_derivatives


@dataclass(frozen=True)
class ConeParams:
    p: int
    q: int
    n: int
    A: float
    B: float

    @property
    def spectral_ok(self):
        """Eigenmode formulas need a real square root of (n-9)(n-1)."""
        return self.n >= 10

    @property
    def B2(self):
        return self.B * self.B

    @property
    def A2(self):
        return self.A * self.A


def cone_constants(p, q):
    """Cone slopes A, B of the Ricci-flat cone over S^p x S^q."""
    if int(p) != p or int(q) != q:
        raise ValueError("dimensions must be integers")
    p, q = int(p), int(q)
    if p < 2 or q < 2:
        raise ValueError(f"dimensions must be >= 2, got p={p}, q={q}")
    n = p + q
    return ConeParams(p, q, n, math.sqrt((p - 1) / (n - 1)), math.sqrt((q - 1) / (n - 1)))


# ---------------------------------------------------------------------------
# profiles


@dataclass
class WarpedProfile:
    """Metric chi^2 dx^2 + phi^2 g_{S^p} + psi^2 g_{S^q} on an x-grid.

    ``poles`` flags which ends of the grid are smooth poles (psi = 0,
    |psi_s| = 1, phi_s = 0).  The default interval is (-1, 1) but any
    increasing grid works; the arclength chart chi = 1, x = s is the usual
    alternative.
    """

    x: np.ndarray
    chi: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    t: float = 0.0
    poles: tuple = (True, True)
    symmetric: bool = False

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.chi = np.asarray(self.chi, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        self.psi = np.asarray(self.psi, dtype=float)
        n = self.x.size
        if not (self.chi.size == self.phi.size == self.psi.size == n):
            raise ValueError("field lengths differ from the grid")

    def validate(self, tol=1e-8):
        """Raise if the metric is degenerate or a pole is not smooth."""
        if np.any(self.chi <= 0) or np.any(self.phi <= 0):
            raise ValueError("degenerate metric: chi and phi must be positive")
        inner = slice(1 if self.poles[0] else 0, -1 if self.poles[1] else None)
        if np.any(self.psi[inner] <= 0):
            raise ValueError("degenerate metric: psi must be positive inside")
        d = self.s_derivatives()
        for end, flag, sign in ((0, self.poles[0], 1.0), (-1, self.poles[1], -1.0)):
            if not flag:
                continue
            if abs(self.psi[end]) > tol:
                raise ValueError("pole with psi != 0")
            if abs(d["psi_s"][end] - sign) > 1e-3 or abs(d["phi_s"][end]) > 1e-3:
                raise ValueError("pole closure violated")
        return True

    @property
    def s(self):
        """Arclength from the left end, ds = chi dx."""
        return cumulative_trapezoid(self.chi, self.x, initial=0.0)

    def s_derivatives(self):
        """psi, phi derivatives in arclength, with parity ghosts at poles."""
        pl = 1 if self.poles[0] else None
        pr = 1 if self.poles[1] else None
        ol = -1 if self.poles[0] else None
        orr = -1 if self.poles[1] else None
        chi_x, _ = parity_derivatives(self.x, self.chi, pl, pr)
        phi_x, phi_xx = parity_derivatives(self.x, self.phi, pl, pr)
        psi_x, psi_xx = parity_derivatives(self.x, self.psi, ol, orr)
        chi = self.chi
        out = {
            "chi_x": chi_x,
            "phi_s": phi_x / chi,
            "psi_s": psi_x / chi,
            "phi_ss": phi_xx / chi**2 - chi_x * phi_x / chi**3,
            "psi_ss": psi_xx / chi**2 - chi_x * psi_x / chi**3,
        }
        # psi_ss is odd about a pole, so psi_ss / psi tends to psi_sss there.
        g_x, _ = parity_derivatives(self.x, out["psi_ss"], ol, orr)
        out["psi_sss"] = g_x / chi
        return out


@dataclass
class SidewaysProfile:
    psi: np.ndarray
    z: np.ndarray
    u: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if not (self.psi.size == self.z.size == self.u.size):
            raise ValueError("field lengths differ from the grid")
        if np.any(np.diff(self.psi) <= 0):
            raise ValueError("psi grid must be strictly increasing")


@dataclass
class RescaledProfile:
    gamma: np.ndarray
    Z: np.ndarray
    U: np.ndarray
    tau: float
    T: float = 0.0

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.Z = np.asarray(self.Z, dtype=float)
        self.U = np.asarray(self.U, dtype=float)
        if np.any(self.gamma <= 0):
            raise ValueError("gamma grid must be positive")
        if np.any(np.diff(self.gamma) <= 0):
            raise ValueError("gamma grid must be strictly increasing")

    def Ztilde(self, params):
        return self.Z - params.B2

    def Utilde(self, params):
        return self.U - np.log(params.A * self.gamma / params.B)

    @classmethod
    def from_perturbation(cls, params, gamma, Zt, Ut, tau, T=0.0):
        gamma = np.asarray(gamma, dtype=float)
        return cls(gamma, params.B2 + np.asarray(Zt), np.log(params.A * gamma / params.B) + np.asarray(Ut), tau, T)


# ---------------------------------------------------------------------------
# curvature


def _sideways_derivatives(profile):
    st = Stencil(profile.psi)
    return st.d1(profile.z), st.d1(profile.u), st.d2(profile.u)


def generator_fields(profile):
    """The five sectional-curvature generators (l, k, j, h, m) as arrays.

    l = (1-z)/psi^2, k = -z_psi/(2 psi), j = e^{-2u} - z u_psi^2,
    h = -z u_psipsi - z u_psi^2 - u_psi z_psi/2, m = -(z/psi) u_psi.
    End points use one-sided stencils.
    """
    z1, u1, u2 = _sideways_derivatives(profile)
    return generators_from_derivatives(profile.psi, profile.z, z1, profile.u, u1, u2)


def generators_from_derivatives(psi, z, z1, u, u1, u2):
    """Generators (l, k, j, h, m) from z, u and their psi-derivatives."""
    l = (1.0 - z) / psi**2
    k = -z1 / (2.0 * psi)
    j = np.exp(-2.0 * u) - z * u1**2
    h = -z * u2 - z * u1**2 - u1 * z1 / 2.0
    m = -(z / psi) * u1
    return l, k, j, h, m


def cone_perturbation_scalar(params, psi, dz, dz1, du, du1, du2):
    """Scalar curvature of z = B^2 + dz, u = log(A psi / B) + du.

    The cone is Ricci flat, so its O(1/psi^2) generator values are removed
    by hand before summing.  This keeps full relative accuracy when the
    perturbation is tiny; pass dz, du and their psi-derivatives.
    """
    p, q, B2, A2 = params.p, params.q, params.B2, params.A2
    psi = np.asarray(psi, dtype=float)
    v1 = 1.0 / psi + du1
    l = -dz / psi**2
    k = -dz1 / (2.0 * psi)
    j = B2 / (A2 * psi**2) * np.expm1(-2.0 * du) - (B2 * (2.0 * du1 / psi + du1**2) + dz * v1**2)
    h = -(B2 + dz) * (du2 + 2.0 * du1 / psi + du1**2) - v1 * dz1 / 2.0
    m = -(B2 * du1 + dz * v1) / psi
    return 2 * p * h + 2 * q * k + p * (p - 1) * j + q * (q - 1) * l + 2 * p * q * m


def _check_index(size, index):
    if index < 2 or index > size - 3:
        raise IndexError("needs one-sided closure: index has no centred stencil")


def sectional_generators(profile, index):
    """Generators (l, k, j, h, m) at one interior grid point."""
    _check_index(profile.psi.size, index)
    if profile.z[index] <= 0:
        raise ValueError("sideways chart requires z > 0")
    return tuple(float(g[index]) for g in generator_fields(profile))


def scalar_curvature_field(profile, params):
    l, k, j, h, m = generator_fields(profile)
    p, q = params.p, params.q
    return 2 * p * h + 2 * q * k + p * (p - 1) * j + q * (q - 1) * l + 2 * p * q * m


def scalar_curvature(profile, params, index):
    _check_index(profile.psi.size, index)
    return float(scalar_curvature_field(profile, params)[index])


def rm_proxy(profile):
    """Curvature norm proxy: max |generator| at each point."""
    return np.max(np.abs(np.vstack(generator_fields(profile))), axis=0)


def ricci_field(profile, params):
    """Ricci coefficients of ds^2, phi^2 g_{S^p} and psi^2 g_{S^q}.

    At a pole the quotients are replaced by their L'Hopital limits.
    """
    p, q = params.p, params.q
    d = profile.s_derivatives()
    phi, psi = profile.phi, profile.psi
    safe = np.where(psi > 0, psi, 1.0)
    pole_ratio = d["psi_sss"] / np.where(d["psi_s"] != 0, d["psi_s"], 1.0)
    psi_ratio = np.where(psi > 0, d["psi_ss"] / safe, pole_ratio)
    cross = np.where(psi > 0, d["phi_s"] * d["psi_s"] / (phi * safe), d["phi_ss"] / phi)
    one_minus = np.where(psi > 0, (1 - d["psi_s"] ** 2) / safe**2, -pole_ratio)
    r_ss = -(p * d["phi_ss"] / phi + q * psi_ratio)
    r_phi = -d["phi_ss"] / phi + (p - 1) * (1 - d["phi_s"] ** 2) / phi**2 - q * cross
    r_psi = -psi_ratio + (q - 1) * one_minus - p * cross
    return r_ss, r_phi, r_psi


def ricci_components(profile, params, index):
    r = ricci_field(profile, params)
    return tuple(float(c[index]) for c in r)


# ---------------------------------------------------------------------------
# chart changes


def sign_changes(values, floor=1e-10):
    """Number of sign changes, ignoring entries below ``floor * max|values|``."""
    v = np.asarray(values, dtype=float)
    scale = np.max(np.abs(v)) if v.size else 0.0
    keep = v[np.abs(v) > floor * scale]
    if keep.size < 2:
        return 0
    return int(np.count_nonzero(np.signbit(keep[1:]) != np.signbit(keep[:-1])))


def to_sideways(profile, half="left", n_points=None, z_floor=1e-12):
    """Resample a warped profile as (z, u) over psi on one half.

    ``half`` selects the part of the x-grid left or right of the maximum of
    psi.  The chart is cut where z drops below ``z_floor``.
    """
    d = profile.s_derivatives()
    imax = int(np.argmax(profile.psi))
    if half == "left":
        sel = slice(0, imax + 1)
    elif half == "right":
        sel = slice(imax, None)
    else:
        raise ValueError("half must be 'left' or 'right'")
    psi = profile.psi[sel]
    psi_s = d["psi_s"][sel]
    phi = profile.phi[sel]
    if half == "right":
        psi, psi_s, phi = psi[::-1], -psi_s[::-1], phi[::-1]
    z = psi_s**2
    if sign_changes(psi_s) > 0 or np.any(np.diff(psi) <= 0):
        raise ValueError("sideways chart invalid: psi is not monotone on this half")
    keep = z > z_floor
    psi, z, u = psi[keep], z[keep], np.log(phi[keep])
    if n_points is None:
        return SidewaysProfile(psi, np.minimum(z, 1.0), u, profile.t)
    grid = np.linspace(psi[0], psi[-1], n_points)
    zi = PchipInterpolator(psi, z)(grid)
    ui = PchipInterpolator(psi, u)(grid)
    return SidewaysProfile(grid, np.minimum(zi, 1.0), ui, profile.t)


def from_sideways(profile, s0=None):
    """Warped profile in the arclength chart reconstructed from (z, u)."""
    psi, z = profile.psi, profile.z
    if np.any(z <= 0):
        raise ValueError("sideways chart requires z > 0")
    if s0 is None:
        s0 = psi[0] / math.sqrt(z[0])
    s = s0 + cumulative_trapezoid(1.0 / np.sqrt(z), psi, initial=0.0)
    return WarpedProfile(s, np.ones_like(s), np.exp(profile.u), psi.copy(), profile.t, poles=(False, False))


def to_rescaled(profile, T):
    if profile.t >= T:
        raise ValueError(f"t = {profile.t} must be before the singular time T = {T}")
    tau = -math.log(T - profile.t)
    g = math.exp(tau / 2)
    return RescaledProfile(profile.psi * g, profile.z.copy(), profile.u + tau / 2, tau, T)


def from_rescaled(profile):
    g = math.exp(-profile.tau / 2)
    t = profile.T - math.exp(-profile.tau)
    return SidewaysProfile(profile.gamma * g, profile.Z.copy(), profile.U - profile.tau / 2, t)


# ---------------------------------------------------------------------------
# special solutions


def sine_cone_lambda2(params, lam0, t):
    return lam0**2 - 2.0 * (params.p + params.q) * t


def special_solution(kind, params, t=0.0, psi=None, lam0=1.0, phi0=1.0, n_points=257):
    """Closed-form solutions in the sideways chart.

    ``rfc``: z = B^2, u = log(A psi / B), stationary.
    ``sine_cone``: z = B^2 - psi^2 / lambda^2 with lambda^2 = lam0^2 - 2(p+q)t.
    ``cylinder``: z = 1 and u = log(phi) with phi^2 = phi0^2 - 2(p-1)t.
    """
    A, B = params.A, params.B
    if kind == "rfc":
        if psi is None:
            psi = np.linspace(0.1, 1.0, n_points)
        psi = np.asarray(psi, dtype=float)
        return SidewaysProfile(psi, np.full_like(psi, B * B), np.log(A * psi / B), t)
    if kind == "sine_cone":
        lam2 = sine_cone_lambda2(params, lam0, t)
        if lam2 <= 0:
            raise ValueError("t is past the extinction time of the sine cone")
        lam = math.sqrt(lam2)
        if psi is None:
            psi = np.linspace(0.0, B * lam, n_points + 1)[1:-1]
        psi = np.asarray(psi, dtype=float)
        return SidewaysProfile(psi, B * B - psi**2 / lam2, np.log(A * psi / B), t)
    if kind == "cylinder":
        phi2 = phi0**2 - 2.0 * (params.p - 1) * t
        if phi2 <= 0:
            raise ValueError("t is past the collapse time of the cylinder")
        if psi is None:
            psi = np.linspace(0.1, 1.0, n_points)
        psi = np.asarray(psi, dtype=float)
        return SidewaysProfile(psi, np.ones_like(psi), np.full_like(psi, 0.5 * math.log(phi2)), t)
    raise ValueError(f"unknown special solution {kind!r}")


def rescaled_sine_cone(params, gamma, tau=0.0):
    """Static rescaled sine cone Z = B^2 - gamma^2 / (2(p+q))."""
    gamma = np.asarray(gamma, dtype=float)
    Z = params.B2 - gamma**2 / (2.0 * (params.p + params.q))
    return RescaledProfile(gamma, Z, np.log(params.A * gamma / params.B), tau, 0.0)


def warped_sine_cone(params, x, lam0=1.0, t=0.0):
    """Sine cone at fixed x = s(t=0): g(t) = (lambda/lam0)^2 g(0).

    No poles: the ends are conical points, so use it on interior windows.
    """
    lam = math.sqrt(sine_cone_lambda2(params, lam0, t))
    x = np.asarray(x, dtype=float)
    r = lam / lam0
    sn = np.sin(x / lam0)
    return WarpedProfile(x, np.full_like(x, r), params.A * lam * sn, params.B * lam * sn, t, poles=(False, False))


def einstein_product(params, x, t=0.0):
    """Round S^{q+1} times an S^p of radius^2 (p-1)/q; Einstein constant q.

    Chart x in [-1, 1] with s = pi (x + 1) / 2 at t = 0, so both ends are
    smooth poles.  Under the flow g(t) = (1 - 2 q t) g(0).
    """
    x = np.asarray(x, dtype=float)
    c = 1.0 - 2.0 * params.q * t
    if c <= 0:
        raise ValueError("t is past the extinction time")
    r = math.sqrt(c)
    psi = r * np.cos(np.pi * x / 2.0)
    psi[np.isclose(np.abs(x), 1.0, atol=0, rtol=0)] = 0.0
    phi = np.full_like(x, r * math.sqrt((params.p - 1) / params.q))
    chi = np.full_like(x, r * np.pi / 2.0)
    return WarpedProfile(x, chi, phi, psi, t, poles=(True, True), symmetric=True)


def rfc_warped(params, x):
    """Ricci-flat cone phi = A s, psi = B s in the arclength chart (x = s > 0)."""
    x = np.asarray(x, dtype=float)
    return WarpedProfile(x, np.ones_like(x), params.A * x, params.B * x, 0.0, poles=(False, False))


# ---------------------------------------------------------------------------
# serialization


def save_profile_csv(path, profile, params):
    if isinstance(profile, WarpedProfile):
        head = f"# kind=warped p={params.p} q={params.q} t={profile.t!r}"
        cols = [profile.x, profile.chi, profile.phi, profile.psi]
        names = "x,chi,phi,psi"
    elif isinstance(profile, SidewaysProfile):
        head = f"# kind=sideways p={params.p} q={params.q} t={profile.t!r}"
        cols = [profile.psi, profile.z, profile.u]
        names = "psi,z,u"
    elif isinstance(profile, RescaledProfile):
        head = f"# kind=rescaled p={params.p} q={params.q} tau={profile.tau!r} T={profile.T!r}"
        cols = [profile.gamma, profile.Z, profile.U]
        names = "gamma,Z,U"
    else:
        raise TypeError("unknown profile type")
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=head[2:] + "\n" + names, comments="# ", fmt="%.17g")


def load_profile_csv(path):
    """Inverse of ``save_profile_csv``; returns ``(profile, params)``."""
    with open(path) as fh:
        head = fh.readline()
    if not head.startswith("# kind="):
        raise ValueError("missing profile header")
    meta = dict(tok.split("=", 1) for tok in head[2:].split())
    params = cone_constants(int(meta["p"]), int(meta["q"]))
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    kind = meta["kind"]
    if kind == "warped":
        prof = WarpedProfile(data[:, 0], data[:, 1], data[:, 2], data[:, 3], float(meta["t"]))
        prof.poles = (prof.psi[0] == 0.0, prof.psi[-1] == 0.0)
    elif kind == "sideways":
        prof = SidewaysProfile(data[:, 0], data[:, 1], data[:, 2], float(meta["t"]))
    elif kind == "rescaled":
        prof = RescaledProfile(data[:, 0], data[:, 1], data[:, 2], float(meta["tau"]), float(meta["T"]))
    else:
        raise ValueError(f"unknown profile kind {kind!r}")
    return prof, params
