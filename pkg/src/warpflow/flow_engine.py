"""Right-hand sides and time stepping for the Ricci flow of warped products.

Four formulations are provided:

* arclength: (chi, phi, psi) over x with ``d/dt`` taken at fixed x;
* sideways: (z, u) over psi;
* rescaled: (Z, U) over gamma in the self-similar time tau;
* perturbation: (Ztilde, Utilde) around the Ricci-flat cone, split into a
  linear part and the quadratic remainder ``Err``.

Each formulation has a ``*System`` class that works on flat state vectors
(used by ``evolve``) and a thin profile-level wrapper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .core_geometry import RescaledProfile, SidewaysProfile, WarpedProfile
from .fd import Stencil, parity_derivatives, robin_elimination


# ---------------------------------------------------------------------------
# boundary descriptions


@dataclass(frozen=True)
class Boundary:
    """Closure at one end of a 1D grid.

    kind:
      ``free``      the end node evolves by the PDE with one-sided stencils;
      ``pole``      smooth pole, handled by parity ghosts and L'Hopital limits;
      ``dirichlet`` ``values(t)`` returns one value per field;
      ``robin``     f' = (power / x_end) f, per field (power 0 is Neumann).
    """

    kind: str = "free"
    values: object = None
    powers: tuple = ()

    def __post_init__(self):
        if self.kind not in ("free", "pole", "dirichlet", "robin"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "dirichlet" and not callable(self.values):
            raise ValueError("dirichlet boundary needs a callable values(t)")


def neumann(nfields=2):
    return Boundary("robin", powers=(0.0,) * nfields)


@dataclass
class StepperConfig:
    dt_init: float = 1e-4
    cfl_safety: float = 0.5
    tol_newton: float = 1e-8
    max_substeps: int = 2_000_000
    scheme: str = "explicit_rk4"
    tol_step: float | None = None
    atol: float = 1e-10
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0.0 < self.cfl_safety < 1.0:
            raise ValueError("cfl_safety must lie in (0, 1)")
        if self.tol_newton <= 0 or self.dt_init <= 0:
            raise ValueError("tolerances and dt_init must be positive")
        if self.scheme not in ("explicit_rk4", "imex", "bdf"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


class StiffnessFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# shared machinery for fields on a line


class LineSystem:
    """Several fields on one grid, with end nodes closed by ``Boundary``."""

    nfields = 2

    def __init__(self, grid, left=Boundary(), right=Boundary()):
        self.grid = np.asarray(grid, dtype=float)
        self.st = Stencil(self.grid)
        self.left, self.right = left, right
        n = self.grid.size
        self.lo = 1 if left.kind in ("dirichlet", "robin") else 0
        self.hi = n - 1 if right.kind in ("dirichlet", "robin") else n
        self.m = self.hi - self.lo
        w = self.st.width
        self._robin = {}
        for side, b in (("left", left), ("right", right)):
            if b.kind == "robin":
                x_end = self.grid[0] if side == "left" else self.grid[-1]
                pts = self.grid[:w] if side == "left" else self.grid[-w:]
                self._robin[side] = [
                    robin_elimination(pts, pw / x_end, side) for pw in b.powers
                ]

    # state <-> full field arrays --------------------------------------

    def full(self, t, y):
        y = np.asarray(y).reshape(self.nfields, self.m)
        n = self.grid.size
        F = np.empty((self.nfields, n), dtype=y.dtype)
        F[:, self.lo:self.hi] = y
        w = self.st.width
        for side, b in (("left", self.left), ("right", self.right)):
            idx = 0 if side == "left" else n - 1
            if b.kind == "dirichlet":
                F[:, idx] = np.asarray(b.values(t), dtype=float)
            elif b.kind == "robin":
                for f in range(self.nfields):
                    c = self._robin[side][f]
                    if side == "left":
                        F[f, 0] = c @ F[f, 1:w]
                    else:
                        F[f, -1] = c @ F[f, -2:-w - 1:-1]
        return F

    def pack(self, F):
        return np.asarray(F)[:, self.lo:self.hi].ravel().copy()

    def rhs(self, t, y):
        F = self.full(t, y)
        R = self.field_rhs(t, F)
        return np.asarray(R)[:, self.lo:self.hi].ravel()

    def field_rhs(self, t, F):
        raise NotImplementedError

    def extension_matrix(self):
        """Sparse map from state to full fields (homogeneous closures only)."""
        n, m = self.grid.size, self.m
        blocks = []
        for f in range(self.nfields):
            rows, cols, vals = [], [], []
            for i in range(self.lo, self.hi):
                rows.append(i)
                cols.append(i - self.lo)
                vals.append(1.0)
            for side, b in (("left", self.left), ("right", self.right)):
                if b.kind == "dirichlet":
                    continue
                if b.kind != "robin":
                    continue
                c = self._robin[side][f]
                for j, cj in enumerate(c):
                    if side == "left":
                        rows.append(0)
                        cols.append(1 + j - self.lo)
                    else:
                        rows.append(n - 1)
                        cols.append(n - 2 - j - self.lo)
                    vals.append(cj)
            blocks.append(sp.csr_matrix((vals, (rows, cols)), shape=(n, m)))
        return sp.block_diag(blocks, format="csr")

    def jac_sparsity(self):
        n = self.m
        band = sp.diags([np.ones(n - abs(k)) for k in range(-4, 5)], list(range(-4, 5)), shape=(n, n))
        return sp.bmat([[band] * self.nfields] * self.nfields, format="csr")

    def cfl_dt(self, F):
        h = np.min(np.diff(self.grid))
        return 0.25 * h * h / max(self.diffusivity(F), 1e-300)

    def diffusivity(self, F):
        return 1.0


# ---------------------------------------------------------------------------
# arclength chart


def rhs_arclength(profile, params):
    """d/dt at fixed x of (chi, phi, psi).

    Poles use chi-even, phi-even, psi-odd ghost nodes and the limits
    psi_ss/psi -> psi_sss/psi_s and phi_s psi_s / psi -> phi_ss.
    """
    p, q = params.p, params.q
    phi, psi, chi = profile.phi, profile.psi, profile.chi
    pole_mask = np.zeros(psi.size, dtype=bool)
    if profile.poles[0]:
        pole_mask[0] = True
    if profile.poles[1]:
        pole_mask[-1] = True
    if np.any(phi <= 0) or np.any(psi[~pole_mask] <= 0) or np.any(chi <= 0):
        raise ValueError("degenerate metric: non-positive warping function")
    d = profile.s_derivatives()
    safe = np.where(pole_mask, 1.0, psi)
    pole_ratio = d["psi_sss"] / np.where(d["psi_s"] != 0, d["psi_s"], 1.0)
    psi_ratio = np.where(pole_mask, pole_ratio, d["psi_ss"] / safe)
    cross_phi = np.where(pole_mask, d["phi_ss"], d["phi_s"] * d["psi_s"] / safe)
    chi_t = chi * (p * d["phi_ss"] / phi + q * psi_ratio)
    phi_t = d["phi_ss"] - (p - 1) * (1 - d["phi_s"] ** 2) / phi + q * cross_phi
    psi_t = np.where(
        pole_mask,
        0.0,
        d["psi_ss"] - (q - 1) * (1 - d["psi_s"] ** 2) / safe + p * d["phi_s"] * d["psi_s"] / phi,
    )
    return chi_t, phi_t, psi_t


class ArclengthSystem(LineSystem):
    nfields = 3

    def __init__(self, x, params, poles=(True, True), left=Boundary(), right=Boundary()):
        if poles[0]:
            left = Boundary("pole")
        if poles[1]:
            right = Boundary("pole")
        super().__init__(x, left, right)
        self.params = params
        self.poles = tuple(poles)

    def field_rhs(self, t, F):
        prof = WarpedProfile(self.grid, F[0], F[1], F[2], t, poles=self.poles)
        return np.vstack(rhs_arclength(prof, self.params))

    def diffusivity(self, F):
        return 1.0 / np.min(F[0]) ** 2

    def profile(self, t, y):
        F = self.full(t, y)
        return WarpedProfile(self.grid, F[0], F[1], F[2], t, poles=self.poles)


# ---------------------------------------------------------------------------
# sideways chart


def _sideways_rhs_fields(psi, z, u, params, st, pole=False):
    p, q = params.p, params.q
    if pole:
        z1, z2 = parity_derivatives(psi, z, 1)
        u1, u2 = parity_derivatives(psi, u, 1)
    else:
        z1, z2 = st.d1(z), st.d2(z)
        u1, u2 = st.d1(u), st.d2(u)
    safe = np.where(psi > 0, psi, 1.0)
    z_t = (
        z * z2
        + z1 * ((q - 1) / safe - z / safe)
        - 0.5 * z1**2
        + 2 * (q - 1) * z * (1 - z) / safe**2
        - 2 * p * z**2 * u1**2
    )
    u_t = z * u2 + u1 * (z + q - 1) / safe - (p - 1) * np.exp(-2 * u)
    if pole:
        z_t[0] = 0.0
        u_t[0] = (1 + q) * u2[0] - (p - 1) * math.exp(-2 * u[0])
    return z_t, u_t


def rhs_sideways(profile, params):
    """(z_t, u_t) from the sideways Ricci flow equations.

    A grid starting at psi = 0 is treated as a smooth pole (z even, u even).
    """
    if np.any(profile.z <= 0):
        raise ValueError("sideways chart requires z > 0")
    st = Stencil(profile.psi)
    return _sideways_rhs_fields(profile.psi, profile.z, profile.u, params, st, pole=profile.psi[0] == 0.0)


class SidewaysSystem(LineSystem):
    def __init__(self, psi, params, left=Boundary(), right=Boundary()):
        psi = np.asarray(psi, dtype=float)
        if psi[0] == 0.0:
            left = Boundary("pole")
        super().__init__(psi, left, right)
        self.params = params
        self.pole = psi[0] == 0.0

    def field_rhs(self, t, F):
        return np.vstack(_sideways_rhs_fields(self.grid, F[0], F[1], self.params, self.st, self.pole))

    def diffusivity(self, F):
        return float(np.max(F[0]))

    def profile(self, t, y):
        F = self.full(t, y)
        return SidewaysProfile(self.grid, F[0], F[1], t)


# ---------------------------------------------------------------------------
# parabolically rescaled chart


def _rescaled_rhs_fields(gamma, Z, U, params, st, terms="full"):
    p, q = params.p, params.q
    Z1, Z2 = st.d1(Z), st.d2(Z)
    U1, U2 = st.d1(U), st.d2(U)
    drift_Z = -0.5 * gamma * Z1
    drift_U = -0.5 * gamma * U1 + 0.5
    if terms == "drift":
        return drift_Z, drift_U
    if terms != "full":
        raise ValueError("terms must be 'full' or 'drift'")
    Fl = (q - 1) * Z1 / gamma + 2 * (q - 1) * Z / gamma**2
    Fq = Z * Z2 - 0.5 * Z1**2 - Z * Z1 / gamma - 2 * (q - 1) * Z**2 / gamma**2
    Z_tau = drift_Z + Fl + Fq - 2 * p * Z**2 * U1**2
    U_tau = drift_U + Z * U2 + (Z + q - 1) * U1 / gamma - (p - 1) * np.exp(-2 * U)
    return Z_tau, U_tau


def rhs_rescaled(profile, params, terms="full"):
    """(Z_tau, U_tau) including the -gamma/2 drift and the +1/2 source in U."""
    st = Stencil(profile.gamma)
    return _rescaled_rhs_fields(profile.gamma, profile.Z, profile.U, params, st, terms)


class RescaledSystem(LineSystem):
    def __init__(self, gamma, params, left=Boundary(), right=Boundary(), terms="full"):
        super().__init__(gamma, left, right)
        self.params = params
        self.terms = terms

    def field_rhs(self, t, F):
        return np.vstack(_rescaled_rhs_fields(self.grid, F[0], F[1], self.params, self.st, self.terms))

    def diffusivity(self, F):
        return float(np.max(np.abs(F[0]))) + float(np.max(self.grid)) * np.min(np.diff(self.grid))

    def profile(self, t, y):
        F = self.full(t, y)
        return RescaledProfile(self.grid, F[0], F[1], t)


# ---------------------------------------------------------------------------
# perturbation system around the cone


def smoothstep(y):
    """C-infinity step: 0 for y <= 0, 1 for y >= 1, with first two derivatives."""
    y = np.asarray(y, dtype=float)
    inside = (y > 0) & (y < 1)
    yc = np.clip(y, 1e-90, 1 - 1e-16)
    a = np.where(inside, np.exp(-1.0 / yc), 0.0)
    b = np.where(inside, np.exp(-1.0 / np.where(inside, 1 - yc, 1.0)), 0.0)
    s = np.where(y >= 1, 1.0, np.where(inside, a / np.where(inside, a + b, 1.0), 0.0))
    # derivatives via d/dy log a = 1/y^2 and d/dy log b = -1/(1-y)^2
    la1 = np.where(inside, 1.0 / yc**2, 0.0)
    lb1 = np.where(inside, -1.0 / (1 - yc) ** 2, 0.0)
    la2 = np.where(inside, -2.0 / yc**3, 0.0)
    lb2 = np.where(inside, -2.0 / (1 - yc) ** 3, 0.0)
    # s = 1 / (1 + e^{g}) with g = log b - log a
    g1 = lb1 - la1
    g2 = lb2 - la2
    s1 = -s * (1 - s) * g1
    s2 = -(s1 * (1 - 2 * s) * g1 + s * (1 - s) * g2)
    s1 = np.where(inside, s1, 0.0)
    s2 = np.where(inside, s2, 0.0)
    return s, s1, s2


def cutoff(gamma, tau, M, beta):
    """Cutoff equal to 1 for gamma <= M e^{beta tau} and 0 beyond one unit more.

    Returns (value, d/dgamma, d2/dgamma2, d/dtau).
    """
    edge = M * math.exp(beta * tau)
    s, s1, s2 = smoothstep(np.asarray(gamma, dtype=float) - edge)
    return 1.0 - s, -s1, -s2, s1 * beta * edge


@dataclass
class PerturbationFields:
    gamma: np.ndarray
    Ztilde: np.ndarray
    Utilde: np.ndarray
    tau: float = 0.0
    M: float = 1.0
    beta: float = 0.25

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.Ztilde = np.asarray(self.Ztilde, dtype=float)
        self.Utilde = np.asarray(self.Utilde, dtype=float)
        if np.any(self.gamma <= 0):
            raise ValueError("gamma must be positive")

    def cutoff(self):
        return cutoff(self.gamma, self.tau, self.M, self.beta)

    def to_rescaled(self, params):
        return RescaledProfile.from_perturbation(params, self.gamma, self.Ztilde, self.Utilde, self.tau)


def operator_matrices(gamma, params, st=None):
    """Sparse D_Z, D_U and N on a gamma grid (one-sided rows at the ends)."""
    st = st or Stencil(gamma)
    n, B2 = params.n, params.B2
    g = np.asarray(gamma, dtype=float)
    diag = sp.diags
    DZ = st.D2 + diag((n - 2) / g - g / (2 * B2)) @ st.D1 - diag(2 * (n - 1) / g**2)
    DU = st.D2 + diag(n / g - g / (2 * B2)) @ st.D1 + diag(2 * (n - 1) / g**2)
    N = -diag(4 * params.p * B2 / g) @ st.D1
    return DZ.tocsr(), DU.tocsr(), N.tocsr()


def err_terms(gamma, Zt, Ut, params, st=None):
    """Quadratic and higher remainders Err_Z, Err_U of the perturbation system."""
    st = st or Stencil(gamma)
    p, q, B2 = params.p, params.q, params.B2
    g = gamma
    Z1, Z2 = st.d1(Zt), st.d2(Zt)
    U1, U2 = st.d1(Ut), st.d2(Ut)
    err_z = (
        Zt * Z2
        - 0.5 * Z1**2
        - Zt * Z1 / g
        - 2 * (q - 1) * Zt**2 / g**2
        - 2 * p * (
            B2**2 * U1**2
            + 4 * B2 * Zt * U1 / g
            + 2 * B2 * Zt * U1**2
            + Zt**2 / g**2
            + 2 * Zt**2 * U1 / g
            + Zt**2 * U1**2
        )
    )
    err_u = Zt * (U2 + U1 / g) + (q - 1) / g**2 * (-np.expm1(-2 * Ut) - 2 * Ut)
    return err_z, err_u


def rhs_perturbation(fields, params, include_err=False):
    """(d/dtau Ztilde, d/dtau Utilde) = B^2 (D_Z Z + N U, D_U U) [+ Err]."""
    g = fields.gamma
    st = Stencil(g)
    DZ, DU, N = operator_matrices(g, params, st)
    B2 = params.B2
    zt = B2 * (DZ @ fields.Ztilde + N @ fields.Utilde)
    ut = B2 * (DU @ fields.Utilde)
    if include_err:
        ez, eu = err_terms(g, fields.Ztilde, fields.Utilde, params, st)
        zt = zt + ez
        ut = ut + eu
    if not (np.all(np.isfinite(zt)) and np.all(np.isfinite(ut))):
        raise FloatingPointError("non-finite perturbation right-hand side")
    return zt, ut


def commutator_terms(fields, params):
    """Collar terms created by localising with the cutoff.

    Returns a dict with the raw commutators ``[chi, D_Z] Ztilde``,
    ``[chi, D_U] Utilde`` and ``[chi, N] Utilde``, the time-derivative terms
    ``chi_tau * field`` and the totals entering the localised equations
    (commutators scaled by B^2 plus the chi_tau terms).
    """
    g = fields.gamma
    st = Stencil(g)
    n, B2 = params.n, params.B2
    c, c1, c2, ct = fields.cutoff()
    Z, U = fields.Ztilde, fields.Utilde
    Z1, U1 = st.d1(Z), st.d1(U)
    com_z = c1 * (-2 * Z1 - Z * ((n - 2) / g - g / (2 * B2))) - c2 * Z
    com_u = c1 * (-2 * U1 - U * (n / g - g / (2 * B2))) - c2 * U
    com_n = 4 * params.p * B2 / g * c1 * U
    out = {
        "DZ": com_z,
        "DU": com_u,
        "N": com_n,
        "tau_Z": ct * Z,
        "tau_U": ct * U,
    }
    out["total_Z"] = B2 * (com_z + com_n) + ct * Z
    out["total_U"] = B2 * com_u + ct * U
    return out


class PerturbationSystem(LineSystem):
    def __init__(self, gamma, params, include_err=False, left=Boundary(), right=Boundary()):
        super().__init__(gamma, left, right)
        self.params = params
        self.include_err = include_err
        self.DZ, self.DU, self.N = operator_matrices(self.grid, params, self.st)

    def field_rhs(self, t, F):
        B2 = self.params.B2
        zt = B2 * (self.DZ @ F[0] + self.N @ F[1])
        ut = B2 * (self.DU @ F[1])
        if self.include_err:
            ez, eu = err_terms(self.grid, F[0], F[1], self.params, self.st)
            zt, ut = zt + ez, ut + eu
        return np.vstack([zt, ut])

    def linear_operator(self):
        """Sparse matrix of the linear part acting on the state vector."""
        B2 = self.params.B2
        full = sp.bmat([[B2 * self.DZ, B2 * self.N], [None, B2 * self.DU]], format="csr")
        E = self.extension_matrix()
        n = self.grid.size
        keep = np.concatenate([np.arange(self.lo, self.hi), n + np.arange(self.lo, self.hi)])
        return (full @ E)[keep].tocsc()

    def nonlinear(self, t, y):
        if not self.include_err:
            return np.zeros_like(y)
        F = self.full(t, y)
        ez, eu = err_terms(self.grid, F[0], F[1], self.params, self.st)
        return np.vstack([ez, eu])[:, self.lo:self.hi].ravel()

    def diffusivity(self, F):
        return self.params.B2 * (1 + float(np.max(np.abs(F[0]))))

    def profile(self, t, y):
        F = self.full(t, y)
        return PerturbationFields(self.grid, F[0], F[1], t)


# ---------------------------------------------------------------------------
# time integration


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    dt_history: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""

    @property
    def final(self):
        return self.states[-1]

    def manifest(self, scheme):
        dts = np.asarray(self.dt_history) if self.dt_history else np.zeros(1)
        return {
            "scheme": scheme,
            "status": self.status,
            "message": self.message,
            "steps": len(self.dt_history),
            "dt_min": float(dts.min()),
            "dt_max": float(dts.max()),
            "monitor_violations": list(self.violations),
        }


def _rk4_step(f, t, y, dt):
    k1 = f(t, y)
    k2 = f(t + dt / 2, y + dt / 2 * k1)
    k3 = f(t + dt / 2, y + dt / 2 * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def system_for(profile, params, **kw):
    """Build the ``*System`` matching the profile type."""
    if isinstance(profile, SidewaysProfile):
        sysm = SidewaysSystem(profile.psi, params, kw.get("left", Boundary()), kw.get("right", Boundary()))
        F = np.vstack([profile.z, profile.u])
        return sysm, sysm.pack(F), profile.t
    if isinstance(profile, RescaledProfile):
        sysm = RescaledSystem(profile.gamma, params, kw.get("left", Boundary()), kw.get("right", Boundary()), kw.get("terms", "full"))
        return sysm, sysm.pack(np.vstack([profile.Z, profile.U])), profile.tau
    if isinstance(profile, PerturbationFields):
        sysm = PerturbationSystem(profile.gamma, params, kw.get("include_err", False), kw.get("left", Boundary()), kw.get("right", Boundary()))
        return sysm, sysm.pack(np.vstack([profile.Ztilde, profile.Utilde])), profile.tau
    if isinstance(profile, WarpedProfile):
        sysm = ArclengthSystem(profile.x, params, profile.poles, kw.get("left", Boundary()), kw.get("right", Boundary()))
        return sysm, sysm.pack(np.vstack([profile.chi, profile.phi, profile.psi])), profile.t
    raise TypeError("unsupported profile type")


def evolve(profile, params, config, t_end, monitors=(), checkpoints=None, **kw):
    """Advance ``profile`` to ``t_end`` (tau_end for rescaled fields).

    ``monitors`` are callables ``m(t, profile) -> None | str``; a returned
    string is logged as a violation.  ``checkpoints`` lists the times at
    which profiles are stored (default: start and end).  Blow-up (NaN) is
    reported through ``status`` with the last good state retained.
    """
    sysm, y, t = system_for(profile, params, **kw)
    if t_end < t:
        raise ValueError("t_end precedes the initial time")
    ckpts = sorted(set([t_end] + list(checkpoints or [])))
    traj = Trajectory()
    traj.times.append(t)
    traj.states.append(sysm.profile(t, y))

    def run_monitors(tt, yy):
        prof = sysm.profile(tt, yy)
        for mon in monitors:
            msg = mon(tt, prof)
            if msg:
                traj.violations.append(f"t={tt:.6g}: {msg}")
        return prof

    if config.scheme == "bdf":
        _evolve_bdf(sysm, y, t, t_end, ckpts, config, traj, run_monitors)
        return traj

    if config.scheme == "imex":
        L = sysm.linear_operator()
        eye = sp.identity(L.shape[0], format="csc")
        dt = config.dt_init
        lu_cache = {}
        n_prev = None
        steps = 0
        ck = iter(ckpts)
        next_ck = next(ck)
        while t < t_end - 1e-14 * max(1.0, abs(t_end)):
            h = min(dt, next_ck - t)
            if h not in lu_cache:
                lu_cache[h] = (spla.splu((eye - 0.5 * h * L).tocsc()), (eye + 0.5 * h * L).tocsr())
            lu, rhs_m = lu_cache[h]
            nl = sysm.nonlinear(t, y)
            ext = nl if n_prev is None else 1.5 * nl - 0.5 * n_prev
            y_new = lu.solve(rhs_m @ y + h * ext)
            if not np.all(np.isfinite(y_new)):
                traj.status, traj.message = "blowup", "blow-up or instability detected"
                break
            n_prev, y, t = nl, y_new, t + h
            traj.dt_history.append(h)
            steps += 1
            if monitors and (config.checkpoint_every == 0 or steps % config.checkpoint_every == 0):
                run_monitors(t, y)
            if abs(t - next_ck) <= 1e-12 * max(1.0, abs(next_ck)):
                t = next_ck
                traj.times.append(t)
                traj.states.append(sysm.profile(t, y))
                next_ck = next(ck, t_end)
            if steps > config.max_substeps:
                raise StiffnessFailure("maximum number of substeps exceeded")
        return traj

    # explicit RK4 with CFL control and optional step doubling
    dt = config.dt_init
    steps = 0
    ck = iter(ckpts)
    next_ck = next(ck)
    dt_min = 1e-14 * max(1.0, abs(t_end - t))
    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        F = sysm.full(t, y)
        dt_cfl = config.cfl_safety * sysm.cfl_dt(F)
        h = min(dt, dt_cfl, next_ck - t)
        if config.tol_step is not None:
            y_full = _rk4_step(sysm.rhs, t, y, h)
            y_half = _rk4_step(sysm.rhs, t + h / 2, _rk4_step(sysm.rhs, t, y, h / 2), h / 2)
            err = np.max(np.abs(y_full - y_half)) / 15.0
            if not np.isfinite(err) or err > config.tol_step:
                dt = 0.5 * h
                if dt < dt_min:
                    traj.status, traj.message = "stiff", "stiffness failure: step size underflow"
                    raise StiffnessFailure(traj.message)
                continue
            y_new = y_half + (y_half - y_full) / 15.0
            if err < config.tol_step / 32:
                dt = min(2 * h, config.dt_init if config.dt_init > h else 2 * h)
        else:
            y_new = _rk4_step(sysm.rhs, t, y, h)
        if not np.all(np.isfinite(y_new)):
            traj.status, traj.message = "blowup", "blow-up or instability detected"
            break
        y, t = y_new, t + h
        traj.dt_history.append(h)
        steps += 1
        if monitors and (config.checkpoint_every == 0 or steps % config.checkpoint_every == 0):
            run_monitors(t, y)
        if abs(t - next_ck) <= 1e-12 * max(1.0, abs(next_ck)):
            t = next_ck
            traj.times.append(t)
            traj.states.append(sysm.profile(t, y))
            next_ck = next(ck, t_end)
        if steps > config.max_substeps:
            raise StiffnessFailure("maximum number of substeps exceeded")
    if traj.status != "ok":
        traj.times.append(t)
        traj.states.append(sysm.profile(t, y))
    return traj


def _evolve_bdf(sysm, y0, t0, t_end, ckpts, config, traj, run_monitors):
    sol = solve_ivp(
        sysm.rhs,
        (t0, t_end),
        y0,
        method="BDF",
        t_eval=[c for c in ckpts if c > t0],
        rtol=config.tol_newton,
        atol=config.atol,
        jac_sparsity=sysm.jac_sparsity(),
        first_step=config.dt_init,
    )
    if sol.status < 0 or not np.all(np.isfinite(sol.y)):
        traj.status, traj.message = "stiff", f"stiffness failure: {sol.message}"
    for i, tt in enumerate(sol.t):
        yy = sol.y[:, i]
        traj.times.append(float(tt))
        traj.states.append(run_monitors(float(tt), yy))
    traj.dt_history.extend(np.diff(np.concatenate([[t0], sol.t])).tolist())
    return traj
