"""Effective elastic properties of fiber/matrix cross-sections.

The window is rasterized onto a regular grid of bilinear quadrilaterals. Cells
cut by a fiber boundary get a composite stiffness: by default the rank-one
laminate of the two phases oriented along the local interface normal, or the
arithmetic blend ``phi * C_fiber + (1 - phi) * C_matrix`` (``mixing="voigt"``).
Generalized plane strain is handled by carrying a uniform axial strain
``eps_zz`` next to the in-plane field; strain components are ordered
``(xx, yy, zz, xy)`` with engineering shear.

Boundary conditions:

* ``periodic``: ``u = <eps> x + w`` with ``w`` periodic (node pairing), one
  node pinned.
* ``displacement``: ``u = <eps> x`` on the whole boundary.
* ``mixed``: normal displacement prescribed on the two faces normal to the
  load, no shear traction there, lateral faces free. Only uniaxial moduli and
  Poisson ratios are defined in this mode.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Microstructure, volume_fraction

try:  # supernodal Cholesky; SuperLU with a nested-dissection order otherwise
    import cvxopt as _cvxopt
    import cvxopt.cholmod as _cholmod

    _cholmod.options["supernodal"] = 2
except ImportError:  # pragma: no cover
    _cvxopt = _cholmod = None

RESIDUAL_TOL = 1e-8


class SolverError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class ElasticPhase:
    E: float
    nu: float

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"Young's modulus must be positive, got {self.E}")
        if not -1.0 < self.nu < 0.5:
            raise ValueError(f"Poisson's ratio must lie in (-1, 0.5), got {self.nu}")

    @property
    def lam(self) -> float:
        return self.E * self.nu / ((1 + self.nu) * (1 - 2 * self.nu))

    @property
    def G(self) -> float:
        return self.E / (2 * (1 + self.nu))

    @property
    def K_plane(self) -> float:
        """Plane-strain bulk modulus ``lambda + mu``."""
        return self.lam + self.G

    def stiffness(self) -> np.ndarray:
        lam, mu = self.lam, self.G
        C = np.zeros((4, 4))
        C[:3, :3] = lam
        C[[0, 1, 2], [0, 1, 2]] += 2 * mu
        C[3, 3] = mu
        return C

    def scaled(self, s: float) -> "ElasticPhase":
        return ElasticPhase(self.E * s, self.nu)


# (fiber, matrix)
PHASE_SETS = {
    "glass_epoxy": (ElasticPhase(82.0, 0.22), ElasticPhase(3.24, 0.34)),
    "glass_epoxy_strength": (ElasticPhase(74.0, 0.20), ElasticPhase(3.35, 0.35)),
    "contrast_26.5": (ElasticPhase(26.5, 0.25), ElasticPhase(1.0, 0.35)),
    "contrast_25": (ElasticPhase(25.0, 0.25), ElasticPhase(1.0, 0.35)),
}


class LoadCase(enum.Enum):
    XX = 0
    YY = 1
    ZZ = 2
    XY = 3

    @property
    def strain(self) -> np.ndarray:
        e = np.zeros(4)
        e[self.value] = 1.0
        return e


MIXING_RULES = ("laminate", "voigt")


@dataclass(frozen=True)
class PeriodicGridModel:
    phi: np.ndarray  # (nx, ny) fiber area fraction per cell
    hx: float
    hy: float
    fiber: ElasticPhase
    matrix: ElasticPhase
    bc_mode: str = "periodic"
    supersampling: int = 4
    normals: np.ndarray | None = None  # (nx, ny, 2) interface normal (sign-free) in cut cells
    mixing: str = "laminate"

    def __post_init__(self):
        if self.bc_mode not in ("periodic", "mixed", "displacement"):
            raise ValueError(f"unknown bc_mode {self.bc_mode!r}")
        if self.mixing not in MIXING_RULES:
            raise ValueError(f"unknown mixing rule {self.mixing!r}")
        if np.any(self.phi < 0) or np.any(self.phi > 1):
            raise ValueError("cell fractions must lie in [0, 1]")
        if self.mixing == "laminate" and self.normals is None:
            raise ValueError("laminate mixing needs interface normals")

    @property
    def nx(self) -> int:
        return self.phi.shape[0]

    @property
    def ny(self) -> int:
        return self.phi.shape[1]

    @property
    def lx(self) -> float:
        return self.nx * self.hx

    @property
    def ly(self) -> float:
        return self.ny * self.hy

    @property
    def area(self) -> float:
        return self.lx * self.ly

    def replace(self, **kw) -> "PeriodicGridModel":
        return dataclasses.replace(self, **kw)

    def cell_stiffness(self) -> np.ndarray:
        """Per-cell stiffness (nx*ny, 4, 4), cells in row-major ``(i, j)`` order."""
        Cf, Cm = self.fiber.stiffness(), self.matrix.stiffness()
        f = self.phi.ravel()
        C = f[:, None, None] * Cf + (1 - f)[:, None, None] * Cm
        if self.mixing == "laminate":
            cut = (f > 0) & (f < 1)
            if np.any(cut):
                C[cut] = laminate_stiffness(self.fiber, self.matrix, f[cut], self.normals.reshape(-1, 2)[cut])
        return C


# composite cells -----------------------------------------------------------------

_MANDEL_SUB = [0, 1, 2, 5]  # xx, yy, zz, xy within the 6-component Mandel basis
_ENG = np.array([1.0, 1.0, 1.0, 1.0 / math.sqrt(2.0)])


def _mandel(phase: ElasticPhase) -> np.ndarray:
    C = np.full((6, 6), 0.0)
    C[:3, :3] = phase.lam
    C += 2 * phase.G * np.eye(6)
    return C


def laminate_stiffness(fiber: ElasticPhase, matrix: ElasticPhase, phi: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Rank-one laminate of the two phases with in-plane normals, (m, 4, 4).

    Strain jumps across the interface are ``sym(a x n)``; traction is continuous.
    """
    phi = np.asarray(phi, dtype=float)
    n = np.asarray(normals, dtype=float)
    nn = np.linalg.norm(n, axis=1)
    n = np.where(nn[:, None] > 0, n / np.where(nn > 0, nn, 1.0)[:, None], np.array([1.0, 0.0]))
    m = len(phi)
    r2 = 1.0 / math.sqrt(2.0)
    N = np.zeros((m, 6, 3))
    N[:, 0, 0] = n[:, 0]
    N[:, 1, 1] = n[:, 1]
    N[:, 3, 2] = r2 * n[:, 1]
    N[:, 4, 2] = r2 * n[:, 0]
    N[:, 5, 0] = r2 * n[:, 1]
    N[:, 5, 1] = r2 * n[:, 0]
    C1, C2 = _mandel(fiber), _mandel(matrix)
    c1 = phi[:, None, None]
    c2 = 1.0 - c1
    Cmix = c2 * C1 + c1 * C2
    Nt = np.transpose(N, (0, 2, 1))
    G = Nt @ Cmix @ N
    Amat = -np.linalg.solve(G, Nt @ (C1 - C2))  # jump amplitude per unit mean strain
    NA = N @ Amat
    eye = np.eye(6)
    C = c1 * (C1 @ (eye + c2 * NA)) + c2 * (C2 @ (eye - c1 * NA))
    C = 0.5 * (C + np.transpose(C, (0, 2, 1)))
    sub = C[:, _MANDEL_SUB][:, :, _MANDEL_SUB]
    return sub * _ENG[None, :, None] * _ENG[None, None, :]


# rasterization -----------------------------------------------------------------


def rasterize(
    ms: Microstructure,
    nx: int,
    phases: tuple[ElasticPhase, ElasticPhase] | None = None,
    bc_mode: str | None = None,
    supersampling: int = 4,
    ny: int | None = None,
    mixing: str = "laminate",
) -> PeriodicGridModel:
    """Per-cell fiber area fraction by ``k x k`` point sampling.

    Periodic windows wrap fibers across edges; non-periodic windows clip them.
    Cut cells also record the dominant radial direction of their inside samples.
    """
    if nx < 8:
        raise ValueError("nx must be at least 8")
    lx, ly = ms.domain.lx, ms.domain.ly
    if ny is None:
        ny = max(8, int(round(nx * ly / lx)))
    k = int(supersampling)
    if k < 1:
        raise ValueError("supersampling must be >= 1")
    mx, my = nx * k, ny * k
    sx, sy = lx / mx, ly / my
    img = np.zeros((mx, my), dtype=bool)
    orient = np.zeros((mx, my, 3))  # n_x^2, n_x n_y, n_y^2 of inside samples
    periodic = ms.domain.periodic
    for (cx, cy), r in zip(ms.centers, ms.radii):
        i0 = int(math.floor((cx - r) / sx - 0.5))
        i1 = int(math.ceil((cx + r) / sx - 0.5))
        j0 = int(math.floor((cy - r) / sy - 0.5))
        j1 = int(math.ceil((cy + r) / sy - 0.5))
        ii = np.arange(i0, i1 + 1)
        jj = np.arange(j0, j1 + 1)
        if not periodic:
            ii = ii[(ii >= 0) & (ii < mx)]
            jj = jj[(jj >= 0) & (jj < my)]
            if ii.size == 0 or jj.size == 0:
                continue
        px = (ii + 0.5) * sx - cx
        py = (jj + 0.5) * sy - cy
        inside = px[:, None] ** 2 + py[None, :] ** 2 <= r * r
        idx = np.ix_(ii % mx, jj % my) if periodic else np.ix_(ii, jj)
        img[idx] |= inside
        rr = np.maximum(px[:, None] ** 2 + py[None, :] ** 2, 1e-300)
        orient[idx + (0,)] += np.where(inside, px[:, None] ** 2 / rr, 0.0)
        orient[idx + (1,)] += np.where(inside, px[:, None] * py[None, :] / rr, 0.0)
        orient[idx + (2,)] += np.where(inside, py[None, :] ** 2 / rr, 0.0)
    phi = img.reshape(nx, k, ny, k).mean(axis=(1, 3))
    normals = _principal_axis(orient.reshape(nx, k, ny, k, 3).sum(axis=(1, 3)))
    fiber, matrix = phases if phases is not None else PHASE_SETS["glass_epoxy"]
    if bc_mode is None:
        bc_mode = "periodic" if periodic else "mixed"
    return PeriodicGridModel(phi, lx / nx, ly / ny, fiber, matrix, bc_mode, k, normals, mixing)


def _principal_axis(t: np.ndarray) -> np.ndarray:
    """Dominant eigenvector of packed symmetric 2x2 tensors ``(a, b, c)``.

    Sign-free, so cells shared by two fibers facing each other keep the
    common normal instead of cancelling.
    """
    a, b, c = t[..., 0], t[..., 1], t[..., 2]
    ang = 0.5 * np.arctan2(2 * b, a - c)
    return np.stack([np.cos(ang), np.sin(ang)], axis=-1)


# element matrices ----------------------------------------------------------------

_GP = np.array([-1.0, 1.0]) / math.sqrt(3.0)
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])
_IP = [0, 1, 3]


def _B(xi, eta, hx, hy):
    dx = 0.25 * _XI * (1 + eta * _ETA) * 2.0 / hx
    dy = 0.25 * _ETA * (1 + xi * _XI) * 2.0 / hy
    B = np.zeros((3, 8))
    B[0, 0::2] = dx
    B[1, 1::2] = dy
    B[2, 0::2] = dy
    B[2, 1::2] = dx
    return B


def _element_bases(hx, hy):
    """``M[a, b]`` with ``K_e = sum_ab D[a, b] M[a, b]`` and ``fz_e = Mz @ dz``."""
    w = hx * hy / 4.0
    M = np.zeros((3, 3, 8, 8))
    Mz = np.zeros((8, 3))
    for xi in _GP:
        for eta in _GP:
            B = _B(xi, eta, hx, hy)
            M += w * np.einsum("ai,bj->abij", B, B)
            Mz += w * B.T
    return M, Mz


def _affine_map(hx, hy) -> np.ndarray:
    """Nodal displacements of one element under unit in-plane strains (8 x 3)."""
    xs = np.array([0.0, hx, hx, 0.0])
    ys = np.array([0.0, 0.0, hy, hy])
    A = np.zeros((8, 3))
    A[0::2, 0] = xs
    A[1::2, 1] = ys
    A[0::2, 2] = 0.5 * ys
    A[1::2, 2] = 0.5 * xs
    return A


# orderings ---------------------------------------------------------------------


@functools.lru_cache(maxsize=16)
def _nested_dissection(nx: int, ny: int, torus: bool) -> np.ndarray:
    """Node elimination order for an ``nx x ny`` node grid (node id ``i*ny + j``).

    Separators are eliminated after the two halves they split; on a torus the
    wrap-around row and column go last.
    """
    out: list[np.ndarray] = []

    def block(i0, i1, j0, j1):
        ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="ij")
        return (ii * ny + jj).ravel()

    def rec(i0, i1, j0, j1):
        w, h = i1 - i0, j1 - j0
        if w <= 0 or h <= 0:
            return
        if w * h <= 64:
            out.append(block(i0, i1, j0, j1))
            return
        if w >= h:
            m = (i0 + i1) // 2
            rec(i0, m, j0, j1)
            rec(m + 1, i1, j0, j1)
            out.append(block(m, m + 1, j0, j1))
        else:
            m = (j0 + j1) // 2
            rec(i0, i1, j0, m)
            rec(i0, i1, m + 1, j1)
            out.append(block(i0, i1, m, m + 1))

    if torus:
        rec(1, nx, 1, ny)
        out.append(block(0, 1, 1, ny))
        out.append(block(0, nx, 0, 1))
    else:
        rec(0, nx, 0, ny)
    return np.concatenate(out)


# solution containers ---------------------------------------------------------------


@dataclass
class FieldSolution:
    load: np.ndarray  # prescribed macro strain (4,) or boundary load label
    displacement: np.ndarray  # nodal displacement field (fluctuation for periodic), (n_nodes, 2)
    avg_stress: np.ndarray  # (4,) xx, yy, zz, xy
    avg_strain: np.ndarray  # (4,)
    reaction_stress: np.ndarray  # (4,) master-DOF reactions / area (NaN where undefined)
    residual: float


@dataclass
class EffectiveProperties:
    E_x: float
    E_y: float
    E_z: float
    G_xy: float
    nu_xy: float
    nu_yx: float
    nu_xz: float
    nu_yz: float
    stiffness: np.ndarray  # (4, 4) or NaN for mixed mode
    compliance: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def E_transverse(self) -> float:
        return 0.5 * (self.E_x + self.E_y)

    def as_row(self) -> dict:
        row = {k: getattr(self, k) for k in ("E_x", "E_y", "E_z", "G_xy", "nu_xy", "nu_yx", "nu_xz", "nu_yz")}
        row["E_transverse"] = self.E_transverse
        return row


# assembly ----------------------------------------------------------------------------


class _System:
    """Assembled grid problem for one model; factorizations are cached per fixed-DOF set."""

    def __init__(self, grid: PeriodicGridModel):
        self.grid = grid
        g = grid
        self.periodic = g.bc_mode == "periodic"
        nx, ny = g.nx, g.ny
        self.A = _affine_map(g.hx, g.hy)
        self.Bbar = _B(0.0, 0.0, g.hx, g.hy)
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        i, j = i.ravel(), j.ravel()
        if self.periodic:
            self.nnx, self.nny = nx, ny
            nid = lambda a, b: (a % nx) * ny + (b % ny)  # noqa: E731
        else:
            self.nnx, self.nny = nx + 1, ny + 1
            nid = lambda a, b: a * (ny + 1) + b  # noqa: E731
        self.n_nodes = self.nnx * self.nny
        nodes = np.stack([nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)], axis=1)
        self.edofs = np.stack([2 * nodes, 2 * nodes + 1], axis=2).reshape(-1, 8)
        C = g.cell_stiffness()
        self.D = C[:, _IP][:, :, _IP]  # (ne, 3, 3)
        self.dz = C[:, _IP, 2]  # (ne, 3)
        self.czz = C[:, 2, 2]
        M, Mz = _element_bases(g.hx, g.hy)
        self.Ke = np.einsum("eab,abij->eij", self.D, M)
        self.fz = self.dz @ Mz.T  # (ne, 8)
        rows = np.repeat(self.edofs, 8, axis=1).ravel()
        cols = np.tile(self.edofs, (1, 8)).ravel()
        n = 2 * self.n_nodes
        self.K = sp.csr_matrix((self.Ke.ravel(), (rows, cols)), shape=(n, n))
        self.K.sum_duplicates()
        self._factors: dict = {}

    def _scatter(self, fe: np.ndarray) -> np.ndarray:
        out = np.zeros(2 * self.n_nodes)
        np.add.at(out, self.edofs.ravel(), fe.ravel())
        return out

    def element_forces(self, e: np.ndarray) -> np.ndarray:
        """Global load from a uniform macro strain (acts on the fluctuation)."""
        ua = self.A @ e[_IP]
        return self._scatter(-(self.Ke @ ua + self.fz * e[2]))

    def zz_forces(self) -> np.ndarray:
        return self._scatter(-self.fz)

    def averages(self, u: np.ndarray, e: np.ndarray, fluctuation: bool):
        """Volume-averaged stress and strain; ``u`` nodal (2*n_nodes,)."""
        eps = u[self.edofs] @ self.Bbar.T  # (ne, 3) xx, yy, xy
        if fluctuation:
            eps = eps + e[_IP]
        ezz = e[2]
        sig = np.einsum("eab,eb->ea", self.D, eps) + self.dz * ezz
        szz = np.sum(self.dz * eps, axis=1) + self.czz * ezz
        s_avg = sig.mean(axis=0)
        e_avg = eps.mean(axis=0)
        return (
            np.array([s_avg[0], s_avg[1], szz.mean(), s_avg[2]]),
            np.array([e_avg[0], e_avg[1], ezz, e_avg[2]]),
        )

    def reactions(self, w: np.ndarray, e: np.ndarray) -> np.ndarray:
        """Energy conjugates of the macro strain DOFs, divided by the area."""
        ue = w[self.edofs] + self.A @ e[_IP]
        Ku = np.einsum("eij,ej->ei", self.Ke, ue)
        r_in = (Ku + self.fz * e[2]) @ self.A
        r_zz = np.sum(ue * self.fz, axis=1) + self.czz * self.grid.hx * self.grid.hy * e[2]
        tot = r_in.sum(axis=0)
        return np.array([tot[0], tot[1], r_zz.sum(), tot[2]]) / self.grid.area

    # linear algebra
    def factor(self, fixed: np.ndarray):
        key = fixed.tobytes()
        if key in self._factors:
            return self._factors[key]
        free_mask = np.ones(2 * self.n_nodes, dtype=bool)
        free_mask[fixed] = False
        t0 = time.perf_counter()
        if _cholmod is not None:
            free = np.flatnonzero(free_mask)
            Kff = self.K[free][:, free].tocsc()
            lower = sp.tril(Kff).tocoo()
            A = _cvxopt.spmatrix(lower.data, lower.row.tolist(), lower.col.tolist(), Kff.shape)
            fac = _cholmod.symbolic(A, uplo="L")
            _cholmod.numeric(A, fac)
            method = "cholmod"
        else:
            node_order = _nested_dissection(self.nnx, self.nny, self.periodic)
            dof_order = np.stack([2 * node_order, 2 * node_order + 1], axis=1).ravel()
            free = dof_order[free_mask[dof_order]]
            Kff = self.K[free][:, free].tocsc()
            fac = spla.splu(Kff, permc_spec="NATURAL", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
            method = "superlu"
        entry = (free, Kff, fac, method, time.perf_counter() - t0)
        self._factors[key] = entry
        return entry

    def solve_free(self, fixed, rhs_full_list):
        free, Kff, fac, method, _ = self.factor(fixed)
        R = np.stack([r[free] for r in rhs_full_list], axis=1)
        if method == "cholmod":
            B = _cvxopt.matrix(np.asfortranarray(R))
            _cholmod.solve(fac, B)
            X = np.array(B).reshape(R.shape)
        else:
            X = fac.solve(R).reshape(R.shape)
        res = []
        for c in range(R.shape[1]):
            nb = np.linalg.norm(R[:, c])
            r = np.linalg.norm(Kff @ X[:, c] - R[:, c])
            res.append(0.0 if nb == 0 else r / nb)
        return free, X, res


def _check_residual(res, diag):
    worst = max(res) if res else 0.0
    diag["residual"] = max(diag.get("residual", 0.0), worst)
    if worst > RESIDUAL_TOL:
        raise SolverError(f"linear solve did not converge (relative residual {worst:.2e})", diag)


def _periodic_solutions(system: _System, loads: list[np.ndarray], diag: dict) -> list[FieldSolution]:
    fixed = np.array([0, 1])  # pin node 0
    rhs = [system.element_forces(e) for e in loads]
    free, X, res = system.solve_free(fixed, rhs)
    _check_residual(res, diag)
    out = []
    for c, e in enumerate(loads):
        w = np.zeros(2 * system.n_nodes)
        w[free] = X[:, c]
        s, eps = system.averages(w, e, fluctuation=True)
        out.append(FieldSolution(e, w.reshape(-1, 2), s, eps, system.reactions(w, e), res[c]))
    return out


def _boundary_nodes(system: _System):
    nnx, nny = system.nnx, system.nny
    ids = np.arange(system.n_nodes).reshape(nnx, nny)
    return ids, np.unique(np.concatenate([ids[0], ids[-1], ids[:, 0], ids[:, -1]]))


def _node_xy(system: _System):
    g = system.grid
    ii, jj = np.meshgrid(np.arange(system.nnx), np.arange(system.nny), indexing="ij")
    return np.stack([ii.ravel() * g.hx, jj.ravel() * g.hy], axis=1)


def _dirichlet_solutions(system, fixed, values_list, ezz_list, diag):
    """Total-displacement solves with prescribed DOFs and uniform eps_zz."""
    rhs = []
    for vals, ezz in zip(values_list, ezz_list):
        u_d = np.zeros(2 * system.n_nodes)
        u_d[fixed] = vals
        rhs.append(-(system.K @ u_d) + ezz * system.zz_forces())
    free, X, res = system.solve_free(fixed, rhs)
    _check_residual(res, diag)
    out = []
    for c, (vals, ezz) in enumerate(zip(values_list, ezz_list)):
        u = np.zeros(2 * system.n_nodes)
        u[fixed] = vals
        u[free] = X[:, c]
        e = np.array([0.0, 0.0, ezz, 0.0])
        s, eps = system.averages(u, e, fluctuation=False)
        out.append(FieldSolution(e, u.reshape(-1, 2), s, eps, np.full(4, np.nan), res[c]))
    return out


def _displacement_solutions(system, loads, diag):
    ids, bnd = _boundary_nodes(system)
    xy = _node_xy(system)[bnd]
    fixed = np.stack([2 * bnd, 2 * bnd + 1], axis=1).ravel()
    vals = []
    for e in loads:
        ux = e[0] * xy[:, 0] + 0.5 * e[3] * xy[:, 1]
        uy = 0.5 * e[3] * xy[:, 0] + e[1] * xy[:, 1]
        vals.append(np.stack([ux, uy], axis=1).ravel())
    return _dirichlet_solutions(system, fixed, vals, [e[2] for e in loads], diag)


def _mixed_uniaxial(system, axis: int, diag):
    """Unit normal stretch along ``axis`` with sigma_zz = 0 on average."""
    ids, _ = _boundary_nodes(system)
    g = system.grid
    if axis == 0:
        lo, hi, length = ids[0], ids[-1], g.lx
        pin = 2 * ids[0, 0] + 1
    else:
        lo, hi, length = ids[:, 0], ids[:, -1], g.ly
        pin = 2 * ids[0, 0]
    fixed = np.concatenate([2 * lo + axis, 2 * hi + axis, [pin]])
    stretch = np.concatenate([np.zeros(len(lo)), np.full(len(hi), length), [0.0]])
    zeros = np.zeros_like(stretch)
    a, b = _dirichlet_solutions(system, fixed, [stretch, zeros], [0.0, 1.0], diag)
    t = -a.avg_stress[2] / b.avg_stress[2]
    s = a.avg_stress + t * b.avg_stress
    e = a.avg_strain + t * b.avg_strain
    u = a.displacement + t * b.displacement
    return FieldSolution(e, u, s, e, np.full(4, np.nan), max(a.residual, b.residual))


def _mixed_axial(system, diag):
    ids, _ = _boundary_nodes(system)
    fixed = np.array([2 * ids[0, 0], 2 * ids[0, 0] + 1, 2 * ids[-1, 0] + 1])
    (sol,) = _dirichlet_solutions(system, fixed, [np.zeros(3)], [1.0], diag)
    return sol


def solve(grid: PeriodicGridModel, lc: LoadCase | np.ndarray, diag: dict | None = None) -> FieldSolution:
    """One load case. ``lc`` is a ``LoadCase`` or an arbitrary macro strain (4,)."""
    diag = {} if diag is None else diag
    system = _System(grid)
    e = lc.strain if isinstance(lc, LoadCase) else np.asarray(lc, dtype=float)
    if grid.bc_mode == "periodic":
        return _periodic_solutions(system, [e], diag)[0]
    if grid.bc_mode == "displacement":
        return _displacement_solutions(system, [e], diag)[0]
    if not isinstance(lc, LoadCase) or lc is LoadCase.XY:
        raise ValueError("mixed boundary conditions support the XX, YY and ZZ load cases only")
    if lc is LoadCase.ZZ:
        return _mixed_axial(system, diag)
    return _mixed_uniaxial(system, lc.value, diag)


def _from_stiffness(C: np.ndarray, diag: dict) -> EffectiveProperties:
    S = np.linalg.inv(C)
    E_x, E_y, E_z, G = 1 / S[0, 0], 1 / S[1, 1], 1 / S[2, 2], 1 / S[3, 3]
    return EffectiveProperties(
        E_x=E_x,
        E_y=E_y,
        E_z=E_z,
        G_xy=G,
        nu_xy=-S[1, 0] * E_x,
        nu_yx=-S[0, 1] * E_y,
        nu_xz=-S[2, 0] * E_x,
        nu_yz=-S[2, 1] * E_y,
        stiffness=C,
        compliance=S,
        diagnostics=diag,
    )


def effective_properties_grid(grid: PeriodicGridModel, load_cases=tuple(LoadCase)) -> EffectiveProperties:
    t0 = time.perf_counter()
    system = _System(grid)
    diag = {
        "bc_mode": grid.bc_mode,
        "nx": grid.nx,
        "ny": grid.ny,
        "supersampling": grid.supersampling,
        "mixing": grid.mixing,
        "grid_vf": float(grid.phi.mean()),
        "n_dofs": 2 * system.n_nodes,
        "residual": 0.0,
    }
    if grid.bc_mode == "mixed":
        sx = _mixed_uniaxial(system, 0, diag)
        sy = _mixed_uniaxial(system, 1, diag)
        sz = _mixed_axial(system, diag)
        E_x = sx.avg_stress[0] / sx.avg_strain[0]
        E_y = sy.avg_stress[1] / sy.avg_strain[1]
        E_z = sz.avg_stress[2] / sz.avg_strain[2]
        props = EffectiveProperties(
            E_x=E_x,
            E_y=E_y,
            E_z=E_z,
            G_xy=math.nan,
            nu_xy=-sx.avg_strain[1] / sx.avg_strain[0],
            nu_yx=-sy.avg_strain[0] / sy.avg_strain[1],
            nu_xz=-sx.avg_strain[2] / sx.avg_strain[0],
            nu_yz=-sy.avg_strain[2] / sy.avg_strain[1],
            stiffness=np.full((4, 4), np.nan),
            compliance=np.full((4, 4), np.nan),
            diagnostics=diag,
        )
    else:
        loads = [lc.strain for lc in LoadCase]
        if grid.bc_mode == "periodic":
            sols = _periodic_solutions(system, loads, diag)
            rel = max(
                np.max(np.abs(s.reaction_stress - s.avg_stress)) / max(np.max(np.abs(s.avg_stress)), 1e-300)
                for s in sols
            )
            diag["reaction_mismatch"] = float(rel)
        else:
            sols = _displacement_solutions(system, loads, diag)
        C = np.stack([s.avg_stress for s in sols], axis=1)
        diag["stiffness_asymmetry"] = float(np.max(np.abs(C - C.T)) / np.max(np.abs(C)))
        props = _from_stiffness(0.5 * (C + C.T), diag)
    diag["factor_seconds"] = float(sum(v[4] for v in system._factors.values()))
    diag["method"] = next(iter(system._factors.values()))[3] if system._factors else None
    diag["seconds"] = time.perf_counter() - t0
    return props


_SCALARS = ("E_x", "E_y", "E_z", "G_xy", "nu_xy", "nu_yx", "nu_xz", "nu_yz")


def _extrapolated(fine: EffectiveProperties, coarse: EffectiveProperties, ratio: float) -> EffectiveProperties:
    """First-order Richardson combination of two resolutions (``ratio = h_coarse / h_fine``)."""
    w = 1.0 / (ratio - 1.0)
    diag = dict(fine.diagnostics)
    diag["extrapolated"] = True
    diag["h_ratio"] = ratio
    diag["E_transverse_fine"] = fine.E_transverse
    diag["E_transverse_coarse"] = coarse.E_transverse
    if np.all(np.isfinite(fine.stiffness)):
        C = fine.stiffness + w * (fine.stiffness - coarse.stiffness)
        return _from_stiffness(0.5 * (C + C.T), diag)
    vals = {k: getattr(fine, k) + w * (getattr(fine, k) - getattr(coarse, k)) for k in _SCALARS}
    return EffectiveProperties(**vals, stiffness=fine.stiffness, compliance=fine.compliance, diagnostics=diag)


def effective_properties(
    ms: Microstructure,
    phases: tuple[ElasticPhase, ElasticPhase] | str = "glass_epoxy",
    nx: int = 256,
    bc_mode: str | None = None,
    supersampling: int = 4,
    mixing: str = "laminate",
    extrapolate: bool = True,
) -> EffectiveProperties:
    """Rasterize and homogenize; ``phases`` is ``(fiber, matrix)`` or a name in ``PHASE_SETS``.

    The grid error is first order in the cell size, so by default a second
    solve at half the resolution is combined with the fine one (Richardson);
    ``extrapolate=False`` returns the raw fine-grid result.
    """
    if isinstance(phases, str):
        phases = PHASE_SETS[phases]
    grid = rasterize(ms, nx, phases, bc_mode, supersampling, mixing=mixing)
    props = effective_properties_grid(grid)
    if extrapolate:
        if nx < 16:
            raise ValueError("extrapolation needs nx >= 16")
        coarse = effective_properties_grid(rasterize(ms, nx // 2, phases, bc_mode, supersampling, mixing=mixing))
        seconds = props.diagnostics["seconds"] + coarse.diagnostics["seconds"]
        props = _extrapolated(props, coarse, nx / (nx // 2))
        props.diagnostics["seconds"] = seconds
    else:
        props.diagnostics["extrapolated"] = False
    props.diagnostics["vf"] = volume_fraction(ms)
    return props


# analytic references -----------------------------------------------------------------


def voigt_reuss(phases, vf: float) -> tuple[float, float]:
    fiber, matrix = phases
    return vf * fiber.E + (1 - vf) * matrix.E, 1.0 / (vf / fiber.E + (1 - vf) / matrix.E)


def mori_tanaka_2d(matrix: tuple[float, float], inclusion: tuple[float, float], c: float) -> tuple[float, float]:
    """Plane (transverse) bulk and shear moduli for circular inclusions.

    Both phases are given as ``(K, G)`` with ``K`` the plane-strain bulk modulus.
    """
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"inclusion fraction must lie in [0, 1], got {c}")
    Km, Gm = matrix
    Ki, Gi = inclusion
    K = Km + c * (Ki - Km) * (Km + Gm) / ((1 - c) * (Ki - Km) + Km + Gm)
    G = Gm + c * (Gi - Gm) / (1 + (1 - c) * (Gi - Gm) * (Km + 2 * Gm) / (2 * Gm * (Km + Gm)))
    return K, G


def transverse_modulus(K_T: float, G_T: float, E_z: float, nu_z: float) -> float:
    """Transverse Young's modulus of a transversely isotropic solid."""
    m = 1 + 4 * K_T * nu_z**2 / E_z
    return 4 * K_T * G_T / (K_T + m * G_T)


SKELETON_VF = 0.9


@functools.lru_cache(maxsize=32)
def _skeleton(fiber: ElasticPhase, matrix: ElasticPhase, nx: int):
    from .generate import hexagonal_lattice

    cell = hexagonal_lattice(SKELETON_VF, n_cells_x=1, n_rows=2)
    props = effective_properties(cell, (fiber, matrix), nx=nx)
    C, S = props.stiffness, props.compliance
    # in-plane isotropic projection of the hexagonal cell
    K_T = 0.25 * (C[0, 0] + C[1, 1]) + 0.5 * C[0, 1]
    G_T = 0.5 * (0.25 * (C[0, 0] + C[1, 1]) - 0.5 * C[0, 1]) + 0.5 * C[3, 3]
    E_z = 1.0 / S[2, 2]
    nu_z = -S[0, 2] * E_z
    return K_T, G_T, E_z, nu_z, props.E_transverse


def two_step_upper(phases, vf: float, nx: int = 384) -> float:
    """Stiff-skeleton estimate of the largest transverse modulus at ``vf``.

    A hexagonal packing at 0.9 fiber fraction forms the skeleton; matrix
    islands at fraction ``1 - vf / 0.9`` are embedded in it by Mori-Tanaka.
    The skeleton gap is only about 0.015 R, so ``nx`` (cells across one
    lattice spacing) has to be large for the step-1 cell to converge.
    """
    if isinstance(phases, str):
        phases = PHASE_SETS[phases]
    if not 0.0 <= vf <= SKELETON_VF:
        raise ValueError(f"vf must lie in [0, {SKELETON_VF}], got {vf}")
    fiber, matrix = phases
    K1, G1, Ez1, nuz1, _ = _skeleton(fiber, matrix, nx)
    c = 1.0 - vf / SKELETON_VF
    K, G = mori_tanaka_2d((K1, G1), (matrix.K_plane, matrix.G), c)
    E_z = (1 - c) * Ez1 + c * matrix.E
    nu_z = (1 - c) * nuz1 + c * matrix.nu
    return transverse_modulus(K, G, E_z, nu_z)


def convergence_study(ms: Microstructure, phases, resolutions, bc_mode=None, supersampling=4) -> list[dict]:
    """Transverse modulus per resolution with relative change to the previous level."""
    if len(resolutions) < 2:
        raise ValueError("need at least two resolutions")
    rows = []
    prev = None
    for nx in resolutions:
        p = effective_properties(ms, phases, nx=nx, bc_mode=bc_mode, supersampling=supersampling)
        E = p.E_transverse
        rows.append(
            {
                "nx": nx,
                "cell_over_radius": (ms.domain.lx / nx) / ms.mean_radius,
                "E_transverse": E,
                "E_x": p.E_x,
                "E_y": p.E_y,
                "rel_change": math.nan if prev is None else abs(E - prev) / abs(E),
            }
        )
        prev = E
    return rows
