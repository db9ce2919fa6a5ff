"""Finite-element eigenvalue problems for the index.

Three problems are assembled with piecewise-linear elements:

* the Gauss-metric problem on the compactified sphere, whose eigenvalues
  below 2 count the index;
* the Dirichlet Jacobi problem ``-Δu + 2κu = μu`` on a truncation;
* the same with the mass weighted by ``(1 + |X|^2)^(-δ)``.

The Dirichlet energy is conformally invariant, so the stiffness matrix is the
cotangent matrix of the chart (or of the inscribed polyhedron for the sphere).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AmbiguousCount, FactorizationFailure, NonConvergence, SingularMass
from .mesh import SphereMesh, TruncatedMesh
from .weierstrass import WeierstrassData, chart_w, chart_z, relative_fs_density, stereo

log = logging.getLogger(__name__)

DENSE_LIMIT = 1000
RESIDUAL_TOL = 1e-8

# Barycentric quadrature rules on a triangle (weights sum to 1).
_A, _B = 0.059715871789770, 0.470142064105115
_C, _D = 0.797426985353087, 0.101286507323456
QUADRATURE = {
    "centroid": (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    "midpoint": (np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]), np.full(3, 1 / 3)),
    "degree5": (
        np.array([[1 / 3, 1 / 3, 1 / 3], [_A, _B, _B], [_B, _A, _B], [_B, _B, _A],
                  [_C, _D, _D], [_D, _C, _D], [_D, _D, _C]]),
        np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3),
    ),
}


# ---------------------------------------------------------------------------
# element matrices


def _as_points(x: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(x):
        return np.stack([x.real, x.imag], axis=-1)
    return x


def triangle_areas(points: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = _as_points(points)
    e1 = p[tris[:, 1]] - p[tris[:, 0]]
    e2 = p[tris[:, 2]] - p[tris[:, 0]]
    if p.shape[1] == 2:
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def _assemble(tris: np.ndarray, local: np.ndarray, n: int) -> sp.csr_matrix:
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return mat


def stiffness_matrix(points: np.ndarray, tris: np.ndarray) -> sp.csr_matrix:
    """Cotangent matrix ``K_ij = ∫ ∇φ_i · ∇φ_j`` for flat triangles in 2D or 3D."""
    p = _as_points(points)
    e = np.stack([p[tris[:, 2]] - p[tris[:, 1]], p[tris[:, 0]] - p[tris[:, 2]],
                  p[tris[:, 1]] - p[tris[:, 0]]], axis=1)
    area = triangle_areas(p, tris)
    local = np.einsum("tid,tjd->tij", e, e) / (4 * area)[:, None, None]
    return _assemble(tris, local, len(p))


def weighted_mass(tris: np.ndarray, weights: np.ndarray, bary: np.ndarray, n: int) -> sp.csr_matrix:
    """``M_ij = Σ_q weights[t, q] b_i(q) b_j(q)`` where ``weights`` already include area."""
    local = np.einsum("tq,qi,qj->tij", weights, bary, bary)
    return _assemble(tris, local, n)


# ---------------------------------------------------------------------------
# problem and result types


@dataclass(eq=False)
class SpectralProblem:
    K: sp.csr_matrix
    M: sp.csr_matrix
    potential_included: bool
    boundary_condition: str  # "closed" | "dirichlet"
    dofs: np.ndarray  # mesh vertex index of each unknown
    num_vertices: int
    lower_bound: float  # guaranteed lower bound for the spectrum
    mesh_size: float
    kind: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.K.shape[0]

    def check(self) -> None:
        for name, A in (("K", self.K), ("M", self.M)):
            asym = abs(A - A.T).max() if A.nnz else 0.0
            if asym > 1e-12 * max(1.0, abs(A).max()):
                raise SingularMass(f"{name} is not symmetric (defect {asym:.3g})")
        if self.M.diagonal().min() <= 0:
            raise SingularMass("mass matrix has a nonpositive diagonal entry")

    def expand(self, vec: np.ndarray) -> np.ndarray:
        """Vertex-indexed vector (zero on eliminated Dirichlet vertices)."""
        out = np.zeros(vec.shape[:-1] + (self.num_vertices,)) if vec.ndim > 1 else np.zeros(self.num_vertices)
        out[..., self.dofs] = vec
        return out


@dataclass(eq=False)
class SpectralResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # (dim, m), M-orthonormal columns
    mesh_size: float
    residuals: np.ndarray
    method: str

    def count_below(self, threshold: float, tol: float = 0.0) -> int:
        return int(np.sum(self.eigenvalues < threshold - tol))

    def check(self, problem: SpectralProblem, rtol: float = RESIDUAL_TOL) -> None:
        V = self.eigenvectors
        G = V.T @ (problem.M @ V)
        orth = np.max(np.abs(G - np.eye(len(G)))) if len(G) else 0.0
        rq = np.einsum("ij,ij->j", V, problem.K @ V) / np.diag(G)
        rq_err = np.max(np.abs(rq - self.eigenvalues) / np.maximum(1.0, np.abs(self.eigenvalues)), initial=0.0)
        if orth > rtol or rq_err > rtol:
            raise NonConvergence(f"eigenpairs fail checks: M-orthonormality {orth:.2e}, Rayleigh {rq_err:.2e}")


# ---------------------------------------------------------------------------
# assembly


def assemble_gauss_metric(mesh: SphereMesh, data: WeierstrassData, quadrature: str = "midpoint") -> SpectralProblem:
    """Compactified problem ``∫∇u·∇v = λ ∫ u v ρ̂``.

    The stiffness is the cotangent matrix of the inscribed polyhedron; the
    mass integrates the Gauss-map density over the sphere through radial
    projection of each flat triangle.
    """
    bary, wq = QUADRATURE[quadrature]
    v, t = mesh.vertices, mesh.triangles
    K = stiffness_matrix(v, t)
    tri = v[t]  # (m, 3, 3)
    normal = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    area = 0.5 * np.linalg.norm(normal, axis=1)
    nhat = normal / (2 * area)[:, None]
    pts = np.einsum("qi,tid->tqd", bary, tri)  # (m, q, 3)
    r = np.linalg.norm(pts, axis=2)
    jac = np.einsum("tqd,td->tq", pts, nhat) / r**3
    dens = relative_fs_density(data, (pts / r[..., None]).reshape(-1, 3)).reshape(r.shape)
    weights = area[:, None] * wq[None, :] * jac * dens
    elem = weights.sum(axis=1)
    if np.any(elem <= 0):
        raise SingularMass(f"{int(np.sum(elem <= 0))} element(s) with nonpositive mass; "
                           "the Gauss map is constant or the mesh is too coarse at a branch point")
    M = weighted_mass(t, weights, bary, len(v))
    h = float(mesh.edge_lengths().max())
    prob = SpectralProblem(K, M, False, "closed", np.arange(len(v)), len(v), 0.0, h, "gauss-metric")
    prob.extra["total_mass"] = float(M.sum())
    return prob


def _chart_quadrature(mesh: TruncatedMesh, quadrature: str):
    bary, wq = QUADRATURE[quadrature]
    t = mesh.triangles
    area = triangle_areas(mesh.zeta, t)
    pts = np.einsum("qi,ti->tq", bary, mesh.zeta[t])
    return bary, area[:, None] * wq[None, :], pts


def _truncated(mesh: TruncatedMesh, quadrature: str, delta: Optional[float]) -> SpectralProblem:
    cv = mesh.chart
    bary, w, pts = _chart_quadrature(mesh, quadrature)
    flat = pts.ravel()
    lam2 = cv.metric(flat).reshape(pts.shape)
    pot = 2 * cv.fs_density(flat).reshape(pts.shape)  # |A|^2 λ^2 = 2 ρ̂
    mass_density = lam2
    if delta is not None:
        X = cv.position(flat).reshape(pts.shape + (3,))
        mass_density = lam2 * (1 + np.sum(X**2, axis=-1)) ** (-delta)
    if not (np.all(np.isfinite(mass_density)) and np.all(np.isfinite(pot))):
        raise SingularMass("nonfinite density at a quadrature point; a puncture lies inside the truncation")
    n = mesh.num_vertices
    S = stiffness_matrix(mesh.zeta, mesh.triangles)
    P = weighted_mass(mesh.triangles, w * pot, bary, n)
    M = weighted_mass(mesh.triangles, w * mass_density, bary, n)
    if np.any((w * mass_density).sum(axis=1) <= 0):
        raise SingularMass("element with nonpositive mass")
    keep = mesh.interior
    full_K = (S - P).tocsr()
    full_M = M
    K = full_K[keep][:, keep].tocsr()
    M = M[keep][:, keep].tocsr()
    # pointwise bound at the quadrature points: Q(u) >= -max(pot/mass) * M(u)
    bound = -float(np.max(pot / mass_density))
    h = float(np.max(np.abs(mesh.zeta[mesh.triangles] - mesh.zeta[mesh.triangles[:, [1, 2, 0]]])))
    kind = "jacobi" if delta is None else f"weighted({delta:g})"
    prob = SpectralProblem(K, M, True, "dirichlet", keep, n, bound, h, kind)
    prob.extra.update(truncation_radius=mesh.truncation_radius, delta=delta,
                      stiffness=S[keep][:, keep].tocsr(), potential=P[keep][:, keep].tocsr(),
                      full_K=full_K, full_M=full_M)
    return prob


def assemble_jacobi_truncated(mesh: TruncatedMesh, data: Optional[WeierstrassData] = None,
                              quadrature: str = "degree5") -> SpectralProblem:
    """Dirichlet problem for ``-Δu + 2κu = μ u`` on the truncation (mass ``λ^2``)."""
    return _truncated(mesh, quadrature, None)


def assemble_weighted(mesh: TruncatedMesh, data: Optional[WeierstrassData], delta: float,
                      quadrature: str = "degree5") -> SpectralProblem:
    """As :func:`assemble_jacobi_truncated` with mass weighted by ``(1+|X|^2)^(-δ)``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return _truncated(mesh, quadrature, delta)


# ---------------------------------------------------------------------------
# solving


def _residuals(K, M, lam, V) -> np.ndarray:
    R = K @ V - (M @ V) * lam
    knorm = spla.norm(K, 1)
    mnorm = spla.norm(M, 1)
    scale = (knorm + np.abs(lam) * mnorm) * np.linalg.norm(V, axis=0)
    return np.linalg.norm(R, axis=0) / scale


def _rayleigh_ritz(K, M, V):
    A = V.T @ (K @ V)
    B = V.T @ (M @ V)
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    lam, C = sla.eigh(A, B)
    return lam, V @ C


def solve_lowest(problem: SpectralProblem, m: int, sigma: Optional[float] = None,
                 dense: Optional[bool] = None, maxiter: int = 5000) -> SpectralResult:
    """The ``m`` algebraically smallest eigenpairs of ``K u = λ M u``.

    Sparse problems use shift-invert Lanczos with a shift below a guaranteed
    lower bound of the spectrum, so that "nearest the shift" means "smallest".
    """
    n = problem.dimension
    if not 0 < m < n:
        raise ValueError(f"m must lie in [1, {n - 1}]")
    K, M = problem.K, problem.M
    if dense is None:
        dense = n < DENSE_LIMIT
    if sigma is None:
        sigma = problem.lower_bound - 0.5
    try:
        lu = spla.splu((K - sigma * M).tocsc())
    except RuntimeError as exc:
        raise FactorizationFailure(f"sparse factorization failed: {exc}") from exc
    if dense:
        try:
            lam, V = sla.eigh(K.toarray(), M.toarray(), subset_by_index=[0, m - 1])
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise FactorizationFailure(str(exc)) from exc
        method = "dense"
    else:
        op = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
        v0 = np.ones(n) / np.sqrt(n)
        ncv = min(n, max(2 * m + 1, m + 32))
        try:
            lam, V = spla.eigsh(K, k=m, M=M, sigma=sigma, which="LM", OPinv=op, v0=v0, ncv=ncv,
                                maxiter=maxiter, tol=0)
        except spla.ArpackNoConvergence as exc:
            raise NonConvergence(f"Lanczos did not converge: {exc}") from exc
        method = f"shift-invert(sigma={sigma:.6g})"
    # block shift-invert sweeps: a badly conditioned mass (Gauss-map branch
    # points) costs the dense solver accuracy, and clusters slow Lanczos
    lam, V = _rayleigh_ritz(K, M, V)
    for _ in range(2):
        V = np.linalg.qr(lu.solve(np.asarray(M @ V)))[0]
        lam, V = _rayleigh_ritz(K, M, V)
    order = np.argsort(lam)
    lam, V = lam[order], V[:, order]
    res = _residuals(K, M, lam, V)
    if np.any(res > RESIDUAL_TOL):
        raise NonConvergence(f"eigenpair residual {res.max():.2e} exceeds {RESIDUAL_TOL:g}")
    out = SpectralResult(lam, V, problem.mesh_size, res, method)
    out.check(problem)
    return out


def negative_count(problem: SpectralProblem, start: int = 2) -> tuple[int, SpectralResult]:
    """Number of negative eigenvalues, growing the computed window until one is positive."""
    m = min(start, problem.dimension - 1)
    while True:
        res = solve_lowest(problem, m)
        if res.eigenvalues[-1] > 0 or m == problem.dimension - 1:
            return res.count_below(0.0), res
        m = min(2 * m, problem.dimension - 1)


def inertia_count(problem: SpectralProblem) -> tuple[int, SpectralResult]:
    """Negative count of a truncated Jacobi problem from its inertia alone.

    ``S - P`` has as many negative eigenvalues as the pencil ``S u = ν P u``
    has eigenvalues below 1 (``P`` is positive definite), and that pencil has
    well separated eigenvalues of order one whatever the mass.  Returns the
    count and the computed ``ν`` (scaled by 2, so the threshold reads 2).
    """
    S, P = problem.extra["stiffness"], problem.extra["potential"]
    if P.nnz == 0 or abs(P).max() == 0:
        # no curvature: S is positive definite under Dirichlet conditions
        return 0, SpectralResult(np.zeros(0), np.zeros((S.shape[0], 0)), problem.mesh_size, np.zeros(0), "flat")
    sub = SpectralProblem(S, 0.5 * P, False, problem.boundary_condition, problem.dofs,
                          problem.num_vertices, 0.0, problem.mesh_size, "potential-pencil")
    m = min(8, sub.dimension - 1)
    while True:
        res = solve_lowest(sub, m, dense=sub.dimension < 500)
        if res.eigenvalues[-1] >= 2 or m == sub.dimension - 1:
            return res.count_below(2.0), res
        m = min(2 * m, sub.dimension - 1)


# ---------------------------------------------------------------------------
# index counting for the compactified problem


@dataclass
class IndexCount:
    index: int
    nullity: int
    margin: float
    tol: float
    ambiguous: bool

    def as_dict(self) -> dict:
        return {"index": self.index, "nullity_band": self.nullity, "margin": self.margin,
                "tol": self.tol, "ambiguous": self.ambiguous}


DEFAULT_TOL = 0.03


def index_count(result: SpectralResult, tol: float = DEFAULT_TOL, exhausted: bool = False) -> IndexCount:
    """Index = #{λ < 2 - tol}; eigenvalues within ``tol`` of 2 form the nullity band.

    ``margin`` is the gap between the band edge and the nearest eigenvalue
    outside the band.  A margin below ``tol`` makes the count ambiguous; this
    raises :class:`AmbiguousCount` only when ``exhausted`` is set.
    """
    lam = result.eigenvalues
    if lam[-1] < 2 + tol:
        raise ValueError("no eigenvalue above the band was computed")
    index = int(np.sum(lam < 2 - tol))
    nullity = int(np.sum(np.abs(lam - 2) <= tol))
    outside = lam[np.abs(lam - 2) > tol]
    margin = float(np.min(np.abs(outside - 2)) - tol)
    ambiguous = margin < tol
    if ambiguous and exhausted:
        raise AmbiguousCount(f"eigenvalue within {margin + tol:.3g} of 2 lies outside the band tol={tol}")
    return IndexCount(index, nullity, margin, tol, ambiguous)


def gauss_spectrum(problem: SpectralProblem, tol: float = DEFAULT_TOL, start: int = 12) -> SpectralResult:
    """Enough of the lowest spectrum to decide the count below 2."""
    m = min(start, problem.dimension - 1)
    while True:
        res = solve_lowest(problem, m)
        if res.eigenvalues[-1] >= 2 + 3 * tol or m == problem.dimension - 1:
            return res
        m = min(2 * m, problem.dimension - 1)


def compact_index(data: WeierstrassData, level: int, tol: float = DEFAULT_TOL, adapt: bool = False,
                  quadrature: str = "midpoint"):
    """Index from the Gauss-metric problem on a level-``level`` sphere mesh.

    Returns ``(IndexCount, SpectralResult or None, SpectralProblem or None)``;
    a constant Gauss map (the plane) is stable and needs no solve.
    """
    from .mesh import build_compact_mesh

    if data.gauss.is_constant:
        return IndexCount(0, 0, float("inf"), tol, False), None, None
    mesh = build_compact_mesh(data, level, adapt=adapt)
    prob = assemble_gauss_metric(mesh, data, quadrature)
    res = gauss_spectrum(prob, tol)
    return index_count(res, tol), res, prob


def total_curvature_ratio(data: WeierstrassData, level: int = 5) -> float:
    """``-(1/4π)∫κ dA`` by quadrature of the Gauss-map density over the sphere."""
    from .mesh import build_compact_mesh

    if data.gauss.is_constant:
        return 0.0
    prob = assemble_gauss_metric(build_compact_mesh(data, level), data, "degree5")
    return prob.extra["total_mass"] / (4 * np.pi)


def weighted_floor(problem: SpectralProblem, sup_abs_A2: float) -> float:
    """``-C_R (1+R^2)^δ`` with ``C_R = 8/R^2 + sup 2|κ|``."""
    R = problem.extra["truncation_radius"]
    delta = problem.extra["delta"] or 0.0
    return -(8 / R**2 + sup_abs_A2) * (1 + R**2) ** delta


def sup_second_fundamental(data: WeierstrassData, level: int = 6) -> float:
    """``sup |A|^2 = sup 2|κ|`` sampled on a sphere mesh of the parameter domain."""
    from .mesh import icosphere

    v, _ = icosphere(level)
    z = stereo(v)
    vals = []
    south = v[:, 2] <= 0
    cz, cw = chart_z(data), chart_w(data)
    with np.errstate(all="ignore"):
        vals.append(-2 * cz.curvature(z[south]))
        w = np.where(np.isfinite(z[~south]), 1 / z[~south], 0)
        vals.append(-2 * cw.curvature(w))
    allv = np.concatenate(vals)
    return float(np.max(allv[np.isfinite(allv)]))


# ---------------------------------------------------------------------------
# output


def write_matrix(A: sp.spmatrix, path) -> None:
    """Coordinate text format: one ``row col value`` line per stored entry."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    with open(path, "w") as fh:
        for i, j, x in zip(C.row[order], C.col[order], C.data[order]):
            fh.write(f"{i} {j} {x:.17g}\n")


def write_spectrum_csv(result: SpectralResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "eigenvalue", "residual"])
        for i, (lam, r) in enumerate(zip(result.eigenvalues, result.residuals)):
            w.writerow([i, f"{lam:.17g}", f"{r:.17g}"])
