"""Rayleigh-Ritz index certificates and checks of the index inequalities.

A certificate restricts the Jacobi form ``Q(u) = ∫|∇u|^2 + 2κu^2`` to a
finite family of test functions built from harmonic forms and counts the
negative eigenvalues of the pencil (Q, Gram).  The test functions are nodal
interpolants on the same truncated mesh as the spectral count, so the
certificate can never exceed it.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from . import gallery
from .errors import MeshMismatch
from .forms import HarmonicForm, build_end_forms, cutoff_phi, pairing_field, star_dx
from .mesh import TruncatedMesh, build_truncated_mesh
from .meromorphic import poly_eval, roots
from .spectral import (SpectralProblem, assemble_jacobi_truncated, assemble_weighted, inertia_count,
                       negative_count)
from .weierstrass import WeierstrassData, stereo_inverse, topology

SCHEMA_VERSION = 1
TYSK_CONSTANT = 7.7


# ---------------------------------------------------------------------------
# quadratic form


def _field_array(F, n: int) -> np.ndarray:
    arr = np.asarray(getattr(F, "values", F), dtype=float)
    if arr.shape[0] != n:
        raise MeshMismatch(f"field has {arr.shape[0]} samples, mesh has {n} vertices")
    return arr.reshape(n, -1)


def q_form(F, G, mesh: TruncatedMesh, problem: Optional[SpectralProblem] = None) -> float:
    """``Σ_k ∫ ∇F_k·∇G_k + 2κ F_k G_k`` with the matrices of the truncated Jacobi problem.

    Fields are vertex samples, scalar or with three components.
    """
    if problem is None:
        problem = assemble_jacobi_truncated(mesh)
    if problem.num_vertices != mesh.num_vertices:
        raise MeshMismatch("problem and mesh disagree")
    a = _field_array(F, mesh.num_vertices)
    b = _field_array(G, mesh.num_vertices)
    if a.shape != b.shape:
        raise MeshMismatch("fields have different numbers of components")
    K = problem.extra["full_K"]
    return float(np.sum(a * (K @ b)))


# ---------------------------------------------------------------------------
# certificate


def _pivoted_cholesky(G: np.ndarray, rtol: float) -> list[int]:
    """Indices of a well-conditioned subset spanning the range of ``G``."""
    n = len(G)
    d = np.diag(G).astype(float).copy()
    L = np.zeros((n, n))
    keep: list[int] = []
    scale = float(np.max(d)) if n else 0.0
    for k in range(n):
        j = int(np.argmax(np.where(np.isin(np.arange(n), keep), -np.inf, d)))
        if d[j] <= rtol * scale:
            break
        L[:, k] = (G[:, j] - L[:, :k] @ L[j, :k]) / math.sqrt(d[j])
        d = d - L[:, k] ** 2
        keep.append(j)
    return sorted(keep)


def pencil_negative_count(Q: np.ndarray, G: np.ndarray, rtol: float = 1e-10):
    """Negative eigenvalues of ``Q v = μ G v`` after discarding dependent columns."""
    keep = _pivoted_cholesky(G, rtol)
    if not keep:
        return 0, keep, np.zeros(0)
    mu = sla.eigh(Q[np.ix_(keep, keep)], G[np.ix_(keep, keep)], eigvals_only=True)
    scale = max(1.0, float(np.max(np.abs(mu))))
    return int(np.sum(mu < -1e-10 * scale)), keep, mu


@dataclass
class IndexCertificate:
    surface: str
    truncation_radius: float  # cutoff radius R; the mesh is cut at 2R
    delta: float
    test_space_labels: list
    Q_matrix: np.ndarray
    gram_matrix: np.ndarray
    negative_count: int
    kept_labels: list
    pencil_eigenvalues: np.ndarray
    forms_only_count: int
    projected_forms_count: int
    weighted_negative_count: int
    constraint_rank: int
    spectral_count: int
    trace: list = field(default_factory=list)

    @property
    def sound(self) -> bool:
        return self.negative_count <= self.spectral_count

    def as_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "surface": self.surface,
            "truncation_radius": self.truncation_radius,
            "mesh_radius": 2 * self.truncation_radius,
            "delta": self.delta,
            "negative_count": self.negative_count,
            "spectral_count": self.spectral_count,
            "sound": self.sound,
            "forms_only_count": self.forms_only_count,
            "projected_forms_count": self.projected_forms_count,
            "weighted_negative_count": self.weighted_negative_count,
            "constraint_rank": self.constraint_rank,
            "test_space_labels": list(self.test_space_labels),
            "kept_labels": list(self.kept_labels),
            "pencil_eigenvalues": [float(x) for x in self.pencil_eigenvalues],
            "Q_matrix": self.Q_matrix.tolist(),
            "gram_matrix": self.gram_matrix.tolist(),
            "trace": list(self.trace),
        }


def harmonic_basis(data: WeierstrassData) -> list[HarmonicForm]:
    """End forms (when there are at least two ends) followed by ``*dx_1, *dx_2, *dx_3``."""
    forms = build_end_forms(data) if data.num_ends >= 2 else []
    return forms + [star_dx(data, k) for k in (1, 2, 3)]


def certificate(data: WeierstrassData, R: float, delta: float = 0.25,
                mesh: Optional[TruncatedMesh] = None) -> IndexCertificate:
    """Rayleigh-Ritz lower bound for the index of ``Σ ∩ B_{2R}``.

    Test functions: ``φ_R <ω, dx_k>`` for ``ω`` in the harmonic basis and
    ``k = 1, 2, 3``, together with ``φ_R f_i`` for the negative eigenfunctions
    ``f_i`` of the weighted problem on the same truncation.
    """
    trace = []
    if mesh is None:
        mesh = build_truncated_mesh(data, 2 * R)
    prob = assemble_jacobi_truncated(mesh, data)
    spectral, _ = inertia_count(prob)
    trace.append(f"mesh: {mesh.num_vertices} vertices, cut at |X| = {2 * R:g}; spectral count {spectral}")

    wprob = assemble_weighted(mesh, data, delta)
    kw, wres = negative_count(wprob)
    eig = wprob.expand(wres.eigenvectors[:, :kw].T).T if kw else np.zeros((mesh.num_vertices, 0))
    trace.append(f"weighted problem (delta={delta:g}): {kw} negative eigenvalue(s)")

    phi = cutoff_phi(R, mesh)
    cols, labels = [], []
    for form in harmonic_basis(data):
        X = pairing_field(form, mesh.chart, mesh.zeta)
        for k in range(3):
            cols.append(phi * X[:, k])
            labels.append(f"phi_R <{form.label}, dx{k + 1}>")
    n_forms = len(cols)
    for i in range(kw):
        cols.append(phi * eig[:, i])
        labels.append(f"phi_R f{i + 1}")
    B = np.stack(cols, axis=1)
    K, M = prob.extra["full_K"], prob.extra["full_M"]
    Q = B.T @ (K @ B)
    G = B.T @ (M @ B)
    Q, G = 0.5 * (Q + Q.T), 0.5 * (G + G.T)

    count, keep, mu = pencil_negative_count(Q, G)
    if len(keep) < len(labels):
        trace.append(f"gram matrix rank {len(keep)} < {len(labels)}; dependent test functions dropped")
    forms_count, _, _ = pencil_negative_count(Q[:n_forms, :n_forms], G[:n_forms, :n_forms])

    # constraints <φ_R X_ω, e_j f_i>_{-δ}: the component fields against each f_i
    Mw = wprob.extra["full_M"]
    if kw:
        C = eig.T @ (Mw @ B[:, :n_forms])  # (kw, n_forms)
        constraint_rank = int(np.linalg.matrix_rank(C, tol=1e-10 * max(1.0, np.abs(C).max())))
        Wg = eig.T @ (Mw @ eig)
        P = B[:, :n_forms] - eig @ np.linalg.solve(Wg, C)
        Qp, Gp = P.T @ (K @ P), P.T @ (M @ P)
        proj_count, _, _ = pencil_negative_count(0.5 * (Qp + Qp.T), 0.5 * (Gp + Gp.T))
    else:
        constraint_rank, proj_count = 0, forms_count
    trace.append(f"test space {len(labels)} functions, {len(keep)} independent; "
                 f"negative count {count} (forms only {forms_count}, projected {proj_count})")
    cert = IndexCertificate(data.name, float(R), float(delta), labels, Q, G, count,
                            [labels[i] for i in keep], mu, forms_count, proj_count, kw,
                            constraint_rank, spectral, trace)
    cert.trace.append("sound" if cert.sound else "UNSOUND: certificate exceeds spectral count")
    return cert


# ---------------------------------------------------------------------------
# inequalities


def branch_values(data: WeierstrassData) -> np.ndarray:
    """Images on the unit sphere of the branch points of the Gauss map."""
    g = data.gauss
    if g.is_constant:
        return np.zeros((0, 3))
    P, Q = g.num, g.den
    from numpy.polynomial import polynomial as npp

    W = npp.polysub(npp.polymul(npp.polyder(P), Q), npp.polymul(P, npp.polyder(Q)))
    W = np.trim_zeros(np.where(np.abs(W) < 1e-13 * np.abs(W).max(), 0, W), "b")
    vals, count = [], 0
    if len(W) > 1:
        for z0, mult in roots(W):
            count += mult
            qv = poly_eval(Q, np.array([z0]))[0]
            vals.append(np.inf if abs(qv) < 1e-10 else poly_eval(P, np.array([z0]))[0] / qv)
    d = g.degree
    if count < 2 * d - 2:  # the rest of the ramification sits at infinity
        dp, dq = g.deg_num, g.deg_den
        vals.append(np.inf if dp > dq else 0.0 if dp < dq else P[dp] / Q[dq])
    return stereo_inverse(np.array(vals, dtype=complex)) if vals else np.zeros((0, 3))


def on_great_circle(points: np.ndarray, tol: float = 1e-8) -> bool:
    if len(points) <= 2:
        return True
    return bool(np.linalg.svd(points, compute_uv=False)[-1] < tol)


@dataclass
class TheoremReport:
    surface: str
    genus: int
    ends: int
    gauss_degree: int
    total_curvature: float
    index: int
    embedded: Optional[bool]
    embedded_ends: bool
    branch_values_on_great_circle: bool

    # bounds are derived from the stored numbers on every access
    @property
    def T(self) -> float:
        return -self.total_curvature / (4 * math.pi)

    @property
    def genus_ends_bound(self) -> float:
        """``2(g+r)/3 - 1``, a floor for every two-sided surface."""
        return 2 * (self.genus + self.ends) / 3 - 1

    @property
    def ends_bound(self) -> Optional[int]:
        """``r - 1``, a floor for embedded surfaces."""
        return self.ends - 1 if self.embedded else None

    @property
    def curvature_sandwich(self) -> tuple[float, float]:
        """``(-1/3 + 2T/3, 7.7 T)``, valid when all ends are embedded."""
        return (-1 / 3 + 2 * self.T / 3, TYSK_CONSTANT * self.T)

    @property
    def equator_applicable(self) -> bool:
        return self.gauss_degree >= 1 and self.branch_values_on_great_circle

    @property
    def pass_genus_ends(self) -> bool:
        return self.index >= self.genus_ends_bound - 1e-12

    @property
    def pass_ends(self) -> Optional[bool]:
        return None if self.ends_bound is None else self.index >= self.ends_bound

    @property
    def pass_sandwich(self) -> Optional[bool]:
        if not self.embedded_ends:
            return None
        lo, hi = self.curvature_sandwich
        return lo - 1e-9 <= self.index <= hi + 1e-9

    @property
    def pass_equator(self) -> Optional[bool]:
        if not self.equator_applicable:
            return None
        return self.index == 2 * self.gauss_degree - 1

    @property
    def all_pass(self) -> bool:
        flags = [self.pass_genus_ends, self.pass_ends, self.pass_sandwich, self.pass_equator]
        return all(f for f in flags if f is not None)

    def as_dict(self) -> dict:
        lo, hi = self.curvature_sandwich
        return {
            "schema_version": SCHEMA_VERSION,
            "surface": self.surface,
            "genus": self.genus,
            "ends": self.ends,
            "gauss_degree": self.gauss_degree,
            "total_curvature": self.total_curvature,
            "index": self.index,
            "embedded": self.embedded,
            "embedded_ends": self.embedded_ends,
            "genus_ends_bound": self.genus_ends_bound,
            "slack_genus_ends": self.index - self.genus_ends_bound,
            "pass_genus_ends": self.pass_genus_ends,
            "ends_bound": self.ends_bound,
            "pass_ends": self.pass_ends,
            "curvature_sandwich": [lo, hi],
            "sandwich_applicable": self.embedded_ends,
            "pass_sandwich": self.pass_sandwich,
            "equator_applicable": self.equator_applicable,
            "equator_value": 2 * self.gauss_degree - 1 if self.equator_applicable else None,
            "pass_equator": self.pass_equator,
            "all_pass": self.all_pass,
        }


def theorem_checks(data: WeierstrassData, index: int, total_curvature: Optional[float] = None,
                   embedded: Optional[bool] = None) -> TheoremReport:
    """Check the index against the topological bounds.

    ``embedded`` defaults to the gallery fact for built-in surfaces and
    ``None`` (unknown, floor not asserted) otherwise.
    """
    top = topology(data)
    if embedded is None:
        facts = gallery.facts(data.name)
        embedded = facts.embedded if facts else None
    tc = top.total_curvature if total_curvature is None else total_curvature
    return TheoremReport(data.name, top.genus, top.ends, top.gauss_degree, float(tc), int(index),
                         embedded, top.embedded_ends, on_great_circle(branch_values(data)))


# ---------------------------------------------------------------------------
# index-two case analysis


@dataclass
class CaseVerdict:
    genus: int
    ends: int
    embedded: bool
    index: int
    excluded: bool
    reason: str
    trace: list

    def as_dict(self) -> dict:
        return asdict(self)


def index2_case_table(g: int, r: int, embedded: bool, index: int) -> CaseVerdict:
    """Replay the case analysis excluding embedded surfaces of index two.

    Classification facts from the literature are encoded as stated results.
    """
    trace = [f"input: genus {g}, {r} end(s), embedded={embedded}, index {index}"]
    if not embedded or index != 2 or g < 0 or r < 1:
        trace.append("preconditions (embedded, index 2) not met")
        return CaseVerdict(g, r, embedded, index, False, "not applicable", trace)
    trace.append("index >= 2(g+r)/3 - 1 with index 2 forces g + r <= 9/2")
    if g + r > 4.5:
        reason = "index lower bound 2(g+r)/3 - 1 exceeds 2"
        trace.append(f"g + r = {g + r} > 9/2")
    elif r == 1:
        reason = "plane, which is stable"
        trace.append("one embedded end of finite total curvature: the surface is a plane (index 0)")
    elif r == 2:
        reason = "catenoid, which has index 1"
        trace.append("two embedded ends of finite total curvature: the surface is a catenoid")
    elif g == 0:
        reason = "López–Ros genus zero"
        trace.append("genus-zero embedded surfaces with finite total curvature are planes or catenoids")
    elif (g, r) == (1, 3):
        reason = "Hoffman–Meeks family index ≥ 3"
        trace.append("genus one, three ends: the Costa-Hoffman-Meeks surface, whose index is at least 3")
    else:  # unreachable once g + r <= 9/2 and r >= 3
        reason = "no admissible case"
    trace.append(f"excluded: {reason}")
    return CaseVerdict(g, r, embedded, index, True, reason, trace)


CASE_GRID = [(g, r) for g in (0, 1, 2) for r in (1, 2, 3, 4)]


def case_table() -> list[CaseVerdict]:
    return [index2_case_table(g, r, True, 2) for g, r in CASE_GRID]


def to_json(obj, path=None) -> str:
    text = json.dumps(obj if isinstance(obj, dict) else obj.as_dict(), indent=2, sort_keys=True,
                      default=_json_default)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))
