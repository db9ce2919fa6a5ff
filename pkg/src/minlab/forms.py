"""Harmonic 1-forms on genus-zero minimal surfaces.

A real harmonic form is stored through a meromorphic differential ``f dz``:
the form is ``Re(f dz)``, or ``Im(f dz)`` for the conjugate partner.  In a
conformal chart with metric ``λ^2 |dz|^2`` every real form ``Re(F dz)`` is
fixed by its complex coefficient ``F`` (``Im(f dz) = Re(-i f dz)``), and

* the pointwise pairing of ``Re(F dz)`` and ``Re(G dz)`` is ``Re(F conj G)/λ^2``;
* ``|ω|^2 dA = |F|^2 du dv`` does not involve the metric;
* ``∇ Re(F dz) = Re(D dz^2)`` with ``D = F' - 2F ∂_z log λ``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .errors import PoleProximity, QuadratureFailure, TooFewEnds
from .meromorphic import Differential, RationalMap
from .mesh import TruncatedMesh
from .spectral import QUADRATURE, stiffness_matrix, triangle_areas, weighted_mass
from .weierstrass import ChartView, WeierstrassData, end_analysis, rotate, rotation_to_north


@dataclass(frozen=True, eq=False)
class HarmonicForm:
    holomorphic_part: Differential
    conjugate: bool = False
    label: str = ""

    def coefficient_in(self, chart: ChartView) -> RationalMap:
        """Complex coefficient ``F`` with the real form equal to ``Re(F dt)`` in ``chart``."""
        f = self.holomorphic_part.compose_mobius(*chart.mobius).coefficient
        return f * RationalMap.constant(-1j) if self.conjugate else f

    def coefficient_values(self, chart: ChartView, t) -> np.ndarray:
        return self.coefficient_in(chart)(np.asarray(t, dtype=complex))


def _simple_pole(p: complex) -> Differential:
    return Differential(RationalMap(np.array([1.0 + 0j]), np.array([-complex(p), 1.0 + 0j])))


def build_end_forms(data: WeierstrassData) -> list[HarmonicForm]:
    """``dz/(z-p_1) - dz/(z-p_j)`` for ``j = 2..r`` and their conjugates.

    Residues are ``+1`` at ``p_1`` and ``-1`` at ``p_j``; a term at infinity
    is dropped since ``dz/(z-p)`` already has residue ``-1`` there.
    """
    pts = data.puncture_list()
    if len(pts) < 2:
        raise TooFewEnds(f"{data.name} has {len(pts)} end(s); end forms need at least two")
    p1 = pts[0]
    hol = []
    for j, pj in enumerate(pts[1:], start=2):
        if p1 is None:
            w = -_simple_pole(pj)
        elif pj is None:
            w = _simple_pole(p1)
        else:
            w = _simple_pole(p1) - _simple_pole(pj)
        hol.append((j, w))
    out = [HarmonicForm(w, False, f"Re w1{j}") for j, w in hol]
    out += [HarmonicForm(w, True, f"Im w1{j}") for j, w in hol]
    return out


def star_dx(data: WeierstrassData, k: int) -> HarmonicForm:
    """Conjugate differential ``*dx_k = Im(φ_k)``."""
    if k not in (1, 2, 3):
        raise ValueError("k must be 1, 2 or 3")
    return HarmonicForm(data.phi[k - 1], True, f"*dx{k}")


def rotate_first_end_up(data: WeierstrassData) -> WeierstrassData:
    """Rotate so that the first listed end has limit normal ``(0, 0, 1)``."""
    n = np.array(end_analysis(data)[0].limit_normal)
    return rotate(data, rotation_to_north(n), name=data.name)


# ---------------------------------------------------------------------------
# pointwise fields


def _require_form(form) -> None:
    if not isinstance(form, HarmonicForm):
        raise TypeError("expected a HarmonicForm")


def pairing_field(form: HarmonicForm, chart: ChartView, t) -> np.ndarray:
    """``X_ω = (<ω, dx_1>, <ω, dx_2>, <ω, dx_3>)`` at chart points ``t``."""
    _require_form(form)
    t = np.asarray(t, dtype=complex)
    F = form.coefficient_values(chart, t)
    ph = chart.phi_values(t)
    lam2 = np.sum(np.abs(ph) ** 2, axis=-1)
    out = np.real(F[..., None] * np.conj(ph)) / lam2[..., None]
    if not np.all(np.isfinite(out)):
        raise PoleProximity("test field is not finite at some sample point")
    return out


def form_norm_density(form: HarmonicForm, chart: ChartView, t) -> np.ndarray:
    """``|ω|^2`` per unit chart area (conformally invariant)."""
    return np.abs(form.coefficient_values(chart, t)) ** 2


def covariant_coefficient(form: HarmonicForm, chart: ChartView, t) -> np.ndarray:
    """``D`` with ``∇ω = Re(D dt^2)``."""
    t = np.asarray(t, dtype=complex)
    F = form.coefficient_in(chart)
    return F.derivative()(t) - 2 * F(t) * chart.dlog_lambda(t)


def gradient_density(form: HarmonicForm, chart: ChartView, t) -> np.ndarray:
    """``|∇ω|^2`` per unit chart area, ``2|D|^2/λ^2``."""
    return 2 * np.abs(covariant_coefficient(form, chart, t)) ** 2 / chart.metric(t)


def hessian_pairing(form: HarmonicForm, chart: ChartView, t) -> np.ndarray:
    """``<∇ω, h>`` where ``h`` is the second fundamental form: ``4 Re(D conj η)/λ^4``."""
    D = covariant_coefficient(form, chart, t)
    eta = chart.hopf(t)
    return 4 * np.real(D * np.conj(eta)) / chart.metric(t) ** 2


@dataclass
class TestField:
    values: np.ndarray  # (n, 3)
    label: str = ""


def test_field(form: HarmonicForm, data: Optional[WeierstrassData], mesh: TruncatedMesh) -> TestField:
    return TestField(pairing_field(form, mesh.chart, mesh.zeta), form.label)


# pytest would otherwise try to collect the function above
test_field.__test__ = False
TestField.__test__ = False


# ---------------------------------------------------------------------------
# quadrature on truncated meshes


def _mesh_quadrature(mesh: TruncatedMesh, rule: str = "degree5"):
    bary, wq = QUADRATURE[rule]
    area = triangle_areas(mesh.zeta, mesh.triangles)
    pts = np.einsum("qi,ti->tq", bary, mesh.zeta[mesh.triangles])
    return pts, area[:, None] * wq[None, :]


def integrate(mesh: TruncatedMesh, density: Callable[[np.ndarray], np.ndarray], rule: str = "degree5") -> float:
    """``∫ density du dv`` over the truncated chart domain."""
    pts, w = _mesh_quadrature(mesh, rule)
    return float(np.sum(w * density(pts.ravel()).reshape(pts.shape)))


def gram_matrix(forms: Sequence[HarmonicForm], mesh: TruncatedMesh, delta: float = 0.0) -> np.ndarray:
    """Truncated (weighted) L^2 Gram matrix ``∫ Re(F_a conj F_b) (1+|X|^2)^(-δ)``."""
    pts, w = _mesh_quadrature(mesh)
    flat = pts.ravel()
    cv = mesh.chart
    if delta:
        X = cv.position(flat)
        w = w * ((1 + np.sum(X**2, axis=-1)) ** (-delta)).reshape(pts.shape)
    F = np.stack([f.coefficient_values(cv, flat).reshape(pts.shape) for f in forms])
    G = np.einsum("tq,atq,btq->ab", w, F, np.conj(F)).real
    return 0.5 * (G + G.T)


def numerical_rank(G: np.ndarray, rtol: float = 1e-9) -> int:
    ev = np.linalg.eigvalsh(G)
    return int(np.sum(ev > rtol * max(ev.max(), 0.0)))


def exterior_derivative_residual(form: HarmonicForm, mesh: TruncatedMesh, order: int = 8) -> float:
    """Largest relative circulation of ``F dt`` around a mesh triangle.

    The real and imaginary parts are the discrete ``dω`` and ``d(*ω)``;
    both vanish for a harmonic form away from its poles.
    """
    x, wts = np.polynomial.legendre.leggauss(order)
    s = 0.5 * (x + 1)
    wts = 0.5 * wts
    F = form.coefficient_in(mesh.chart)
    z = mesh.zeta[mesh.triangles]
    total = np.zeros(len(z), dtype=complex)
    scale = np.zeros(len(z))
    for k in range(3):
        a, b = z[:, k], z[:, (k + 1) % 3]
        pts = a[:, None] + s[None, :] * (b - a)[:, None]
        edge = (F(pts.ravel()).reshape(pts.shape) @ wts) * (b - a)
        total += edge
        scale += np.abs(edge)
    return float(np.max(np.abs(total) / np.maximum(scale, 1e-300)))


# ---------------------------------------------------------------------------
# weighted norms on ends


@dataclass
class WeightedNormScan:
    delta: float
    radii: np.ndarray
    truncated_norms: np.ndarray
    fitted_growth_exponent: float
    fit_r2: float
    local_slopes: np.ndarray  # slope of log(increment) between consecutive shells, from radii[2] on
    label: str = ""
    bounded: bool = field(init=False)

    # increments decaying faster than R^BOUNDED_SLOPE count as summable
    BOUNDED_SLOPE = -0.05

    def __post_init__(self):
        self.bounded = bool(self.fitted_growth_exponent < self.BOUNDED_SLOPE)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["R", "truncated_norm", "local_slope"])
            slopes = np.concatenate([[np.nan, np.nan], self.local_slopes])
            for R, n, s in zip(self.radii, self.truncated_norms, slopes):
                w.writerow([f"{R:.17g}", f"{n:.17g}", "" if np.isnan(s) else f"{s:.17g}"])


def _local_chart(data: WeierstrassData, p: Optional[complex]) -> ChartView:
    """Chart with the puncture ``p`` at ``t = 0``."""
    if p is None:
        return ChartView(data, (0, 1, 1, 0))
    return ChartView(data, (1, complex(p), 0, 1))


def _level_radius(chart: ChartView, theta: np.ndarray, R: float, rho_lo: float, rho_hi: float) -> np.ndarray:
    """Radius ``ρ(θ)`` with ``|X(ρ e^{iθ})| = R`` (``|X|`` decreasing in ρ)."""
    lo = np.full(theta.shape, np.log(rho_lo))
    hi = np.full(theta.shape, np.log(rho_hi))
    u = np.exp(1j * theta)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r = np.linalg.norm(chart.position(np.exp(mid) * u), axis=-1)
        outside = r > R
        lo = np.where(outside, mid, lo)
        hi = np.where(outside, hi, mid)
        if np.max(hi - lo) < 1e-14:
            break
    return np.exp(0.5 * (lo + hi))


def _annulus_integral(chart: ChartView, density, weight, R_in: float, R_out: float,
                      rho_lo: float, rho_hi: float, n_theta: int, n_s: int) -> float:
    """``∫ weight·density du dv`` over ``R_in <= |X| < R_out`` near the puncture at 0."""
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    a = np.log(_level_radius(chart, theta, R_out, rho_lo, rho_hi))
    b = np.log(_level_radius(chart, theta, R_in, rho_lo, rho_hi))
    x, w = np.polynomial.legendre.leggauss(n_s)
    s = a[:, None] + 0.5 * (x[None, :] + 1) * (b - a)[:, None]
    rho = np.exp(s)
    t = (rho * np.exp(1j * theta)[:, None]).ravel()
    vals = density(chart, t) * weight(chart, t) * rho.ravel() ** 2
    inner = (vals.reshape(s.shape) @ w) * 0.5 * (b - a)
    return float(np.sum(inner) * 2 * np.pi / n_theta)


def _end_bracket(data: WeierstrassData, chart: ChartView, p, R_min: float, R_max: float):
    others = [q for q in data.puncture_list() if q != p]
    if p is None:
        dist = [1 / abs(q) if abs(q) > 0 else np.inf for q in others]
    else:
        dist = [np.inf if q is None else abs(q - p) for q in others]
    rho_hi = 0.5 * min(dist + [1.0])
    theta = 2 * np.pi * np.arange(64) / 64
    r_hi = np.linalg.norm(chart.position(rho_hi * np.exp(1j * theta)), axis=-1)
    if np.max(r_hi) >= R_min:
        raise QuadratureFailure(f"end at {p}: R = {R_min} is not in the graphical range of the end")
    rho_lo = rho_hi
    for _ in range(60):
        rho_lo *= 0.1
        r = np.linalg.norm(chart.position(rho_lo * np.exp(1j * theta)), axis=-1)
        if np.min(r) > 2 * R_max:
            return rho_lo, rho_hi
    raise QuadratureFailure(f"end at {p}: could not bracket |X| = {R_max}")


def annular_increments(data: WeierstrassData, density, weight, radii: Sequence[float],
                       rtol: float = 1e-7, max_doublings: int = 5) -> np.ndarray:
    """Integrals over ``R_j <= |X| < R_{j+1}`` summed over all ends.

    Trapezoid in the angle (periodic, so spectrally accurate) and
    Gauss-Legendre in ``log ρ``; both are doubled until the increments agree
    to ``rtol``.
    """
    radii = np.asarray(radii, dtype=float)
    total = np.zeros(len(radii) - 1)
    for p in data.puncture_list():
        chart = _local_chart(data, p)
        rho_lo, rho_hi = _end_bracket(data, chart, p, radii[0], radii[-1])
        n_theta, n_s = 64, 12
        prev = None
        for _ in range(max_doublings):
            cur = np.array([_annulus_integral(chart, density, weight, radii[j], radii[j + 1],
                                              rho_lo, rho_hi, n_theta, n_s) for j in range(len(radii) - 1)])
            if prev is not None and np.all(np.abs(cur - prev) <= rtol * np.abs(cur) + 1e-300):
                break
            prev = cur
            n_theta *= 2
            n_s *= 2
        else:
            raise QuadratureFailure(f"end at {p}: annular quadrature did not converge")
        total += cur
    return total


def _fit_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    # a flat series (logarithmic growth) has no variance to explain
    r2 = 1 - ss_res / max(ss_tot, 1e-6 * len(y))
    return float(coef[0]), r2


def weighted_norm_scan(form: HarmonicForm, data: WeierstrassData, delta: float, radii: Sequence[float],
                       base: Optional[float] = None) -> WeightedNormScan:
    """Truncated ``∫_{B_R} (1+|X|^2)^(-δ) |ω|^2`` over increasing radii.

    The exponent is the least-squares slope of ``log`` of the increments
    between consecutive radii against ``log R`` over the last decade: a
    norm growing like ``R^p`` gives ``p``, a logarithmic one gives 0 and a
    convergent one a negative value.  ``base`` is the norm inside the first
    radius; when omitted it is computed on a truncated mesh.
    """
    _require_form(form)
    radii = np.asarray(radii, dtype=float)
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if np.any(np.diff(radii) <= 0) or len(radii) < 3:
        raise ValueError("need at least three increasing radii")

    def dens(chart, t):
        return form_norm_density(form, chart, t)

    def wgt(chart, t):
        return (1 + np.sum(chart.position(t) ** 2, axis=-1)) ** (-delta)

    inc = annular_increments(data, dens, wgt, radii)
    if base is None:
        from .mesh import build_truncated_mesh

        mesh = build_truncated_mesh(data, radii[0])
        cv = mesh.chart
        base = integrate(mesh, lambda t: form_norm_density(form, cv, t) * wgt(cv, t))
    norms = base + np.concatenate([[0.0], np.cumsum(inc)])
    logR = np.log(radii[1:])
    logI = np.log(np.maximum(inc, 1e-300))
    local = np.diff(logI) / np.diff(logR)
    sel = radii[1:] >= radii[-1] / 10 * (1 - 1e-12)
    if np.sum(sel) < 3:
        sel = np.ones_like(logR, dtype=bool)
    slope, r2 = _fit_slope(logR[sel], logI[sel])
    return WeightedNormScan(delta, radii, norms, slope, r2, local, form.label)


def gradient_norm_increments(form: HarmonicForm, data: WeierstrassData, radii: Sequence[float]) -> np.ndarray:
    """``∫ |∇ω|^2`` over the shells between consecutive radii."""
    return annular_increments(data, lambda c, t: gradient_density(form, c, t),
                              lambda c, t: np.ones(np.shape(t)), radii)


# ---------------------------------------------------------------------------
# Bochner identity


@dataclass
class BochnerResidual:
    max_norm: float
    l2_norm: float
    mesh_size: float
    num_vertices: int


def bochner_residual(form: HarmonicForm, data: Optional[WeierstrassData], mesh: TruncatedMesh,
                     inner_fraction: float = 0.5) -> BochnerResidual:
    """Residual of ``ΔX_ω - 2κX_ω - 2<∇ω,h>N`` at vertices with ``|X| < inner_fraction·R``.

    ``Δ`` is the weak Laplacian ``-M^{-1}K`` with the consistent ``λ^2`` mass,
    applied to the nodal values of ``X_ω``; the norm is the lumped ``L^2`` norm.
    """
    cv = mesh.chart
    X = pairing_field(form, cv, mesh.zeta)
    K = stiffness_matrix(mesh.zeta, mesh.triangles)
    bary, wq = QUADRATURE["degree5"]
    pts, w = _mesh_quadrature(mesh)
    lam2q = cv.metric(pts.ravel()).reshape(pts.shape)
    M = weighted_mass(mesh.triangles, w * lam2q, bary, mesh.num_vertices)
    lap = -spla.splu(M.tocsc()).solve(np.asarray(K @ X))
    kappa = mesh.curvature
    rhs = 2 * kappa[:, None] * X + 2 * hessian_pairing(form, cv, mesh.zeta)[:, None] * cv.normal(mesh.zeta)
    res = np.linalg.norm(lap - rhs, axis=1)
    sel = mesh.radius < inner_fraction * mesh.truncation_radius
    lumped = np.asarray(M.sum(axis=1)).ravel()
    l2 = float(np.sqrt(np.sum(lumped[sel] * res[sel] ** 2)))
    h = float(np.max(np.abs(mesh.zeta[mesh.triangles] - mesh.zeta[mesh.triangles[:, [1, 2, 0]]])))
    return BochnerResidual(float(np.max(res[sel])), l2, h, mesh.num_vertices)


# ---------------------------------------------------------------------------
# cutoff


def cutoff_profile(t) -> np.ndarray:
    """1 on ``[0, 1]``, 0 on ``[2, ∞)``, quintic with vanishing first and second derivatives at both ends."""
    t = np.asarray(t, dtype=float)
    s = np.clip(t - 1, 0.0, 1.0)
    return 1 - s**3 * (10 - 15 * s + 6 * s**2)


def cutoff_profile_d1(t) -> np.ndarray:
    s = np.clip(np.asarray(t, dtype=float) - 1, 0.0, 1.0)
    return -30 * s**2 * (1 - s) ** 2


def cutoff_profile_d2(t) -> np.ndarray:
    s = np.clip(np.asarray(t, dtype=float) - 1, 0.0, 1.0)
    return -60 * s * (1 - s) * (1 - 2 * s)


CUTOFF_MAX_SLOPE = 1.875  # max |φ'| at s = 1/2


def cutoff_phi(R: float, mesh: TruncatedMesh) -> np.ndarray:
    """``φ_R = φ(|X|/R)`` at the mesh vertices."""
    return cutoff_profile(mesh.radius / R)


def cutoff_gradient_bound(R: float, mesh: TruncatedMesh) -> float:
    """``R · max |∇φ_R|`` for the piecewise-linear interpolant, in the induced metric."""
    u = cutoff_phi(R, mesh)
    z = mesh.zeta[mesh.triangles]
    e1, e2 = z[:, 1] - z[:, 0], z[:, 2] - z[:, 0]
    du1, du2 = u[mesh.triangles[:, 1]] - u[mesh.triangles[:, 0]], u[mesh.triangles[:, 2]] - u[mesh.triangles[:, 0]]
    det = (np.conj(e1) * e2).imag
    gx = (du1 * e2.imag - du2 * e1.imag) / det
    gy = (du2 * e1.real - du1 * e2.real) / det
    # the induced metric is half of chart.metric
    g = 0.5 * mesh.chart.metric(z.mean(axis=1))
    return float(R * np.max(np.sqrt((gx**2 + gy**2) / g)))


def cutoff_laplacian_bound(R: float, mesh: TruncatedMesh) -> float:
    """``max |φ_R Δφ_R| |X|^2`` from the closed form ``Δ f(r) = f'' |∇r|^2 + f' (2 - |∇r|^2)/r``."""
    X = mesh.X
    r = mesh.radius
    N = mesh.chart.normal(mesh.zeta)
    with np.errstate(all="ignore"):
        grad2 = 1 - (np.einsum("ij,ij->i", X, N) / r) ** 2
        t = r / R
        lap = cutoff_profile_d2(t) / R**2 * grad2 + cutoff_profile_d1(t) / R * (2 - grad2) / r
        val = np.abs(cutoff_profile(t) * lap) * r**2
    return float(np.nanmax(val))
