"""Surface geometry generated by Weierstrass data ``(g, dh)`` on a punctured sphere.

``phi = (1/2 (1/g - g) dh, i/2 (1/g + g) dh, dh)`` and ``X = Re int phi``.
Pointwise quantities are exposed two ways: scalar, checked helpers that mirror
the textbook definitions, and :class:`ChartView`, a vectorised evaluator in a
fixed Möbius chart used by the mesh and spectral code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import (
    DegenerateInput,
    InconsistentPoleOrders,
    JorgeMeeksViolation,
    PeriodFailure,
    PoleProximity,
    ValidationError,
)
from .meromorphic import (
    Differential,
    PathSpec,
    RationalMap,
    path_integral,
    residue,
    route,
)

PERIOD_TOL = 1e-8


class InvalidWeierstrassData(ValidationError):
    pass


@dataclass(frozen=True, eq=False)
class WeierstrassData:
    gauss: RationalMap
    height: Differential
    punctures: tuple = ()
    puncture_at_infinity: bool = False
    genus: int = 0
    name: str = "surface"

    def __post_init__(self):
        object.__setattr__(self, "punctures", tuple(complex(p) for p in self.punctures))
        if self.genus != 0:
            raise InvalidWeierstrassData("only genus 0 data is supported")
        pts = self.punctures
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if abs(pts[i] - pts[j]) < 1e-9:
                    raise InvalidWeierstrassData(f"punctures {pts[i]} and {pts[j]} coincide")
        if self.height.is_zero:
            raise InvalidWeierstrassData("height differential vanishes identically")
        if self.gauss.is_zero:
            raise InvalidWeierstrassData("g = 0 identically; rotate the data (use g = 1 for a plane)")

    @property
    def num_ends(self) -> int:
        return len(self.punctures) + int(self.puncture_at_infinity)

    @cached_property
    def phi(self) -> tuple[Differential, Differential, Differential]:
        return phi_forms(self)

    @cached_property
    def basepoint(self) -> complex:
        return default_basepoint(self)

    def puncture_list(self) -> list[Optional[complex]]:
        """Finite punctures followed by ``None`` for infinity when present."""
        out: list[Optional[complex]] = list(self.punctures)
        if self.puncture_at_infinity:
            out.append(None)
        return out


def phi_forms(data: WeierstrassData) -> tuple[Differential, Differential, Differential]:
    g = data.gauss
    ginv = g.reciprocal()
    h = data.height.coefficient
    phi1 = Differential(0.5 * (ginv - g) * h)
    phi2 = Differential(0.5j * (ginv + g) * h)
    phi3 = Differential(h)
    return phi1, phi2, phi3


def default_basepoint(data: WeierstrassData) -> complex:
    for cand in (1.0 + 0j, 1.0 + 1.0j, 0.5 + 1.0j, -1.0 + 0.5j):
        if all(abs(cand - p) > 1e-3 for p in data.punctures) and all(
            abs(cand - r) > 1e-3 for phi in data.phi for r, _m in phi.poles
        ):
            return cand
    raise InvalidWeierstrassData("could not find a regular basepoint")


def from_phi(phi: Sequence[Differential], like: WeierstrassData, name: Optional[str] = None) -> WeierstrassData:
    """Recover ``(g, dh)`` from a Weierstrass triple: ``g = phi3/(phi1 - i phi2)``."""
    phi1, phi2, phi3 = phi
    if phi3.is_zero:
        raise DegenerateInput("third component vanishes; (g, dh) is not defined for this orientation")
    denom = phi1.coefficient - 1j * phi2.coefficient
    g = phi3.coefficient / denom
    return WeierstrassData(
        gauss=g,
        height=phi3,
        punctures=like.punctures,
        puncture_at_infinity=like.puncture_at_infinity,
        genus=like.genus,
        name=name or like.name,
    )


def rotate_phi(phi: Sequence[Differential], rot: np.ndarray) -> tuple[Differential, ...]:
    rot = np.asarray(rot, dtype=float)
    out = []
    for i in range(3):
        c = RationalMap.constant(0)
        for k in range(3):
            if abs(rot[i, k]) > 1e-15:
                c = c + float(rot[i, k]) * phi[k].coefficient
        out.append(Differential(c))
    return tuple(out)


def rotate(data: WeierstrassData, rot: np.ndarray, name: Optional[str] = None) -> WeierstrassData:
    """Rotate the surface by ``rot``; ``g`` changes by the associated Möbius map."""
    return from_phi(rotate_phi(data.phi, rot), data, name)


def rotation_to_north(n: np.ndarray) -> np.ndarray:
    """Rotation matrix taking the unit vector ``n`` to ``(0, 0, 1)``."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    e3 = np.array([0.0, 0.0, 1.0])
    c = float(n @ e3)
    if c > 1 - 1e-14:
        return np.eye(3)
    if c < -1 + 1e-14:
        return np.diag([1.0, -1.0, -1.0])
    axis = np.cross(n, e3)
    s = np.linalg.norm(axis)
    axis /= s
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def stereo_inverse(g) -> np.ndarray:
    """Unit vectors ``(2 Re g, 2 Im g, |g|^2 - 1)/(|g|^2 + 1)``; ``g = inf`` is the north pole."""
    g = np.asarray(g, dtype=complex)
    out = np.empty(g.shape + (3,))
    inf = ~np.isfinite(g)
    big = (np.abs(g) > 1) & ~inf
    small = ~big & ~inf
    gs = g[small]
    a = np.abs(gs) ** 2
    out[small, 0] = 2 * gs.real / (a + 1)
    out[small, 1] = 2 * gs.imag / (a + 1)
    out[small, 2] = (a - 1) / (a + 1)
    q = 1.0 / g[big]
    b = np.abs(q) ** 2
    out[big, 0] = 2 * q.real / (1 + b)
    out[big, 1] = -2 * q.imag / (1 + b)
    out[big, 2] = (1 - b) / (1 + b)
    out[inf] = (0.0, 0.0, 1.0)
    return out


def stereo(points: np.ndarray) -> np.ndarray:
    """Stereographic projection from the north pole, ``(x + i y)/(1 - s)``."""
    p = np.asarray(points, dtype=float)
    x, y, s = p[..., 0], p[..., 1], p[..., 2]
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        # on the sphere (x+iy)/(1-s) = (1+s)/(x-iy), which avoids cancellation for s > 0
        z = np.where(s > 0, (1 + s) / (x - 1j * y), (x + 1j * y) / (1 - s))
    return np.where((s >= 1) | ~np.isfinite(z), np.inf + 0j, z)


# ---------------------------------------------------------------------------
# closed-form primitive of a rational differential


def relative_fs_density(data: "WeierstrassData", points: np.ndarray) -> np.ndarray:
    """Gauss-map pullback of the round metric relative to the round metric.

    ``ρ̂(z)(1+|z|^2)^2/4``; the ratio is chart independent.  ``points`` are unit vectors.
    """
    z = stereo(points)
    out = np.empty(len(points))
    south = points[:, 2] <= 0
    zs = z[south]
    out[south] = chart_z(data).fs_density(zs) * (1 + np.abs(zs) ** 2) ** 2 / 4
    with np.errstate(all="ignore"):
        ws = np.where(np.isfinite(z[~south]), 1 / z[~south], 0)
    out[~south] = chart_w(data).fs_density(ws) * (1 + np.abs(ws) ** 2) ** 2 / 4
    return out


def _laurent_principal(coef: RationalMap, p: complex, order: int, others: list[complex]) -> np.ndarray:
    """Coefficients ``a_1..a_order`` of ``(t-p)^{-s}`` by trapezoidal contour sums."""
    dist = min([abs(o - p) for o in others if abs(o - p) > 1e-9] + [2.0])
    rad = 0.5 * min(1.0, dist)
    n = 512
    e = np.exp(2j * np.pi * np.arange(n) / n)
    vals = coef(p + rad * e)
    out = np.empty(order, dtype=complex)
    for s in range(1, order + 1):
        # (1/2 pi i) \oint c(t) (t-p)^{s-1} dt
        out[s - 1] = np.mean(vals * (rad * e) ** s)
    return out


@dataclass(frozen=True, eq=False)
class Primitive:
    """Exact antiderivative ``F`` of ``coef(t) dt`` up to the real-log branch.

    ``Re F`` is single valued because residues of the Weierstrass forms are
    real (period closure); imaginary residue parts are recorded in
    ``log_imag`` and must be ~0 for ``real_part`` to be meaningful.
    """

    coef: RationalMap
    poly: np.ndarray = field(init=False)
    parts: list = field(init=False)
    log_imag: float = field(init=False)

    def __post_init__(self):
        q, _r = P.polydiv(self.coef.num, self.coef.den)
        q = np.atleast_1d(q)
        object.__setattr__(self, "poly", P.polyint(q) if np.any(q != 0) else np.zeros(1, dtype=complex))
        parts = []
        poles = [r for r, _m in self.coef.poles]
        worst = 0.0
        for r, m in self.coef.poles:
            a = _laurent_principal(self.coef, r, m, poles)
            parts.append((r, a))
            worst = max(worst, abs(a[0].imag))
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "log_imag", worst)

    def real_part(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=complex)
        with np.errstate(all="ignore"):
            val = P.polyval(t, self.poly).real if self.poly.size > 1 else np.zeros(t.shape)
            for r, a in self.parts:
                u = t - r
                val = val + a[0].real * np.log(np.abs(u))
                for s in range(2, a.size + 1):
                    val = val + (a[s - 1] * u ** (1 - s) / (1 - s)).real
        return val

    def value(self, t) -> np.ndarray:
        """Complex ``F(t)`` on the principal log branch (only used for sanity checks)."""
        t = np.asarray(t, dtype=complex)
        val = P.polyval(t, self.poly) if self.poly.size > 1 else np.zeros(t.shape, dtype=complex)
        for r, a in self.parts:
            u = t - r
            val = val + a[0] * np.log(u)
            for s in range(2, a.size + 1):
                val = val + a[s - 1] * u ** (1 - s) / (1 - s)
        return val


# ---------------------------------------------------------------------------
# vectorised evaluation in a Möbius chart  z = (a t + b)/(c t + d)


@dataclass(frozen=True, eq=False)
class ChartView:
    data: WeierstrassData
    mobius: tuple = (1, 0, 0, 1)

    @cached_property
    def g(self) -> RationalMap:
        return self.data.gauss.compose_mobius(*self.mobius)

    @cached_property
    def gp(self) -> RationalMap:
        return self.g.derivative()

    @cached_property
    def q(self) -> RationalMap:
        return self.g.reciprocal()

    @cached_property
    def qp(self) -> RationalMap:
        return self.q.derivative()

    @cached_property
    def phi(self) -> tuple[RationalMap, RationalMap, RationalMap]:
        return tuple(f.compose_mobius(*self.mobius).coefficient for f in self.data.phi)

    @cached_property
    def dphi(self) -> tuple[RationalMap, RationalMap, RationalMap]:
        return tuple(f.derivative() for f in self.phi)

    @cached_property
    def primitives(self) -> tuple[Primitive, Primitive, Primitive]:
        prims = tuple(Primitive(f) for f in self.phi)
        for k, pr in enumerate(prims):
            if pr.log_imag > 1e-7:
                raise PeriodFailure(f"{self.data.name}: component {k + 1} has a non-real residue "
                                    f"(|Im| = {pr.log_imag:.3g}); X is not well defined")
        return prims

    @cached_property
    def offset(self) -> np.ndarray:
        tb = self.from_global(np.array([self.data.basepoint]))
        return np.array([pr.real_part(tb)[0] for pr in self.primitives])

    def to_global(self, t):
        a, b, c, d = self.mobius
        t = np.asarray(t, dtype=complex)
        with np.errstate(all="ignore"):
            out = (a * t + b) / (c * t + d)
        inf = np.isinf(t)
        if np.any(inf):
            out = np.where(inf, a / c if c != 0 else np.inf, out)
        return out

    def from_global(self, z):
        a, b, c, d = self.mobius
        z = np.asarray(z, dtype=complex)
        with np.errstate(all="ignore"):
            out = (d * z - b) / (-c * z + a)
        inf = np.isinf(z)
        if np.any(inf):
            out = np.where(inf, -d / c if c != 0 else np.inf, out)
        return out

    # pointwise fields -----------------------------------------------------
    def gauss_values(self, t) -> np.ndarray:
        return self.g(t)

    def normal(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=complex)
        gv = self.g(t)
        bad = ~np.isfinite(gv) | (np.abs(gv) > 1e8)
        if np.any(bad):
            qv = self.q(t[bad])
            with np.errstate(all="ignore"):
                gv = gv.copy()
                gv[bad] = np.where(qv == 0, np.inf, 1.0 / qv)
        return stereo_inverse(gv)

    def fs_density(self, t) -> np.ndarray:
        """``4|g'|^2/(1+|g|^2)^2`` with respect to ``|dt|^2``."""
        t = np.asarray(t, dtype=complex)
        gv = self.g(t)
        big = ~np.isfinite(gv) | (np.abs(gv) > 1)
        out = np.empty(t.shape)
        gs = gv[~big]
        out[~big] = 4 * np.abs(self.gp(t[~big])) ** 2 / (1 + np.abs(gs) ** 2) ** 2
        if np.any(big):
            tb = t[big]
            qv = self.q(tb)
            out[big] = 4 * np.abs(self.qp(tb)) ** 2 / (1 + np.abs(qv) ** 2) ** 2
        return out

    def phi_values(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=complex)
        return np.stack([f(t) for f in self.phi], axis=-1)

    def dphi_values(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=complex)
        return np.stack([f(t) for f in self.dphi], axis=-1)

    def metric(self, t) -> np.ndarray:
        """Conformal factor ``lambda^2 = sum |phi_k|^2``.

        With ``X = Re int phi`` the pulled-back Euclidean metric is
        ``(lambda^2 / 2)|dt|^2``; curvature and pairings below are taken with
        respect to ``lambda^2 |dt|^2``.  Index counts, ``int kappa dA`` and
        form norms do not depend on this constant factor.
        """
        return np.sum(np.abs(self.phi_values(t)) ** 2, axis=-1)

    def curvature(self, t) -> np.ndarray:
        with np.errstate(all="ignore"):
            return -self.fs_density(t) / self.metric(t)

    def sff_norm(self, t) -> np.ndarray:
        return np.sqrt(np.maximum(-2 * self.curvature(t), 0.0))

    def position(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=complex)
        X = np.stack([pr.real_part(t) for pr in self.primitives], axis=-1)
        return X - self.offset

    def hopf(self, t) -> np.ndarray:
        """``eta = <X_tt, N>`` so that ``h = 2 Re(eta dt^2)``."""
        return 0.5 * np.sum(self.dphi_values(t) * self.normal(t), axis=-1)

    def dlog_lambda(self, t) -> np.ndarray:
        """``d/dt log(lambda)`` (holomorphic derivative)."""
        ph = self.phi_values(t)
        dph = self.dphi_values(t)
        lam2 = np.sum(np.abs(ph) ** 2, axis=-1)
        return np.sum(dph * np.conj(ph), axis=-1) / (2 * lam2)


def chart_z(data: WeierstrassData) -> ChartView:
    return ChartView(data, (1, 0, 0, 1))


def chart_w(data: WeierstrassData) -> ChartView:
    return ChartView(data, (0, 1, 1, 0))


def chart_puncture(data: WeierstrassData, p: Optional[complex]) -> ChartView:
    """Chart in which puncture ``p`` (``None`` = infinity) sits at ``t = oo``."""
    if p is None:
        return chart_z(data)
    return ChartView(data, (complex(p), 1, 1, 0))


# ---------------------------------------------------------------------------
# scalar, checked operations


def _check_regular(data: WeierstrassData, z: complex, eps: float = 1e-9):
    for f in data.phi:
        for r, _m in f.poles:
            if abs(z - r) <= eps * max(1.0, abs(r)):
                raise PoleProximity(f"z={z} is at a pole of the Weierstrass forms")


def metric_factor(data: WeierstrassData, z: complex) -> float:
    _check_regular(data, z)
    return float(chart_z(data).metric(np.array([complex(z)]))[0])


def gauss_and_curvature(data: WeierstrassData, z: complex) -> tuple[np.ndarray, float, float]:
    """Unit normal, Gauss curvature and ``|h|`` at ``z``."""
    _check_regular(data, z)
    cv = chart_z(data) if abs(z) <= 1 else chart_w(data)
    t = np.array([complex(z) if abs(z) <= 1 else 1 / complex(z)])
    N = cv.normal(t)[0]
    kappa = float(cv.curvature(t)[0])
    return N, kappa, float(np.sqrt(max(-2 * kappa, 0.0)))


def immerse(data: WeierstrassData, z: complex, basepoint: Optional[complex] = None,
            clearance: float = 1e-3) -> np.ndarray:
    """``X(z) = Re int_{basepoint}^{z} phi`` along a pole-avoiding polyline."""
    z = complex(z)
    base = data.basepoint if basepoint is None else complex(basepoint)
    _check_regular(data, z)
    _check_regular(data, base)
    poles = sorted({complex(r) for f in data.phi for r, _m in f.poles}, key=lambda c: (c.real, c.imag))
    path = PathSpec(route(base, z, poles, clearance), clearance)
    if abs(z - base) == 0:
        return np.zeros(3)
    return np.array([path_integral(f, path).real for f in data.phi])


@dataclass
class PeriodReport:
    periods: dict = field(default_factory=dict)  # label -> (3,) complex periods
    max_real: float = 0.0
    passed: bool = True


def period_closure_check(data: WeierstrassData, tol: float = PERIOD_TOL, raise_on_fail: bool = True) -> PeriodReport:
    """Real parts of the loop periods ``2 pi i res`` around every puncture."""
    report = PeriodReport()
    phi = data.phi
    for p in data.puncture_list():
        per = np.zeros(3, dtype=complex)
        for k, f in enumerate(phi):
            form = f if p is None else f
            pt = 0.0 if p is None else p
            if p is None:
                form = f.to_w()
            if form.order_at(pt) > 0:
                res = residue(form, pt)
                # loop around infinity in the w chart is oriented the other way
                per[k] = 2j * np.pi * res * (-1 if p is None else 1)
        label = "inf" if p is None else f"{p.real:.12g}{p.imag:+.12g}j"
        report.periods[label] = per
        worst = float(np.max(np.abs(per.real)))
        report.max_real = max(report.max_real, worst)
        if worst > tol:
            report.passed = False
            if raise_on_fail:
                k = int(np.argmax(np.abs(per.real)))
                raise PeriodFailure(f"{data.name}: puncture {label}, component {k + 1}: Re period = {per[k].real:.3g}")
    return report


def check_regularity(data: WeierstrassData) -> None:
    """Weierstrass forms are holomorphic with no common zero away from the punctures."""
    phi = data.phi
    punct = list(data.punctures)
    cands = set()
    for f in list(phi) + [Differential(data.gauss)]:
        for r, _m in f.coefficient.poles + f.coefficient.zeros:
            cands.add(complex(np.round(r, 12)))
    for z0 in cands:
        if any(abs(z0 - p) < 1e-6 for p in punct):
            continue
        orders = [f.order_at(z0) for f in phi]
        if max(orders) != 0:
            kind = "pole" if max(orders) > 0 else "branch point (metric vanishes)"
            raise InvalidWeierstrassData(f"{data.name}: {kind} at interior point {z0}")
    if not data.puncture_at_infinity:
        orders = [f.order_at_infinity() for f in phi]
        if max(orders) != 0:
            raise InvalidWeierstrassData(f"{data.name}: z = oo is not a regular point but is not a puncture")
    for p in data.punctures:
        if max(f.order_at(p) for f in phi) <= 0:
            raise InvalidWeierstrassData(f"{data.name}: puncture {p} is not a pole of the metric (incomplete)")


@dataclass(frozen=True)
class EndData:
    puncture: Optional[complex]  # None means z = oo
    growth_order: int
    limit_normal: tuple
    pole_orders: tuple

    @property
    def embedded(self) -> bool:
        return self.growth_order == 1

    @property
    def label(self) -> str:
        return "inf" if self.puncture is None else f"{self.puncture.real:.6g}{self.puncture.imag:+.6g}j"


def _order(f: Differential, p: Optional[complex]) -> int:
    if f.is_zero:
        return -(10**6)
    return f.order_at_infinity() if p is None else f.order_at(p)


def limit_normal(data: WeierstrassData, p: Optional[complex]) -> np.ndarray:
    g = data.gauss
    if p is None:
        g = g.to_w()
        p = 0.0
    o = g.order_at(p)
    if o > 0:
        return np.array([0.0, 0.0, 1.0])
    return stereo_inverse(np.array([g(np.array([complex(p)]))[0]]))[0]


def end_analysis(data: WeierstrassData) -> list[EndData]:
    """Growth order and limit normal of every end.

    The triple is first rotated so the limit normal is vertical; then the two
    horizontal components must share a pole order that exceeds the vertical
    one, and the growth order is that common order minus one.
    """
    ends = []
    for p in data.puncture_list():
        n = limit_normal(data, p)
        rphi = rotate_phi(data.phi, rotation_to_north(n))
        o1, o2, o3 = (_order(f, p) for f in rphi)
        if o1 != o2 or o1 <= o3 or o1 < 2:
            raise InconsistentPoleOrders(
                f"{data.name}: end at {p}: rotated pole orders ({o1}, {o2}, {o3})")
        raw = tuple(_order(f, p) for f in data.phi)
        ends.append(EndData(p, o1 - 1, tuple(float(x) for x in n), tuple(max(o, 0) for o in raw)))
    return ends


@dataclass(frozen=True)
class Topology:
    genus: int
    ends: int
    gauss_degree: int
    total_curvature: float
    sum_growth: int
    embedded_ends: bool
    jorge_meeks_holds: Optional[bool]  # None when not asserted (non-embedded ends)


def topology(data: WeierstrassData, strict: bool = True) -> Topology:
    ends = end_analysis(data)
    r = len(ends)
    d = data.gauss.degree
    emb = all(e.embedded for e in ends)
    holds = None
    if emb:
        holds = d == data.genus + r - 1
        if not holds and strict:
            raise JorgeMeeksViolation(f"{data.name}: degree {d} != g + r - 1 = {data.genus + r - 1}")
    return Topology(data.genus, r, d, -4 * np.pi * d, sum(e.growth_order for e in ends), emb, holds)
