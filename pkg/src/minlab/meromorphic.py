"""Rational maps and meromorphic differentials on the Riemann sphere.

Polynomials are complex coefficient arrays in ascending degree.  A point at
infinity is never stored: it is reached through the chart ``w = 1/z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.integrate import quad_vec

from .errors import DegenerateInput, NonConvergent, NotAPole, PoleProximity

POLE_EPS = 1e-9
ROOT_CLUSTER_TOL = 1e-6
REDUCE_TOL = 1e-7


def as_poly(c) -> np.ndarray:
    """Coerce to a trimmed complex ascending coefficient array (never empty)."""
    a = np.atleast_1d(np.asarray(c, dtype=complex)).ravel()
    if a.size == 0:
        return np.zeros(1, dtype=complex)
    nz = np.nonzero(a)[0]
    if nz.size == 0:
        return np.zeros(1, dtype=complex)
    return a[: nz[-1] + 1].copy()


def poly_degree(c: np.ndarray) -> int:
    c = as_poly(c)
    if c.size == 1 and c[0] == 0:
        return -1
    return c.size - 1


def poly_eval(c: np.ndarray, z):
    """Horner evaluation, vectorised over ``z``."""
    z = np.asarray(z, dtype=complex)
    out = np.zeros_like(z)
    for a in c[::-1]:
        out = out * z + a
    return out


def _drop_small(c: np.ndarray, rel: float = 1e-13) -> np.ndarray:
    # Zero out coefficients that are pure round-off relative to the largest one.
    c = np.asarray(c, dtype=complex).copy()
    scale = np.max(np.abs(c)) if c.size else 0.0
    if scale == 0:
        return as_poly(c)
    c[np.abs(c) < rel * scale] = 0
    return as_poly(c)


def roots(p: Sequence[complex]) -> list[tuple[complex, int]]:
    """All complex roots of ``p`` with multiplicities.

    Companion-matrix eigenvalues, clustered into multiple roots, then one
    Newton step on simple roots.  Clusters that are further apart than the
    clustering tolerance are merged only if the derivatives of ``p`` confirm
    the multiplicity at their centroid.
    """
    c = as_poly(p)
    deg = poly_degree(c)
    if deg < 0:
        raise DegenerateInput("zero polynomial has no well-defined roots")
    if deg == 0:
        return []
    # exact zero roots first; they are common after chart changes
    k0 = int(np.argmax(np.abs(c) > 0))
    c_red = c[k0:]
    found: list[tuple[complex, int]] = [(0j, k0)] if k0 else []
    if c_red.size <= 1:
        return found
    raw = np.linalg.eigvals(P.polycompanion(c_red))
    scale = max(1.0, float(np.max(np.abs(raw))))

    # single-linkage clustering
    clusters: list[list[complex]] = []
    for r in raw:
        for cl in clusters:
            if min(abs(r - x) for x in cl) < ROOT_CLUSTER_TOL * max(1.0, abs(r)):
                cl.append(r)
                break
        else:
            clusters.append([r])
    # merge wider clusters (triple roots split ~ eps**(1/3)) when derivatives agree
    derivs = [c_red]
    for _ in range(deg):
        derivs.append(P.polyder(derivs[-1]))
    norm = np.sum(np.abs(c_red))
    merged = True
    while merged and len(clusters) > 1:
        merged = False
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                ci, cj = np.mean(clusters[i]), np.mean(clusters[j])
                if abs(ci - cj) > 1e-3 * max(1.0, abs(ci)):
                    continue
                cand = clusters[i] + clusters[j]
                center = np.mean(cand)
                m = len(cand)
                ok = all(
                    abs(poly_eval(derivs[q], center)) <= 1e-6 * norm * max(1.0, abs(center)) ** (deg - q)
                    for q in range(m)
                )
                if ok:
                    clusters[i] = cand
                    del clusters[j]
                    merged = True
                    break
            if merged:
                break
    d1 = derivs[1]
    for cl in clusters:
        center = complex(np.mean(cl))
        m = len(cl)
        if m == 1:
            dp = poly_eval(d1, center)
            if dp != 0:
                step = poly_eval(c_red, center) / dp
                if abs(step) < 1e-3 * scale:
                    center = complex(center - step)
        else:
            # Newton on the (m-1)-th derivative, where the root is simple
            dm = derivs[m - 1]
            dm1 = derivs[m]
            v = poly_eval(dm1, center)
            if v != 0:
                step = poly_eval(dm, center) / v
                if abs(step) < 1e-6 * scale:
                    center = complex(center - step)
        found.append((center, m))
    return found


def _from_roots(lead: complex, rts: list[tuple[complex, int]]) -> np.ndarray:
    c = np.array([lead], dtype=complex)
    for r, m in rts:
        for _ in range(m):
            c = P.polymul(c, [-r, 1])
    return as_poly(c)


def _divide_out(c: np.ndarray, r: complex, k: int) -> np.ndarray:
    for _ in range(k):
        q, _rem = P.polydiv(c, np.array([-r, 1], dtype=complex))
        c = as_poly(q)
    return c


@dataclass(frozen=True, eq=False)
class RationalMap:
    """``num(z)/den(z)`` kept in reduced form with a monic denominator."""

    num: np.ndarray
    den: np.ndarray = field(default_factory=lambda: np.ones(1, dtype=complex))
    reduce: bool = True

    def __post_init__(self):
        num = _drop_small(as_poly(self.num))
        den = _drop_small(as_poly(self.den))
        if poly_degree(den) < 0:
            raise DegenerateInput("denominator is identically zero")
        if poly_degree(num) < 0:
            num, den = np.zeros(1, dtype=complex), np.ones(1, dtype=complex)
        elif self.reduce and poly_degree(den) > 0 and poly_degree(num) > 0:
            num, den = self._cancel(num, den)
        lead = den[-1]
        object.__setattr__(self, "num", as_poly(num / lead))
        object.__setattr__(self, "den", as_poly(den / lead))
        object.__setattr__(self, "reduce", True)

    @staticmethod
    def _cancel(num, den):
        rn = roots(num)
        rd = roots(den)
        for r, m in rd:
            for s, n in rn:
                if abs(r - s) <= REDUCE_TOL * max(1.0, abs(r)):
                    k = min(m, n)
                    root = 0.5 * (r + s)
                    num = _divide_out(num, root, k)
                    den = _divide_out(den, root, k)
                    break
        return num, den

    # construction helpers
    @classmethod
    def constant(cls, a: complex) -> "RationalMap":
        return cls(np.array([a], dtype=complex))

    @classmethod
    def identity(cls) -> "RationalMap":
        return cls(np.array([0, 1], dtype=complex))

    @classmethod
    def from_roots(cls, lead, zeros, poles) -> "RationalMap":
        return cls(_from_roots(lead, zeros), _from_roots(1.0, poles))

    # structure
    @property
    def deg_num(self) -> int:
        return poly_degree(self.num)

    @property
    def deg_den(self) -> int:
        return poly_degree(self.den)

    @property
    def degree(self) -> int:
        """Degree as a map of the sphere (0 for constants)."""
        return max(self.deg_num, self.deg_den, 0)

    @property
    def is_zero(self) -> bool:
        return self.deg_num < 0

    @property
    def is_constant(self) -> bool:
        return self.deg_num <= 0 and self.deg_den == 0

    @cached_property
    def poles(self) -> list[tuple[complex, int]]:
        if self.deg_den <= 0:
            return []
        return roots(self.den)

    @cached_property
    def zeros(self) -> list[tuple[complex, int]]:
        if self.deg_num <= 0:
            return []
        return roots(self.num)

    def order_at(self, p: complex) -> int:
        """Pole order at finite ``p`` (negative for a zero, 0 if regular nonzero)."""
        tol = 1e-6 * max(1.0, abs(p))
        for r, m in self.poles:
            if abs(r - p) <= tol:
                return m
        for r, m in self.zeros:
            if abs(r - p) <= tol:
                return -m
        return 0

    def order_at_infinity(self) -> int:
        """Pole order of the function at ``z = oo`` (negative for a zero there)."""
        if self.is_zero:
            return -(10**9)
        return self.deg_num - self.deg_den

    # arithmetic (coefficient level)
    def __neg__(self):
        return RationalMap(-self.num, self.den)

    def __add__(self, other):
        other = _coerce(other)
        return RationalMap(
            P.polyadd(P.polymul(self.num, other.den), P.polymul(other.num, self.den)),
            P.polymul(self.den, other.den),
        )

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-_coerce(other))

    def __rsub__(self, other):
        return _coerce(other) - self

    def __mul__(self, other):
        other = _coerce(other)
        return RationalMap(P.polymul(self.num, other.num), P.polymul(self.den, other.den))

    __rmul__ = __mul__

    def reciprocal(self) -> "RationalMap":
        if self.is_zero:
            raise DegenerateInput("reciprocal of the zero map")
        return RationalMap(self.den, self.num)

    def __truediv__(self, other):
        return self * _coerce(other).reciprocal()

    def __rtruediv__(self, other):
        return _coerce(other) * self.reciprocal()

    def conj_coeffs(self) -> "RationalMap":
        """The map ``z -> conj(f(conj z))``."""
        return RationalMap(np.conj(self.num), np.conj(self.den))

    def derivative(self) -> "RationalMap":
        """Quotient rule ``(n'd - nd')/d^2``, reduced."""
        n, d = self.num, self.den
        top = P.polysub(P.polymul(P.polyder(n) if n.size > 1 else [0], d),
                        P.polymul(n, P.polyder(d) if d.size > 1 else [0]))
        return RationalMap(top, P.polymul(d, d))

    def compose_mobius(self, a, b, c, d) -> "RationalMap":
        """``f((a*t + b)/(c*t + d))`` as a rational map in ``t``."""
        n, m = self.deg_num, self.deg_den
        top = _mobius_numerator(self.num, n, a, b, c, d)
        bot = _mobius_numerator(self.den, m, a, b, c, d)
        shift = m - n  # multiply by (c t + d)**(m - n)
        lin = np.array([d, c], dtype=complex)
        if shift > 0:
            top = P.polymul(top, P.polypow(lin, shift))
        elif shift < 0:
            bot = P.polymul(bot, P.polypow(lin, -shift))
        return RationalMap(top, bot)

    def to_w(self) -> "RationalMap":
        """The same function in the chart ``w = 1/z``."""
        return self.compose_mobius(0, 1, 1, 0)

    # evaluation
    def __call__(self, z):
        """Vectorised evaluation without pole checks (inf/nan at poles).

        For ``|z| > 1`` the reversed polynomials are used so that large
        arguments do not overflow.
        """
        z = np.asarray(z, dtype=complex)
        big = np.abs(z) > 1
        out = np.empty_like(z)
        zs = z[~big]
        with np.errstate(all="ignore"):
            out[~big] = poly_eval(self.num, zs) / poly_eval(self.den, zs)
            if np.any(big):
                zb = z[big]
                t = 1.0 / zb
                n, m = max(self.deg_num, 0), self.deg_den
                out[big] = (poly_eval(self.num[::-1], t) / poly_eval(self.den[::-1], t)) * zb ** (n - m)
        return out

    def eval(self, z: complex, eps: float = POLE_EPS) -> complex:
        """Checked scalar evaluation; raises PoleProximity near a pole."""
        z = complex(z)
        for r, _m in self.poles:
            if abs(z - r) <= eps * max(1.0, abs(r)):
                raise PoleProximity(f"z={z} is within {eps} of pole {r}")
        return complex(self(np.array([z]))[0])

    def coeff_close(self, other: "RationalMap", tol: float = 1e-12) -> bool:
        """Coefficient-level equality of two reduced representations."""
        other = _coerce(other)
        if self.num.size != other.num.size or self.den.size != other.den.size:
            return False
        scale = max(1.0, np.max(np.abs(self.num)))
        return bool(
            np.all(np.abs(self.num - other.num) <= tol * scale)
            and np.all(np.abs(self.den - other.den) <= tol * max(1.0, np.max(np.abs(self.den))))
        )

    def __repr__(self):
        return f"RationalMap(num={np.round(self.num, 12).tolist()}, den={np.round(self.den, 12).tolist()})"


def _coerce(x) -> RationalMap:
    if isinstance(x, RationalMap):
        return x
    return RationalMap.constant(complex(x))


def _mobius_numerator(c, n, a, b, cc, d):
    # sum_k c_k (a t + b)^k (cc t + d)^(n-k)
    if n < 0:
        return np.zeros(1, dtype=complex)
    top = np.zeros(1, dtype=complex)
    lin_a = np.array([b, a], dtype=complex)
    lin_c = np.array([d, cc], dtype=complex)
    for k in range(n + 1):
        term = P.polymul(P.polypow(lin_a, k) if k else [1], P.polypow(lin_c, n - k) if n - k else [1])
        top = P.polyadd(top, c[k] * term)
    return top


@dataclass(frozen=True, eq=False)
class Differential:
    """``coefficient(z) dz`` in the ``z`` chart."""

    coefficient: RationalMap

    def __post_init__(self):
        object.__setattr__(self, "coefficient", _coerce(self.coefficient))

    def __call__(self, z):
        return self.coefficient(z)

    def __add__(self, other: "Differential") -> "Differential":
        return Differential(self.coefficient + other.coefficient)

    def __sub__(self, other: "Differential") -> "Differential":
        return Differential(self.coefficient - other.coefficient)

    def __neg__(self):
        return Differential(-self.coefficient)

    def scale(self, f) -> "Differential":
        """Multiply by a function (RationalMap) or constant."""
        return Differential(self.coefficient * _coerce(f))

    @property
    def is_zero(self) -> bool:
        return self.coefficient.is_zero

    @property
    def poles(self) -> list[tuple[complex, int]]:
        return self.coefficient.poles

    def compose_mobius(self, a, b, c, d) -> "Differential":
        """Pull back along ``z = (a t + b)/(c t + d)``."""
        jac = RationalMap(np.array([a * d - b * c], dtype=complex), P.polypow(np.array([d, c], dtype=complex), 2))
        return Differential(self.coefficient.compose_mobius(a, b, c, d) * jac)

    def to_w(self) -> "Differential":
        """``coefficient(1/w) * (-1/w**2) dw``."""
        return self.compose_mobius(0, 1, 1, 0)

    def order_at(self, p: complex) -> int:
        return self.coefficient.order_at(p)

    def order_at_infinity(self) -> int:
        """Pole order at ``z = oo`` measured in the ``w`` chart."""
        if self.is_zero:
            return -(10**9)
        return self.to_w().order_at(0)

    def coeff_close(self, other: "Differential", tol: float = 1e-12) -> bool:
        return self.coefficient.coeff_close(other.coefficient, tol)

    def __repr__(self):
        return f"Differential({self.coefficient!r} dz)"


def _distance_to_other_poles(poles, p):
    others = [abs(r - p) for r, _m in poles if abs(r - p) > 1e-6 * max(1.0, abs(p))]
    return min(others) if others else np.inf


def residue(omega: Differential, p: complex, tol: float = 1e-12) -> complex:
    """Residue of ``omega`` at the finite pole ``p`` by trapezoidal contour quadrature.

    The circle radius is half the distance to the nearest other pole (capped at
    1); the node count doubles until two successive estimates agree.
    """
    p = complex(p)
    if omega.order_at(p) <= 0:
        raise NotAPole(f"{p} is not a pole of {omega}")
    poles = omega.poles
    # snap to the computed pole location
    p = min((r for r, _m in poles), key=lambda r: abs(r - p))
    rad = min(1.0, 0.5 * _distance_to_other_poles(poles, p))
    prev = None
    n = 32
    while n <= 2**16:
        theta = 2 * np.pi * np.arange(n) / n
        e = np.exp(1j * theta)
        # (1/2 pi i) \oint f dz with dz = i r e^{i theta} d theta
        val = complex(np.mean(omega(p + rad * e) * rad * e))
        if prev is not None and abs(val - prev) <= tol * max(1.0, abs(val)):
            return val
        prev = val
        n *= 2
    raise NonConvergent(f"residue quadrature at {p} did not converge")


def residue_at_infinity(omega: Differential, tol: float = 1e-12) -> complex:
    w = omega.to_w()
    if w.order_at(0) <= 0:
        raise NotAPole("infinity is not a pole")
    return residue(w, 0.0, tol)


@dataclass(frozen=True)
class PathSpec:
    waypoints: tuple
    pole_clearance: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple(complex(w) for w in self.waypoints))
        if len(self.waypoints) < 2:
            raise DegenerateInput("a path needs at least two waypoints")
        if not self.pole_clearance > 0:
            raise DegenerateInput("pole_clearance must be positive")

    def segments(self):
        return list(zip(self.waypoints[:-1], self.waypoints[1:]))


def _segment_distance(a: complex, b: complex, p: complex) -> tuple[float, float]:
    """Distance from ``p`` to segment ``ab`` and the foot parameter in [0, 1]."""
    d = b - a
    if d == 0:
        return abs(p - a), 0.0
    t = ((p - a) * np.conj(d)).real / abs(d) ** 2
    t = min(1.0, max(0.0, t))
    return abs(p - (a + t * d)), t


def check_clearance(path: PathSpec, poles: Sequence[complex]) -> None:
    for a, b in path.segments():
        for p in poles:
            dist, _ = _segment_distance(a, b, p)
            if dist < path.pole_clearance:
                raise PoleProximity(f"path segment {a}->{b} passes within {dist:.3g} of pole {p}")


def path_integral(omega: Differential, path: PathSpec, tol: float = 1e-12, limit: int = 2000) -> complex:
    """Adaptive Gauss-Kronrod integral of ``omega`` along a polyline."""
    poles = [r for r, _m in omega.poles]
    check_clearance(path, poles)
    total = 0j
    for a, b in path.segments():
        d = b - a
        if d == 0:
            continue

        def f(t, a=a, d=d):
            return complex(omega(np.array([a + t * d]))[0] * d)

        val, err, info = quad_vec(f, 0.0, 1.0, epsabs=tol, epsrel=tol, limit=limit, full_output=True)
        if not info.success or err > 1e-10 * max(1.0, abs(val)):
            raise NonConvergent(f"segment {a}->{b}: error estimate {err:.3g} ({info.message})")
        total += complex(val)
    return total


def route(a: complex, b: complex, poles: Sequence[complex], clearance: float = 1e-3, depth: int = 0) -> list[complex]:
    """Polyline from ``a`` to ``b`` that detours perpendicularly around poles.

    Every pole closer than ``margin`` to the straight segment triggers an
    extra waypoint offset to the far side of the pole.
    """
    a, b = complex(a), complex(b)
    length = abs(b - a)
    margin = max(10 * clearance, min(0.25, 0.2 * length))
    if depth > 12 or length == 0:
        return [a, b]
    worst = None
    for p in poles:
        dist, t = _segment_distance(a, b, p)
        if 0 < t < 1 and dist < margin and (worst is None or dist < worst[0]):
            worst = (dist, t, p)
    if worst is None:
        return [a, b]
    dist, t, p = worst
    d = (b - a) / length
    normal = 1j * d
    foot = a + t * (b - a)
    side = np.sign(((foot - p) * np.conj(normal)).real) or 1.0
    via = p + side * normal * 2 * margin
    left = route(a, via, poles, clearance, depth + 1)
    right = route(via, b, poles, clearance, depth + 1)
    return left[:-1] + right
