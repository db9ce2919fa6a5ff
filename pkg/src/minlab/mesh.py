"""Triangulations of the compactified sphere and of extrinsic truncations.

Compact meshes live on the unit sphere (vertices are unit vectors whose
stereographic image is the chart coordinate).  Truncated meshes are flat
triangulations in a Möbius chart in which the first puncture sits at
infinity, so that the piecewise-linear space is exactly conforming for the
conformally invariant Dirichlet energy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import BudgetExceeded, RTooSmall
from .weierstrass import ChartView, WeierstrassData, chart_puncture, end_analysis, relative_fs_density, stereo

log = logging.getLogger(__name__)

DEFAULT_VERTEX_CAP = 400_000


def _icosahedron():
    t = (1 + 5**0.5) / 2
    v = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
         [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    v /= np.linalg.norm(v, axis=1)[:, None]
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]], dtype=np.int64)
    return v, f


def unique_edges(tris: np.ndarray):
    """Sorted unique edges and, per triangle, the ids of edges (01, 12, 20)."""
    e = np.stack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=1)
    e = np.sort(e, axis=2).reshape(-1, 2)
    edges, inv = np.unique(e, axis=0, return_inverse=True)
    return edges, inv.reshape(-1, 3)


def uniform_split(verts: np.ndarray, tris: np.ndarray, midpoint: Callable[[np.ndarray, np.ndarray], np.ndarray]):
    """1 -> 4 split of every triangle; ``midpoint(a, b)`` places new vertices."""
    edges, eid = unique_edges(tris)
    n = len(verts)
    mids = midpoint(verts[edges[:, 0]], verts[edges[:, 1]])
    m01, m12, m20 = (eid[:, k] + n for k in range(3))
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    new = np.concatenate([
        np.stack([a, m01, m20], 1), np.stack([m01, b, m12], 1),
        np.stack([m20, m12, c], 1), np.stack([m01, m12, m20], 1)])
    return np.concatenate([verts, mids]), new, edges


def _sphere_mid(a, b):
    m = 0.5 * (a + b)
    return m / np.linalg.norm(m, axis=1)[:, None]


def icosphere(level: int):
    v, f = _icosahedron()
    for _ in range(level):
        v, f, _ = uniform_split(v, f, _sphere_mid)
    return v, f


class _Hierarchy:
    """Red refinement with 2:1 balance; hanging nodes are closed by green splits at the end."""

    def __init__(self, verts: np.ndarray, tris: np.ndarray, midpoint, cap: int):
        self.verts = [tuple(x) for x in verts]
        self.leaves = [tuple(int(i) for i in t) for t in tris]
        self.mid: dict = {}
        self.midpoint = midpoint
        self.cap = cap

    def _m(self, a, b):
        key = (a, b) if a < b else (b, a)
        idx = self.mid.get(key)
        if idx is None:
            p = self.midpoint(np.array([self.verts[a]]), np.array([self.verts[b]]))[0]
            idx = len(self.verts)
            self.verts.append(tuple(p))
            self.mid[key] = idx
            if idx > self.cap:
                raise BudgetExceeded(f"adaptive refinement exceeded the vertex cap {self.cap}")
        return idx

    def _split(self, a, b):
        key = (a, b) if a < b else (b, a)
        return self.mid.get(key)

    def refine(self, flags) -> None:
        out = []
        for t, f in zip(self.leaves, flags):
            if not f:
                out.append(t)
                continue
            a, b, c = t
            ab, bc, ca = self._m(a, b), self._m(b, c), self._m(c, a)
            out += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        self.leaves = out
        self.close()

    def _needs(self, t) -> bool:
        a, b, c = t
        n = 0
        for x, y in ((a, b), (b, c), (c, a)):
            m = self._split(x, y)
            if m is not None:
                n += 1
                if self._split(x, m) is not None or self._split(m, y) is not None:
                    return True
        return n >= 2

    def close(self) -> None:
        while True:
            flags = [self._needs(t) for t in self.leaves]
            if not any(flags):
                return
            out = []
            for t, f in zip(self.leaves, flags):
                if not f:
                    out.append(t)
                    continue
                a, b, c = t
                ab, bc, ca = self._m(a, b), self._m(b, c), self._m(c, a)
                out += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
            self.leaves = out

    def conforming(self):
        out = []
        for a, b, c in self.leaves:
            for x, y, o in ((a, b, c), (b, c, a), (c, a, b)):
                m = self._split(x, y)
                if m is not None:
                    out += [(x, m, o), (m, y, o)]
                    break
            else:
                out.append((a, b, c))
        return np.array(self.verts), np.array(out, dtype=np.int64)


@dataclass(eq=False)
class SphereMesh:
    vertices: np.ndarray  # (n, 3) unit vectors
    triangles: np.ndarray  # (m, 3), outward oriented
    refinement_level: int

    @cached_property
    def z(self) -> np.ndarray:
        """Global coordinate (inf at the north pole)."""
        z = stereo(self.vertices)
        z[self.vertices[:, 2] > 1 - 1e-15] = np.inf
        return z

    @cached_property
    def chart_tag(self) -> np.ndarray:
        """0 for the z chart (|z| <= 1), 1 for w = 1/z."""
        return (self.vertices[:, 2] > 0).astype(np.int8)

    @cached_property
    def chart_coord(self) -> np.ndarray:
        z = self.z
        with np.errstate(all="ignore"):
            return np.where(self.chart_tag == 0, z, np.where(np.isfinite(z), 1 / z, 0))

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def euler_characteristic(self) -> int:
        edges, _ = unique_edges(self.triangles)
        return len(self.vertices) - len(edges) + len(self.triangles)

    def orientation(self) -> np.ndarray:
        v = self.vertices
        t = self.triangles
        n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return np.einsum("ij,ij->i", n, v[t].mean(axis=1))

    def angle_defects(self) -> np.ndarray:
        v, t = self.vertices, self.triangles
        defect = np.full(len(v), 2 * np.pi)
        for k in range(3):
            a, b, c = v[t[:, k]], v[t[:, (k + 1) % 3]], v[t[:, (k + 2) % 3]]
            u, w = b - a, c - a
            cosang = np.einsum("ij,ij->i", u, w) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
            np.subtract.at(defect, t[:, k], np.arccos(np.clip(cosang, -1, 1)))
        return defect

    def edge_lengths(self) -> np.ndarray:
        edges, _ = unique_edges(self.triangles)
        return np.linalg.norm(self.vertices[edges[:, 0]] - self.vertices[edges[:, 1]], axis=1)


def _snap_punctures(mesh: SphereMesh, data: WeierstrassData) -> SphereMesh:
    from .weierstrass import stereo_inverse

    v = mesh.vertices.copy()
    for p in data.puncture_list():
        target = np.array([0.0, 0.0, 1.0]) if p is None else stereo_inverse(np.array([p]))[0]
        i = int(np.argmax(v @ target))
        old = v[i].copy()
        v[i] = target
        trial = SphereMesh(v, mesh.triangles, mesh.refinement_level)
        if np.any(trial.orientation() <= 0):
            v[i] = old
            log.warning("puncture %s not snapped: would invert a triangle", p)
    return SphereMesh(v, mesh.triangles, mesh.refinement_level)


def build_compact_mesh(data: Optional[WeierstrassData], refinement_level: int, adapt: bool = False,
                       vertex_cap: int = DEFAULT_VERTEX_CAP, extra_levels: int = 3,
                       ratio: float = 4.0, snap: bool = True) -> SphereMesh:
    """Icosahedral sphere mesh, optionally refined where the Gauss-map density varies.

    A triangle is split when the Fubini-Study density at its vertices and
    centroid varies by more than ``ratio``; at most ``extra_levels`` rounds.
    """
    if not 2 <= refinement_level <= 8:
        raise ValueError("refinement level must lie in [2, 8]")
    v, f = icosphere(refinement_level)
    if 10 * 4**refinement_level + 2 > vertex_cap:
        raise BudgetExceeded(f"level {refinement_level} exceeds the vertex cap {vertex_cap}")
    if adapt and data is not None:
        h = _Hierarchy(v, f, _sphere_mid, vertex_cap)
        for _ in range(extra_levels):
            vv = np.array(h.verts)
            tt = np.array(h.leaves, dtype=np.int64)
            cen = vv[tt].mean(axis=1)
            cen /= np.linalg.norm(cen, axis=1)[:, None]
            dens = np.concatenate([relative_fs_density(data, vv)[tt], relative_fs_density(data, cen)[:, None]], axis=1)
            lo, hi = dens.min(axis=1), dens.max(axis=1)
            flags = hi > ratio * lo
            if not np.any(flags):
                break
            h.refine(flags.tolist())
        v, f = h.conforming()
    mesh = SphereMesh(v, f, refinement_level)
    if data is not None and snap:
        mesh = _snap_punctures(mesh, data)
    return mesh


def refine_sphere(mesh: SphereMesh) -> SphereMesh:
    v, f, _ = uniform_split(mesh.vertices, mesh.triangles, _sphere_mid)
    return SphereMesh(v, f, mesh.refinement_level + 1)


# ---------------------------------------------------------------------------
# truncated meshes


@dataclass(eq=False)
class TruncatedMesh:
    chart: ChartView
    zeta: np.ndarray  # (n,) chart coordinates
    triangles: np.ndarray  # (m, 3), positively oriented in the chart
    boundary: np.ndarray  # (n,) bool
    truncation_radius: float
    X: np.ndarray = field(default=None)  # (n, 3) positions

    def __post_init__(self):
        if self.X is None:
            self.X = self.chart.position(self.zeta)

    @property
    def data(self) -> WeierstrassData:
        return self.chart.data

    @property
    def num_vertices(self) -> int:
        return len(self.zeta)

    @cached_property
    def interior(self) -> np.ndarray:
        return np.nonzero(~self.boundary)[0]

    @cached_property
    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.X, axis=1)

    @cached_property
    def metric(self) -> np.ndarray:
        return self.chart.metric(self.zeta)

    @cached_property
    def curvature(self) -> np.ndarray:
        return self.chart.curvature(self.zeta)

    def signed_areas(self) -> np.ndarray:
        p = self.zeta[self.triangles]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (np.conj(e1) * e2).imag

    def boundary_edges(self) -> np.ndarray:
        e = np.sort(np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                                    self.triangles[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq[counts == 1]

    def boundary_loops(self) -> list[list[int]]:
        be = self.boundary_edges()
        adj: dict = {}
        for a, b in be:
            adj.setdefault(int(a), []).append(int(b))
            adj.setdefault(int(b), []).append(int(a))
        seen: set = set()
        loops = []
        for s in adj:
            if s in seen:
                continue
            comp, stack = [], [s]
            while stack:
                x = stack.pop()
                if x in seen:
                    continue
                seen.add(x)
                comp.append(x)
                stack.extend(adj[x])
            loops.append(comp)
        return loops

    def max_edge_length(self, measure: str = "sphere") -> float:
        edges, _ = unique_edges(self.triangles)
        a, b = self.zeta[edges[:, 0]], self.zeta[edges[:, 1]]
        if measure == "chart":
            return float(np.max(np.abs(a - b)))
        if measure == "induced":
            return float(np.max(np.linalg.norm(self.X[edges[:, 0]] - self.X[edges[:, 1]], axis=1)))
        # chordal distance on the sphere of the global coordinates
        from .weierstrass import stereo_inverse
        za, zb = self.chart.to_global(a), self.chart.to_global(b)
        return float(np.max(np.linalg.norm(stereo_inverse(za) - stereo_inverse(zb), axis=1)))


def _sphere_dist_to_punctures(verts: np.ndarray, data: WeierstrassData) -> np.ndarray:
    from .weierstrass import stereo_inverse

    pts = [np.array([0.0, 0.0, 1.0]) if p is None else stereo_inverse(np.array([p]))[0] for p in data.puncture_list()]
    d = np.full(len(verts), np.inf)
    for q in pts:
        d = np.minimum(d, np.linalg.norm(verts - q, axis=1))
    return d


def _graded_sphere(data: WeierstrassData, R: float, level: int, grade: float, cap: int):
    """Icosphere refined until every triangle that reaches into B_R is small
    relative to its distance from the nearest puncture."""
    cv = chart_puncture(data, data.puncture_list()[0])
    v, f = icosphere(level)
    h = _Hierarchy(v, f, _sphere_mid, cap)
    for _ in range(40):
        vv = np.array(h.verts)
        tt = np.array(h.leaves, dtype=np.int64)
        zeta = cv.from_global(stereo(vv))
        with np.errstate(all="ignore"):
            rad = np.linalg.norm(cv.position(zeta), axis=1)
        rad[~np.isfinite(rad)] = np.inf
        inside = rad[tt] < R
        touches = inside.any(axis=1)
        size = np.max(np.linalg.norm(vv[tt] - vv[tt[:, [1, 2, 0]]], axis=2), axis=1)
        cen = vv[tt].mean(axis=1)
        dist = _sphere_dist_to_punctures(cen, data)
        flags = touches & (size > grade * dist)
        if not np.any(flags):
            v, f = h.conforming()
            return v, f, h
        h.refine(flags.tolist())
    raise BudgetExceeded("graded refinement did not settle")


def _bisect_edges(cv: ChartView, za, zb, R, iters=60, rtol=1e-9):
    """Points on segments ``za -> zb`` (``|X(za)| < R <= |X(zb)|``) where ``|X| = R``."""
    lo = np.zeros(len(za))
    hi = np.ones(len(za))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        with np.errstate(all="ignore"):
            r = np.linalg.norm(cv.position(za + mid * (zb - za)), axis=1)
        r[~np.isfinite(r)] = np.inf
        inside = r < R
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
        if np.max(hi - lo) < 1e-15:
            break
    t = 0.5 * (lo + hi)
    pts = za + t * (zb - za)
    r = np.linalg.norm(cv.position(pts), axis=1)
    return pts, t, r


def _clip(cv: ChartView, zeta: np.ndarray, tris: np.ndarray, R: float, relocate: float = 0.15):
    """Cut a chart triangulation along ``|X| = R`` and keep the inside."""
    with np.errstate(all="ignore"):
        rad = np.linalg.norm(cv.position(zeta), axis=1)
    rad[~np.isfinite(rad)] = np.inf
    zeta = zeta.copy()
    status = np.where(rad < R, -1, 1)  # -1 in, 0 on, 1 out
    edges, eid = unique_edges(tris)
    sa, sb = status[edges[:, 0]], status[edges[:, 1]]
    cross = sa != sb
    cross_idx = np.nonzero(cross)[0]
    ein = np.where(sa[cross_idx] < 0, edges[cross_idx, 0], edges[cross_idx, 1])
    eout = np.where(sa[cross_idx] < 0, edges[cross_idx, 1], edges[cross_idx, 0])
    if np.any(~np.isfinite(zeta[eout])):
        raise BudgetExceeded("a kept vertex is adjacent to the chart's point at infinity; refine further")
    pts, t, _ = _bisect_edges(cv, zeta[ein], zeta[eout], R)

    # inside vertices that sit almost on the boundary are moved onto it
    order = np.argsort(t)
    moved = np.zeros(len(zeta), bool)
    for j in order:
        if t[j] >= relocate:
            break
        vi = ein[j]
        if moved[vi]:
            continue
        zeta[vi] = pts[j]
        status[vi] = 0
        moved[vi] = True

    n = len(zeta)
    cut_vertex = np.full(len(edges), -1)
    new_pts = []
    for k, j in enumerate(cross_idx):
        a, b = edges[j]
        if status[a] == -1 and status[b] == 1 or status[a] == 1 and status[b] == -1:
            cut_vertex[j] = n + len(new_pts)
            new_pts.append(pts[k])
    zeta = np.concatenate([zeta, np.array(new_pts, dtype=complex)])
    boundary = np.concatenate([status == 0, np.ones(len(new_pts), bool)])

    out = []
    st = status[tris]
    for ti in range(len(tris)):
        s = st[ti]
        if np.all(s <= 0):
            if np.any(s < 0):
                out.append(tris[ti])
            continue
        if np.all(s >= 0):
            continue
        v = tris[ti]
        # rotate so that the pattern is handled uniformly
        e = eid[ti]  # edges (01, 12, 20)
        poly = []
        for k in range(3):
            a, b = v[k], v[(k + 1) % 3]
            if status[a] <= 0:
                poly.append(a)
            c = cut_vertex[e[k]]
            if c >= 0:
                poly.append(c)
        for k in range(1, len(poly) - 1):
            out.append((poly[0], poly[k], poly[k + 1]))
    tri = np.array(out, dtype=np.int64)
    used = np.unique(tri)
    remap = np.full(len(zeta), -1)
    remap[used] = np.arange(len(used))
    return zeta[used], remap[tri], boundary[used]


def build_truncated_mesh(data: WeierstrassData, R: float, target_h: Optional[float] = None,
                         base_level: int = 4, grade: float = 0.5,
                         vertex_cap: int = DEFAULT_VERTEX_CAP, check: bool = True) -> TruncatedMesh:
    """Chart-domain mesh of the preimage of ``Sigma ∩ B_R``.

    ``target_h`` caps the chordal (round-sphere) edge length of the base
    mesh; near punctures triangles are graded to ``grade`` times their
    distance from the puncture so that the boundary curve is resolved.
    """
    ends = end_analysis(data)
    if target_h is not None:
        base_level = max(2, int(np.ceil(np.log2(1.1 / target_h))))
    cv = chart_puncture(data, data.puncture_list()[0])
    verts, tris, _ = _graded_sphere(data, R, base_level, grade, vertex_cap)
    zeta = cv.from_global(stereo(verts))
    zeta, tris, boundary = _clip(cv, zeta, tris, R)
    mesh = TruncatedMesh(cv, zeta, tris, boundary, float(R))
    area = mesh.signed_areas()
    if np.all(area < 0):
        mesh.triangles = mesh.triangles[:, [0, 2, 1]]
        area = -area
    if np.any(area <= 0):
        raise BudgetExceeded(f"{int(np.sum(area <= 0))} inverted/degenerate triangles after clipping")
    if check:
        _check_truncation(mesh, ends)
    return mesh


def _check_truncation(mesh: TruncatedMesh, ends) -> None:
    loops = mesh.boundary_loops()
    if len(loops) != len(ends):
        raise RTooSmall(f"R = {mesh.truncation_radius}: {len(loops)} boundary loop(s) for {len(ends)} end(s)")
    zg = mesh.chart.to_global(mesh.zeta)
    from .weierstrass import stereo_inverse

    pos = stereo_inverse(zg)
    pts = [np.array([0.0, 0.0, 1.0]) if e.puncture is None else stereo_inverse(np.array([e.puncture]))[0] for e in ends]
    owner = []
    for loop in loops:
        d = np.stack([np.linalg.norm(pos[loop] - q, axis=1) for q in pts])
        owner.append(int(np.argmin(d.mean(axis=1))))
    if len(set(owner)) != len(ends):
        raise RTooSmall(f"R = {mesh.truncation_radius}: boundary loops do not separate the ends")
    # ends must be graphs over their limit planes on B_R \ B_{R/2}
    N = mesh.chart.normal(mesh.zeta)
    outer = mesh.radius >= 0.5 * mesh.truncation_radius
    if np.any(outer):
        dist = np.stack([np.linalg.norm(pos[outer] - q, axis=1) for q in pts])
        nearest = np.argmin(dist, axis=0)
        lim = np.array([ends[i].limit_normal for i in nearest])
        if np.min(np.abs(np.einsum("ij,ij->i", N[outer], lim))) < 0.5:
            raise RTooSmall(f"R = {mesh.truncation_radius}: ends are not graphical outside B_(R/2)")


def refine_truncated(mesh: TruncatedMesh, snap_boundary: bool = True) -> TruncatedMesh:
    """Uniform 1 -> 4 split with midpoints taken in the chart.

    With ``snap_boundary`` the new boundary vertices are moved along the
    outward edge normal onto ``|X| = R``; otherwise the refined mesh is
    nested in the old one.
    """
    bedges = mesh.boundary_edges()
    bset = {tuple(e) for e in bedges.tolist()}
    z, tris, edges = uniform_split(mesh.zeta[:, None], mesh.triangles, lambda a, b: 0.5 * (a + b))
    z = z[:, 0]
    n_old = mesh.num_vertices
    newb = np.array([tuple(e) in bset for e in edges.tolist()], dtype=bool)
    boundary = np.concatenate([mesh.boundary, newb])
    if snap_boundary and np.any(newb):
        idx = n_old + np.nonzero(newb)[0]
        a, b = mesh.zeta[edges[newb, 0]], mesh.zeta[edges[newb, 1]]
        # third vertex of the triangle owning each boundary edge
        opp = {}
        for t in mesh.triangles.tolist():
            for k in range(3):
                opp[tuple(sorted((t[k], t[(k + 1) % 3])))] = t[(k + 2) % 3]
        c = mesh.zeta[[opp[tuple(e)] for e in edges[newb].tolist()]]
        m = z[idx]
        nrm = 1j * (b - a)
        nrm = np.where(((m - c) * np.conj(nrm)).real < 0, -nrm, nrm)  # outward, length |b - a|
        lo, hi = m - 0.25 * nrm, m + 0.25 * nrm
        with np.errstate(all="ignore"):
            rlo = np.linalg.norm(mesh.chart.position(lo), axis=1)
            rhi = np.linalg.norm(mesh.chart.position(hi), axis=1)
        R = mesh.truncation_radius
        ok = (rlo < R) & (rhi >= R)
        if np.any(ok):
            pts, _, _ = _bisect_edges(mesh.chart, lo[ok], hi[ok], R)
            z[idx[ok]] = pts
    return TruncatedMesh(mesh.chart, z, tris, boundary, mesh.truncation_radius)


def refine(mesh, snap_boundary: bool = True):
    """Uniform refinement of either mesh type (see :func:`refine_truncated`)."""
    if isinstance(mesh, SphereMesh):
        return refine_sphere(mesh)
    return refine_truncated(mesh, snap_boundary)


def write_off(mesh, path) -> None:
    """OFF-style dump: ``tag re im x y z`` per vertex, ``3 i j k`` per face."""
    lines = []
    if isinstance(mesh, SphereMesh):
        coords = mesh.chart_coord
        tags = np.where(mesh.chart_tag == 0, "z", "w")
        X = mesh.vertices
    else:
        coords = mesh.zeta
        tags = np.full(mesh.num_vertices, "t")
        X = mesh.X
    lines.append("OFF")
    lines.append(f"{len(coords)} {len(mesh.triangles)} 0")
    for tag, c, x in zip(tags, coords, X):
        lines.append(f"{tag} {c.real:.17g} {c.imag:.17g} {x[0]:.17g} {x[1]:.17g} {x[2]:.17g}")
    for t in mesh.triangles:
        lines.append(f"3 {t[0]} {t[1]} {t[2]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
