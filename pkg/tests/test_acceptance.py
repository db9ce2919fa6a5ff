"""One test per acceptance criterion; each prints a PASS/FAIL line."""

import time

import numpy as np
import pytest

from minlab import gallery
from minlab.certify import case_table, certificate, theorem_checks
from minlab.forms import bochner_residual, build_end_forms, rotate_first_end_up, star_dx, weighted_norm_scan
from minlab.mesh import build_truncated_mesh, refine
from minlab.spectral import (assemble_jacobi_truncated, assemble_weighted, compact_index, inertia_count,
                             negative_count, total_curvature_ratio)
from minlab.weierstrass import topology

EXPECTED_INDEX = {"plane": 0, "catenoid": 1, "enneper": 1, "jorge-meeks-3": 3, "jorge-meeks-4": 5,
                  "jorge-meeks-5": 7}
TRUNCATIONS = [("catenoid", 20), ("catenoid", 50), ("catenoid", 100), ("jorge-meeks-3", 50)]
CERTIFICATE_RADII = [5, 10, 25]


@pytest.fixture(scope="module")
def compact():
    cache = {}

    def get(name, level):
        if (name, level) not in cache:
            t0 = time.perf_counter()
            out = compact_index(gallery.load(name), level)
            cache[name, level] = out + (time.perf_counter() - t0,)
        return cache[name, level]

    return get


@pytest.fixture(scope="module")
def truncated_problems(truncations):
    cache = {}
    for name, R in TRUNCATIONS:
        cache[name, R] = (truncations(name, R), gallery.load(name))
    return cache


def _sphere_check(res, report, number, name, count, seconds, time_limit):
    lam = res.eigenvalues
    ok = count.index == 1 and count.nullity == 3 and not count.ambiguous
    ok &= abs(lam[0]) < 1e-8 and bool(np.all(np.abs(lam[1:4] / 2 - 1) <= 0.02))
    if time_limit is not None:
        ok &= seconds < time_limit
    report(number, ok, f"{name} index {count.index}, nullity band {count.nullity}, "
                       f"eigenvalues {np.round(lam[:4], 4).tolist()}, {seconds:.1f} s")


def test_criterion_1_catenoid_index(compact, report):
    count, res, _, seconds = compact("catenoid", 5)
    _sphere_check(res, report, 1, "catenoid", count, seconds, 30.0)


def test_criterion_2_enneper_index(compact, report):
    count, res, _, seconds = compact("enneper", 5)
    _sphere_check(res, report, 2, "enneper", count, seconds, None)


@pytest.mark.parametrize("r", [3, 4, 5])
def test_criterion_3_jorge_meeks_index(r, compact, report):
    count, res, _, seconds = compact(f"jorge-meeks-{r}", 6)
    ok = count.index == 2 * r - 3 and not count.ambiguous and seconds < 300
    report(3, ok, f"jorge-meeks-{r} index {count.index} (expected {2 * r - 3}), nullity band {count.nullity}, "
                  f"margin {count.margin:.4f} vs tol {count.tol}, {seconds:.1f} s")


@pytest.mark.parametrize("name", ["catenoid", "jorge-meeks-3", "jorge-meeks-4", "jorge-meeks-5"])
def test_criterion_4_jorge_meeks_relation(name, report):
    data = gallery.load(name)
    top = topology(data)
    T = total_curvature_ratio(data, 5)
    expected = top.genus + top.ends - 1
    report(4, abs(T - expected) <= 1e-3, f"{name} -(1/4pi) int K = {T:.6f}, g + r - 1 = {expected}")


def test_criterion_5_truncated_counts(truncated_problems, compact, report):
    counts = {}
    lowest = {}
    for (name, R), (mesh, data) in truncated_problems.items():
        prob = assemble_jacobi_truncated(mesh, data)
        n, res = negative_count(prob)
        assert inertia_count(prob)[0] == n
        counts[name, R] = n
        lowest[name, R] = res.eigenvalues[0]
    compact_idx = {name: compact(name, 5)[0].index for name, _ in TRUNCATIONS}
    equal = all(counts[k] == compact_idx[k[0]] for k in counts)
    cat = [counts["catenoid", R] for R in (20, 50, 100)]
    monotone = cat == sorted(cat)
    detail = ", ".join(f"{n} R={R}: {c} (lowest {lowest[n, R]:.4g})" for (n, R), c in counts.items())
    report(5, equal and monotone, f"{detail}; compact {compact_idx}")


def test_criterion_6_weighted_equivalence(truncated_problems, report):
    rows = []
    ok = True
    for (name, R), (mesh, data) in truncated_problems.items():
        plain = inertia_count(assemble_jacobi_truncated(mesh, data))[0]
        weighted = negative_count(assemble_weighted(mesh, data, 0.25))[0]
        ok &= plain == weighted
        rows.append(f"{name} R={R}: {weighted} vs {plain}")
    report(6, ok, "delta 0.25 weighted vs unweighted: " + ", ".join(rows))


def test_criterion_7_weighted_norm_dichotomy(report):
    radii = np.geomspace(20, 2000, 9)
    ok = True
    worst = -np.inf
    for name in ("catenoid", "jorge-meeks-3"):
        data = gallery.load(name)
        for form in build_end_forms(data):
            for delta in (0.1, 0.25, 0.4):
                scan = weighted_norm_scan(form, data, delta, radii)
                ok &= scan.bounded
                worst = max(worst, scan.fitted_growth_exponent)
    data = rotate_first_end_up(gallery.load("catenoid"))
    star = weighted_norm_scan(star_dx(data, 1), data, 0.25, radii)
    p = star.fitted_growth_exponent
    ok &= (not star.bounded) and abs(p - 1.5) <= 0.1
    report(7, ok, f"end forms bounded (largest increment exponent {worst:.3f}); "
                  f"*dx1 exponent {p:.4f} (expected 1.5 +- 0.1)")


def test_criterion_8_bochner_order(report):
    data = gallery.load("jorge-meeks-3")
    form = build_end_forms(data)[0]
    # a nested family of uniform refinements; the step off the projected
    # icosphere base mesh is pre-asymptotic and is not part of the fit
    mesh = refine(build_truncated_mesh(data, 10, base_level=2))
    meshes = [mesh, refine(mesh), refine(refine(mesh))]
    res = [bochner_residual(form, data, m) for m in meshes]
    h = np.array([r.mesh_size for r in res])
    err = np.array([r.l2_norm for r in res])
    order = float(np.polyfit(np.log(h), np.log(err), 1)[0])
    ok = bool(np.all(np.diff(err) < 0)) and order >= 1
    report(8, ok, f"3-noid L2 residuals {np.round(err, 4).tolist()} at h {np.round(h, 3).tolist()}, "
                  f"fitted order {order:.3f}")


def test_criterion_9_certificates(surfaces, report):
    jm3 = certificate(surfaces["jorge-meeks-3"], 50)
    ok = 2 <= jm3.negative_count <= 3 and jm3.sound
    unsound = []
    checked = 0
    for name, data in surfaces.items():
        for R in CERTIFICATE_RADII + ([50] if name == "catenoid" else []):
            cert = certificate(data, R)
            checked += 1
            if not cert.sound:
                unsound.append(f"{name} R={R}: {cert.negative_count} > {cert.spectral_count}")
    ok &= not unsound
    report(9, ok, f"3-noid R=50 certificate {jm3.negative_count} (spectral {jm3.spectral_count}); "
                  f"{checked} further certificates, unsound: {unsound or 'none'}")


CASE_REASONS = {
    (0, 1): "plane, which is stable", (0, 2): "catenoid, which has index 1",
    (0, 3): "López–Ros genus zero", (0, 4): "López–Ros genus zero",
    (1, 1): "plane, which is stable", (1, 2): "catenoid, which has index 1",
    (1, 3): "Hoffman–Meeks family index ≥ 3", (1, 4): "index lower bound 2(g+r)/3 - 1 exceeds 2",
    (2, 1): "plane, which is stable", (2, 2): "catenoid, which has index 1",
    (2, 3): "index lower bound 2(g+r)/3 - 1 exceeds 2", (2, 4): "index lower bound 2(g+r)/3 - 1 exceeds 2",
}


def test_criterion_10_theorem_sweep(surfaces, compact, report):
    failing = []
    for name, data in surfaces.items():
        count = compact(name, 5)[0]
        tc = -4 * np.pi * total_curvature_ratio(data, 5)
        rep = theorem_checks(data, count.index, total_curvature=tc)
        if not rep.all_pass or count.index != EXPECTED_INDEX[name]:
            failing.append(name)
    table = case_table()
    wrong = [(v.genus, v.ends) for v in table
             if not v.excluded or v.reason != CASE_REASONS[v.genus, v.ends]]
    ok = not failing and not wrong and len(table) == 12
    report(10, ok, f"theorem checks failing: {failing or 'none'}; "
                   f"{sum(v.excluded for v in table)}/12 index-2 cases excluded, mismatched reasons: {wrong or 'none'}")
