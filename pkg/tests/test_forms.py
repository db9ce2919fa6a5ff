import numpy as np
import pytest

from minlab.errors import TooFewEnds
from minlab.forms import (CUTOFF_MAX_SLOPE, HarmonicForm, bochner_residual, build_end_forms, cutoff_gradient_bound,
                          cutoff_laplacian_bound, cutoff_phi, cutoff_profile, cutoff_profile_d1, cutoff_profile_d2,
                          exterior_derivative_residual, form_norm_density, gradient_norm_increments, gram_matrix,
                          numerical_rank, pairing_field, rotate_first_end_up, star_dx, weighted_norm_scan)
from minlab.mesh import build_truncated_mesh, refine
from minlab.meromorphic import residue, residue_at_infinity

RADII = np.geomspace(20, 2000, 9)


def _residue(form, p):
    w = form.holomorphic_part
    if (w.order_at_infinity() if p is None else w.order_at(p)) <= 0:
        return 0.0
    return residue_at_infinity(form.holomorphic_part) if p is None else residue(form.holomorphic_part, p)


@pytest.mark.parametrize("name,r", [("catenoid", 2), ("jorge-meeks-3", 3), ("jorge-meeks-4", 4),
                                    ("jorge-meeks-5", 5)])
def test_end_forms_residue_pattern(name, r, surfaces):
    data = surfaces[name]
    forms = build_end_forms(data)
    assert len(forms) == 2 * r - 2
    pts = data.puncture_list()
    for j, form in enumerate(forms[: r - 1], start=1):
        for i, p in enumerate(pts):
            expected = 1 if i == 0 else -1 if i == j else 0
            assert abs(_residue(form, p) - expected) < 1e-9
    assert [f.conjugate for f in forms] == [False] * (r - 1) + [True] * (r - 1)


def test_catenoid_end_form_is_dz_over_z(surfaces):
    form = build_end_forms(surfaces["catenoid"])[0]
    z = np.array([0.3 + 0.1j, -2.0 + 1j])
    np.testing.assert_allclose(form.holomorphic_part(z), 1 / z, rtol=1e-14)


@pytest.mark.parametrize("name", ["plane", "enneper"])
def test_one_ended_surfaces_have_no_end_forms(name, surfaces):
    with pytest.raises(TooFewEnds):
        build_end_forms(surfaces[name])


def test_star_dx_wraps_phi(surfaces):
    data = surfaces["catenoid"]
    form = star_dx(data, 3)
    assert form.conjugate and form.holomorphic_part.coeff_close(data.phi[2])
    with pytest.raises(ValueError):
        star_dx(data, 4)


@pytest.mark.parametrize("name", ["catenoid", "jorge-meeks-3"])
def test_forms_are_closed_and_coclosed(name, surfaces, truncations):
    data = surfaces[name]
    mesh = truncations(name, 20)
    forms = build_end_forms(data) + [star_dx(data, k) for k in (1, 2, 3)]
    for form in forms:
        assert exterior_derivative_residual(form, mesh) <= 1e-6


def _fd_pairing(form, chart, t, h=1e-6):
    """Pair ``ω = a du + b dv`` with ``dx_k`` from finite differences of the immersion."""
    Xu = (chart.position(t + h) - chart.position(t - h)) / (2 * h)
    Xv = (chart.position(t + 1j * h) - chart.position(t - 1j * h)) / (2 * h)
    F = form.coefficient_values(chart, t)
    a, b = F.real, -F.imag
    return (a[:, None] * Xu + b[:, None] * Xv) / chart.metric(t)[:, None]


@pytest.mark.parametrize("name", ["catenoid", "jorge-meeks-3"])
def test_pairing_matches_finite_differences(name, surfaces, truncations):
    data = surfaces[name]
    mesh = truncations(name, 20)
    t = mesh.zeta[~mesh.boundary][::37]
    for form in build_end_forms(data) + [star_dx(data, 1), star_dx(data, 3)]:
        exact = pairing_field(form, mesh.chart, t)
        fd = _fd_pairing(form, mesh.chart, t)
        scale = np.max(np.abs(exact))
        assert np.max(np.abs(exact - fd)) <= 1e-6 * scale


def test_pairing_bounded_by_form_norm(surfaces, truncations):
    data = surfaces["jorge-meeks-3"]
    mesh = truncations("jorge-meeks-3", 20)
    cv = mesh.chart
    for form in build_end_forms(data):
        X = pairing_field(form, cv, mesh.zeta)
        norm = np.sqrt(form_norm_density(form, cv, mesh.zeta) / cv.metric(mesh.zeta))
        assert np.all(np.linalg.norm(X, axis=1) <= norm * (1 + 1e-12))


def test_pairing_rejects_other_inputs(surfaces, truncations):
    data = surfaces["catenoid"]
    with pytest.raises(TypeError):
        pairing_field(data.phi[2], truncations("catenoid", 10).chart, np.array([0.5j]))
    with pytest.raises(TypeError):
        weighted_norm_scan(data.phi[2], data, 0.25, RADII)


@pytest.mark.parametrize("name,R,r", [("catenoid", 10, 2), ("jorge-meeks-3", 20, 3), ("jorge-meeks-4", 20, 4)])
def test_gram_rank(name, R, r, surfaces):
    data = surfaces[name]
    mesh = build_truncated_mesh(data, R, base_level=3)
    G = gram_matrix(build_end_forms(data), mesh, delta=0.25)
    assert numerical_rank(G) == 2 * r - 2
    assert np.linalg.eigvalsh(G)[0] > 0
    np.testing.assert_allclose(G, G.T, atol=0)


def test_catenoid_end_forms_coincide_with_coordinate_forms(surfaces, truncations):
    data = surfaces["catenoid"]
    mesh = truncations("catenoid", 10)
    dx3 = HarmonicForm(data.phi[2], False, "dx3")
    G = gram_matrix(build_end_forms(data) + [star_dx(data, 3), dx3], mesh)
    assert numerical_rank(G) == 2


@pytest.mark.parametrize("name", ["catenoid", "jorge-meeks-3"])
@pytest.mark.parametrize("delta", [0.1, 0.25, 0.4])
def test_end_forms_have_finite_weighted_norm(name, delta, surfaces):
    data = surfaces[name]
    scan = weighted_norm_scan(build_end_forms(data)[0], data, delta, RADII, base=0.0)
    assert scan.bounded
    assert scan.fitted_growth_exponent == pytest.approx(-2 * delta, abs=0.05)
    assert scan.fit_r2 >= 0.99
    assert np.all(np.diff(scan.truncated_norms) > 0)


def test_end_form_plain_norm_grows_logarithmically(surfaces):
    data = surfaces["catenoid"]
    scan = weighted_norm_scan(build_end_forms(data)[0], data, 0.0, RADII, base=0.0)
    assert not scan.bounded
    # |dz/z|^2 over log-annuli gives equal increments per factor of R
    inc = np.diff(scan.truncated_norms)[-4:]
    np.testing.assert_allclose(inc / inc[-1], 1, atol=0.005)


@pytest.mark.parametrize("name", ["catenoid", "jorge-meeks-3"])
@pytest.mark.parametrize("delta", [0.1, 0.25, 0.4])
def test_star_dx_diverges_after_rotation(name, delta, surfaces):
    data = rotate_first_end_up(surfaces[name])
    for k in (1, 2):
        scan = weighted_norm_scan(star_dx(data, k), data, delta, RADII, base=0.0)
        assert not scan.bounded
        assert scan.fitted_growth_exponent == pytest.approx(2 - 2 * delta, abs=0.1)


def test_catenoid_star_dx3_is_borderline(surfaces):
    data = surfaces["catenoid"]
    scan = weighted_norm_scan(star_dx(data, 3), data, 0.0, RADII, base=0.0)
    assert abs(scan.fitted_growth_exponent) < 0.01


def test_scan_csv(tmp_path, surfaces):
    data = surfaces["catenoid"]
    scan = weighted_norm_scan(build_end_forms(data)[0], data, 0.25, RADII, base=0.0)
    scan.write_csv(tmp_path / "scan.csv")
    rows = (tmp_path / "scan.csv").read_text().splitlines()
    assert rows[0] == "R,truncated_norm,local_slope" and len(rows) == len(RADII) + 1
    assert rows[-1].split(",")[2] == f"{scan.local_slopes[-1]:.17g}"


def test_scan_rejects_bad_input(surfaces):
    data = surfaces["catenoid"]
    form = build_end_forms(data)[0]
    with pytest.raises(ValueError):
        weighted_norm_scan(form, data, -0.1, RADII)
    with pytest.raises(ValueError):
        weighted_norm_scan(form, data, 0.25, RADII[::-1])


@pytest.mark.parametrize("name", ["catenoid", "jorge-meeks-3"])
def test_gradient_norm_is_cauchy(name, surfaces):
    data = surfaces[name]
    for form in build_end_forms(data)[:1]:
        inc = gradient_norm_increments(form, data, RADII)
        assert np.all(inc > 0)
        # geometric decay of shells makes the tail beyond R_max negligible
        tail = np.cumsum(inc[::-1])[::-1]
        assert tail[-1] < 1e-3 * tail[0]


def _bochner_orders(form, data, mesh):
    meshes = [mesh, refine(mesh), refine(refine(mesh))]
    res = [bochner_residual(form, data, m) for m in meshes]
    h = np.array([r.mesh_size for r in res])
    err = np.array([r.l2_norm for r in res])
    return np.log(err[:-1] / err[1:]) / np.log(h[:-1] / h[1:])


@pytest.mark.parametrize("which", ["star_dx3", "end_form"])
def test_bochner_residual_vanishes_on_catenoid(which, surfaces):
    data = surfaces["catenoid"]
    form = star_dx(data, 3) if which == "star_dx3" else build_end_forms(data)[0]
    orders = _bochner_orders(form, data, build_truncated_mesh(data, 10, base_level=3))
    # the coarsest step is pre-asymptotic
    assert np.all(orders > 0) and orders[-1] >= 0.9


def test_cutoff_profile():
    t = np.linspace(0, 3, 601)
    phi = cutoff_profile(t)
    assert np.all(phi[t <= 1] == 1) and np.all(phi[t >= 2] == 0)
    assert np.all(np.diff(phi) <= 0)
    for f in (cutoff_profile_d1, cutoff_profile_d2):
        assert np.all(f(np.array([1.0, 2.0])) == 0)
    h = 1e-6
    np.testing.assert_allclose((cutoff_profile(t + h) - cutoff_profile(t - h)) / (2 * h), cutoff_profile_d1(t),
                               atol=1e-6)
    assert np.max(np.abs(cutoff_profile_d1(t))) == pytest.approx(CUTOFF_MAX_SLOPE)


def test_cutoff_on_mesh(surfaces, truncations):
    mesh = truncations("catenoid", 40)
    phi = cutoff_phi(10, mesh)
    assert np.all(phi[mesh.radius <= 10] == 1)
    assert np.all(phi[mesh.radius >= 20] == 0)


def test_cutoff_gradient_scales_like_one_over_R(surfaces):
    data = surfaces["catenoid"]
    mesh = build_truncated_mesh(data, 80)
    bounds = [cutoff_gradient_bound(R, mesh) for R in (10, 20, 40)]
    # |∇|X|| <= 1, so only the interpolation error lifts the bound above the spline slope
    assert max(bounds) <= 1.1 * CUTOFF_MAX_SLOPE
    assert min(bounds) >= 0.5 * CUTOFF_MAX_SLOPE
    lap = [cutoff_laplacian_bound(R, mesh) for R in (10, 20, 40)]
    assert max(lap) <= 10
