import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minlab import gallery
from minlab.errors import DegenerateInput, NotAPole, PoleProximity
from minlab.meromorphic import (Differential, PathSpec, RationalMap, path_integral, residue, roots,
                                route)


def rm(num, den=(1,)):
    return RationalMap(np.array(num, dtype=complex), np.array(den, dtype=complex))


def test_eval_examples():
    assert rm([0, 0, 1]).eval(1 + 1j) == pytest.approx(2j, abs=1e-14)
    assert rm([1], [0, 1]).eval(2) == pytest.approx(0.5)
    assert abs(rm([-1, 0, 0, 1], [2, 1]).eval(1)) < 1e-14


def test_eval_near_pole_raises():
    with pytest.raises(PoleProximity):
        rm([1], [0, 1]).eval(1e-14)


def test_derivative_examples():
    assert rm([0, 0, 1]).derivative().coeff_close(rm([0, 2]))
    assert rm([1], [0, 1]).derivative().coeff_close(rm([-1], [0, 0, 1]))
    f = rm([1, 0, 1], [-1, 1])
    expected = rm([-1, -2, 1], [1, -2, 1])
    assert f.derivative().coeff_close(expected, 1e-10)
    pts = np.array([0.3 + 0.2j, -1.5, 2 + 2j, 0.5j, -0.7 - 0.4j])
    h = 1e-6
    fd = (f(pts + h) - f(pts - h)) / (2 * h)
    np.testing.assert_allclose(f.derivative()(pts), fd, rtol=1e-7)


def test_reduced_form_cancels_common_factor():
    f = rm([-1, 0, 1], [-1, 1])  # (z^2 - 1)/(z - 1) = z + 1
    assert f.deg_den == 0
    assert f.coeff_close(rm([1, 1]), 1e-10)


def test_roots_of_unity():
    r = roots(np.array([-1, 0, 0, 1], dtype=complex))
    assert sorted(m for _, m in r) == [1, 1, 1]
    expected = np.exp(2j * np.pi * np.arange(3) / 3)
    for z, _ in r:
        assert np.min(np.abs(expected - z)) < 1e-12


def test_roots_multiplicity():
    r = roots(np.array([4, -4, 1], dtype=complex))
    assert len(r) == 1
    assert r[0][1] == 2
    assert abs(r[0][0] - 2) < 1e-6


def test_roots_z4_plus_1_against_companion_matrix():
    c = np.array([1, 0, 0, 0, 1], dtype=complex)
    r = np.array([z for z, _ in roots(c)])
    oracle = np.linalg.eigvals(np.array([[0, 0, 0, -1], [1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]], dtype=complex))
    for z in oracle:
        assert np.min(np.abs(r - z)) < 1e-12
    eighth = np.exp(1j * np.pi * np.array([1, 3, 5, 7]) / 4)
    for z in eighth:
        assert np.min(np.abs(r - z)) < 1e-12


def test_roots_zero_polynomial():
    with pytest.raises(DegenerateInput):
        roots(np.zeros(3, dtype=complex))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False), min_size=1, max_size=6))
def test_roots_residual_small(zs):
    c = np.polynomial.polynomial.polyfromroots(zs).astype(complex)
    norm = np.linalg.norm(c)
    for z, _ in roots(c):
        assert abs(np.polynomial.polynomial.polyval(z, c)) <= 1e-9 * norm


def test_residue_examples():
    assert residue(Differential(rm([1], [0, 1])), 0) == pytest.approx(1, abs=1e-12)
    assert abs(residue(Differential(rm([1], [0, 0, 1])), 0)) < 1e-12
    assert residue(Differential(rm([1, 1], [0, -1, 1])), 1) == pytest.approx(2, abs=1e-10)


def test_residue_at_regular_point():
    with pytest.raises(NotAPole):
        residue(Differential(rm([1], [0, 1])), 1.0)


def test_path_integral_examples():
    one = Differential(rm([1]))
    assert path_integral(one, PathSpec([0, 1 + 1j])) == pytest.approx(1 + 1j, abs=1e-12)
    circle = np.exp(2j * np.pi * np.arange(65) / 64)
    loop = path_integral(Differential(rm([1], [0, 1])), PathSpec(circle))
    # a polygon inscribed in the circle still winds once around the pole
    assert loop == pytest.approx(2j * np.pi, abs=1e-10)
    assert path_integral(Differential(rm([0, 1])), PathSpec([0, 2])) == pytest.approx(2, abs=1e-12)


def test_path_too_close_to_pole():
    with pytest.raises(PoleProximity):
        path_integral(Differential(rm([1], [0, 1])), PathSpec([-1, 1]))


def test_path_integral_independent_of_waypoint_refinement():
    w = Differential(rm([1, 0, 1], [2, 0, 1]))
    coarse = path_integral(w, PathSpec([0, 1 + 0.5j]))
    fine = path_integral(w, PathSpec(np.linspace(0, 1 + 0.5j, 9)))
    assert abs(coarse - fine) < 1e-10


def test_route_avoids_poles():
    pts = route(-2, 2, [0j], clearance=1e-3)
    assert len(pts) > 2
    path = PathSpec(pts)
    assert path_integral(Differential(rm([1], [0, 1])), path).real == pytest.approx(0, abs=1e-10)


def _gallery_forms():
    for name in gallery.BUILTIN:
        data = gallery.load(name)
        for k, f in enumerate(data.phi):
            yield f"{name}-phi{k + 1}", f


@pytest.mark.parametrize("label,form", list(_gallery_forms()))
def test_residue_matches_small_loop(label, form):
    for p, _ in form.poles:
        others = [abs(q - p) for q, _ in form.poles if abs(q - p) > 1e-9]
        rad = 0.25 * min(others + [1.0])
        loop = p + rad * np.exp(2j * np.pi * np.arange(9) / 8)
        val = path_integral(form, PathSpec(loop, rad / 2)) / (2j * np.pi)
        # an octagon around p is homotopic to the small circle
        assert abs(val - residue(form, p)) < 1e-8


@pytest.mark.parametrize("label,form", list(_gallery_forms()))
def test_null_homotopic_loop_integral_vanishes(label, form):
    poles = [p for p, _ in form.poles]
    centre = 5 + 5j
    assert all(abs(centre - p) > 2 for p in poles)
    loop = centre + np.exp(2j * np.pi * np.arange(33) / 32)
    assert abs(path_integral(form, PathSpec(loop))) < 1e-8


@pytest.mark.parametrize("name", gallery.BUILTIN)
def test_derivative_matches_finite_differences(name):
    g = gallery.load(name).gauss
    rng = np.random.default_rng(7)
    pts = rng.uniform(-2, 2, 20) + 1j * rng.uniform(-2, 2, 20)
    h = 1e-6
    fd = (g(pts + h) - g(pts - h)) / (2 * h)
    exact = g.derivative()(pts)
    assert np.all(np.abs(exact - fd) <= 1e-5 * np.maximum(1.0, np.abs(exact)))


@pytest.mark.parametrize("label,form", list(_gallery_forms()))
def test_chart_transform_twice_is_identity(label, form):
    assert form.to_w().to_w().coeff_close(form, 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.complex_numbers(min_magnitude=0.1, max_magnitude=5, allow_nan=False, allow_infinity=False))
def test_mobius_pullback_of_dz_over_z(w):
    # dz/z is invariant under z -> 1/z up to sign
    f = Differential(rm([1], [0, 1])).to_w()
    assert complex(f(np.array([w]))[0]) == pytest.approx(-1 / w, rel=1e-12)
