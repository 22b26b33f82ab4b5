import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcsurgery import model_map as mm
from qcsurgery.tiling import DIAMOND, DISK, STRIP, OutsideModel, Tiling


def test_square_map_on_the_disk(canonical, rng):
    z = 0.99 * np.sqrt(rng.random(2000)) * np.exp(2j * np.pi * rng.random(2000))
    assert np.allclose(mm.F_complex(canonical, z), z * z, atol=1e-14)


def test_diamond_boundary_maps_to_the_circle(canonical):
    for d in canonical.diamonds:
        th = np.linspace(0.01, 2 * np.pi - 0.01, 500)
        r = (d.diameter / 2) / (np.abs(np.cos(th)) + np.abs(np.sin(th)))
        z = d.center + r * (1 - 1e-12) * np.exp(1j * th)
        L, _, kind = mm.eval_logpolar(canonical, z)
        assert np.all(kind == DIAMOND)
        assert np.max(np.abs(L)) < 1e-9


def test_radial_power_on_diamonds(canonical):
    # along a ray from the center F is r^d up to the boundary normalization
    d = canonical.diamonds[1]
    R, _ = mm.boundary_angle(canonical, 2, 0.3)
    z = d.center + R * np.array([0.05, 0.3, 0.7, 0.99]) * np.exp(0.3j)
    L, _, _ = mm.eval_logpolar(canonical, z)
    assert np.allclose(L, d.diameter * np.log(np.abs(z - d.center) / R), atol=1e-12)


def test_vertices_map_to_one(canonical):
    v = np.array(canonical.vertices()[:-1], complex)
    Fv = mm.F_complex(canonical, v)
    assert np.allclose(Fv, 1, atol=1e-12)


@pytest.mark.parametrize("j", [1, 2, 3, 4, 7, 12, 18])
def test_chart_inverse_round_trip(canonical, rng, j):
    s = rng.uniform(-0.98, 0.98, 400) + 1j * rng.uniform(0.02, 6, 400)
    z = mm.chart_inverse(canonical, j, s)
    ok = canonical.classify(z)[0] == STRIP
    back = mm.strip_chart(canonical, j, z[ok])
    assert ok.mean() > 0.5
    assert np.max(np.abs(back - s[ok])) < 1e-9


def test_strip_values_follow_sigma(canonical, rng):
    # F = sigma(chart) with sigma(w) = exp(i pi (1 - w) / 2) on odd strips and its negative on even ones
    for j in (3, 4, 9):
        s = rng.uniform(-0.9, 0.9, 200) + 1j * rng.uniform(0.1, 4, 200)
        z = mm.chart_inverse(canonical, j, s)
        sigma = np.exp(1j * np.pi * (1 - s) / 2) * (1 if j % 2 else -1)
        assert np.allclose(mm.F_complex(canonical, z), sigma, rtol=1e-9)


@settings(max_examples=150, deadline=None)
@given(st.floats(-16, 20), st.floats(1e-3, 17))
def test_conjugate_symmetry_exact(x, y):
    t = Tiling((2, 4, 2, 8))
    z = np.array([complex(x, y)])
    L1, A1, k = mm.eval_logpolar(t, z)
    L2, A2, _ = mm.eval_logpolar(t, np.conj(z))
    if np.isfinite(L1[0]):
        assert L1[0] == L2[0]
        assert mm._wrap(A1 + A2)[0] == 0


def test_continuity_across_tile_boundaries(canonical):
    assert mm.continuity_check(canonical, samples=4000, seed=5) <= 1e-5


def test_winding_numbers(canonical):
    for d in canonical.diamonds:
        th = np.linspace(0, 2 * np.pi, 4096, endpoint=False)
        r = (d.diameter / 2) / (np.abs(np.cos(th)) + np.abs(np.sin(th)))
        assert mm.winding_degree(canonical, d.center + r * 0.999 * np.exp(1j * th)) == d.diameter
    assert mm.winding_degree(canonical, mm.circle(0, 0.5)) == 2


def test_critical_points(canonical):
    cps = mm.critical_points(canonical, verify=True)
    assert [c.degree for c in cps.centers] == [2, 4, 2, 8]
    assert [c.point for c in cps.vertices] == [-1, -3, -7, -9, -17]


def test_growth_bound(canonical, rng):
    for r in (2, 10):
        z = r * np.sqrt(rng.random(5000)) * np.exp(2j * np.pi * rng.random(5000))
        L, _, _ = mm.eval_logpolar(canonical, z)
        assert np.nanmax(L) <= mm.log_bound_on_disk(r)


def test_outside_points_raise(canonical):
    with pytest.raises(OutsideModel):
        mm.eval_F(canonical, -40 + 1j)
    with pytest.raises(ValueError):
        mm.eval_F(canonical, complex(np.nan, 0))
    assert np.isnan(mm.eval_logpolar(canonical, np.array([-40 + 1j]))[0][0])


def test_logpolar_value_overflow(canonical):
    v = mm.eval_F(canonical, 600 + 0.5j)
    assert v.log_modulus > mm.OVERFLOW_LOG
    with pytest.raises(OverflowError):
        v.to_complex()
    assert mm.eval_F(canonical, 0.0).log_modulus == -np.inf
    assert mm.eval_logpolar(canonical, np.array([0j]))[2][0] == DISK
