import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcsurgery.tiling import DIAMOND, DISK, OUTSIDE, STRIP, Tiling, TilingError


def test_diamond_layout(canonical):
    t = canonical
    assert [d.right for d in t.diamonds] == [-1, -3, -7, -9]
    assert [d.center for d in t.diamonds] == [-2, -5, -8, -13]
    assert t.last_vertex == -17
    assert t.vertices() == [-1, -3, -7, -9, -17]
    assert t.n_strips == 2 + 16
    assert t.diamonds[3].top == complex(-13, 4)


@pytest.mark.parametrize("bad", [(), (3,), (2, 0), (2, 4.5), (-2,)])
def test_rejects_bad_diameters(bad):
    with pytest.raises(TilingError):
        Tiling(bad)


def test_classify_disk_and_diamonds_match_direct_geometry(canonical, rng):
    t = canonical
    z = rng.uniform(-17, 3, 50_000) + 1j * rng.uniform(-6, 6, 50_000)
    kind, index, _, mirrored = t.classify(z)
    # direct oracle: |z| < 1, and the l1 ball of each diamond
    disk = np.abs(z) < 1
    dia = np.zeros(z.shape, int)
    for d in t.diamonds:
        dia[np.abs(z.real - d.center) + np.abs(z.imag) < d.diameter / 2] = d.index
    margin = np.minimum(np.abs(np.abs(z) - 1), 1.0)
    for d in t.diamonds:
        margin = np.minimum(margin, np.abs(np.abs(z.real - d.center) + np.abs(z.imag) - d.diameter / 2))
    clear = margin > 1e-9
    assert np.array_equal((kind == DISK)[clear], disk[clear])
    assert np.array_equal((kind == DIAMOND)[clear], (dia > 0)[clear])
    sel = clear & (dia > 0)
    assert np.array_equal(index[sel], dia[sel])
    assert np.array_equal(mirrored, z.imag < 0)


def test_classify_is_mirror_symmetric(canonical, rng):
    z = rng.uniform(-16, 8, 20_000) + 1j * rng.uniform(0.001, 10, 20_000)
    a = canonical.classify(z)
    b = canonical.classify(np.conj(z))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]) and np.array_equal(a[2], b[2])
    assert not a[3].any() and b[3].all()


@settings(max_examples=200, deadline=None)
@given(st.floats(-16.5, 30), st.floats(0.0, 18))
def test_every_point_in_the_model_has_one_tile(x, y):
    t = Tiling((2, 4, 2, 8))
    kind, index, _, _ = t.classify(np.array([complex(x, y)]))
    k, i = int(kind[0]), int(index[0])
    if k == STRIP:
        assert 1 <= i <= t.n_strips
    elif k == DIAMOND:
        assert 1 <= i <= 4
    else:
        assert k in (DISK, OUTSIDE)


def test_strips_start_on_their_bottoms(canonical):
    # each generic strip's bottom is a unit segment of a diamond side; a point just above it belongs to it
    t = canonical
    for j in range(3, t.n_strips + 1):
        b = t.bottom(j)
        mid = 0.5 * (b.left + b.right) + 1e-6j
        kind, index, _, _ = t.classify(np.array([mid]))
        assert kind[0] == STRIP and index[0] == j, j


def test_locate_reports_boundaries(canonical):
    assert canonical.locate(-3.0).variant == "boundary"
    assert canonical.locate(0.2 + 0.1j).variant == "disk"
    assert canonical.locate(-5.0).variant == "diamond"
    assert str(canonical.locate(-5.0 + 0.5j)) == "Diamond(2)"
    assert canonical.locate(5 - 3j).mirrored


def test_json_roundtrip(canonical):
    doc = json.loads(canonical.to_json())
    assert doc["diameters"] == [2, 4, 2, 8]
    assert doc["strip_count"] == 18
    assert doc["vertices"] == [-1.0, -3.0, -7.0, -9.0, -17.0]
    assert len(doc["rails"]) == 19


def test_huge_diameters_do_not_allocate():
    t = Tiling((2, 2 ** 200))
    assert t.n_strips == 4 + 2 ** 200
    assert Tiling((2, 2 ** 40)).classify(np.array([-1e6 + 0.5j]))[0][0] == DIAMOND
    # near the right vertex of a huge diamond, float coordinates are still exact
    kind, index, _, _ = t.classify(np.array([-3.5 + 0.25j]))
    assert kind[0] == DIAMOND and index[0] == 2
