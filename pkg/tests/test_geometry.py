import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fibrve.geometry import (
    HEX_PACKING_LIMIT,
    Domain,
    Fiber,
    Microstructure,
    center_distance,
    fiber_area_in_window,
    hexagonal_gap,
    min_gap_pair,
    rotate90,
    scale,
    select_window,
    surface_gap,
    translate,
    validate,
    volume_fraction,
)
from fibrve.generate import hexagonal_lattice

from conftest import random_disks


def test_fiber_and_domain_validation():
    with pytest.raises(ValueError):
        Fiber(0, 0, 0)
    with pytest.raises(ValueError):
        Fiber(math.nan, 0, 1)
    with pytest.raises(ValueError):
        Domain(0, 1)
    with pytest.raises(ValueError):
        Microstructure(Domain(1, 1), np.zeros((2, 2)), np.ones(3))


def test_periodic_centers_are_wrapped_and_readonly():
    ms = Microstructure(Domain(2, 3), [[-0.5, 3.5], [2.0, -1e-18]], [0.1, 0.1])
    assert np.allclose(ms.centers, [[1.5, 0.5], [0.0, 0.0]])
    assert np.all(ms.centers < [2, 3])
    with pytest.raises(ValueError):
        ms.centers[0, 0] = 1.0


def test_minimum_image_distance_across_boundary():
    d = Domain(10, 10)
    a, b = Fiber(0.5, 5, 0.2), Fiber(9.5, 5, 0.2)
    assert center_distance(a, b, d) == pytest.approx(1.0)
    assert surface_gap(a, b, d) == pytest.approx(0.6)
    nd = Domain(10, 10, periodic=False)
    assert center_distance(a, b, nd) == pytest.approx(9.0)


def test_min_gap_pair_matches_brute_force():
    ms = random_disks(60, seed=3)
    g, pair = min_gap_pair(ms)
    best = math.inf
    for i in range(ms.n):
        for j in range(i + 1, ms.n):
            best = min(best, surface_gap(ms.fibers[i], ms.fibers[j], ms.domain))
    assert g == pytest.approx(best, abs=1e-12)
    assert surface_gap(ms.fibers[pair[0]], ms.fibers[pair[1]], ms.domain) == pytest.approx(g, abs=1e-12)


def test_validate_reports_overlap_and_window():
    ms = Microstructure(Domain(10, 10), [[1, 1], [1.3, 1]], [0.2, 0.2])
    rep = validate(ms)
    assert not rep.ok
    assert rep.worst_pair == (0, 1)
    assert rep.min_surface_gap == pytest.approx(-0.1)
    assert validate(random_disks(30)).ok


def _area_oracle(ms, res=2000):
    """Midpoint-rule fiber area inside the window on a fine raster."""
    xs = (np.arange(res) + 0.5) / res * ms.domain.lx
    ys = (np.arange(res) + 0.5) / res * ms.domain.ly
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    inside = np.zeros_like(X, dtype=bool)
    for (cx, cy), r in zip(ms.centers, ms.radii):
        inside |= (X - cx) ** 2 + (Y - cy) ** 2 <= r * r
    return inside.mean() * ms.domain.area


def test_cropped_area_matches_raster_oracle():
    c = [[0.0, 0.0], [1.0, 2.5], [4.9, 1.0], [2.5, 2.5], [5.5, 3.0]]
    ms = Microstructure(Domain(5, 5, periodic=False), c, [0.7, 0.4, 0.3, 0.5, 0.8])
    assert fiber_area_in_window(ms) == pytest.approx(_area_oracle(ms), rel=2e-3)
    # a full circle and a quarter circle, exactly
    ms2 = Microstructure(Domain(4, 4, periodic=False), [[2, 2], [0, 0]], [1.0, 1.0])
    assert fiber_area_in_window(ms2) == pytest.approx(1.25 * math.pi, rel=1e-12)


def test_hexagonal_gap_and_limit():
    # closed form sqrt(2 pi / (sqrt(3) vf)) - 2 at vf = 0.65
    assert hexagonal_gap(0.65) == pytest.approx(0.3623973249, abs=1e-9)
    assert hexagonal_gap(HEX_PACKING_LIMIT) == pytest.approx(0.0, abs=1e-12)
    ms = hexagonal_lattice(0.65, n_cells_x=4)
    assert volume_fraction(ms) == pytest.approx(0.65, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    dx=st.floats(-20, 20, allow_nan=False),
    dy=st.floats(-20, 20, allow_nan=False),
    s=st.floats(0.1, 10),
    seed=st.integers(0, 1000),
)
def test_invariants_under_rigid_motion_and_scaling(dx, dy, s, seed):
    ms = random_disks(12, lx=6, ly=4, r=0.3, seed=seed)
    g0, _ = min_gap_pair(ms)
    vf0 = volume_fraction(ms)
    t = translate(ms, dx, dy)
    assert min_gap_pair(t)[0] == pytest.approx(g0, abs=1e-9)
    r = rotate90(ms)
    assert (r.domain.lx, r.domain.ly) == (4, 6)
    assert min_gap_pair(r)[0] == pytest.approx(g0, abs=1e-9)
    sc = scale(ms, s)
    assert min_gap_pair(sc)[0] == pytest.approx(s * g0, rel=1e-9, abs=1e-12)
    assert volume_fraction(sc) == pytest.approx(vf0, rel=1e-12)


def test_select_window_never_worse_and_keeps_geometry():
    ms = random_disks(40, seed=5)
    from fibrve.geometry import boundary_clearance

    out = select_window(ms, n_candidates=200, rng=1)
    assert out.meta["boundary_clearance"] >= boundary_clearance(ms.centers, ms.radii, ms.domain)
    assert min_gap_pair(out)[0] == pytest.approx(min_gap_pair(ms)[0], abs=1e-9)
    with pytest.raises(ValueError):
        select_window(Microstructure(Domain(1, 1, False), [[0.5, 0.5]], [0.1]))
