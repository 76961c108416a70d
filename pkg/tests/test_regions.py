import math

import numpy as np
import pytest

from trailer_mpc import (RegionGrid, fit_inner_polytope, make_axes, merge,
                         sensing_region, stability_sweep)
from trailer_mpc.exceptions import EmptyRegion
from trailer_mpc.mpc import MpcConfig


def test_make_axes():
    b3, b2 = make_axes(5.0)
    assert len(b3) == 37 and len(b2) == 37
    assert b3[0] == pytest.approx(-math.pi / 2.0)
    assert b3[18] == 0.0
    assert np.allclose(np.diff(b3), math.radians(5.0))


def test_sensing_region_origin_and_symmetry(params):
    b3, b2 = make_axes(5.0)
    grid = sensing_region(params, b3, b2)
    i0 = 18
    assert grid.visible[i0, i0]          # aligned chain is visible
    assert not grid.visible[i0, -1]      # beta2 near +pi/2: front leaves the cone
    assert np.array_equal(grid.visible, grid.visible[::-1, ::-1])


def test_sensing_region_narrow_fov_shrinks(params):
    b3, b2 = make_axes(10.0)
    wide = sensing_region(params, b3, b2)
    import dataclasses
    narrow_params = dataclasses.replace(params, phi=math.radians(60.0))
    narrow = sensing_region(narrow_params, b3, b2)
    assert narrow.visible.sum() < wide.visible.sum()
    assert np.all(wide.visible[narrow.visible])  # narrow is a subset


def test_stability_sweep_small_grid(params):
    axis = np.radians(np.arange(-60.0, 61.0, 30.0))
    grid = stability_sweep(params, MpcConfig(), axis, axis.copy(),
                           distance=100.0)
    mid = len(axis) // 2
    assert grid.stable[mid, mid]                       # origin is stable
    assert np.array_equal(grid.stable, grid.stable[::-1, ::-1])
    assert grid.stable.sum() < grid.stable.size        # the region is bounded


def test_merge_requires_matching_axes(params):
    b3a, b2a = make_axes(10.0)
    b3b, b2b = make_axes(5.0)
    ga = sensing_region(params, b3a, b2a)
    gb = sensing_region(params, b3b, b2b)
    with pytest.raises(ValueError):
        merge(ga, gb)


def _disc_grid(radius=0.5, spacing_deg=5.0):
    b3, b2 = make_axes(spacing_deg)
    B3, B2 = np.meshgrid(b3, b2, indexing="ij")
    good = B3 ** 2 + B2 ** 2 <= radius ** 2
    return RegionGrid(b3, b2, good.copy(), good.copy())


def test_fit_inner_polytope_inside_disc():
    grid = _disc_grid(0.5)
    poly = fit_inner_polytope(grid, margin=0.05)
    assert poly.m == 8
    # every grid cell inside the polytope must be Stable and Visible
    B3, B2 = np.meshgrid(grid.beta3_axis, grid.beta2_axis, indexing="ij")
    inside = poly.contains(B3.ravel(), B2.ravel())
    good = (grid.stable & grid.visible).ravel()
    assert np.all(good[inside])
    assert poly.contains(0.0, 0.0)
    # supports never exceed the disc radius
    assert np.all(poly.h <= 0.5)


def test_fit_inner_polytope_empty_on_large_margin():
    grid = _disc_grid(0.3)
    with pytest.raises(EmptyRegion):
        fit_inner_polytope(grid, margin=2.0)


def test_fit_inner_polytope_requires_origin():
    b3, b2 = make_axes(10.0)
    B3, B2 = np.meshgrid(b3, b2, indexing="ij")
    good = (B3 - 1.0) ** 2 + B2 ** 2 <= 0.09  # off-center blob
    grid = RegionGrid(b3, b2, good.copy(), good.copy())
    with pytest.raises(EmptyRegion):
        fit_inner_polytope(grid, margin=0.05)


def test_region_grid_csv_round_trip(tmp_path, params):
    b3, b2 = make_axes(15.0)
    grid = sensing_region(params, b3, b2)
    grid.stable[3, 4] = True
    f = tmp_path / "grid.csv"
    grid.write_csv(f)
    back = RegionGrid.read_csv(f)
    assert np.allclose(back.beta3_axis, grid.beta3_axis)
    assert np.array_equal(back.visible, grid.visible)
    assert np.array_equal(back.stable, grid.stable)
