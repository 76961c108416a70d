import math

import numpy as np
import pytest

from trailer_mpc import NominalPath, eq_residuals, interpolate, project, reverse_path
from trailer_mpc.exceptions import InfeasiblePath, OutOfDomain, ProjectionLost
from trailer_mpc.paths import (extend_for_horizon, generate_figure_eight,
                               generate_straight)


def test_straight_path_fields(straight_back):
    path = straight_back
    assert path.direction == -1.0
    assert len(path) == 601
    assert path.s_end == pytest.approx(120.0)
    assert np.allclose(path.x, -path.s)  # backward: x decreases as s grows
    assert np.all(path.u == 0.0) and np.all(path.kappa3 == 0.0)
    assert np.all(path.beta3 == 0.0) and np.all(path.beta2 == 0.0)


def test_straight_path_flow_residual_zero(params, straight_back):
    assert np.max(eq_residuals(params, straight_back)) < 1e-13


def test_straight_rejects_nonpositive_length():
    with pytest.raises(ValueError):
        generate_straight(0.0, -1.0)


def test_eight_flow_residual(params, eight_back):
    # RK4-generated samples checked against the Euler flow step: the residual
    # floor is the local truncation term delta_s^2 * kappa_max / 2 = 1.0e-3
    res = eq_residuals(params, eight_back)
    assert np.max(res) < 1.5e-3


def test_eight_peak_curvature_and_limits(params, eight_back):
    path = eight_back
    assert np.max(np.abs(path.kappa3)) == pytest.approx(1.0 / 20.0, rel=1e-9)
    assert np.max(np.abs(path.u)) <= params.u_max
    # both lobes present: curvature attains both signs
    assert path.kappa3.min() < -0.04 and path.kappa3.max() > 0.04


def test_eight_heading_returns(eight_back):
    # one full turn per lobe in opposite senses: the net heading change is zero
    path = eight_back
    assert abs(path.theta3[-1] - path.theta3[0]) < 1e-6
    assert path.theta3.max() > 2.0 * math.pi - 0.3  # the first lobe turns fully


def test_eight_infeasible_small_radius(params):
    # 2*pi*R below the blend length: no room for the constant-curvature hold
    with pytest.raises(InfeasiblePath):
        generate_figure_eight(2.0, -1.0, 0.2, params=params)
    with pytest.raises(ValueError):
        generate_figure_eight(-1.0, -1.0, 0.2, params=params)


def test_eight_infeasible_tight_radius(params):
    # a feasible-geometry radius whose implied tractor curvature exceeds u_max
    with pytest.raises(InfeasiblePath):
        generate_figure_eight(5.0, -1.0, 0.2, params=params)


def test_csv_round_trip(tmp_path, eight_back):
    f = tmp_path / "path.csv"
    eight_back.write_csv(f)
    back = NominalPath.read_csv(f)
    for name in ("s", "x", "y", "theta3", "beta3", "beta2", "u", "kappa3"):
        assert np.array_equal(getattr(back, name), getattr(eight_back, name))
    assert back.direction == eight_back.direction
    assert back.delta_s == eight_back.delta_s


def test_interpolate_linear_between_samples(straight_back):
    s = 1.7
    ref = interpolate(straight_back, s)
    assert ref.x3r == pytest.approx(-1.7)
    assert ref.y3r == 0.0
    assert ref.v3r_sign == -1.0


def test_fields_at_out_of_domain(straight_back):
    with pytest.raises(OutOfDomain):
        straight_back.fields_at(-0.5)
    with pytest.raises(OutOfDomain):
        straight_back.fields_at(120.5)


def test_project_straight(straight_back):
    s = project(straight_back, (-3.0, 0.4), s_prev=2.8)
    assert s == pytest.approx(3.0, abs=1e-3)


def test_project_never_decreases(straight_back):
    s = project(straight_back, (-1.0, 0.0), s_prev=1.5)
    assert s >= 1.5


def test_project_lost_outside_window(straight_back):
    with pytest.raises(ProjectionLost):
        project(straight_back, (-30.0, 0.0), s_prev=2.0, window=2.0)


def test_reverse_path_involution(eight_back):
    back = reverse_path(reverse_path(eight_back))
    assert np.allclose(back.x, eight_back.x)
    assert np.allclose(back.u, eight_back.u)
    assert back.direction == eight_back.direction
    fwd = reverse_path(eight_back)
    assert fwd.direction == 1.0
    assert fwd.x[0] == pytest.approx(eight_back.x[-1])


def test_extend_for_horizon(params, straight_back):
    ext = extend_for_horizon(params, straight_back, 10.0)
    assert ext.s_end_true == straight_back.s_end
    assert ext.s_end >= straight_back.s_end + 10.0 - 1e-9
    assert np.max(eq_residuals(params, ext)) < 1e-10  # straight stays exact


def test_read_csv_rejects_nonuniform(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("s,x3r,y3r,theta3r,beta3r,beta2r,ur,v3r_sign,kappa3r\n"
                 "0.0,0,0,0,0,0,0,-1.0,0\n"
                 "0.2,0,0,0,0,0,0,-1.0,0\n"
                 "0.5,0,0,0,0,0,0,-1.0,0\n")
    with pytest.raises(InfeasiblePath):
        NominalPath.read_csv(f)
