"""Kinematic model of the general 2-trailer with a car-like tractor.

State: semitrailer axle pose (x3, y3, theta3) plus the two joint angles
beta3 (semitrailer-dolly) and beta2 (dolly-tractor).  Controls: tractor
curvature u and direction v in {-1, +1} (speed is normalized away by
time scaling).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidState, SingularConfiguration

# C1 values at or below this are treated as singular.
SINGULAR_TOL = 1e-6

_HALF_PI = math.pi / 2.0


@dataclass
class VehicleState:
    x3: float
    y3: float
    theta3: float
    beta3: float
    beta2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x3, self.y3, self.theta3, self.beta3, self.beta2])

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]), float(arr[3]), float(arr[4]))


@dataclass(frozen=True)
class ControlInput:
    u: float
    v: float  # -1.0 or +1.0

    def __post_init__(self):
        if self.v not in (-1.0, 1.0, -1, 1):
            raise ValueError("direction v must be -1 or +1")


@dataclass(frozen=True)
class SegmentPoses:
    """Planar poses (x, y, heading) of all three vehicle segments."""

    tractor: tuple
    dolly: tuple
    semitrailer: tuple


def speed_ratio(params, beta2, beta3, u):
    """Ratio v3/v between semitrailer-axle speed and tractor rear-axle speed.

    Equals cos(beta3) * (cos(beta2) + M1 * sin(beta2) * u).  Zero means the
    kinematic chain is singular (semitrailer axle does not move).
    """
    return math.cos(beta3) * (math.cos(beta2) + params.M1 * math.sin(beta2) * u)


def _derivatives_checked(params, x, inp_u, inp_v):
    theta3, beta3, beta2 = x[2], x[3], x[4]
    if abs(beta3) >= _HALF_PI:
        raise InvalidState(f"|beta3| = {abs(beta3):.4f} >= pi/2")
    c1 = speed_ratio(params, beta2, beta3, inp_u)
    if c1 <= SINGULAR_TOL:
        raise SingularConfiguration(f"C1 = {c1:.3e} <= {SINGULAR_TOL}")
    v3 = inp_v * c1
    sb2, cb2 = math.sin(beta2), math.cos(beta2)
    tb3 = math.tan(beta3)
    dx3 = v3 * math.cos(theta3)
    dy3 = v3 * math.sin(theta3)
    dtheta3 = v3 * tb3 / params.L3
    dbeta3 = v3 * ((sb2 - params.M1 * cb2 * inp_u) / (params.L2 * c1) - tb3 / params.L3)
    dbeta2 = v3 * (inp_u - sb2 / params.L2 + params.M1 / params.L2 * cb2 * inp_u) / c1
    return (dx3, dy3, dtheta3, dbeta3, dbeta2)


def derivatives(params, state: VehicleState, inp: ControlInput) -> np.ndarray:
    """Time derivatives of the full state for curvature u and direction v.

    Raises InvalidState if |beta3| >= pi/2 and SingularConfiguration if the
    speed ratio C1 is not strictly positive.
    """
    x = (state.x3, state.y3, state.theta3, state.beta3, state.beta2)
    return np.array(_derivatives_checked(params, x, inp.u, float(inp.v)))


def derivatives_batch(params, x, u, v):
    """Vectorized time derivatives.

    ``x`` has shape (5, K); ``u`` is scalar or shape (K,).  No singularity
    guard: the caller is expected to mask out singular columns.  Returns an
    array of shape (5, K) together with the C1 values.
    """
    theta3, beta3, beta2 = x[2], x[3], x[4]
    sb2, cb2 = np.sin(beta2), np.cos(beta2)
    c1 = np.cos(beta3) * (cb2 + params.M1 * sb2 * u)
    v3 = v * c1
    tb3 = np.tan(beta3)
    out = np.empty_like(x)
    out[0] = v3 * np.cos(theta3)
    out[1] = v3 * np.sin(theta3)
    out[2] = v3 * tb3 / params.L3
    # v3 / (L2 * c1) = v / L2 exactly; written out to mirror the scalar path
    out[3] = v * (sb2 - params.M1 * cb2 * u) / params.L2 - out[2]
    out[4] = v * (u - sb2 / params.L2 + params.M1 / params.L2 * cb2 * u)
    return out, c1


def integrate_step(params, state: VehicleState, inp: ControlInput, dt, substeps=1) -> VehicleState:
    """Propagate the state over dt with fixed-step RK4 under constant input."""
    if dt < 0.0:
        raise ValueError("dt must be non-negative")
    if dt == 0.0:
        return VehicleState(state.x3, state.y3, state.theta3, state.beta3, state.beta2)
    u, v = inp.u, float(inp.v)
    h = dt / substeps
    x = [state.x3, state.y3, state.theta3, state.beta3, state.beta2]
    for _ in range(substeps):
        k1 = _derivatives_checked(params, x, u, v)
        x2 = [x[i] + 0.5 * h * k1[i] for i in range(5)]
        k2 = _derivatives_checked(params, x2, u, v)
        x3 = [x[i] + 0.5 * h * k2[i] for i in range(5)]
        k3 = _derivatives_checked(params, x3, u, v)
        x4 = [x[i] + h * k3[i] for i in range(5)]
        k4 = _derivatives_checked(params, x4, u, v)
        x = [x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(5)]
    return VehicleState(*x)


def segment_poses(params, state: VehicleState) -> SegmentPoses:
    """Poses of semitrailer, dolly and tractor from the holonomic chain.

    The dolly axle carries the semitrailer kingpin (on-axle hitch) and sits
    L3 ahead of the semitrailer axle along theta3.  The tractor's hitch
    point sits L2 ahead of the dolly axle along theta2 and M1 behind the
    tractor's rear axle along theta1.
    """
    theta2 = state.theta3 + state.beta3
    theta1 = theta2 + state.beta2
    x2 = state.x3 + params.L3 * math.cos(state.theta3)
    y2 = state.y3 + params.L3 * math.sin(state.theta3)
    xh = x2 + params.L2 * math.cos(theta2)
    yh = y2 + params.L2 * math.sin(theta2)
    x1 = xh + params.M1 * math.cos(theta1)
    y1 = yh + params.M1 * math.sin(theta1)
    return SegmentPoses(
        tractor=(x1, y1, theta1),
        dolly=(x2, y2, theta2),
        semitrailer=(state.x3, state.y3, state.theta3),
    )


def hitch_point(params, state: VehicleState):
    """Position of the tractor's off-axle hitch and the tractor heading."""
    theta2 = state.theta3 + state.beta3
    theta1 = theta2 + state.beta2
    x2 = state.x3 + params.L3 * math.cos(state.theta3)
    y2 = state.y3 + params.L3 * math.sin(state.theta3)
    return (x2 + params.L2 * math.cos(theta2), y2 + params.L2 * math.sin(theta2), theta1)
