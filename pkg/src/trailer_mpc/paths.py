"""Nominal paths: generation, serialization and station queries.

A nominal path is an arc-length-sampled sequence of full vehicle states plus
the nominal tractor curvature, satisfying dx/ds = dir * f(x, u) where s is
the distance traveled by the semitrailer axle and dir in {-1, +1} is the
motion direction (backward paths have dir = -1 while s still increases along
the direction of travel).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .exceptions import InfeasiblePath, OutOfDomain, ProjectionLost
from .model import VehicleState

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class PathSample:
    s: float
    x3r: float
    y3r: float
    theta3r: float
    beta3r: float
    beta2r: float
    ur: float
    v3r_sign: float
    kappa3r: float

    def state(self) -> VehicleState:
        return VehicleState(self.x3r, self.y3r, self.theta3r, self.beta3r, self.beta2r)


@dataclass
class NominalPath:
    """Uniformly sampled nominal path. Immutable after construction."""

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta3: np.ndarray
    beta3: np.ndarray
    beta2: np.ndarray
    u: np.ndarray
    kappa3: np.ndarray
    direction: float
    delta_s: float
    s_end_true: float = field(default=None)  # end of real path data, before any extension

    def __post_init__(self):
        if self.s_end_true is None:
            self.s_end_true = float(self.s[-1])

    @property
    def s_end(self) -> float:
        return float(self.s[-1])

    def __len__(self):
        return len(self.s)

    def sample(self, i) -> PathSample:
        return PathSample(
            float(self.s[i]), float(self.x[i]), float(self.y[i]), float(self.theta3[i]),
            float(self.beta3[i]), float(self.beta2[i]), float(self.u[i]),
            self.direction, float(self.kappa3[i]),
        )

    def fields_at(self, s):
        """Linear interpolation of (x, y, theta3, beta3, beta2, u, kappa3) at stations s.

        Accepts a scalar or an array; raises OutOfDomain outside [0, s_end].
        """
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr < -1e-9) or np.any(s_arr > self.s_end + 1e-9):
            raise OutOfDomain(f"station outside [0, {self.s_end:.3f}]")
        pos = np.clip(s_arr / self.delta_s, 0.0, len(self.s) - 1.0)
        i = np.minimum(pos.astype(int), len(self.s) - 2)
        t = pos - i
        out = []
        for arr in (self.x, self.y, self.theta3, self.beta3, self.beta2, self.u, self.kappa3):
            out.append((1.0 - t) * arr[i] + t * arr[i + 1])
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["s", "x3r", "y3r", "theta3r", "beta3r", "beta2r",
                             "ur", "v3r_sign", "kappa3r"])
            for i in range(len(self.s)):
                writer.writerow([repr(float(v)) for v in (
                    self.s[i], self.x[i], self.y[i], self.theta3[i], self.beta3[i],
                    self.beta2[i], self.u[i], self.direction, self.kappa3[i])])

    @classmethod
    def read_csv(cls, path) -> "NominalPath":
        data = np.genfromtxt(path, delimiter=",", names=True)
        data = np.atleast_1d(data)
        s = data["s"]
        if len(s) < 2:
            raise InfeasiblePath("path CSV must contain at least two samples")
        delta_s = float(s[1] - s[0])
        if not np.allclose(np.diff(s), delta_s, atol=1e-9):
            raise InfeasiblePath("path CSV must be uniformly sampled in s")
        return cls(
            s=np.asarray(s, dtype=float),
            x=np.asarray(data["x3r"], dtype=float),
            y=np.asarray(data["y3r"], dtype=float),
            theta3=np.asarray(data["theta3r"], dtype=float),
            beta3=np.asarray(data["beta3r"], dtype=float),
            beta2=np.asarray(data["beta2r"], dtype=float),
            u=np.asarray(data["ur"], dtype=float),
            kappa3=np.asarray(data["kappa3r"], dtype=float),
            direction=float(data["v3r_sign"][0]),
            delta_s=delta_s,
        )


def interpolate(path: NominalPath, s) -> PathSample:
    """PathSample at station s by linear interpolation (angles stored unwrapped)."""
    x, y, th, b3, b2, u, k3 = path.fields_at(float(s))
    return PathSample(float(s), float(x), float(y), float(th), float(b3), float(b2),
                      float(u), path.direction, float(k3))


def unit_flow(params, state5, u):
    """Per-unit-v3 flow f(x, u): dx/ds for a forward path with unit direction."""
    theta3, beta3, beta2 = state5[2], state5[3], state5[4]
    sb2, cb2 = math.sin(beta2), math.cos(beta2)
    tb3 = math.tan(beta3)
    c1 = math.cos(beta3) * (cb2 + params.M1 * sb2 * u)
    return np.array([
        math.cos(theta3),
        math.sin(theta3),
        tb3 / params.L3,
        (sb2 - params.M1 * cb2 * u) / (params.L2 * c1) - tb3 / params.L3,
        (u - sb2 / params.L2 + params.M1 / params.L2 * cb2 * u) / c1,
    ])


def eq_residuals(params, path: NominalPath) -> np.ndarray:
    """Per-interval residual of x_{k+1} - x_k - delta_s * dir * f(x_k, u_k)."""
    n = len(path)
    res = np.empty(n - 1)
    for k in range(n - 1):
        xk = np.array([path.x[k], path.y[k], path.theta3[k], path.beta3[k], path.beta2[k]])
        xk1 = np.array([path.x[k + 1], path.y[k + 1], path.theta3[k + 1],
                        path.beta3[k + 1], path.beta2[k + 1]])
        f = unit_flow(params, xk, float(path.u[k]))
        res[k] = np.linalg.norm(xk1 - xk - path.delta_s * path.direction * f)
    return res


def generate_straight(length, direction, delta_s=0.2) -> NominalPath:
    """Straight path along the x-axis with all angles and curvatures zero."""
    if length <= 0.0:
        raise ValueError("length must be positive")
    n = int(round(length / delta_s)) + 1
    s = np.arange(n) * delta_s
    zeros = np.zeros(n)
    return NominalPath(
        s=s, x=direction * s, y=zeros.copy(), theta3=zeros.copy(),
        beta3=zeros.copy(), beta2=zeros.copy(), u=zeros.copy(), kappa3=zeros.copy(),
        direction=float(direction), delta_s=float(delta_s),
    )


def _smoothstep_profile(breaks, levels):
    """Piecewise profile: constant levels joined by smoothstep ramps.

    ``breaks`` are segment boundaries s_0 < s_1 < ... ; segment i spans
    [s_i, s_{i+1}] and ramps from levels[i] to levels[i+1] (equal levels give
    a constant segment).  Returns (value_fn, slope_fn).
    """
    breaks = np.asarray(breaks, dtype=float)
    levels = np.asarray(levels, dtype=float)

    def value(s):
        i = min(max(np.searchsorted(breaks, s, side="right") - 1, 0), len(levels) - 2)
        a, b = levels[i], levels[i + 1]
        length = breaks[i + 1] - breaks[i]
        t = min(max((s - breaks[i]) / length, 0.0), 1.0)
        return a + (b - a) * t * t * (3.0 - 2.0 * t)

    def slope(s):
        i = min(max(np.searchsorted(breaks, s, side="right") - 1, 0), len(levels) - 2)
        a, b = levels[i], levels[i + 1]
        length = breaks[i + 1] - breaks[i]
        t = min(max((s - breaks[i]) / length, 0.0), 1.0)
        return (b - a) * 6.0 * t * (1.0 - t) / length

    return value, slope


def _tractor_curvature(params, beta3, beta2, w):
    """Solve the beta3 flow equation R1(beta2, u) = w for u in closed form."""
    sb2, cb2 = math.sin(beta2), math.cos(beta2)
    cb3 = math.cos(beta3)
    denom = params.M1 * (cb2 + w * params.L2 * cb3 * sb2)
    return (sb2 - w * params.L2 * cb3 * cb2) / denom


def generate_figure_eight(radius, direction, delta_s=0.2, blend_length=16.0,
                          lead=2.0, params=None) -> NominalPath:
    """Closed figure-eight nominal path with peak semitrailer curvature 1/radius.

    The semitrailer heading-rate profile g(s) is designed directly (two
    constant-curvature lobes of one full turn each, joined by smoothstep
    blends), beta3r follows in closed form from kappa3r = tan(beta3r)/L3, the
    tractor curvature is solved algebraically from the beta3 flow equation
    and beta2r is integrated; the result satisfies the path flow equation by
    construction.  Raises InfeasiblePath if the implied tractor curvature or
    curvature rate exceeds the actuator limits.
    """
    if params is None:
        from .params import VehicleParams
        params = VehicleParams()
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    gm = 1.0 / radius
    hold = 2.0 * math.pi * radius - blend_length
    if hold <= 0.0:
        raise InfeasiblePath("radius too small for the requested blend length")
    breaks = np.cumsum([0.0, lead, blend_length, hold, 2.0 * blend_length, hold,
                        blend_length, lead])
    levels = np.array([0.0, 0.0, gm, gm, -gm, -gm, 0.0, 0.0])
    g_of, gs_of = _smoothstep_profile(breaks, levels)
    total = float(breaks[-1])

    vbar = -1.0  # internal joint dynamics are stable when built in this direction
    L2, L3, M1 = params.L2, params.L3, params.M1

    def beta3_of(s):
        return math.atan(L3 * vbar * g_of(s))

    def w_of(s):
        g = g_of(s)
        return L3 * gs_of(s) / (1.0 + (L3 * g) ** 2) + vbar * g

    def rhs(s, state):
        x, y, th, b2 = state
        b3 = beta3_of(s)
        u = _tractor_curvature(params, b3, b2, w_of(s))
        sb2, cb2 = math.sin(b2), math.cos(b2)
        c1 = math.cos(b3) * (cb2 + M1 * sb2 * u)
        db2 = vbar * (u - sb2 / L2 + M1 / L2 * cb2 * u) / c1
        return (vbar * math.cos(th), vbar * math.sin(th), vbar * math.tan(b3) / L3, db2)

    n = int(round(total / delta_s)) + 1
    sub = 5  # RK4 substeps per sample interval
    h = delta_s / sub
    state = (0.0, 0.0, 0.0, 0.0)
    xs = np.zeros(n); ys = np.zeros(n); ths = np.zeros(n)
    b3s = np.zeros(n); b2s = np.zeros(n); us = np.zeros(n); k3s = np.zeros(n)
    s_cur = 0.0
    for k in range(n):
        b3s[k] = beta3_of(s_cur)
        k3s[k] = math.tan(b3s[k]) / L3
        b2s[k] = state[3]
        us[k] = _tractor_curvature(params, b3s[k], state[3], w_of(s_cur))
        xs[k], ys[k], ths[k] = state[0], state[1], state[2]
        if k == n - 1:
            break
        for _ in range(sub):
            k1 = rhs(s_cur, state)
            m2 = tuple(state[i] + 0.5 * h * k1[i] for i in range(4))
            k2 = rhs(s_cur + 0.5 * h, m2)
            m3 = tuple(state[i] + 0.5 * h * k2[i] for i in range(4))
            k3 = rhs(s_cur + 0.5 * h, m3)
            m4 = tuple(state[i] + h * k3[i] for i in range(4))
            k4 = rhs(s_cur + h, m4)
            state = tuple(state[i] + h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
                          for i in range(4))
            s_cur += h

    if np.max(np.abs(us)) > params.u_max:
        raise InfeasiblePath(
            f"implied tractor curvature {np.max(np.abs(us)):.3f} exceeds {params.u_max}")
    # nominal curvature rate must leave room for the controller's slew constraint
    du_ds = np.abs(np.diff(us)) / delta_s
    c1_nom = np.cos(b3s) * (np.cos(b2s) + M1 * np.sin(b2s) * us)
    c_max = params.udot_max / np.maximum(c1_nom[:-1], 1e-9)
    if np.any(du_ds > c_max):
        raise InfeasiblePath("implied nominal curvature rate exceeds the slew limit")

    path = NominalPath(
        s=np.arange(n) * delta_s, x=xs, y=ys, theta3=ths, beta3=b3s, beta2=b2s,
        u=us, kappa3=k3s, direction=vbar, delta_s=float(delta_s),
    )
    if direction == 1 or direction == 1.0:
        path = reverse_path(path)
    return path


def reverse_path(path: NominalPath) -> NominalPath:
    """Same geometry traversed in the opposite direction (sample order flipped)."""
    return NominalPath(
        s=path.s.copy(),
        x=path.x[::-1].copy(), y=path.y[::-1].copy(), theta3=path.theta3[::-1].copy(),
        beta3=path.beta3[::-1].copy(), beta2=path.beta2[::-1].copy(),
        u=path.u[::-1].copy(), kappa3=path.kappa3[::-1].copy(),
        direction=-path.direction, delta_s=path.delta_s,
        s_end_true=path.s_end_true,
    )


def equilibrium_joint(params, beta3):
    """Steady-cornering hitch angle and tractor curvature for a fixed beta3.

    At the returned (beta2, u) both joint-angle flow components vanish, so the
    chain traces a circle of semitrailer curvature tan(beta3)/L3 with all
    joint angles constant.
    """
    target = math.tan(beta3) / params.L3

    def resid(b2):
        u = math.sin(b2) / (params.L2 + params.M1 * math.cos(b2))
        c1 = math.cos(beta3) * (math.cos(b2) + params.M1 * math.sin(b2) * u)
        return (math.sin(b2) - params.M1 * math.cos(b2) * u) / (params.L2 * c1) - target

    hi = math.pi / 2.0 - 0.05
    b2 = brentq(resid, -hi, hi, xtol=1e-14)
    u = math.sin(b2) / (params.L2 + params.M1 * math.cos(b2))
    return b2, u


def extend_for_horizon(params, path: NominalPath, extra) -> NominalPath:
    """Append a constant-curvature tail past the end of the path.

    The tail continues the final semitrailer curvature as an exact circular
    arc (straight line when the path ends straight) with the steady-cornering
    joint angles and tractor curvature, so it is flow-consistent and — unlike
    integrating the open-loop flow, which is unstable for backward paths —
    never winds up the joint angles.  s_end_true still marks the end of the
    real path data.
    """
    n_extra = int(math.ceil(extra / path.delta_s))
    if n_extra <= 0:
        return path
    b3 = float(path.beta3[-1])
    kappa = math.tan(b3) / params.L3
    b2, u_eq = equilibrium_joint(params, b3)
    x0, y0, th0 = float(path.x[-1]), float(path.y[-1]), float(path.theta3[-1])
    ds = path.delta_s * path.direction * np.arange(1, n_extra + 1)
    th = th0 + kappa * ds
    if abs(kappa) > 1e-12:
        xs = x0 + (np.sin(th) - math.sin(th0)) / kappa
        ys = y0 - (np.cos(th) - math.cos(th0)) / kappa
    else:
        xs = x0 + np.cos(th0) * ds
        ys = y0 + np.sin(th0) * ds
    n_old = len(path)
    return NominalPath(
        s=np.arange(n_old + n_extra) * path.delta_s,
        x=np.concatenate([path.x, xs]),
        y=np.concatenate([path.y, ys]),
        theta3=np.concatenate([path.theta3, th]),
        beta3=np.concatenate([path.beta3, np.full(n_extra, b3)]),
        beta2=np.concatenate([path.beta2, np.full(n_extra, b2)]),
        u=np.concatenate([path.u, np.full(n_extra, u_eq)]),
        kappa3=np.concatenate([path.kappa3, np.full(n_extra, kappa)]),
        direction=path.direction, delta_s=path.delta_s,
        s_end_true=path.s_end_true,
    )


def project(path: NominalPath, p, s_prev, window=2.0, tol=1e-4) -> float:
    """Station of the local orthogonal projection of point p onto the path.

    Local search in [s_prev - window, s_prev + window] (coarse scan on the
    sample grid, then golden-section refinement); the returned station never
    decreases below s_prev.  Raises ProjectionLost when the squared distance
    keeps decreasing at the forward window edge, i.e. no local projection
    exists inside the window.
    """
    px, py = float(p[0]), float(p[1])
    lo = max(0.0, s_prev - window)
    hi = min(path.s_end, s_prev + window)
    if hi <= lo:
        raise ProjectionLost("projection window collapsed at the path end")

    grid = np.arange(math.floor(lo / path.delta_s), math.ceil(hi / path.delta_s) + 1)
    grid_s = np.clip(grid * path.delta_s, lo, hi)
    gx, gy = path.fields_at(grid_s)[:2]
    d2 = (gx - px) ** 2 + (gy - py) ** 2
    i_best = int(np.argmin(d2))
    if i_best == len(grid_s) - 1 and hi < path.s_end - 1e-9 and hi > s_prev + 1e-9:
        raise ProjectionLost("nearest point is at the forward edge of the search window")

    a = grid_s[max(i_best - 1, 0)]
    b = grid_s[min(i_best + 1, len(grid_s) - 1)]

    def dist2(s):
        x, y = path.fields_at(s)[:2]
        return (x - px) ** 2 + (y - py) ** 2

    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = dist2(c), dist2(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = dist2(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = dist2(d)
    s_star = 0.5 * (a + b)
    return max(float(s_star), float(s_prev))
