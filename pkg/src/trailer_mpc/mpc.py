"""Receding-horizon path-following controller (and the saturated-LQ baseline).

Each control cycle the 4-state path error is measured, the error dynamics are
linearized along the prediction horizon, predicted states are condensed out,
and a dense QP over (curvature deviations, joint-angle slack variables) is
solved.  Curvature box and slew-rate rows are hard; the joint-angle polytope
rows are softened with linearly+quadratically penalized slacks.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .error_model import PathError, compute_error, linearize
from .exceptions import (NominalOutsidePolytope, PathExhausted, RiccatiDiverged,
                         SingularConfiguration)
from .model import SINGULAR_TOL, VehicleState, speed_ratio
from .paths import NominalPath, PathSample, extend_for_horizon, interpolate
from .qp import DenseQpSolver, PreparedQp, QpStatus


@dataclass
class MpcConfig:
    """Controller design parameters (defaults match the test vehicle setup)."""

    horizon: int = 50          # prediction steps N
    delta_s: float = 0.2       # prediction grid spacing (m)
    f_s: float = 20.0          # control rate (Hz)
    qbar: np.ndarray = field(default_factory=lambda: np.array(
        [0.5, 1.0, 0.5, 1.0, 4.0, 0.5, 1.0, 4.0]) / 35.0)
    slack_linear: float = 1e3   # linear slack penalty (exact-penalty term)
    slack_quad: float = 1e4     # quadratic slack penalty
    u_max: float = 0.18         # curvature bound (1/m)
    udot_max: float = 0.13      # curvature rate bound (1/(m s))

    def __post_init__(self):
        self.qbar = np.asarray(self.qbar, dtype=float)
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if len(self.qbar) != 8 or np.any(self.qbar < 0.0):
            raise ValueError("qbar must be 8 nonnegative weights")


@dataclass
class JointAnglePolytope:
    """Convex polytope H (beta3, beta2)' <= h of admissible joint angles."""

    H: np.ndarray  # (m, 2)
    h: np.ndarray  # (m,)

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.h = np.asarray(self.h, dtype=float)
        if self.H.shape[1] != 2 or len(self.h) != self.H.shape[0]:
            raise ValueError("H must be (m, 2) with matching h")
        if np.any(self.h <= 0.0):
            raise ValueError("polytope must contain the origin strictly (h > 0)")

    @property
    def m(self) -> int:
        return self.H.shape[0]

    def contains(self, beta3, beta2, slack=0.0):
        b3 = np.asarray(beta3, dtype=float)
        b2 = np.asarray(beta2, dtype=float)
        vals = (np.multiply.outer(self.H[:, 0], b3) +
                np.multiply.outer(self.H[:, 1], b2))
        bound = (self.h + slack).reshape((-1,) + (1,) * b3.ndim)
        return np.all(vals <= bound, axis=0)

    @classmethod
    def box(cls, beta3_max, beta2_max) -> "JointAnglePolytope":
        H = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        return cls(H, np.array([beta3_max, beta3_max, beta2_max, beta2_max]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["H_beta3", "H_beta2", "h"])
            for i in range(self.m):
                writer.writerow([repr(float(self.H[i, 0])), repr(float(self.H[i, 1])),
                                 repr(float(self.h[i]))])

    @classmethod
    def read_csv(cls, path) -> "JointAnglePolytope":
        data = np.atleast_1d(np.genfromtxt(path, delimiter=",", names=True))
        return cls(np.column_stack([data["H_beta3"], data["H_beta2"]]),
                   np.asarray(data["h"], dtype=float))


# Symmetric octagon fitted (with 0.05 rad margin) inside the intersection of
# the simulated closed-loop stability region and the LIDAR sensing region for
# the default vehicle, computed by regions.fit_inner_polytope on a 2-degree
# joint-angle grid with a 150 m recovery budget.
_SQ2 = math.sqrt(2.0)
_DEFAULT_H = np.array([
    [1.0, 0.0], [-1.0, 0.0],
    [0.0, 1.0], [0.0, -1.0],
    [1.0 / _SQ2, 1.0 / _SQ2], [-1.0 / _SQ2, -1.0 / _SQ2],
    [1.0 / _SQ2, -1.0 / _SQ2], [-1.0 / _SQ2, 1.0 / _SQ2],
])
_DEFAULT_SUPPORT = np.array([0.7679, 0.7679, 0.6283, 0.6283,
                             0.8886, 0.8886, 0.4443, 0.4443])


def default_joint_polytope() -> JointAnglePolytope:
    return JointAnglePolytope(_DEFAULT_H.copy(), _DEFAULT_SUPPORT.copy())


def build_output_matrix(params) -> np.ndarray:
    """Jacobian lifting the 4 error states to the 8 weighted body outputs.

    Output order (tractor lateral/heading, dolly lateral/heading, hitch joint
    angle, semitrailer lateral/heading, semitrailer joint angle) against error
    state order (lateral offset, heading error, semitrailer joint error,
    hitch joint error).
    """
    L2, L3, M1 = params.L2, params.L3, params.M1
    return np.array([
        [1.0, L3 + L2 + M1, L2 + M1, M1],
        [0.0, 1.0, 1.0, 1.0],
        [1.0, L3, 0.0, 0.0],
        [0.0, 1.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
    ])


@dataclass(frozen=True)
class CostMatrices:
    Q: np.ndarray      # 4x4 stage cost (= M' diag(qbar) M)
    P: np.ndarray      # 4x4 terminal cost, Riccati solution
    M: np.ndarray      # 8x4 output matrix
    K: np.ndarray      # 4-vector LQ gain
    spectral_radius: float


def design_cost(params, cfg: MpcConfig, straight_model) -> CostMatrices:
    """Stage cost, Riccati terminal cost and LQ gain for the straight-path
    discretized model (F, G)."""
    M = build_output_matrix(params)
    Q = M.T @ np.diag(cfg.qbar) @ M
    Q = 0.5 * (Q + Q.T)
    F, G = straight_model.F, straight_model.G
    P = Q.copy()
    max_iter = 100000
    for _ in range(max_iter):
        PG = P @ G
        denom = 1.0 + G @ PG
        K = (PG @ F) / denom
        P_next = Q + F.T @ P @ F - np.outer(F.T @ PG, K)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)) or np.max(np.abs(P_next)) > 1e12:
            raise RiccatiDiverged("Riccati iteration diverged")
        if np.max(np.abs(P_next - P)) < 1e-13 * max(1.0, np.max(np.abs(P_next))):
            P = P_next
            break
        P = P_next
    else:
        raise RiccatiDiverged(f"no fixed point within {max_iter} iterations")
    PG = P @ G
    K = (PG @ F) / (1.0 + G @ PG)
    residual = np.max(np.abs(F.T @ P @ F - P - np.outer(F.T @ PG, K) + Q))
    if residual > 1e-9:
        raise RiccatiDiverged(f"Riccati residual {residual:.2e} > 1e-9")
    rho = float(np.max(np.abs(np.linalg.eigvals(F - np.outer(G, K)))))
    return CostMatrices(Q=Q, P=P, M=M, K=K, spectral_radius=rho)


def shift_joint_polytope(poly: JointAnglePolytope, sample: PathSample):
    """Polytope right-hand side recentered on the nominal joint angles."""
    hbar = poly.h - poly.H @ np.array([sample.beta3r, sample.beta2r])
    if np.any(hbar <= 0.0):
        raise NominalOutsidePolytope(
            f"nominal joint angles at s={sample.s:.2f} outside the polytope")
    return poly.H, hbar


def slew_bound(sample: PathSample, params, v_abs=1.0) -> float:
    """Curvature-rate bound per meter of semitrailer travel at this sample."""
    c1 = speed_ratio(params, sample.beta2r, sample.beta3r, sample.ur)
    if c1 <= SINGULAR_TOL:
        raise SingularConfiguration(f"nominal C1 = {c1:.3e} at s={sample.s:.2f}")
    return params.udot_max / (v_abs * c1)


@dataclass
class ControllerState:
    u_prev: float = None
    s_prev: float = 0.0
    warm_y: np.ndarray = None
    warm_lam: np.ndarray = None
    warm_base: int = None


@dataclass
class StepDiagnostics:
    s: float
    error: PathError
    u_cmd: float
    qp_status: str
    qp_objective: float
    qp_iterations: int
    primal_residual: float
    dual_residual: float
    comp_residual: float
    slack_max: float
    solve_time_ms: float
    fallback: bool


class _QpStructure:
    """Per-grid-base condensed QP pieces that survive across control cycles."""

    __slots__ = ("P", "A", "single_col", "_prep", "_prep_args", "W", "HsPhi",
                 "hbar", "l", "u", "ur0", "n_inputs", "n_slack", "row_slew0",
                 "soft_rows", "single_col_in")

    def __init__(self, P, A, prep_args, W, HsPhi, hbar, l, u, ur0, n_inputs,
                 n_slack, row_slew0, soft_rows):
        self.P = P
        self.A = A
        self._prep = None
        self._prep_args = prep_args
        self.W = W
        self.HsPhi = HsPhi
        self.hbar = hbar
        self.l = l
        self.u = u
        self.ur0 = ur0
        self.n_inputs = n_inputs
        self.n_slack = n_slack
        self.row_slew0 = row_slew0
        self.soft_rows = soft_rows
        from .qp import row_structure
        self.single_col = row_structure(A)
        self.single_col_in = row_structure(A[:2 * n_inputs, :n_inputs])

    @property
    def prep(self):
        """ADMM workspace, built on first use: scaling and factorizing the
        full problem is far more expensive than the active-set fast path."""
        if self._prep is None:
            self._prep = PreparedQp(self.P, self.A, **self._prep_args)
        return self._prep


class MpcController:
    """Closed-loop MPC: project, linearize along the horizon, condense, solve.

    The prediction grid is snapped to the path's sample grid so that the QP
    matrices (and the solver's scaling + factorization) are reused across the
    several control cycles spent between two grid stations.
    """

    def __init__(self, params, path: NominalPath, cfg: MpcConfig = None,
                 polytope: JointAnglePolytope = None, cost: CostMatrices = None,
                 use_polytope=True, solver: DenseQpSolver = None):
        from .error_model import analytic_straight_model

        self.params = params
        self.cfg = cfg or MpcConfig()
        if self.cfg.delta_s != path.delta_s:
            raise ValueError("prediction grid spacing must equal the path spacing")
        self.polytope = (polytope or default_joint_polytope()) if use_polytope else None
        self.cost = cost or design_cost(
            params, self.cfg, analytic_straight_model(params, path.direction,
                                                      self.cfg.delta_s))
        margin = 1.2 * self.cfg.horizon * self.cfg.delta_s
        self.path = extend_for_horizon(params, path, margin)
        if self.polytope is not None:
            # every nominal sample must sit strictly inside the polytope
            for i in range(len(self.path)):
                shift_joint_polytope(self.polytope, self.path.sample(i))
        self.solver = solver or DenseQpSolver(polish=False)
        self._station_models = {}
        self._structs = {}

    # -- building blocks -------------------------------------------------

    def _model_at(self, idx):
        model = self._station_models.get(idx)
        if model is None:
            model = linearize(self.params, self.path, idx * self.cfg.delta_s,
                              self.cfg.delta_s)
            self._station_models[idx] = model
        return model

    def _structure(self, base) -> _QpStructure:
        struct = self._structs.get(base)
        if struct is not None:
            return struct
        cfg, params = self.cfg, self.params
        N = cfg.horizon
        m_poly = self.polytope.m if self.polytope is not None else 0
        n = N + N * m_poly
        ds = cfg.delta_s

        F = np.empty((N, 4, 4))
        G = np.empty((N, 4))
        for k in range(N):
            mdl = self._model_at(base + k)
            F[k] = mdl.F
            G[k] = mdl.G
        # condensing: x_k = Phi[k-1] x0 + Gam[(k-1) block] u for k = 1..N
        Phi = np.empty((N, 4, 4))
        Gam = np.zeros((4 * N, N))
        acc = np.eye(4)
        for k in range(N):
            rows = slice(4 * k, 4 * k + 4)
            if k > 0:
                Gam[rows, :k] = F[k] @ Gam[4 * (k - 1):4 * k, :k]
            Gam[rows, k] = G[k]
            acc = F[k] @ acc
            Phi[k] = acc

        Qt = np.zeros((4 * N, 4 * N))
        for k in range(N - 1):
            Qt[4 * k:4 * k + 4, 4 * k:4 * k + 4] = self.cost.Q
        Qt[4 * (N - 1):, 4 * (N - 1):] = self.cost.P
        QG = Qt @ Gam
        P_uu = 2.0 * (Gam.T @ QG + np.eye(N))
        W = 2.0 * QG.T @ Phi.reshape(4 * N, 4)
        P_qp = np.zeros((n, n))
        P_qp[:N, :N] = 0.5 * (P_uu + P_uu.T)
        if m_poly:
            P_qp[N:, N:] = 2.0 * cfg.slack_quad * np.eye(N * m_poly)

        ur = np.array([self.path.u[base + k] for k in range(N + 1)])
        samples = [self.path.sample(base + k) for k in range(N + 1)]

        n_rows = 2 * N + 2 * N * m_poly
        A = np.zeros((n_rows, n))
        l = np.full(n_rows, -np.inf)
        u = np.full(n_rows, np.inf)
        # curvature box rows
        A[np.arange(N), np.arange(N)] = 1.0
        l[:N] = -cfg.u_max - ur[:N]
        u[:N] = cfg.u_max - ur[:N]
        # slew rows: row N is the per-cycle bound on the first command
        # (filled in per cycle from u_prev); rows N+1..2N-1 chain the
        # predicted inputs with the distance-based bound
        row_slew0 = N
        A[row_slew0, 0] = 1.0
        for k in range(1, N):
            A[N + k, k] = 1.0
            A[N + k, k - 1] = -1.0
            c_k = slew_bound(samples[k], params) * ds
            dur = ur[k] - ur[k - 1]
            l[N + k] = -dur - c_k
            u[N + k] = -dur + c_k
        # soft joint-angle rows (stages 1..N) and slack nonnegativity
        soft_rows = slice(2 * N, 2 * N + N * m_poly)
        HsPhi = np.zeros((N * m_poly, 4))
        hbar = np.zeros(N * m_poly)
        if m_poly:
            Hs = np.zeros((m_poly, 4))
            Hs[:, 2] = self.polytope.H[:, 0]
            Hs[:, 3] = self.polytope.H[:, 1]
            for k in range(1, N + 1):
                rows = slice(2 * N + (k - 1) * m_poly, 2 * N + k * m_poly)
                A[rows, :N] = Hs @ Gam[4 * (k - 1):4 * k, :]
                cols = slice(N + (k - 1) * m_poly, N + k * m_poly)
                A[rows, cols] = -np.eye(m_poly)
                HsPhi[(k - 1) * m_poly:k * m_poly] = Hs @ Phi[k - 1]
                _, hb = shift_joint_polytope(self.polytope, samples[k])
                hbar[(k - 1) * m_poly:k * m_poly] = hb
            pos = slice(2 * N + N * m_poly, n_rows)
            A[pos, N:] = np.eye(N * m_poly)
            l[pos] = 0.0

        prep_args = dict(tol=self.solver.tol, max_iter=self.solver.max_iter,
                         scaling_iters=5)
        struct = _QpStructure(P_qp, A, prep_args, W, HsPhi, hbar, l, u,
                              float(ur[0]), N, N * m_poly, row_slew0, soft_rows)
        self._structs[base] = struct
        if len(self._structs) > 4:
            self._structs.pop(next(iter(self._structs)))
        return struct

    # -- control cycle ----------------------------------------------------

    def step(self, state: VehicleState, ctrl: ControllerState):
        """One control cycle; returns (u_cmd, StepDiagnostics), mutates ctrl."""
        t0 = time.perf_counter()
        cfg = self.cfg
        s0, err = compute_error(state, self.path, ctrl.s_prev)
        ur_exact = float(interpolate(self.path, s0).ur)
        if ctrl.u_prev is None:
            ctrl.u_prev = min(max(ur_exact, -cfg.u_max), cfg.u_max)
        base = int(round(s0 / cfg.delta_s))
        if (base + cfg.horizon) * cfg.delta_s > self.path.s_end + 1e-9:
            raise PathExhausted(f"horizon from s={s0:.2f} leaves the path data")
        struct = self._structure(base)

        x0 = err.as_array()
        N, n_slack = struct.n_inputs, struct.n_slack
        q = np.concatenate([struct.W @ x0, np.full(n_slack, cfg.slack_linear)])
        l = struct.l.copy()
        u = struct.u.copy()
        delta_cycle = cfg.udot_max / cfg.f_s
        l[struct.row_slew0] = ctrl.u_prev - delta_cycle - struct.ur0
        u[struct.row_slew0] = ctrl.u_prev + delta_cycle - struct.ur0
        if n_slack:
            u[struct.soft_rows] = struct.hbar - struct.HsPhi @ x0

        y0, lam0 = self._shift_warm(ctrl, base, N, n_slack)
        sol = self._solve_qp(struct, q, l, u, y0, lam0)
        fallback = sol.status != QpStatus.OPTIMAL
        if fallback:
            u_cmd = ur_exact - float(self.cost.K @ x0)
        else:
            u_cmd = ur_exact + float(sol.y[0])
            ctrl.warm_y = sol.y
            ctrl.warm_lam = sol.duals
            ctrl.warm_base = base
        u_cmd = min(max(u_cmd, -cfg.u_max), cfg.u_max)
        u_cmd = min(max(u_cmd, ctrl.u_prev - delta_cycle), ctrl.u_prev + delta_cycle)

        slack_max = float(np.max(sol.y[N:], initial=0.0)) if (n_slack and not fallback) else 0.0
        diag = StepDiagnostics(
            s=s0, error=err, u_cmd=u_cmd, qp_status=sol.status,
            qp_objective=sol.objective, qp_iterations=sol.iterations,
            primal_residual=sol.primal_residual, dual_residual=sol.dual_residual,
            comp_residual=sol.comp_residual, slack_max=slack_max,
            solve_time_ms=(time.perf_counter() - t0) * 1e3, fallback=fallback,
        )
        ctrl.u_prev = u_cmd
        ctrl.s_prev = s0
        return u_cmd, diag

    def _solve_qp(self, struct, q, l, u, y0, lam0):
        """Warm-started primal active-set solve with an operator-splitting
        fallback.

        A feasible start is always available: clip the shifted previous input
        plan through the box/slew chain and set every slack to its violation.
        The rows tight at that point are a good guess of the optimal active
        set (exact after a couple of exchanges once the loop settles), so the
        primal method finishes in a few exact KKT solves per cycle.  On any
        failure the prepared ADMM solver (with polishing) takes over.
        """
        sol = self._solve_reduced(struct, q, l, u, y0, lam0)
        if sol is not None:
            return sol
        return struct.prep.solve(q, l, u, y0=y0, lam0=lam0, polish=True)

    def _solve_reduced(self, struct, q, l, u, y0, lam0):
        from .qp import (QpSolution, kkt_residuals, primal_active_set_solve,
                         soft_qp_solve)

        N, ns = struct.n_inputs, struct.n_slack
        tol = self.solver.tol
        A_in = struct.A[:2 * N, :N]
        l_in, u_in = l[:2 * N], u[:2 * N]
        ut = self._feasible_inputs(struct, l_in, u_in,
                                   y0[:N] if y0 is not None else None)
        if ut is None:
            return None
        Pu = struct.P[:N, :N]
        qu = q[:N]
        if ns == 0:
            res = primal_active_set_solve(Pu, qu, A_in, l_in, u_in, ut, tol,
                                          struct.single_col_in)
            if res is None:
                return None
            y, lam, (rp, rd, rc) = res
            obj = float(0.5 * y @ Pu @ y + qu @ y)
            return QpSolution(y, lam, QpStatus.OPTIMAL, 1, obj, rp, rd, rc)
        G = struct.A[struct.soft_rows, :N]
        b = u[struct.soft_rows]
        res = soft_qp_solve(Pu, qu, A_in, l_in, u_in, G, b, float(q[N]),
                            0.5 * float(struct.P[N, N]), ut, tol,
                            struct.single_col_in,
                            warm=getattr(self, "_warm_sets", None))
        if res is None:
            self._warm_sets = None
            return None
        x, eps, mu, lam_soft, nu, self._warm_sets = res
        y = np.concatenate([x, eps])
        lam = np.concatenate([mu, lam_soft, nu])
        rp, rd, rc = kkt_residuals(struct.P, q, struct.A, l, u, y, lam)
        if max(rp, rd, rc) > tol:
            return None
        obj = float(0.5 * y @ struct.P @ y + q @ y)
        return QpSolution(y, lam, QpStatus.OPTIMAL, 1, obj, rp, rd, rc)

    @staticmethod
    def _feasible_inputs(struct, l_in, u_in, guess):
        """A point satisfying the box rows and the slew chain, built by
        clipping the guess forward through the chain; None if a link of the
        chain closes (left to the fallback solver)."""
        N = struct.n_inputs
        ut = np.zeros(N)
        r0 = struct.row_slew0
        lo = max(l_in[0], l_in[r0])
        hi = min(u_in[0], u_in[r0])
        if lo > hi:
            return None
        ut[0] = min(max(guess[0] if guess is not None else 0.0, lo), hi)
        for k in range(1, N):
            lo = max(l_in[k], ut[k - 1] + l_in[N + k])
            hi = min(u_in[k], ut[k - 1] + u_in[N + k])
            if lo > hi:
                return None
            ut[k] = min(max(guess[k] if guess is not None else 0.0, lo), hi)
        return ut

    def _shift_warm(self, ctrl, base, N, n_slack):
        if ctrl.warm_y is None:
            return None, None
        d = base - ctrl.warm_base
        if d == 0:
            return ctrl.warm_y, ctrl.warm_lam
        if d < 0 or d >= N:
            return None, None
        y = ctrl.warm_y
        lam = ctrl.warm_lam
        idx = np.minimum(np.arange(N) + d, N - 1)
        y_new = np.empty_like(y)
        y_new[:N] = y[idx]
        lam_new = np.empty_like(lam)
        lam_new[:N] = lam[idx]          # box rows
        lam_new[N:2 * N] = lam[N + idx]  # slew rows
        if n_slack:
            m_poly = n_slack // N
            sl = np.minimum(np.arange(N) + d, N - 1)
            blk = (sl[:, None] * m_poly + np.arange(m_poly)[None, :]).ravel()
            y_new[N:] = y[N:][blk]
            lam_new[2 * N:2 * N + n_slack] = lam[2 * N:2 * N + n_slack][blk]
            lam_new[2 * N + n_slack:] = lam[2 * N + n_slack:][blk]
        return y_new, lam_new


class LqController:
    """Saturated LQ baseline: curvature feedforward plus state feedback, with
    pure saturation and no slew or joint-angle constraint handling."""

    def __init__(self, params, path: NominalPath, cfg: MpcConfig = None,
                 cost: CostMatrices = None):
        from .error_model import analytic_straight_model

        self.params = params
        self.cfg = cfg or MpcConfig()
        self.cost = cost or design_cost(
            params, self.cfg, analytic_straight_model(params, path.direction,
                                                      self.cfg.delta_s))
        self.path = extend_for_horizon(params, path,
                                       1.2 * self.cfg.horizon * self.cfg.delta_s)

    def step(self, state: VehicleState, ctrl: ControllerState):
        t0 = time.perf_counter()
        s0, err = compute_error(state, self.path, ctrl.s_prev)
        ur = float(interpolate(self.path, s0).ur)
        raw = ur - float(self.cost.K @ err.as_array())
        u_cmd = min(max(raw, -self.cfg.u_max), self.cfg.u_max)
        diag = StepDiagnostics(
            s=s0, error=err, u_cmd=u_cmd, qp_status="LQ", qp_objective=0.0,
            qp_iterations=0, primal_residual=0.0, dual_residual=0.0,
            comp_residual=0.0, slack_max=0.0,
            solve_time_ms=(time.perf_counter() - t0) * 1e3, fallback=False,
        )
        ctrl.u_prev = u_cmd
        ctrl.s_prev = s0
        return u_cmd, diag
