"""Dense convex QP solver.

Solves problems of the form

    minimize    0.5 * y'Py + q'y
    subject to  l <= Ay <= u

with P symmetric positive semidefinite, via operator splitting (ADMM) with
Ruiz equilibration, over-relaxation, warm starting and an optional active-set
polish step.  Sized for the MPC's dense problems (tens to a few hundred
variables); a prepared mode reuses the equilibration and factorization across
solves that share (P, A), including batched solves with many simultaneous
right-hand sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

from .exceptions import TrailerMpcError


class QpStatus:
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"


@dataclass
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    y0: np.ndarray = None     # optional primal warm start
    lam0: np.ndarray = None   # optional dual warm start

    def validate(self):
        n = len(self.q)
        if self.P.shape != (n, n):
            raise ValueError("P/q dimension mismatch")
        if self.A.shape[1] != n:
            raise ValueError("A column count must match len(q)")
        m = self.A.shape[0]
        if len(self.l) != m or len(self.u) != m:
            raise ValueError("l/u must match A row count")
        if np.max(np.abs(self.P - self.P.T)) > 1e-12 * max(1.0, np.max(np.abs(self.P))):
            raise ValueError("P must be symmetric")
        if np.any(self.l > self.u + 1e-12):
            raise ValueError("l <= u must hold componentwise")


@dataclass
class QpSolution:
    y: np.ndarray
    duals: np.ndarray
    status: str
    iterations: int
    objective: float
    primal_residual: float
    dual_residual: float
    comp_residual: float


def row_structure(A):
    """For each row: the column index if the row has a single nonzero, else -1."""
    nz = A != 0.0
    counts = nz.sum(axis=1)
    cols = np.argmax(nz, axis=1)
    return np.where(counts == 1, cols, -1)


def _solve_active(P, q, A, b_act, act_rows, single_col):
    """Equality-constrained solve on a candidate active set.

    Variables pinned by active single-entry rows are eliminated, which keeps
    the KKT system small even when many simple bounds are active.  Redundant
    bounds on an already-pinned variable and rows touching only pinned
    variables are left inactive (dual 0).  Returns (x, lam) or None.
    """
    m, n = A.shape
    act_rows = np.asarray(act_rows, dtype=int)
    sc_act = single_col[act_rows]
    pin = sc_act >= 0
    fix_row = np.full(n, -1, dtype=int)
    # reversed assignment so the first pinning row of a column wins
    fix_row[sc_act[pin][::-1]] = act_rows[pin][::-1]
    fixed = fix_row >= 0
    fj = np.where(fixed)[0]
    fr = fix_row[fj]
    free = np.where(~fixed)[0]
    x = np.zeros(n)
    x[fj] = b_act[fr] / A[fr, fj]
    other_rows = act_rows[~pin]
    if len(other_rows):
        A_O = A[other_rows]
        keep = (A_O[:, free] != 0.0).any(axis=1)
        other_rows = other_rows[keep]
        A_O = A_O[keep]

    nf = len(free)
    k = len(other_rows)
    reg = 1e-9
    Pff = P[np.ix_(free, free)]
    Kmat = np.zeros((nf + k, nf + k))
    Kmat[:nf, :nf] = Pff
    rng = np.arange(nf)
    Kmat[rng, rng] += reg
    rhs = np.empty(nf + k)
    rhs[:nf] = -q[free] - P[np.ix_(free, fj)] @ x[fj]
    if k:
        A_R = A_O[:, free]
        Kmat[:nf, nf:] = A_R.T
        Kmat[nf:, :nf] = A_R
        rng = np.arange(nf, nf + k)
        Kmat[rng, rng] -= reg
        rhs[nf:] = b_act[other_rows] - A_O @ x
    try:
        lu = lu_factor(Kmat, check_finite=False)
        sol = lu_solve(lu, rhs, check_finite=False)
        # iterative refinement against the unregularized system; the extra
        # passes matter when large soft-penalty folds make Pff ill-conditioned
        # and active rows carry duals of ~1e3
        scale = 1.0 + np.max(np.abs(rhs))
        resid = np.empty_like(rhs)
        for _ in range(3):
            resid[:nf] = rhs[:nf] - Pff @ sol[:nf]
            if k:
                resid[:nf] -= A_R.T @ sol[nf:]
                resid[nf:] = rhs[nf:] - A_R @ sol[:nf]
            if np.max(np.abs(resid)) <= 1e-13 * scale:
                break
            sol = sol + lu_solve(lu, resid, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return None
    if not np.all(np.isfinite(sol)):
        return None
    x[free] = sol[:nf]
    lam = np.zeros(m)
    lam[other_rows] = sol[nf:]
    # duals of the pinning bound rows from stationarity
    grad = P @ x + q + A[act_rows].T @ lam[act_rows]
    if len(fj):
        lam[fr] = -grad[fj] / A[fr, fj]
    return x, lam


def polish_solution(P, q, A, l, u, y, lam, z, tol, single_col=None):
    """Active-set refinement of an approximate solution; the active set is
    read off the (exactly clipped) auxiliary variable z.  Returns
    (y, lam, residuals) on success, None when the refined point fails the
    KKT check."""
    with np.errstate(invalid="ignore"):
        low = np.isfinite(l) & (z <= l + 1e-9 * (1.0 + np.abs(l)))
        up = np.isfinite(u) & (z >= u - 1e-9 * (1.0 + np.abs(u)))
    act = np.where(low | up)[0]
    b_act = np.where(up, u, l)
    if single_col is None:
        single_col = row_structure(A)
    res = _solve_active(P, q, A, b_act, act, single_col)
    if res is None:
        return None
    x, lam_new = res
    kkt = kkt_residuals(P, q, A, l, u, x, lam_new)
    if max(kkt) <= tol:
        return x, lam_new, kkt
    return None


def active_set_solve(P, q, A, l, u, act_low, act_up, tol, single_col=None,
                     max_changes=40):
    """Primal-dual active-set iteration from a warm-started active set.

    Alternates equality-constrained solves with set updates (add violated
    rows, drop wrong-signed duals) until the KKT conditions hold.  Very fast
    when the starting guess is close (one or two changes per control cycle);
    returns None if it fails to settle, in which case the caller should fall
    back to the operator-splitting solver.
    """
    m = A.shape[0]
    if single_col is None:
        single_col = row_structure(A)
    act_low = act_low.copy()
    act_up = act_up.copy()
    for _ in range(max_changes):
        b_act = np.where(act_up, u, l)
        act = np.where(act_low | act_up)[0]
        res = _solve_active(P, q, A, b_act, act, single_col)
        if res is None:
            return None
        x, lam = res
        v = A @ x
        with np.errstate(invalid="ignore"):
            tol_u = 1e-9 * (1.0 + np.abs(np.where(np.isfinite(u), u, 0.0)))
            tol_l = 1e-9 * (1.0 + np.abs(np.where(np.isfinite(l), l, 0.0)))
            viol_up = np.isfinite(u) & (v > u + tol_u) & ~act_up
            viol_low = np.isfinite(l) & (v < l - tol_l) & ~act_low
        wrong_up = act_up & (lam < -1e-9)
        wrong_low = act_low & (lam > 1e-9)
        if not (viol_up.any() or viol_low.any() or wrong_up.any() or wrong_low.any()):
            kkt = kkt_residuals(P, q, A, l, u, x, lam)
            if max(kkt) <= tol:
                return x, lam, kkt
            return None
        act_up = (act_up & ~wrong_up) | viol_up
        act_low = (act_low & ~wrong_low) | viol_low
        # a row cannot be active on both sides unless it is an equality
        both = act_up & act_low & (u - l > 1e-12)
        act_low &= ~both
    return None


def primal_active_set_solve(P, q, A, l, u, x0, tol, single_col=None,
                            max_iter=None):
    """Primal active-set QP solve from a feasible starting point.

    Maintains feasibility throughout: each iteration solves the equality-
    constrained problem on the working set, steps with a ratio test to the
    nearest blocking row (added to the set), and drops the worst wrong-signed
    dual once the subproblem optimum is reached.  Monotone descent, so it
    terminates; returns None on an infeasible start, a degenerate working
    set, or when the iteration cap is hit.
    """
    n = P.shape[0]
    m = A.shape[0]
    if single_col is None:
        single_col = row_structure(A)
    if max_iter is None:
        max_iter = 3 * (n + m) + 10
    x = np.asarray(x0, dtype=float).copy()
    v = A @ x
    with np.errstate(invalid="ignore"):
        su = np.where(np.isfinite(u), u, 0.0)
        sl = np.where(np.isfinite(l), l, 0.0)
        if np.any(v > u + 1e-7 * (1.0 + np.abs(su))) or \
           np.any(v < l - 1e-7 * (1.0 + np.abs(sl))):
            return None
        act_up = np.isfinite(u) & (v >= u - 1e-9 * (1.0 + np.abs(su)))
        act_low = np.isfinite(l) & (v <= l + 1e-9 * (1.0 + np.abs(sl))) & ~act_up

    for _ in range(max_iter):
        b_act = np.where(act_up, u, l)
        act = np.where(act_up | act_low)[0]
        res = _solve_active(P, q, A, b_act, act, single_col)
        if res is None:
            return None
        x_new, lam = res
        p = x_new - x
        if np.max(np.abs(p), initial=0.0) <= 1e-11 * (1.0 + np.max(np.abs(x))):
            wrong = np.where(act_up, np.maximum(-lam, 0.0), 0.0) \
                + np.where(act_low, np.maximum(lam, 0.0), 0.0)
            drop = wrong > 1e-9
            if not drop.any():
                kkt = kkt_residuals(P, q, A, l, u, x_new, lam)
                if max(kkt) <= tol:
                    return x_new, lam, kkt
                return None
            # dropping everything wrong-signed at once is safe here: the
            # ratio test keeps the iterate feasible either way, and it cuts
            # the exchange count on cold starts by an order of magnitude
            act_up &= ~drop
            act_low &= ~drop
            continue
        Ap = A @ p
        alpha = 1.0
        block = -1
        block_up = False
        with np.errstate(invalid="ignore", divide="ignore"):
            cand_u = np.isfinite(u) & ~act_up & (Ap > 1e-13)
            if cand_u.any():
                r = (u[cand_u] - v[cand_u]) / Ap[cand_u]
                j = int(np.argmin(r))
                if r[j] < alpha:
                    alpha = max(r[j], 0.0)
                    block = np.where(cand_u)[0][j]
                    block_up = True
            cand_l = np.isfinite(l) & ~act_low & (Ap < -1e-13)
            if cand_l.any():
                r = (l[cand_l] - v[cand_l]) / Ap[cand_l]
                j = int(np.argmin(r))
                if r[j] < alpha:
                    alpha = max(r[j], 0.0)
                    block = np.where(cand_l)[0][j]
                    block_up = False
        x = x + alpha * p
        v = v + alpha * Ap
        if block >= 0:
            if block_up:
                act_up[block] = True
                act_low[block] = False
            else:
                act_low[block] = True
                act_up[block] = False
    return None


def soft_qp_solve(P, q, A, l, u, G, b, sig1, sig2, x0, tol=1e-6,
                  single_col=None, max_iter=3000, warm=None):
    """Primal active-set solve of a QP with one-sided soft rows,

        min  0.5 x'Px + q'x + sum_i (sig1 eps_i + sig2 eps_i^2)
        s.t. l <= Ax <= u,   Gx - eps <= b,   eps >= 0,

    working in the x space only: each soft row is in one of three states --
    slack at zero (no contribution), at the kink (Gx = b held as a hard row),
    or eliminated (slack substituted by its violation, which folds a convex
    quadratic penalty into the x objective).  State changes follow the usual
    ratio test / dual sign rules, so iterates stay feasible and the cost
    decreases monotonically.  x0 must satisfy the hard rows.

    ``warm`` takes the working-set masks returned by a previous call on a
    problem with the same constraint rows; if their equality-constrained
    point is feasible the iteration starts there, which usually finishes in
    a handful of exchanges when the data changed only slightly.

    Returns (x, eps, mu, lam, nu, sets) -- duals of the hard, soft and
    nonnegativity rows plus the final masks (act_low, act_up, soft_act,
    nn_act) -- or None on failure.
    """
    nx = P.shape[0]
    mh = A.shape[0]
    ms = G.shape[0]
    if single_col is None:
        single_col = row_structure(A)
    btol = 1e-9 * (1.0 + np.abs(b))
    with np.errstate(invalid="ignore"):
        su = np.where(np.isfinite(u), u, 0.0)
        sl = np.where(np.isfinite(l), l, 0.0)
    htol_u = 1e-9 * (1.0 + np.abs(su))
    htol_l = 1e-9 * (1.0 + np.abs(sl))

    def fold(soft_m, nn_m):
        GE = G[soft_m & ~nn_m]
        if len(GE):
            return (P + (2.0 * sig2) * (GE.T @ GE),
                    q + GE.T @ (sig1 - 2.0 * sig2 * b[soft_m & ~nn_m]))
        return P.copy(), q.copy()

    def eq_point(low_m, up_m, soft_m, nn_m, P_f, q_f):
        kink_m = soft_m & nn_m
        nk = int(kink_m.sum())
        b_act = np.where(up_m, u, l)
        rows_h = np.where(up_m | low_m)[0]
        if nk:
            A_c = np.vstack([A, G[kink_m]])
            b_c = np.concatenate([b_act, b[kink_m]])
            act_rows = np.concatenate([rows_h, mh + np.arange(nk)])
            sc = np.concatenate([single_col, np.full(nk, -1, dtype=int)])
        else:
            A_c, b_c, act_rows, sc = A, b_act, rows_h, single_col
        return _solve_active(P_f, q_f, A_c, b_c, act_rows, sc)

    started = False
    if warm is not None and all(len(m) == n for m, n in
                                zip(warm, (mh, mh, ms, ms))):
        w_low, w_up, w_soft, w_nn = (np.array(m, dtype=bool) for m in warm)
        elim_w = w_soft & ~w_nn
        P_w, q_w = fold(w_soft, w_nn)
        res = eq_point(w_low, w_up, w_soft, w_nn, P_w, q_w)
        if res is not None:
            x_w = res[0]
            vw = A @ x_w
            gw = G @ x_w - b
            with np.errstate(invalid="ignore"):
                feasible = not (np.any(vw > u + htol_u) or
                                np.any(vw < l - htol_l) or
                                np.any(elim_w & (gw < -btol)) or
                                np.any(~w_soft & (gw > btol)))
            if feasible:
                x, vh, g = x_w, vw, gw
                act_low, act_up, soft_act, nn_act = w_low, w_up, w_soft, w_nn
                eps = np.where(elim_w, np.maximum(gw, 0.0), 0.0)
                P_eff, q_eff = P_w, q_w
                started = True
    if not started:
        x = np.asarray(x0, dtype=float).copy()
        vh = A @ x
        with np.errstate(invalid="ignore"):
            if np.any(vh > u + 1e-7 * (1.0 + np.abs(su))) or \
               np.any(vh < l - 1e-7 * (1.0 + np.abs(sl))):
                return None
            act_up = np.isfinite(u) & (vh >= u - htol_u)
            act_low = np.isfinite(l) & (vh <= l + htol_l) & ~act_up
        g = G @ x - b
        soft_act = g >= -btol
        nn_act = g <= btol
        eps = np.where(soft_act & ~nn_act, g, 0.0)
        P_eff, q_eff = fold(soft_act, nn_act)

    # the eliminated-slack penalty changes by one row per exchange, so the
    # folded objective is maintained with rank-1 updates
    def elim_add(i):
        P_eff[:] += (2.0 * sig2) * np.outer(G[i], G[i])
        q_eff[:] += G[i] * (sig1 - 2.0 * sig2 * b[i])

    def elim_remove(i):
        P_eff[:] -= (2.0 * sig2) * np.outer(G[i], G[i])
        q_eff[:] -= G[i] * (sig1 - 2.0 * sig2 * b[i])

    for _ in range(max_iter):
        elim = soft_act & ~nn_act
        kink = soft_act & nn_act
        res = eq_point(act_low, act_up, soft_act, nn_act, P_eff, q_eff)
        if res is None:
            return None
        x_new, lam_c = res
        mu = lam_c[:mh]
        kap = lam_c[mh:]
        gx_new = G @ x_new - b
        eps_new = np.where(elim, gx_new, 0.0)
        px = x_new - x
        pe = eps_new - eps
        step = max(np.max(np.abs(px), initial=0.0), np.max(np.abs(pe), initial=0.0))
        if step <= 1e-11 * (1.0 + np.max(np.abs(x), initial=0.0)):
            wrong_h = np.where(act_up, np.maximum(-mu, 0.0), 0.0) \
                + np.where(act_low, np.maximum(mu, 0.0), 0.0)
            drop_h = wrong_h > 1e-9
            kap_full = np.zeros(ms)
            kap_full[kink] = kap
            kink_below = kink & (kap_full < -1e-9)     # leave the soft row
            kink_above = kink & (kap_full > sig1 + 1e-9)  # release the slack
            if not (drop_h.any() or kink_below.any() or kink_above.any()):
                lam = np.where(elim, sig1 + 2.0 * sig2 * eps, kap_full)
                nu = np.where(kink, kap_full - sig1,
                              np.where(nn_act, -sig1, 0.0))
                return x_new, eps, mu, lam, nu, (act_low, act_up,
                                                 soft_act, nn_act)
            # release one row at a time (most negative dual): mass drops at
            # degenerate vertices trigger long chains of zero-length re-adds
            j = np.argmax(np.concatenate([
                wrong_h,
                np.where(kink_below, -kap_full, 0.0),
                np.where(kink_above, kap_full - sig1, 0.0)]))
            if j < mh:
                act_up[j] = act_low[j] = False
            elif j < mh + ms:
                soft_act[j - mh] = False
            else:
                nn_act[j - mh - ms] = False
                elim_add(j - mh - ms)  # the kink row rejoins the penalty
            continue
        # ratio test over the inactive rows
        Ap = A @ px
        Gp = G @ px
        ds = Gp - pe
        vs = g - eps
        alpha = 1.0
        kind = row = None
        # the small slack added to each gap lets the step pass through rows
        # that are tight only to rounding error; the next equality solve pins
        # the added row back onto its bound exactly
        with np.errstate(invalid="ignore", divide="ignore"):
            for cand, num, den, kd in (
                (np.isfinite(u) & ~act_up & (Ap > 1e-13),
                 u - vh + 1e-9 * (1.0 + np.abs(su)), Ap, 0),
                (np.isfinite(l) & ~act_low & (Ap < -1e-13),
                 l - vh - 1e-9 * (1.0 + np.abs(sl)), Ap, 1),
                (~soft_act & (ds > 1e-13), -vs + btol, ds, 2),
                (~nn_act & (pe < -1e-13), -eps - 1e-9, pe, 3),
            ):
                if cand.any():
                    r = num[cand] / den[cand]
                    j = int(np.argmin(r))
                    if r[j] < alpha:
                        alpha = max(r[j], 0.0)
                        kind = kd
                        row = np.where(cand)[0][j]
        x = x + alpha * px
        eps = eps + alpha * pe
        vh = vh + alpha * Ap
        g = g + alpha * Gp
        if kind == 0:
            act_up[row] = True
            act_low[row] = False
        elif kind == 1:
            act_low[row] = True
            act_up[row] = False
        elif kind == 2:
            soft_act[row] = True   # hits Gx - eps = b; eps is 0 here -> kink
        elif kind == 3:
            nn_act[row] = True     # eliminated slack reached zero -> kink
            elim_remove(row)
    return None


def kkt_residuals(P, q, A, l, u, y, lam):
    """(primal, dual, complementarity) infinity-norm KKT residuals."""
    if A.shape[0] == 0:
        dual = float(np.max(np.abs(P @ y + q))) if len(q) else 0.0
        return 0.0, dual, 0.0
    Ay = A @ y
    prim = float(np.max(np.maximum(Ay - u, 0.0) + np.maximum(l - Ay, 0.0)))
    dual = float(np.max(np.abs(P @ y + q + A.T @ lam)))
    lam_pos = np.maximum(lam, 0.0)
    lam_neg = np.minimum(lam, 0.0)
    # a positive dual must pair with a tight finite upper bound (and the
    # negative part with a lower one); on an infinite side the whole
    # multiplier is a dual-feasibility violation
    fin_u = np.isfinite(u)
    fin_l = np.isfinite(l)
    gap_u = np.where(fin_u, np.abs(np.where(fin_u, u, 0.0) - Ay), 1.0)
    gap_l = np.where(fin_l, np.abs(Ay - np.where(fin_l, l, 0.0)), 1.0)
    comp = float(np.max(lam_pos * gap_u - lam_neg * gap_l, initial=0.0))
    return prim, dual, comp


class PreparedQp:
    """Equilibrated + factorized ADMM workspace for a fixed (P, A) pair.

    Repeated solves with new (q, l, u) reuse the factorization; inputs may be
    batched as (n, K) / (m, K) arrays, in which case every column is solved
    simultaneously (columns that have converged keep iterating but their
    iteration counts are recorded at first convergence).
    """

    def __init__(self, P, A, eq_mask=None, rho=0.1, sigma=1e-6, alpha=1.6,
                 scaling_iters=10, tol=1e-6, max_iter=4000, check_every=10):
        self.n = P.shape[0]
        self.m = A.shape[0]
        self.tol = tol
        self.max_iter = max_iter
        self.alpha = alpha
        self.sigma = sigma
        self.check_every = check_every
        self.P = np.asarray(P, dtype=float)
        self.A = np.asarray(A, dtype=float)

        # Ruiz equilibration of [[P, A'], [A, 0]]
        d = np.ones(self.n)
        e = np.ones(self.m)
        Ps = self.P.copy()
        As = self.A.copy()
        for _ in range(scaling_iters):
            col_p = np.abs(Ps).max(axis=0) if self.n else np.zeros(0)
            col_a = np.abs(As).max(axis=0) if self.m else np.zeros(self.n)
            dn = np.sqrt(np.maximum(np.maximum(col_p, col_a), 1e-12))
            row_a = np.abs(As).max(axis=1) if self.m else np.zeros(0)
            en = np.sqrt(np.maximum(row_a, 1e-12))
            Ps /= dn[None, :] * dn[:, None]
            if self.m:
                As = As / en[:, None] / dn[None, :]
            d /= dn
            e /= en
        col_norm = np.abs(Ps).max(axis=0).mean() if self.n else 1.0
        self.c = 1.0 / max(col_norm, 1e-6)
        Ps *= self.c
        self.d = d
        self.e = e
        self.Ps = Ps
        self.As = As

        if eq_mask is None:
            eq_mask = np.zeros(self.m, dtype=bool)
        self.rho_vec = np.where(eq_mask, rho * 1e3, rho)
        self.single_col = row_structure(self.A)
        self._factor()

    def _factor(self):
        K = self.Ps + self.sigma * np.eye(self.n)
        if self.m:
            K = K + (self.As * self.rho_vec[:, None]).T @ self.As
        self.chol = cho_factor(K, lower=True, check_finite=False)

    def solve(self, q, l, u, y0=None, lam0=None, tol=None, max_iter=None,
              polish=False):
        """Solve for one or many (q, l, u) columns; returns a QpSolution for
        1-D inputs, or (Y, Lam, iters, status) arrays for batched inputs.

        With ``polish`` (single-column only), an active-set refinement is
        attempted at every residual check; on success the refined
        machine-precision KKT point is returned immediately."""
        tol = self.tol if tol is None else tol
        max_iter = self.max_iter if max_iter is None else max_iter
        q = np.asarray(q, dtype=float)
        batched = q.ndim == 2
        Q = q if batched else q[:, None]
        K = Q.shape[1]
        L = np.asarray(l, dtype=float).reshape(self.m, -1) * np.ones((1, K))
        U = np.asarray(u, dtype=float).reshape(self.m, -1) * np.ones((1, K))

        # scale into equilibrated space
        Qs = self.c * (self.d[:, None] * Q)
        Ls = self.e[:, None] * L
        Us = self.e[:, None] * U

        X = np.zeros((self.n, K)) if y0 is None else (np.asarray(y0, float).reshape(self.n, -1) / self.d[:, None]) * np.ones((1, K))
        if lam0 is None:
            Y = np.zeros((self.m, K))
        else:
            Y = (self.c * np.asarray(lam0, float).reshape(self.m, -1) / self.e[:, None]) * np.ones((1, K))
        Z = np.clip(self.As @ X, Ls, Us) if self.m else np.zeros((0, K))

        rho = self.rho_vec[:, None]
        sigma, alpha = self.sigma, self.alpha
        iters_done = np.full(K, -1, dtype=int)
        status = np.full(K, QpStatus.MAX_ITER, dtype=object)
        prim = np.zeros(K)
        dual = np.zeros(K)
        comp = np.zeros(K)
        Y_prev_check = Y.copy()
        last_adapt = 0

        it = 0
        while it < max_iter:
            it += 1
            rhs = sigma * X - Qs
            if self.m:
                rhs = rhs + self.As.T @ (rho * Z - Y)
            Xt = cho_solve(self.chol, rhs, check_finite=False)
            Xn = alpha * Xt + (1.0 - alpha) * X
            if self.m:
                Zhat = self.As @ Xt
                Zt = alpha * Zhat + (1.0 - alpha) * Z
                Zn = np.clip(Zt + Y / rho, Ls, Us)
                Y = Y + rho * (Zt - Zn)
                Z = Zn
            X = Xn

            if it % self.check_every == 0 or it == max_iter:
                Xo = self.d[:, None] * X
                Yo = (self.e[:, None] * Y) / self.c
                r_dual = np.abs(self.P @ Xo + Q + (self.A.T @ Yo if self.m else 0.0)).max(axis=0)
                if self.m:
                    AX = self.A @ Xo
                    r_prim = (np.maximum(AX - U, 0.0) + np.maximum(L - AX, 0.0)).max(axis=0)
                    yp = np.maximum(Yo, 0.0)
                    yn = np.minimum(Yo, 0.0)
                    gap_u = np.where(np.isfinite(U), np.abs(U - AX), 0.0)
                    gap_l = np.where(np.isfinite(L), np.abs(AX - L), 0.0)
                    r_comp = np.maximum(yp * gap_u - yn * gap_l, 0.0).max(axis=0)
                else:
                    r_prim = np.zeros(K)
                    r_comp = np.zeros(K)
                if polish and not batched and self.m:
                    refined = polish_solution(self.P, Q[:, 0], self.A, L[:, 0],
                                              U[:, 0], Xo[:, 0], Yo[:, 0],
                                              Z[:, 0] / self.e, tol,
                                              single_col=self.single_col)
                    if refined is not None:
                        x_p, lam_p, (rp, rd, rc) = refined
                        obj = float(0.5 * x_p @ self.P @ x_p + Q[:, 0] @ x_p)
                        return QpSolution(x_p, lam_p, QpStatus.OPTIMAL, it, obj,
                                          rp, rd, rc)
                ok = (r_prim <= tol) & (r_dual <= tol) & (r_comp <= tol)
                newly = ok & (iters_done < 0)
                iters_done[newly] = it
                status[newly] = QpStatus.OPTIMAL
                prim[newly] = r_prim[newly]
                dual[newly] = r_dual[newly]
                comp[newly] = r_comp[newly]
                if np.all(iters_done >= 0):
                    break

                if self.m:
                    bad = self._infeasibility_certificate(Y - Y_prev_check, L, U)
                    fresh_bad = bad & (iters_done < 0)
                    if np.any(fresh_bad):
                        iters_done[fresh_bad] = it
                        status[fresh_bad] = QpStatus.PRIMAL_INFEASIBLE
                        if np.all(iters_done >= 0):
                            break
                    Y_prev_check = Y.copy()

                    # penalty adaptation on the scaled residual balance
                    if it - last_adapt >= 50:
                        AsX = self.As @ X
                        rp = np.abs(AsX - Z).max() / max(
                            np.abs(AsX).max(initial=0.0), np.abs(Z).max(initial=0.0), 1e-10)
                        PsX = self.Ps @ X
                        AtY = self.As.T @ Y
                        rd = np.abs(PsX + Qs + AtY).max() / max(
                            np.abs(PsX).max(initial=0.0), np.abs(Qs).max(initial=0.0),
                            np.abs(AtY).max(initial=0.0), 1e-10)
                        ratio = rp / max(rd, 1e-16)
                        if ratio > 5.0 or ratio < 0.2:
                            factor = np.clip(math.sqrt(ratio), 1e-3, 1e3)
                            self.rho_vec = np.clip(self.rho_vec * factor, 1e-6, 1e6)
                            self._factor()
                            rho = self.rho_vec[:, None]
                            last_adapt = it

        unfinished = iters_done < 0
        iters_done[unfinished] = it
        prim[unfinished] = r_prim[unfinished] if it % self.check_every == 0 else np.inf
        Xo = self.d[:, None] * X
        Yo = (self.e[:, None] * Y) / self.c

        if not batched:
            obj = float(0.5 * Xo[:, 0] @ self.P @ Xo[:, 0] + Q[:, 0] @ Xo[:, 0])
            p, dl, cm = kkt_residuals(self.P, Q[:, 0], self.A, L[:, 0], U[:, 0],
                                      Xo[:, 0], Yo[:, 0])
            return QpSolution(Xo[:, 0], Yo[:, 0], str(status[0]), int(iters_done[0]),
                              obj, p, dl, cm)
        return Xo, Yo, iters_done, status

    def _infeasibility_certificate(self, dY, L, U):
        """Columnwise OSQP-style primal infeasibility test on dual increments."""
        dYo = (self.e[:, None] * dY) / self.c
        norm = np.abs(dYo).max(axis=0)
        eps = 1e-8
        with np.errstate(invalid="ignore"):
            at_norm = norm > 1e-10
        if not np.any(at_norm):
            return np.zeros(dY.shape[1], dtype=bool)
        atv = np.abs(self.A.T @ dYo).max(axis=0) if self.n else np.zeros(dY.shape[1])
        dp = np.maximum(dYo, 0.0)
        dn = np.minimum(dYo, 0.0)
        # rows with infinite bounds must not contribute to the certificate
        bad_inf = ((~np.isfinite(U)) & (dp > eps * norm[None, :])).any(axis=0)
        bad_inf |= ((~np.isfinite(L)) & (dn < -eps * norm[None, :])).any(axis=0)
        sup = np.where(np.isfinite(U), U, 0.0) * dp + np.where(np.isfinite(L), L, 0.0) * dn
        sup = sup.sum(axis=0)
        return at_norm & ~bad_inf & (atv <= eps * norm) & (sup < -eps * norm)


class DenseQpSolver:
    """Front end: one-shot solves with validation and active-set polishing."""

    def __init__(self, tol=1e-6, max_iter=4000, rho=0.1, sigma=1e-6, alpha=1.6,
                 polish=True):
        self.tol = tol
        self.max_iter = max_iter
        self.rho = rho
        self.sigma = sigma
        self.alpha = alpha
        self.polish = polish
        self._cache_key = None
        self._prepared = None

    def prepare(self, P, A, eq_mask=None, cache_key=None, **kw) -> PreparedQp:
        """Build (or fetch) the equilibrated workspace for a fixed (P, A)."""
        if cache_key is not None and cache_key == self._cache_key:
            return self._prepared
        prep = PreparedQp(P, A, eq_mask=eq_mask, rho=self.rho, sigma=self.sigma,
                          alpha=self.alpha, tol=self.tol, max_iter=self.max_iter, **kw)
        if cache_key is not None:
            self._cache_key = cache_key
            self._prepared = prep
        return prep

    def solve(self, prob: QpProblem, tol=None) -> QpSolution:
        prob.validate()
        tol = self.tol if tol is None else tol
        if prob.A.shape[0] == 0:
            y = np.linalg.solve(prob.P + self.sigma * np.eye(len(prob.q)), -prob.q)
            obj = float(0.5 * y @ prob.P @ y + prob.q @ y)
            _, d, _ = kkt_residuals(prob.P, prob.q, prob.A, prob.l, prob.u, y, np.zeros(0))
            return QpSolution(y, np.zeros(0), QpStatus.OPTIMAL, 1, obj, 0.0, d, 0.0)
        eq_mask = np.isfinite(prob.l) & np.isfinite(prob.u) & (prob.u - prob.l < 1e-12)
        prep = self.prepare(prob.P, prob.A, eq_mask=eq_mask)
        return prep.solve(prob.q, prob.l, prob.u, y0=prob.y0, lam0=prob.lam0,
                          tol=tol, polish=self.polish)


def solve_qp(prob: QpProblem, tol=1e-6, **kw) -> QpSolution:
    """Convenience one-shot solve."""
    return DenseQpSolver(tol=tol, **kw).solve(prob, tol=tol)


def brute_force_active_set(P, q, A, l, u, tol=1e-9):
    """Exhaustive active-set enumeration oracle for tiny strictly convex QPs.

    Solves the equality-constrained QP for every subset of (finite) constraint
    faces, keeps feasible candidates, and returns the best.  Exponential; only
    for test-sized problems.
    """
    from itertools import combinations

    m, n = A.shape
    faces = []
    for i in range(m):
        if np.isfinite(u[i]):
            faces.append((i, u[i]))
        if np.isfinite(l[i]) and l[i] != u[i]:
            faces.append((i, l[i]))
    best, best_obj = None, math.inf
    for size in range(0, min(len(faces), n) + 1):
        for combo in combinations(range(len(faces)), size):
            rows = [faces[j][0] for j in combo]
            if len(set(rows)) != len(rows):
                continue
            Aa = A[rows]
            ba = np.array([faces[j][1] for j in combo])
            K = np.block([[P, Aa.T], [Aa, np.zeros((size, size))]])
            rhs = np.concatenate([-q, ba])
            try:
                z = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            y = z[:n]
            Ay = A @ y
            if np.any(Ay > u + tol) or np.any(Ay < l - tol):
                continue
            obj = 0.5 * y @ P @ y + q @ y
            if obj < best_obj - 1e-15:
                best_obj, best = obj, y
    if best is None:
        raise TrailerMpcError("oracle found no feasible candidate")
    return best, best_obj
