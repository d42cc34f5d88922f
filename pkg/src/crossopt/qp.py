"""Dense convex QP solver.

Operator-splitting (ADMM) iteration on the two-sided form
``l <= Ax <= u`` with Ruiz equilibration, a direct KKT polish step for
high-accuracy solutions, and Farkas-style primal infeasibility detection.
Everything is plain numpy/LAPACK, so repeated solves of identical problems
are bitwise reproducible.

Problems are stated as ``minimize 0.5 x'Px + r'x  s.t.  Gx <= h,
lb <= x <= ub``.  Callers that think in terms of ``x'Qx`` pass ``P = 2Q``.
Equality constraints are expressed as a row plus its exact negation; such
pairs are detected and merged into single two-sided rows internally, which
lets the splitting iteration project them exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"

_SIGMA = 1e-6
_ALPHA = 1.6
_RHO_EQ_BOOST = 1e3
_CHECK_EVERY = 25


@dataclass(frozen=True)
class SolverConfig:
    """Default accuracy/effort knobs for the QP and integer solvers."""

    tol: float = 1e-6
    max_iter: int = 20000


@dataclass(frozen=True)
class QpProblem:
    """Convex QP data: ``minimize 0.5 x'Px + r'x + c`` subject to
    ``Gx <= h`` and ``lb <= x <= ub`` (infinities allowed in the boxes)."""

    n: int
    P: np.ndarray
    r: np.ndarray
    G: np.ndarray
    h: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.shape != (self.n, self.n):
            raise ValueError(f"P must be {self.n}x{self.n}, got {P.shape}")
        if self.r.shape != (self.n,):
            raise ValueError("r has wrong shape")
        if self.G.ndim != 2 or self.G.shape[1] != self.n:
            raise ValueError("G has wrong shape")
        if self.h.shape != (self.G.shape[0],):
            raise ValueError("h has wrong shape")
        if self.lb.shape != (self.n,) or self.ub.shape != (self.n,):
            raise ValueError("box bounds have wrong shape")
        scale = max(1.0, float(np.abs(P).max()) if P.size else 0.0)
        if np.abs(P - P.T).max(initial=0.0) > 1e-10 * scale:
            raise ValueError("P must be symmetric")
        if self.n:
            w = np.linalg.eigvalsh(0.5 * (P + P.T))
            if w[0] < -1e-8 * scale:
                raise ValueError(f"P not positive semidefinite (min eig {w[0]:.3e})")

    @property
    def m(self) -> int:
        return self.G.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.r @ x + self.c)


@dataclass(frozen=True)
class QpSolution:
    """Solver output; ``kkt_residuals`` is (stationarity, primal,
    complementarity), all reported for the original unscaled problem."""

    x: np.ndarray
    status: str
    objective: float
    kkt_residuals: tuple[float, float, float]
    iterations: int = 0
    certificate: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None


class AdmmCache:
    """Per-structure workspace: scaling, merged rows and KKT factors.

    Reusable across solves that share (P, G, lb/ub pattern); the content
    digest guards against accidental reuse on different data.
    """

    def __init__(self):
        self.digest = None
        self.data = None


def _normalize_zeros(a: np.ndarray) -> np.ndarray:
    return a + 0.0


def _merge_equality_pairs(G, h):
    """Find rows (i, j) with G[j] == -G[i], h[j] == -h[i] and merge them into
    two-sided rows.  Returns (A, l, u, row_map) where row_map[k] gives the
    original row(s) each internal row came from."""
    m = G.shape[0]
    used = np.zeros(m, dtype=bool)
    key_index: dict[bytes, list[int]] = {}
    for i in range(m):
        key_index.setdefault(_normalize_zeros(G[i]).tobytes(), []).append(i)
    rows, lo, up = [], [], []
    for i in range(m):
        if used[i]:
            continue
        neg_key = _normalize_zeros(-G[i]).tobytes()
        partner = -1
        for j in key_index.get(neg_key, ()):
            if j > i and not used[j] and h[j] == -h[i]:
                partner = j
                break
        used[i] = True
        if partner >= 0:
            used[partner] = True
            rows.append(G[i])
            lo.append(h[i])  # -G[i] x <= -h[i]  =>  G[i] x >= h[i]
            up.append(h[i])
        else:
            rows.append(G[i])
            lo.append(-np.inf)
            up.append(h[i])
    A = np.array(rows, dtype=float).reshape(len(rows), G.shape[1])
    return A, np.array(lo, dtype=float), np.array(up, dtype=float)


def _ruiz_scaling(P, q, A, iters=10):
    n = P.shape[0]
    m = A.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    cost = 1.0
    Pb, qb, Ab = P.copy(), q.copy(), A.copy()
    for _ in range(iters):
        norm_x = np.maximum(
            np.abs(Pb).max(axis=0, initial=0.0),
            np.abs(Ab).max(axis=0, initial=0.0),
        )
        norm_z = np.abs(Ab).max(axis=1, initial=0.0) if m else np.empty(0)
        dx = 1.0 / np.sqrt(np.where(norm_x > 1e-12, norm_x, 1.0))
        dz = 1.0 / np.sqrt(np.where(norm_z > 1e-12, norm_z, 1.0))
        d *= dx
        e *= dz
        Pb = cost * (d[:, None] * P * d[None, :])
        qb = cost * (d * q)
        Ab = e[:, None] * A * d[None, :]
        col_means = np.abs(Pb).max(axis=0, initial=0.0).mean() if n else 0.0
        cost_norm = max(col_means, np.abs(qb).max(initial=0.0))
        if cost_norm > 1e-12:
            gamma = 1.0 / cost_norm
            cost *= gamma
            Pb *= gamma
            qb *= gamma
    return d, e, cost, Pb, qb, Ab


def _factor(Pb, Ab, sigma, rho_vec):
    n = Pb.shape[0]
    m = Ab.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = Pb + sigma * np.eye(n)
    K[:n, n:] = Ab.T
    K[n:, :n] = Ab
    if m:
        K[n:, n:] = -np.diag(1.0 / rho_vec)
    return scipy.linalg.lu_factor(K, check_finite=False)


def _setup(prob: QpProblem, cache: Optional[AdmmCache]):
    digest = (
        prob.n,
        prob.G.shape[0],
        hash(_normalize_zeros(prob.P).tobytes()),
        hash(_normalize_zeros(prob.G).tobytes()),
        hash(_normalize_zeros(prob.lb).tobytes()),
        hash(_normalize_zeros(prob.ub).tobytes()),
    )
    if cache is not None and cache.digest == digest:
        return cache.data
    n = prob.n
    Ag, lo_g, up_g = _merge_equality_pairs(prob.G, prob.h)
    A = np.vstack([Ag, np.eye(n)])
    is_eq = np.concatenate([lo_g == up_g, np.zeros(n, dtype=bool)])
    d, e, cost, Pb, qb, Ab = _ruiz_scaling(prob.P, prob.r, A)
    rho0 = 0.1
    rho_vec = np.where(is_eq, rho0 * _RHO_EQ_BOOST, rho0)
    lu = _factor(Pb, Ab, _SIGMA, rho_vec)
    data = {
        "A": A,
        "n_g": Ag.shape[0],
        "lo_g": lo_g,
        "up_g": up_g,
        "is_eq": is_eq,
        "d": d,
        "e": e,
        "cost": cost,
        "Pb": Pb,
        "qb": qb,
        "Ab": Ab,
        "rho_vec": rho_vec.copy(),
        "lu": lu,
    }
    if cache is not None:
        cache.digest = digest
        cache.data = data
    return data


def _residuals(prob, A, lo, up, x, y):
    """Raw KKT residuals plus a scale-normalized worst residual.

    The normalized value divides each residual by the magnitude of the
    terms entering it, which is what the optimality gate uses: absolute
    tolerances are unattainable in float64 once cost entries reach the
    penalty-weight scale.
    """
    ax = A @ x
    px = prob.P @ x
    aty = A.T @ y
    stat = float(np.abs(px + prob.r + aty).max(initial=0.0))
    prim = float(np.maximum(np.maximum(ax - up, lo - ax), 0.0).max(initial=0.0))
    comp = 0.0
    if y.size:
        up_side = (y > 0) & np.isfinite(up)
        lo_side = (y < 0) & np.isfinite(lo)
        if up_side.any():
            comp = max(comp, float(np.abs(y[up_side] * (ax - up)[up_side]).max()))
        if lo_side.any():
            comp = max(comp, float(np.abs(y[lo_side] * (ax - lo)[lo_side]).max()))
        stray = (y != 0.0) & ~up_side & ~lo_side
        if stray.any():
            comp = max(comp, float(np.abs(y[stray]).max()))
    d_ref = max(
        np.abs(px).max(initial=0.0),
        np.abs(prob.r).max(initial=0.0),
        np.abs(aty).max(initial=0.0),
    )
    finite_ax = ax[np.isfinite(ax)]
    p_ref = float(np.abs(finite_ax).max(initial=0.0))
    norm = max(
        stat / max(1.0, d_ref),
        prim / max(1.0, p_ref),
        comp / max(1.0, d_ref),
    )
    return (stat, prim, comp), norm


def _polish(prob, A, lo, up, x, y, tol):
    """Direct KKT solve on the active set guessed from the dual signs."""
    n = prob.n
    low_act = np.where(y < 0)[0]
    up_act = np.where(y > 0)[0]
    act = np.concatenate([low_act, up_act])
    if act.size == 0:
        if prob.n == 0:
            return None
    Aact = A[act] if act.size else np.zeros((0, n))
    bact = np.concatenate([lo[low_act], up[up_act]])
    k = act.size
    delta = 1e-9
    K = np.zeros((n + k, n + k))
    K[:n, :n] = prob.P + delta * np.eye(n)
    K[:n, n:] = Aact.T
    K[n:, :n] = Aact
    K[n:, n:] = -delta * np.eye(k)
    rhs = np.concatenate([-prob.r, bact])
    try:
        lu = scipy.linalg.lu_factor(K, check_finite=False)
    except (ValueError, scipy.linalg.LinAlgError):
        return None
    sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
    # Iterative refinement against the unregularized KKT system.
    K0 = K.copy()
    K0[:n, :n] -= delta * np.eye(n)
    K0[n:, n:] += delta * np.eye(k)
    prev = np.inf
    for _ in range(10):
        resid = rhs - K0 @ sol
        rnorm = np.abs(resid).max(initial=0.0)
        if rnorm >= prev or rnorm < 1e-14 * max(1.0, np.abs(rhs).max(initial=0.0)):
            break
        prev = rnorm
        sol = sol + scipy.linalg.lu_solve(lu, resid, check_finite=False)
    x_pol = sol[:n]
    y_pol = np.zeros(A.shape[0])
    y_pol[low_act] = sol[n : n + low_act.size]
    y_pol[up_act] = sol[n + low_act.size :]
    # Tiny wrong-signed duals are rounding noise: clip them; large ones mean
    # the active-set guess was wrong.
    y_scale = max(1.0, np.abs(y_pol).max(initial=0.0))
    sign_err = max(
        np.maximum(y_pol[low_act], 0.0).max(initial=0.0),
        np.maximum(-y_pol[up_act], 0.0).max(initial=0.0),
    )
    if sign_err > 1e-6 * y_scale:
        return None
    y_pol[low_act] = np.minimum(y_pol[low_act], 0.0)
    y_pol[up_act] = np.maximum(y_pol[up_act], 0.0)
    return x_pol, y_pol


def solve_qp(
    prob: QpProblem,
    tol: float = 1e-6,
    max_iter: int = 20000,
    warm_start: Optional[tuple[np.ndarray, np.ndarray]] = None,
    cache: Optional[AdmmCache] = None,
    polish: bool = True,
) -> QpSolution:
    """Solve the QP to the requested absolute KKT tolerance.

    Args:
        prob: Problem data (validated at construction).
        tol: Absolute tolerance on all three KKT residuals.
        max_iter: Iteration cap for the splitting loop.
        warm_start: Optional ``(x, y)`` primal/dual start (dual in the
            internal merged-row space; pass the values from a previous
            solution's certificate-free run or just the primal point).
        cache: Optional reusable workspace for repeated solves with the
            same (P, G, boxes) structure.
        polish: Attempt the direct active-set KKT refinement at the end.

    Returns:
        QpSolution with ``status == "optimal"`` only if every KKT residual
        is within ``tol``; primal infeasibility yields ``"infeasible"``
        with a Farkas-type certificate vector.
    """
    ws = _setup(prob, cache)
    n = prob.n
    A, Ab, Pb, qb = ws["A"], ws["Ab"], ws["Pb"], ws["qb"]
    d, e, cost = ws["d"], ws["e"], ws["cost"]
    m = A.shape[0]
    lo = np.concatenate([ws["lo_g"], prob.lb])
    up = np.concatenate([ws["up_g"], prob.ub])
    lo_s = e * lo
    up_s = e * up

    if warm_start is not None:
        x = warm_start[0] / d
        if warm_start[1] is not None and warm_start[1].shape == (m,):
            y = cost * (warm_start[1] / e)
        else:
            y = np.zeros(m)
        z = np.clip(Ab @ x, lo_s, up_s)
    else:
        x = np.zeros(n)
        y = np.zeros(m)
        z = np.clip(np.zeros(m), lo_s, up_s)

    rho_vec = ws["rho_vec"]
    lu = ws["lu"]
    it = 0
    certificate = None
    check_level = max(0.1 * tol, 1e-7)
    best: Optional[tuple[tuple[float, float, float], float, np.ndarray, np.ndarray]] = None

    def consider(x_c, y_c):
        """Keep the candidate with the smallest normalized residual."""
        nonlocal best
        res, norm = _residuals(prob, A, lo, up, x_c, y_c)
        if best is None or norm < best[1]:
            best = (res, norm, x_c, y_c)
        return norm

    while it < max_iter:
        it += 1
        rhs = np.concatenate([_SIGMA * x - qb, z - y / rho_vec])
        sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
        xt = sol[:n]
        nu = sol[n:]
        zt = z + (nu - y) / rho_vec
        x_new = _ALPHA * xt + (1 - _ALPHA) * x
        z_arg = _ALPHA * zt + (1 - _ALPHA) * z + y / rho_vec
        z_new = np.clip(z_arg, lo_s, up_s)
        y_new = rho_vec * (z_arg - z_new)
        dy = y_new - y
        x, z, y = x_new, z_new, y_new

        if it % _CHECK_EVERY == 0 or it == max_iter:
            x_u = d * x
            y_u = y * e / cost
            norm = consider(x_u, y_u)
            if norm <= check_level:
                if polish:
                    pol = _polish(prob, A, lo, up, x_u, y_u, tol)
                    if pol is not None:
                        norm = min(norm, consider(pol[0], pol[1]))
                if best[1] <= tol:
                    break
                # Identified accuracy not reached yet: require more from
                # the iterates before polishing again.
                check_level = max(best[1] * 0.05, 1e-13)
            # Primal infeasibility test on the dual increment.
            dy_u = dy * e / cost
            dy_norm = np.abs(dy_u).max(initial=0.0)
            if dy_norm > 1e-12:
                atdy = np.abs(A.T @ dy_u).max(initial=0.0)
                dy_p = np.maximum(dy_u, 0.0)
                dy_m = np.minimum(dy_u, 0.0)
                inf_up = ~np.isfinite(up)
                inf_lo = ~np.isfinite(lo)
                ok_dir = (
                    dy_p[inf_up].max(initial=0.0) <= 1e-10 * dy_norm
                    and (-dy_m[inf_lo]).max(initial=0.0) <= 1e-10 * dy_norm
                )
                if ok_dir and atdy <= 1e-10 * dy_norm:
                    support = float(
                        up[~inf_up] @ dy_p[~inf_up] + lo[~inf_lo] @ dy_m[~inf_lo]
                    )
                    if support <= -1e-10 * dy_norm:
                        certificate = dy_u / dy_norm
                        break
            # Deterministic rho adaptation on a fixed schedule.
            if it % (_CHECK_EVERY * 8) == 0:
                ax = A @ x_u
                z_u = z / e
                r_prim = np.abs(ax - z_u).max(initial=0.0)
                r_dual = np.abs(prob.P @ x_u + prob.r + A.T @ y_u).max(initial=0.0)
                p_ref = max(np.abs(ax).max(initial=0.0), np.abs(z_u).max(initial=0.0))
                d_ref = max(
                    np.abs(prob.P @ x_u).max(initial=0.0),
                    np.abs(prob.r).max(initial=0.0),
                    np.abs(A.T @ y_u).max(initial=0.0),
                )
                if r_prim > 0 and r_dual > 0:
                    ratio = np.sqrt(
                        (r_prim / max(p_ref, 1e-12))
                        / max(r_dual / max(d_ref, 1e-12), 1e-12)
                    )
                    if ratio > 5.0 or ratio < 0.2:
                        base = np.where(ws["is_eq"], _RHO_EQ_BOOST, 1.0)
                        rho_vec = np.clip(rho_vec * ratio, 1e-6 * base, 1e6 * base)
                        lu = _factor(Pb, Ab, _SIGMA, rho_vec)

    if certificate is not None:
        x_u = d * x
        y_u = y * e / cost
        res, _ = _residuals(prob, A, lo, up, x_u, y_u)
        return QpSolution(
            x=x_u,
            status=INFEASIBLE,
            objective=float("nan"),
            kkt_residuals=res,
            iterations=it,
            certificate=certificate,
            y=y_u,
        )

    if best is None:
        consider(d * x, y * e / cost)
    if polish:
        pol = _polish(prob, A, lo, up, best[2], best[3], tol)
        if pol is not None:
            consider(pol[0], pol[1])
    res, norm = best[0], best[1]
    return QpSolution(
        x=best[2],
        status=OPTIMAL if norm <= tol else MAX_ITER,
        objective=prob.objective(best[2]),
        kkt_residuals=res,
        iterations=it,
        y=best[3],
    )


def solve_penalized_qp(
    prob: QpProblem,
    local_rows: np.ndarray,
    rho: float,
    tol: float = 1e-6,
    max_iter: int = 20000,
    warm_start: Optional[np.ndarray] = None,
    cache: Optional[AdmmCache] = None,
    polish: bool = True,
) -> QpSolution:
    """Minimize ``f(x) + rho * sum(max(0, G_loc x - h_loc))`` with the
    remaining rows of G kept hard.

    The max-penalty is reformulated exactly with epigraph slacks
    (``G_loc x - h_loc <= s``, ``s >= 0``, cost ``rho * sum(s)``) so the
    solve is itself a standard QP and inherits :func:`solve_qp`'s contract.
    The reported objective is the penalized cost at the returned ``x``.
    """
    local_rows = np.asarray(local_rows, dtype=int)
    mask = np.zeros(prob.m, dtype=bool)
    mask[local_rows] = True
    G_loc, h_loc = prob.G[mask], prob.h[mask]
    G_hard, h_hard = prob.G[~mask], prob.h[~mask]
    L = G_loc.shape[0]
    n = prob.n
    if L == 0:
        inner = QpProblem(
            n=n, P=prob.P, r=prob.r, G=G_hard, h=h_hard, lb=prob.lb, ub=prob.ub, c=prob.c
        )
        return solve_qp(inner, tol, max_iter,
                        warm_start=(warm_start, None) if warm_start is not None else None,
                        cache=cache, polish=polish)

    P = np.zeros((n + L, n + L))
    P[:n, :n] = prob.P
    r = np.concatenate([prob.r, rho * np.ones(L)])
    G = np.zeros((prob.m, n + L))
    G[: G_hard.shape[0], :n] = G_hard
    G[G_hard.shape[0] :, :n] = G_loc
    G[G_hard.shape[0] :, n:] = -np.eye(L)
    h = np.concatenate([h_hard, h_loc])
    lb = np.concatenate([prob.lb, np.zeros(L)])
    ub = np.concatenate([prob.ub, np.full(L, np.inf)])
    lifted = QpProblem(n=n + L, P=P, r=r, G=G, h=h, lb=lb, ub=ub, c=prob.c)
    ws = None
    if warm_start is not None:
        s0 = np.maximum(0.0, G_loc @ warm_start - h_loc)
        ws = (np.concatenate([warm_start, s0]), None)
    sol = solve_qp(lifted, tol, max_iter, warm_start=ws, cache=cache, polish=polish)
    x = sol.x[:n]
    if sol.status == INFEASIBLE:
        return QpSolution(x=x, status=INFEASIBLE, objective=float("nan"),
                          kkt_residuals=sol.kkt_residuals, iterations=sol.iterations,
                          certificate=sol.certificate)
    viol = np.maximum(0.0, G_loc @ x - h_loc)
    obj = prob.objective(x) + rho * float(viol.sum())
    return QpSolution(x=x, status=sol.status, objective=obj,
                      kkt_residuals=sol.kkt_residuals, iterations=sol.iterations)
