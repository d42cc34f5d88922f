"""Small-scale exact mixed-integer solver.

Integer variables carry finite, preference-ordered domains and a feature
map; constraint rows and the linear objective act on the concatenated
feature vector, while an optional continuous block is a :class:`QpProblem`
solved at each leaf.  A switch-offset variable exposes its induced light
schedule as features, which keeps every row linear even though the
schedule is a step function of the offset.

Correctness first: exhaustive enumeration below a size threshold,
depth-first branch and bound with optimistic bounds above it, identical
results by construction.  Exploration is deterministic (variables in the
order given, values in domain order) and objective ties resolve to the
first assignment explored.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .model import light_schedule
from .qp import INFEASIBLE, OPTIMAL, QpProblem, QpSolution, solve_penalized_qp, solve_qp

ENUM_THRESHOLD = 4096


def _plain_features(v: int) -> np.ndarray:
    return np.array([float(v)])


@dataclass(frozen=True)
class IntVar:
    """Finite-domain integer variable.

    ``domain`` is preference-ordered: the solver explores values in this
    order and ties in the objective keep the earliest assignment.
    ``features`` maps a value to the row/objective coefficients' view of it.
    """

    name: str
    domain: tuple[int, ...]
    n_features: int = 1
    features: Callable[[int], np.ndarray] = _plain_features

    def __post_init__(self):
        if len(self.domain) == 0:
            raise ValueError(f"variable {self.name} has empty domain")
        probe = self.features(self.domain[0])
        if probe.shape != (self.n_features,):
            raise ValueError(f"variable {self.name}: feature shape mismatch")


def binary_var(name: str) -> IntVar:
    return IntVar(name=name, domain=(0, 1))


def kappa_var(name: str, s0: int, horizon: int) -> IntVar:
    """Switch-offset variable with features ``[kappa, s(1), ..., s(H)]``.

    The no-switch value ``H + 2`` leads the domain so that cost ties
    resolve to the smallest commitment; the remaining offsets follow in
    ascending order.
    """
    domain = (horizon + 2,) + tuple(range(1, horizon + 2))

    def feats(v: int) -> np.ndarray:
        return np.concatenate([[float(v)], light_schedule(s0, v, horizon).astype(float)])

    return IntVar(name=name, domain=domain, n_features=1 + horizon, features=feats)


@dataclass(frozen=True)
class MipProblem:
    """Mixed problem over integer feature blocks and a continuous block.

    Rows read ``a_int @ features + a_cont @ x_cont <= b``.  The continuous
    block's own constraints (G/h/boxes) always stay hard; the local/hard
    split of the ``b`` rows is chosen by the penalized solver's caller.
    """

    integers: tuple[IntVar, ...]
    continuous: Optional[QpProblem]
    a_int: np.ndarray
    a_cont: Optional[np.ndarray]
    b: np.ndarray
    c_int: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        F = sum(iv.n_features for iv in self.integers)
        m = self.b.shape[0]
        if self.a_int.shape != (m, F):
            raise ValueError(f"a_int must be {m}x{F}, got {self.a_int.shape}")
        if self.c_int.shape != (F,):
            raise ValueError("c_int has wrong shape")
        if self.continuous is not None:
            nc = self.continuous.n
            if self.a_cont is None or self.a_cont.shape != (m, nc):
                raise ValueError("a_cont shape inconsistent with continuous block")
        elif self.a_cont is not None and self.a_cont.size:
            raise ValueError("a_cont given without a continuous block")

    @property
    def space_size(self) -> int:
        return math.prod(len(iv.domain) for iv in self.integers)

    def feature_slices(self) -> list[slice]:
        out, off = [], 0
        for iv in self.integers:
            out.append(slice(off, off + iv.n_features))
            off += iv.n_features
        return out


@dataclass(frozen=True)
class MipSolution:
    assignment: dict[str, int]
    x_cont: Optional[np.ndarray]
    objective: float
    status: str
    nodes_explored: int = 0


class MipBudgetError(RuntimeError):
    """Node budget exhausted; carries the best incumbent found so far."""

    def __init__(self, incumbent: Optional[MipSolution]):
        super().__init__("node budget exhausted")
        self.incumbent = incumbent


class _LeafEvaluator:
    def __init__(self, prob: MipProblem, local_mask: np.ndarray, rho: float, qp_tol: float):
        self.prob = prob
        self.slices = prob.feature_slices()
        self.local_mask = local_mask
        self.rho = rho
        self.qp_tol = qp_tol
        self.feats = [
            {v: iv.features(v) for v in iv.domain} for iv in prob.integers
        ]
        if prob.continuous is not None and prob.a_cont is not None and prob.b.size:
            self.cont_rows = np.abs(prob.a_cont).max(axis=1) > 0.0
        else:
            self.cont_rows = np.zeros(prob.b.shape[0], dtype=bool)

    def full_features(self, values: tuple[int, ...]) -> np.ndarray:
        if not self.prob.integers:
            return np.zeros(0)
        return np.concatenate([self.feats[i][v] for i, v in enumerate(values)])

    def evaluate(self, values: tuple[int, ...]):
        """Returns (feasible, objective, x_cont) for a full assignment."""
        prob = self.prob
        feat = self.full_features(values)
        obj = float(prob.c_int @ feat) + prob.const
        if prob.b.size:
            lhs_int = prob.a_int @ feat
        else:
            lhs_int = np.zeros(0)
        pure = ~self.cont_rows
        pure_hard = pure & ~self.local_mask
        pure_local = pure & self.local_mask
        if np.any(lhs_int[pure_hard] > prob.b[pure_hard] + 1e-9):
            return False, math.inf, None
        if pure_local.any():
            viol = np.maximum(0.0, lhs_int[pure_local] - prob.b[pure_local])
            obj += self.rho * float(viol.sum())
        if prob.continuous is None:
            return True, obj, None
        base = prob.continuous
        cont_hard = self.cont_rows & ~self.local_mask
        cont_local = self.cont_rows & self.local_mask
        G = np.vstack([base.G, prob.a_cont[cont_hard], prob.a_cont[cont_local]])
        h = np.concatenate(
            [
                base.h,
                prob.b[cont_hard] - lhs_int[cont_hard],
                prob.b[cont_local] - lhs_int[cont_local],
            ]
        )
        inner = QpProblem(
            n=base.n, P=base.P, r=base.r, G=G, h=h, lb=base.lb, ub=base.ub, c=base.c
        )
        n_loc = int(cont_local.sum())
        if n_loc:
            loc_idx = np.arange(G.shape[0] - n_loc, G.shape[0])
            sol = solve_penalized_qp(inner, loc_idx, self.rho, tol=self.qp_tol)
        else:
            sol = solve_qp(inner, tol=self.qp_tol)
        if sol.status == INFEASIBLE:
            return False, math.inf, None
        return True, obj + sol.objective, sol.x


def _solve_continuous_only(prob: MipProblem, local_mask, rho, qp_tol) -> MipSolution:
    base = prob.continuous
    if base is None:
        raise ValueError("problem has neither integer nor continuous variables")
    hard = ~local_mask
    G = np.vstack([base.G] + ([prob.a_cont[hard], prob.a_cont[local_mask]] if prob.b.size else []))
    h = np.concatenate([base.h] + ([prob.b[hard], prob.b[local_mask]] if prob.b.size else []))
    inner = QpProblem(n=base.n, P=base.P, r=base.r, G=G, h=h, lb=base.lb, ub=base.ub, c=base.c)
    n_loc = int(local_mask.sum())
    if n_loc:
        idx = np.arange(G.shape[0] - n_loc, G.shape[0])
        sol = solve_penalized_qp(inner, idx, rho, tol=qp_tol)
    else:
        sol = solve_qp(inner, tol=qp_tol)
    status = OPTIMAL if sol.status == OPTIMAL else sol.status
    return MipSolution(
        assignment={},
        x_cont=sol.x,
        objective=sol.objective + prob.const,
        status=status,
        nodes_explored=1,
    )


def _enumerate(prob, ev, budget) -> MipSolution:
    best = None
    best_obj = math.inf
    nodes = 0
    for values in itertools.product(*[iv.domain for iv in prob.integers]):
        nodes += 1
        if budget is not None and nodes > budget:
            raise MipBudgetError(best)
        ok, obj, x_cont = ev.evaluate(values)
        if ok and obj < best_obj:
            best_obj = obj
            best = MipSolution(
                assignment={iv.name: v for iv, v in zip(prob.integers, values)},
                x_cont=x_cont,
                objective=obj,
                status=OPTIMAL,
                nodes_explored=nodes,
            )
    if best is None:
        return MipSolution({}, None, math.inf, INFEASIBLE, nodes)
    return MipSolution(best.assignment, best.x_cont, best.objective, OPTIMAL, nodes)


def _branch_and_bound(prob, ev, budget, rho) -> MipSolution:
    nvar = len(prob.integers)
    slices = prob.feature_slices()
    # Per-variable minima of objective and row contributions over the domain.
    min_cost = np.zeros(nvar)
    row_min = np.zeros((prob.b.shape[0], nvar))
    for i, iv in enumerate(prob.integers):
        fmat = np.array([ev.feats[i][v] for v in iv.domain])
        min_cost[i] = float((fmat @ prob.c_int[slices[i]]).min())
        if prob.b.size:
            row_min[:, i] = (prob.a_int[:, slices[i]] @ fmat.T).min(axis=1)
    pure = ~ev.cont_rows
    pure_hard = pure & ~ev.local_mask
    pure_local = pure & ev.local_mask
    cont_lb = 0.0
    if prob.continuous is not None:
        root = solve_qp(prob.continuous, tol=1e-8)
        if root.status == INFEASIBLE:
            return MipSolution({}, None, math.inf, INFEASIBLE, 1)
        cont_lb = root.objective

    state = {"best": None, "best_obj": math.inf, "nodes": 0}

    def descend(level, values, fixed_cost, fixed_rows):
        state["nodes"] += 1
        if budget is not None and state["nodes"] > budget:
            raise MipBudgetError(state["best"])
        if level == nvar:
            ok, obj, x_cont = ev.evaluate(tuple(values))
            if ok and obj < state["best_obj"]:
                state["best_obj"] = obj
                state["best"] = MipSolution(
                    assignment={iv.name: v for iv, v in zip(prob.integers, values)},
                    x_cont=x_cont,
                    objective=obj,
                    status=OPTIMAL,
                )
            return
        rest_cost = float(min_cost[level:].sum())
        for v in prob.integers[level].domain:
            feat = ev.feats[level][v]
            cost_v = fixed_cost + float(prob.c_int[slices[level]] @ feat)
            rows_v = fixed_rows + (prob.a_int[:, slices[level]] @ feat if prob.b.size else 0.0)
            rest_rows = row_min[:, level + 1 :].sum(axis=1) if prob.b.size else 0.0
            if prob.b.size:
                opt_lhs = rows_v + rest_rows
                if np.any(opt_lhs[pure_hard] > prob.b[pure_hard] + 1e-9):
                    continue
                pen_lb = rho * float(
                    np.maximum(0.0, opt_lhs[pure_local] - prob.b[pure_local]).sum()
                )
            else:
                pen_lb = 0.0
            rest = rest_cost - float(min_cost[level])
            bound = cost_v + rest + cont_lb + prob.const + pen_lb
            if bound >= state["best_obj"]:
                continue
            values.append(v)
            descend(level + 1, values, cost_v, rows_v)
            values.pop()

    descend(0, [], 0.0, np.zeros(prob.b.shape[0]) if prob.b.size else 0.0)
    if state["best"] is None:
        return MipSolution({}, None, math.inf, INFEASIBLE, state["nodes"])
    b = state["best"]
    return MipSolution(b.assignment, b.x_cont, b.objective, OPTIMAL, state["nodes"])


def solve_mip(
    prob: MipProblem,
    budget: Optional[int] = None,
    qp_tol: float = 1e-8,
    force_branch_and_bound: bool = False,
) -> MipSolution:
    """Exact optimum over the finite integer space.

    Enumerates exhaustively when the space has at most
    ``ENUM_THRESHOLD`` points, otherwise runs depth-first branch and
    bound; both paths agree exactly.  Raises :class:`MipBudgetError`
    carrying the incumbent if ``budget`` nodes are exceeded.
    """
    no_local = np.zeros(prob.b.shape[0], dtype=bool)
    if not prob.integers:
        return _solve_continuous_only(prob, no_local, 0.0, qp_tol)
    ev = _LeafEvaluator(prob, no_local, 0.0, qp_tol)
    if prob.space_size <= ENUM_THRESHOLD and not force_branch_and_bound:
        return _enumerate(prob, ev, budget)
    return _branch_and_bound(prob, ev, budget, 0.0)


def solve_penalized_tlc(
    prob: MipProblem,
    local_rows: np.ndarray,
    rho: float,
    budget: Optional[int] = None,
    qp_tol: float = 1e-8,
    force_branch_and_bound: bool = False,
) -> MipSolution:
    """Exact minimizer of the penalized cost over the finite domain.

    Rows listed in ``local_rows`` contribute ``rho * max(0, violation)``
    to the objective (evaluated exactly at each leaf); all other rows are
    kept hard.  Returns infeasible only if every leaf violates a hard row.
    """
    local_mask = np.zeros(prob.b.shape[0], dtype=bool)
    local_mask[np.asarray(local_rows, dtype=int)] = True
    if not prob.integers:
        return _solve_continuous_only(prob, local_mask, rho, qp_tol)
    ev = _LeafEvaluator(prob, local_mask, rho, qp_tol)
    if prob.space_size <= ENUM_THRESHOLD and not force_branch_and_bound:
        return _enumerate(prob, ev, budget)
    return _branch_and_bound(prob, ev, budget, rho)
