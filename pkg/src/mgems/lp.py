"""Dense linear programs with duals: model container, bundled simplex, HiGHS adapter.

Every problem is a minimization over bounded variables

    min c'x   s.t.   A x (<=, =, >=) b,   lo <= x <= hi,

stored dense (planner instances are a few hundred rows; density keeps the
code simple).  Each row carries an opaque label so callers can look up its
dual value.  Dual sign convention throughout: the dual of row i is
d(optimal objective)/d(b_i) for the minimization, so the dual of a binding
equality ``x = b`` in ``min x`` is +1 and duals of <= rows are <= 0.

Two interchangeable solvers implement :class:`LpSolver`:

* :class:`SimplexSolver` -- the bundled two-phase primal simplex with bounded
  variables, Dantzig pricing, and a Bland's-rule fallback as the anti-cycling
  guard.  Pure numpy; deterministic.
* :class:`HighsSolver`   -- adapter over ``scipy.optimize.linprog`` (HiGHS),
  used for the large planner instances where speed matters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Hashable, Mapping

import numpy as np

__all__ = [
    "LpStatus",
    "LpModel",
    "LpSolution",
    "LpError",
    "SolverError",
    "LpSolver",
    "SimplexSolver",
    "HighsSolver",
    "solve_lp",
    "dual_of",
    "duality_gap",
    "dump_lp",
    "get_solver",
]

TOL_FEAS = 1e-7
TOL_PIVOT = 1e-9

SENSE_LE = "L"
SENSE_EQ = "E"
SENSE_GE = "G"


class LpError(ValueError):
    """Malformed model or bad query (dimension mismatch, unknown label)."""


class SolverError(RuntimeError):
    """The solver failed to certify a result (cycling guard, numerical trouble)."""


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class LpModel:
    """Dense LP in bounded standard form.

    ``senses`` uses 'L' (<=), 'E' (=), 'G' (>=) per row.  ``row_labels`` must
    be unique hashables; they are the handle for dual lookup.
    """

    c: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    a: np.ndarray
    senses: tuple[str, ...]
    b: np.ndarray
    row_labels: tuple[Hashable, ...]
    _label_index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        n = self.c.shape[0]
        m = self.b.shape[0]
        if self.a.shape != (m, n):
            raise LpError(f"matrix shape {self.a.shape} != ({m}, {n})")
        if self.lo.shape != (n,) or self.hi.shape != (n,):
            raise LpError("bound vectors must match the variable count")
        if len(self.senses) != m or len(self.row_labels) != m:
            raise LpError("senses/labels must match the row count")
        if any(s not in (SENSE_LE, SENSE_EQ, SENSE_GE) for s in self.senses):
            raise LpError("row senses must be 'L', 'E' or 'G'")
        if np.any(self.lo > self.hi):
            raise LpError("lower bound exceeds upper bound")
        if not np.all(np.isfinite(self.c)):
            raise LpError("objective coefficients must be finite")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise LpError("rows and right-hand sides must be finite")
        if not self._label_index:
            self._label_index = {lab: i for i, lab in enumerate(self.row_labels)}
        if len(self._label_index) != m:
            raise LpError("row labels must be unique")

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_rows(self) -> int:
        return self.b.shape[0]

    def row_index(self, label: Hashable) -> int:
        try:
            return self._label_index[label]
        except KeyError:
            raise LpError(f"unknown row label: {label!r}") from None

    def with_rhs(self, updates: Mapping[Hashable, float]) -> "LpModel":
        """Copy of the model with selected right-hand sides replaced.

        The constraint matrix is shared between the copies (it is never
        mutated), which keeps parametric re-solves cheap; solver-side
        conversion caches travel with it.
        """
        b = self.b.copy()
        for label, value in updates.items():
            b[self.row_index(label)] = value
        new = object.__new__(LpModel)
        new.c, new.lo, new.hi, new.a = self.c, self.lo, self.hi, self.a
        new.senses, new.row_labels = self.senses, self.row_labels
        new.b = b
        new._label_index = self._label_index
        new._solver_cache = self.solver_cache()
        return new

    def solver_cache(self) -> dict:
        """Mutable scratch space solvers may key derived matrices on."""
        cache = getattr(self, "_solver_cache", None)
        if cache is None:
            cache = {}
            self._solver_cache = cache
        return cache


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray | None
    objective: float | None
    duals: dict
    basis: np.ndarray | None = None
    certificate: np.ndarray | None = None
    iterations: int = 0


def dual_of(solution: LpSolution, label: Hashable) -> float:
    """Dual value of the labeled row (d objective / d rhs)."""
    if solution.status is not LpStatus.OPTIMAL:
        raise LpError("duals are only available for optimal solutions")
    try:
        return solution.duals[label]
    except KeyError:
        raise LpError(f"unknown row label: {label!r}") from None


# ---------------------------------------------------------------------------
# Bundled simplex
# ---------------------------------------------------------------------------

_NB_LO, _NB_HI, _NB_FREE, _BASIC = 0, 1, 2, 3


class LpSolver:
    """Solver interface: anything with solve(model) -> LpSolution."""

    def solve(self, model: LpModel) -> LpSolution:
        raise NotImplementedError


class SimplexSolver(LpSolver):
    """Two-phase primal simplex for bounded variables, dense algebra.

    Rows become equalities via slacks ('L' slack in [0, inf), 'G' slack in
    (-inf, 0], 'E' slack fixed at 0); infeasibility of the slack start is
    absorbed by signed artificial columns that phase 1 drives to zero.
    Pricing is Dantzig's rule until ``bland_after`` iterations, then Bland's
    rule, which guarantees termination on degenerate instances.  The basis
    inverse is kept explicitly and refactorized periodically.
    """

    def __init__(self, bland_after: int | None = None, max_iterations: int | None = None,
                 refactor_every: int = 64):
        self.bland_after = bland_after
        self.max_iterations = max_iterations
        self.refactor_every = refactor_every

    def solve(self, model: LpModel) -> LpSolution:
        m, n = model.n_rows, model.n_vars

        slack_lo = np.zeros(m)
        slack_hi = np.zeros(m)
        for i, s in enumerate(model.senses):
            if s == SENSE_LE:
                slack_lo[i], slack_hi[i] = 0.0, np.inf
            elif s == SENSE_GE:
                slack_lo[i], slack_hi[i] = -np.inf, 0.0
            else:
                slack_lo[i], slack_hi[i] = 0.0, 0.0

        lo = np.concatenate([model.lo, slack_lo])
        hi = np.concatenate([model.hi, slack_hi])
        a_full = np.hstack([model.a, np.eye(m)])

        # Start structural variables at the finite bound nearest zero.
        x = np.zeros(n + m)
        for j in range(n):
            if np.isfinite(lo[j]) and np.isfinite(hi[j]):
                x[j] = lo[j] if abs(lo[j]) <= abs(hi[j]) else hi[j]
            elif np.isfinite(lo[j]):
                x[j] = lo[j]
            elif np.isfinite(hi[j]):
                x[j] = hi[j]
        stat = np.empty(n + m, dtype=np.int8)
        for j in range(n):
            if x[j] == lo[j] and np.isfinite(lo[j]):
                stat[j] = _NB_LO
            elif np.isfinite(hi[j]) and x[j] == hi[j]:
                stat[j] = _NB_HI
            else:
                stat[j] = _NB_FREE

        resid = model.b - a_full[:, :n] @ x[:n]
        slack_val = np.clip(resid, slack_lo, slack_hi)
        rho = resid - slack_val

        art_rows = np.nonzero(np.abs(rho) > 0.0)[0]
        n_art = len(art_rows)
        if n_art:
            art_cols = np.zeros((m, n_art))
            for k, i in enumerate(art_rows):
                art_cols[i, k] = np.sign(rho[i])
            a_full = np.hstack([a_full, art_cols])
            lo = np.concatenate([lo, np.zeros(n_art)])
            hi = np.concatenate([hi, np.full(n_art, np.inf)])
            x = np.concatenate([x, np.abs(rho[art_rows])])
            stat = np.concatenate([stat, np.full(n_art, _BASIC, dtype=np.int8)])

        basis = np.arange(n, n + m)
        x[n:n + m] = slack_val
        stat[n:n + m] = _BASIC
        for k, i in enumerate(art_rows):
            # the artificial takes the row; the displaced slack rests at the
            # bound it was clipped to
            basis[i] = n + m + k
            at_hi = np.isfinite(slack_hi[i]) and slack_val[i] == slack_hi[i] \
                and slack_hi[i] != slack_lo[i]
            stat[n + i] = _NB_HI if at_hi else _NB_LO

        state = _SimplexState(a_full, model.b, lo, hi, x, stat, basis,
                              self.refactor_every)

        total = a_full.shape[1]
        bland_after = self.bland_after if self.bland_after is not None else max(200, 10 * total)
        max_iter = self.max_iterations if self.max_iterations is not None else 5000 + 200 * total

        if n_art:
            cost1 = np.zeros(total)
            cost1[n + m:] = 1.0
            status1 = state.run(cost1, bland_after, max_iter)
            if status1 is LpStatus.UNBOUNDED:  # phase-1 objective is bounded below
                raise SolverError("phase-1 reported unbounded; numerical failure")
            infeas = cost1 @ state.x
            if infeas > TOL_FEAS * max(1.0, np.abs(model.b).max(initial=0.0)):
                y = state.duals(cost1)
                duals = {lab: y[i] for i, lab in enumerate(model.row_labels)}
                return LpSolution(LpStatus.INFEASIBLE, None, None, duals,
                                  certificate=y, iterations=state.iterations)
            # pin artificials at zero for phase 2
            state.lo[n + m:] = 0.0
            state.hi[n + m:] = 0.0
            state.x[n + m:] = np.where(stat[n + m:] == _BASIC, state.x[n + m:], 0.0)

        cost2 = np.zeros(total)
        cost2[:n] = model.c
        status2 = state.run(cost2, bland_after, max_iter)
        if status2 is LpStatus.UNBOUNDED:
            ray = state.last_ray
            return LpSolution(LpStatus.UNBOUNDED, None, None, {},
                              certificate=None if ray is None else ray[:n],
                              iterations=state.iterations)

        xs = state.x[:n].copy()
        obj = float(model.c @ xs)
        y = state.duals(cost2)
        duals = {lab: float(y[i]) for i, lab in enumerate(model.row_labels)}
        _validate_primal(model, xs)
        return LpSolution(LpStatus.OPTIMAL, xs, obj, duals,
                          basis=state.stat[:n].copy(), iterations=state.iterations)


class _SimplexState:
    """Mutable simplex workspace shared by the two phases."""

    def __init__(self, a_full, b, lo, hi, x, stat, basis, refactor_every):
        self.a = a_full
        self.b = b
        self.lo = lo
        self.hi = hi
        self.x = x
        self.stat = stat
        self.basis = basis
        self.refactor_every = refactor_every
        self.binv = np.eye(len(basis))
        self.iterations = 0
        self.last_ray = None
        self._refactorize()

    def _refactorize(self):
        bmat = self.a[:, self.basis]
        try:
            self.binv = np.linalg.inv(bmat)
        except np.linalg.LinAlgError as exc:
            raise SolverError("singular basis matrix") from exc
        nb_mask = self.stat != _BASIC
        rhs = self.b - self.a[:, nb_mask] @ self.x[nb_mask]
        self.x[self.basis] = self.binv @ rhs

    def duals(self, cost):
        return cost[self.basis] @ self.binv

    def run(self, cost, bland_after, max_iter) -> LpStatus:
        a, lo, hi, x, stat = self.a, self.lo, self.hi, self.x, self.stat
        since_refactor = 0
        for it in range(max_iter):
            self.iterations += 1
            y = cost[self.basis] @ self.binv
            d = cost - y @ a
            fixed = lo == hi
            inc = ((stat == _NB_LO) | (stat == _NB_FREE)) & (d < -TOL_PIVOT)
            dec = ((stat == _NB_HI) | (stat == _NB_FREE)) & (d > TOL_PIVOT)
            eligible = (inc | dec) & ~fixed
            if not eligible.any():
                return LpStatus.OPTIMAL
            if it < bland_after:
                scores = np.where(eligible, np.abs(d), -1.0)
                e = int(np.argmax(scores))
            else:
                e = int(np.argmax(eligible))  # lowest eligible index (Bland)
            sigma = 1.0 if inc[e] else -1.0

            xi = self.binv @ a[:, e]
            delta = -sigma * xi  # basic values move by delta * t

            bvars = self.basis
            t_own = hi[e] - lo[e] if np.isfinite(hi[e]) and np.isfinite(lo[e]) else np.inf
            with np.errstate(divide="ignore", invalid="ignore"):
                room_dn = x[bvars] - lo[bvars]
                room_up = hi[bvars] - x[bvars]
                tk = np.where(delta < -TOL_PIVOT, room_dn / np.where(delta < -TOL_PIVOT, -delta, 1.0),
                              np.where(delta > TOL_PIVOT, room_up / np.where(delta > TOL_PIVOT, delta, 1.0),
                                       np.inf))
            tk = np.where(np.isnan(tk), np.inf, tk)
            t_rows = tk.min() if len(tk) else np.inf
            t = min(t_own, t_rows)
            if not np.isfinite(t):
                dx = np.zeros_like(x)
                dx[e] = sigma
                dx[bvars] += delta
                self.last_ray = dx
                return LpStatus.UNBOUNDED
            t = max(t, 0.0)

            if t_own <= t_rows:
                # bound flip: the entering variable crosses to its other bound
                x[bvars] += delta * t
                x[e] = hi[e] if sigma > 0 else lo[e]
                stat[e] = _NB_HI if sigma > 0 else _NB_LO
                continue

            candidates = np.nonzero(tk <= t * (1 + 1e-12) + 1e-300)[0]
            r = int(candidates[np.argmin(bvars[candidates])])
            leaving = int(bvars[r])

            x[bvars] += delta * t
            x[e] = x[e] + sigma * t
            # snap the leaving variable onto the bound it hit
            x[leaving] = lo[leaving] if delta[r] < 0 else hi[leaving]
            stat[leaving] = _NB_LO if delta[r] < 0 else _NB_HI
            stat[e] = _BASIC
            self.basis[r] = e

            piv = xi[r]
            if abs(piv) < TOL_PIVOT:
                raise SolverError("pivot element below tolerance")
            self.binv[r, :] /= piv
            other = np.arange(len(bvars)) != r
            self.binv[other, :] -= np.outer(xi[other], self.binv[r, :])

            since_refactor += 1
            if since_refactor >= self.refactor_every:
                self._refactorize()
                since_refactor = 0
        raise SolverError(f"simplex exceeded the iteration guard ({max_iter})")


def _sense_masks(model: LpModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cache = model.solver_cache()
    masks = cache.get("sense_masks")
    if masks is None:
        senses = np.array(model.senses)
        masks = (senses == SENSE_EQ, senses == SENSE_LE, senses == SENSE_GE)
        cache["sense_masks"] = masks
    return masks


def _validate_primal(model: LpModel, x: np.ndarray) -> None:
    scale = max(1.0, float(np.abs(model.b).max(initial=0.0)),
                float(np.abs(x).max(initial=0.0)))
    tol = 1e-6 * scale
    if np.any(x < model.lo - tol) or np.any(x > model.hi + tol):
        raise SolverError("solution violates variable bounds")
    r = model.a @ x - model.b
    eq, le, ge = _sense_masks(model)
    bad = (eq & (np.abs(r) > tol)) | (le & (r > tol)) | (ge & (r < -tol))
    if bad.any():
        i = int(np.argmax(bad))
        raise SolverError(f"row {model.row_labels[i]!r} violated by {r[i]:.3e}")


# ---------------------------------------------------------------------------
# HiGHS adapter
# ---------------------------------------------------------------------------


class HighsSolver(LpSolver):
    """scipy.optimize.linprog (HiGHS) behind the same contract.

    scipy reports marginals as d(objective)/d(rhs) directly, which is this
    package's dual convention; '>=' rows are negated into '<=' form and
    their duals sign-flipped back.
    """

    @staticmethod
    def _prepared(model: LpModel):
        """Row split and sparse matrices, cached on the model.

        Parametric re-solves share the matrix through ``with_rhs``, so the
        dense-to-sparse conversion happens once per structure.
        """
        cache = model.solver_cache()
        prep = cache.get("highs")
        if prep is None:
            from scipy import sparse

            eq_idx = np.array([i for i, s in enumerate(model.senses)
                               if s == SENSE_EQ], dtype=int)
            ub_idx = np.array([i for i, s in enumerate(model.senses)
                               if s != SENSE_EQ], dtype=int)
            sign = np.array([1.0 if model.senses[i] == SENSE_LE else -1.0
                             for i in ub_idx])
            a_eq = sparse.csr_matrix(model.a[eq_idx]) if len(eq_idx) else None
            a_ub = sparse.csr_matrix(model.a[ub_idx] * sign[:, None]) \
                if len(ub_idx) else None
            bounds = [(l if np.isfinite(l) else None, h if np.isfinite(h) else None)
                      for l, h in zip(model.lo, model.hi)]
            prep = (eq_idx, ub_idx, sign, a_eq, a_ub, bounds)
            cache["highs"] = prep
        return prep

    def solve(self, model: LpModel) -> LpSolution:
        from scipy.optimize import linprog

        eq_idx, ub_idx, sign, a_eq, a_ub, bounds = self._prepared(model)
        b_eq = model.b[eq_idx] if len(eq_idx) else None
        b_ub = model.b[ub_idx] * sign if len(ub_idx) else None
        res = linprog(model.c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                      bounds=bounds, method="highs")

        if res.status == 2:
            return LpSolution(LpStatus.INFEASIBLE, None, None, {})
        if res.status == 3:
            return LpSolution(LpStatus.UNBOUNDED, None, None, {})
        if res.status != 0:
            raise SolverError(f"HiGHS failed: {res.message}")

        duals = {}
        labels = model.row_labels
        if len(eq_idx):
            marg = res.eqlin.marginals
            for k, i in enumerate(eq_idx):
                duals[labels[i]] = float(marg[k])
        if len(ub_idx):
            marg = res.ineqlin.marginals * sign
            for k, i in enumerate(ub_idx):
                duals[labels[i]] = float(marg[k])
        x = np.asarray(res.x, dtype=float)
        _validate_primal(model, x)
        return LpSolution(LpStatus.OPTIMAL, x, float(res.fun), duals,
                          iterations=int(getattr(res, "nit", 0)))


_DEFAULT_SOLVER = SimplexSolver()
_SOLVERS = {"simplex": SimplexSolver, "highs": HighsSolver}


def get_solver(name: str | LpSolver | None) -> LpSolver:
    """Resolve a solver spec ('simplex', 'highs', an instance, or None)."""
    if name is None:
        return _DEFAULT_SOLVER
    if isinstance(name, LpSolver):
        return name
    try:
        return _SOLVERS[name]()
    except KeyError:
        raise LpError(f"unknown solver {name!r}; expected one of {sorted(_SOLVERS)}") from None


def solve_lp(model: LpModel, solver: str | LpSolver | None = None) -> LpSolution:
    """Solve the model; the bundled simplex is the default implementation."""
    return get_solver(solver).solve(model)


def duality_gap(model: LpModel, solution: LpSolution) -> float:
    """|primal - dual| objective gap reconstructed from the row duals.

    The dual objective for the bounded form is y'b plus the bound
    contributions of the reduced costs: positive reduced costs pair with
    lower bounds, negative ones with upper bounds.
    """
    if solution.status is not LpStatus.OPTIMAL:
        raise LpError("duality gap requires an optimal solution")
    y = np.array([solution.duals[lab] for lab in model.row_labels])
    d = model.c - y @ model.a
    dual_obj = float(y @ model.b)
    for j in range(model.n_vars):
        if d[j] > TOL_FEAS and np.isfinite(model.lo[j]):
            dual_obj += d[j] * model.lo[j]
        elif d[j] < -TOL_FEAS and np.isfinite(model.hi[j]):
            dual_obj += d[j] * model.hi[j]
    return abs(solution.objective - dual_obj)


def dump_lp(model: LpModel, var_names: list[str] | None = None) -> str:
    """Model as LP-format text, for eyeballing or external cross-checks."""
    names = var_names or [f"x{j}" for j in range(model.n_vars)]

    def expr(coefs):
        terms = [f"{'+' if v >= 0 else '-'} {abs(v):.12g} {names[j]}"
                 for j, v in enumerate(coefs) if v != 0.0]
        return " ".join(terms) if terms else "0"

    lines = ["Minimize", f" obj: {expr(model.c)}", "Subject To"]
    op = {SENSE_LE: "<=", SENSE_EQ: "=", SENSE_GE: ">="}
    for i, lab in enumerate(model.row_labels):
        lines.append(f" r{i}_{lab}: {expr(model.a[i])} {op[model.senses[i]]} {model.b[i]:.12g}")
    lines.append("Bounds")
    for j in range(model.n_vars):
        l = "-inf" if not np.isfinite(model.lo[j]) else f"{model.lo[j]:.12g}"
        h = "+inf" if not np.isfinite(model.hi[j]) else f"{model.hi[j]:.12g}"
        lines.append(f" {l} <= {names[j]} <= {h}")
    lines.append("End")
    return "\n".join(lines) + "\n"
