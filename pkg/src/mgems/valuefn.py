"""Piecewise-linear cost-to-go built from parametric planner solves.

The planner's optimal cost, seen as a function of the initial state of
charge, is convex and piecewise linear.  Solving the planner with the
initial SOC pinned at ``s'`` yields the value ``v(s')`` and, from the dual
``mu`` of the pinning row, a supporting cut

    v(s) >= v(s') + mu' (s - s'),

tight at the anchor.  The max over a set of such cuts under-approximates the
true function everywhere, which is exactly what the real-time problem needs
as a terminal value: embedded as epigraph rows, minimizing the epigraph
variable recovers the envelope.

Exploration over a one-dimensional state refines recursively: wherever two
adjacent cuts intersect, the envelope is probed against a fresh solve and a
new cut is added if the gap exceeds the tolerance.  For convex piecewise
linear targets this terminates with an exact envelope (up to the tolerance)
because every linear piece is discovered at most once.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from mgems.domain import DeviceFleet, MicrogridState
from mgems.lp import LpStatus, get_solver
from mgems.opp import OppInstance, build_opp

__all__ = [
    "Cut",
    "ValueFunction",
    "EpigraphRow",
    "reachable_range",
    "generate_cuts",
    "evaluate",
    "as_epigraph_rows",
    "cuts_to_csv",
]


@dataclass(frozen=True)
class Cut:
    """A supporting affine under-estimator anchored at ``anchor``."""

    anchor: np.ndarray
    value: float
    slope: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "anchor", np.atleast_1d(np.asarray(self.anchor, float)))
        object.__setattr__(self, "slope", np.atleast_1d(np.asarray(self.slope, float)))
        if not (np.all(np.isfinite(self.anchor)) and np.all(np.isfinite(self.slope))
                and np.isfinite(self.value)):
            raise ValueError("cut fields must be finite")

    def __call__(self, s: np.ndarray) -> float:
        return self.value + float(self.slope @ (np.atleast_1d(s) - self.anchor))


@dataclass
class ValueFunction:
    """Lower convex envelope of cuts over the explored SOC box."""

    cuts: list[Cut]
    domain_lo: np.ndarray
    domain_hi: np.ndarray
    stamp: str = ""
    events: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.cuts:
            raise ValueError("a value function needs at least one cut")
        self.domain_lo = np.atleast_1d(np.asarray(self.domain_lo, float))
        self.domain_hi = np.atleast_1d(np.asarray(self.domain_hi, float))

    @property
    def n_devices(self) -> int:
        return self.domain_lo.shape[0]


def evaluate(vf: ValueFunction, s) -> float:
    """Envelope value max_k [v_k + mu_k' (s - s'_k)]; clamps into the domain."""
    s = np.atleast_1d(np.asarray(s, float))
    if np.any(s < vf.domain_lo - 1e-9) or np.any(s > vf.domain_hi + 1e-9):
        warnings.warn(f"state {s} outside the explored domain; clamping",
                      stacklevel=2)
        s = np.clip(s, vf.domain_lo, vf.domain_hi)
    return max(cut(s) for cut in vf.cuts)


def reachable_range(state: MicrogridState | np.ndarray, delta_t_h: float,
                    fleet: DeviceFleet) -> tuple[np.ndarray, np.ndarray]:
    """Per-device SOC interval reachable by the end of the period.

    Full-throttle charging adds ``delta_t * p_cha_max * eta_cha``; full
    discharge drains ``delta_t * p_dis_max / eta_dis``; both clamp to the
    device capacity window.
    """
    soc = state.soc if isinstance(state, MicrogridState) else np.asarray(state, float)
    lo = np.empty(len(fleet.storage))
    hi = np.empty(len(fleet.storage))
    for d, dev in enumerate(fleet.storage):
        lo[d] = max(dev.s_min, soc[d] - delta_t_h * dev.p_dis_max / dev.eta_dis)
        hi[d] = min(dev.s_max, soc[d] + delta_t_h * dev.p_cha_max * dev.eta_cha)
    return lo, hi


@dataclass(frozen=True)
class EpigraphRow:
    """One cut as an LP row: slope' s_end - theta <= slope' anchor - value."""

    soc_coefs: np.ndarray
    rhs: float
    label: tuple


def as_epigraph_rows(vf: ValueFunction) -> list[EpigraphRow]:
    """Cut rows for embedding; theta always enters with coefficient -1."""
    rows = []
    for k, cut in enumerate(vf.cuts):
        rows.append(EpigraphRow(cut.slope.copy(),
                                float(cut.slope @ cut.anchor - cut.value),
                                ("cut", k)))
    return rows


class _Prober:
    """Parametric planner re-solves sharing one built model."""

    def __init__(self, instance: OppInstance, solver):
        self.instance = instance
        self.model = build_opp(instance)
        self.solver = get_solver(solver)
        self.n_solves = 0

    def __call__(self, s: np.ndarray) -> Cut | None:
        self.n_solves += 1
        model = self.model.with_rhs({("soc_init", d): float(s[d])
                                     for d in range(len(s))})
        sol = self.solver.solve(model)
        if sol.status is LpStatus.INFEASIBLE:
            return None
        if sol.status is not LpStatus.OPTIMAL:
            raise RuntimeError(f"planner probe ended {sol.status.value}")
        slope = np.array([sol.duals[("soc_init", d)] for d in range(len(s))])
        return Cut(np.asarray(s, float).copy(), float(sol.objective), slope)


def generate_cuts(instance: OppInstance, domain: tuple[np.ndarray, np.ndarray],
                  s_star: np.ndarray, budget: int = 12, eps: float = 0.5,
                  solver=None) -> ValueFunction:
    """Explore the cost-to-go over ``domain`` starting from ``s_star``.

    The first cut is taken at the most probable end-of-period state, then the
    domain endpoints, then intersection-point refinement (one-device states)
    until every envelope gap is within ``eps`` euro or ``budget`` cuts exist.
    Infeasible probes shrink the explored interval toward ``s_star`` and are
    recorded on the result.  Anchors are visited in a deterministic order, so
    the cut list is reproducible.
    """
    if budget < 2:
        raise ValueError("cut budget must be at least 2")
    lo = np.atleast_1d(np.asarray(domain[0], float)).copy()
    hi = np.atleast_1d(np.asarray(domain[1], float)).copy()
    s_star = np.clip(np.atleast_1d(np.asarray(s_star, float)), lo, hi)
    probe = _Prober(instance, solver)
    events: list[str] = []
    stamp = f"opp@{instance.start.isoformat()}x{instance.n_periods}"

    first = probe(s_star)
    if first is None:
        raise RuntimeError(f"planner infeasible at the expected state {s_star}")

    if len(s_star) == 1:
        cuts = _explore_1d(probe, first, lo, hi, s_star, budget, eps, events)
    else:
        cuts = _explore_axes(probe, first, lo, hi, s_star, budget, events)
    return ValueFunction(cuts, lo, hi, stamp=stamp, events=events)


def _feasible_endpoint(probe, point, s_star, lo, hi, events, max_bisect=8):
    """Probe ``point``; on infeasibility bisect toward s_star, shrinking the domain."""
    target = point.copy()
    cut = probe(target)
    steps = 0
    while cut is None and steps < max_bisect:
        target = 0.5 * (target + s_star)
        cut = probe(target)
        steps += 1
    if steps:
        events.append(f"domain shrunk from {point} to {target} after "
                      f"{steps} infeasible probes")
        if np.all(point >= s_star):
            hi[:] = target
        else:
            lo[:] = target
    return cut


def _explore_1d(probe, first, lo, hi, s_star, budget, eps, events):
    anchors: dict[float, Cut] = {float(first.anchor[0]): first}

    for endpoint in (lo.copy(), hi.copy()):
        if len(anchors) >= budget:
            break
        if any(abs(endpoint[0] - a) < 1e-9 for a in anchors):
            continue
        cut = _feasible_endpoint(probe, endpoint, s_star, lo, hi, events)
        if cut is None:
            events.append(f"endpoint {endpoint} unreachable; interval collapsed")
            continue
        key = float(cut.anchor[0])
        if all(abs(key - a) >= 1e-9 for a in anchors):
            anchors[key] = cut

    # refinement: probe each adjacent pair's intersection until gaps close
    open_pairs = _adjacent_pairs(anchors)
    converged: set[tuple[float, float]] = set()
    while open_pairs:
        a, b = open_pairs.pop(0)
        if (a, b) in converged or b - a < 1e-7:
            continue
        ca, cb = anchors[a], anchors[b]
        denom = ca.slope[0] - cb.slope[0]
        if abs(denom) < 1e-12:
            # equal slopes at both anchors of a convex function: affine between
            converged.add((a, b))
            continue
        x = (cb.value - cb.slope[0] * cb.anchor[0]
             - ca.value + ca.slope[0] * ca.anchor[0]) / denom
        x = min(max(x, a + 1e-9), b - 1e-9)
        env = max(ca(np.array([x])), cb(np.array([x])))
        cut = probe(np.array([x]))
        if cut is None:
            events.append(f"probe at {x} infeasible inside the domain")
            converged.add((a, b))
            continue
        gap = cut.value - env
        if gap > eps and len(anchors) < budget:
            key = float(cut.anchor[0])
            anchors[key] = cut
            open_pairs.extend([(a, key), (key, b)])
            open_pairs.sort()
        else:
            converged.add((a, b))
        if len(anchors) >= budget:
            break

    return [anchors[k] for k in sorted(anchors)]


def _adjacent_pairs(anchors):
    keys = sorted(anchors)
    return [(keys[i], keys[i + 1]) for i in range(len(keys) - 1)]


def _explore_axes(probe, first, lo, hi, s_star, budget, events):
    """Multi-device fallback: axis endpoints through s_star plus box corners."""
    cuts = [first]
    seen = [first.anchor]

    def try_point(point):
        if len(cuts) >= budget:
            return
        if any(np.allclose(point, p, atol=1e-9) for p in seen):
            return
        cut = probe(point)
        if cut is None:
            events.append(f"anchor {point} infeasible; skipped")
            return
        seen.append(point)
        cuts.append(cut)

    n = len(s_star)
    for d in range(n):
        for bound in (lo[d], hi[d]):
            point = s_star.copy()
            point[d] = bound
            try_point(point)
    if 2 ** n <= max(budget - len(cuts), 0):
        for mask in range(2 ** n):
            point = np.array([hi[d] if (mask >> d) & 1 else lo[d] for d in range(n)])
            try_point(point)
    return cuts


def cuts_to_csv(vf: ValueFunction, path) -> None:
    """Dump anchors, values, and slopes for plotting or inspection."""
    n = vf.n_devices
    header = [f"anchor_{d}" for d in range(n)] + ["value"] + \
        [f"slope_{d}" for d in range(n)]
    lines = [",".join(header)]
    for cut in vf.cuts:
        cells = [repr(float(v)) for v in cut.anchor] + [repr(float(cut.value))] + \
            [repr(float(v)) for v in cut.slope]
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
