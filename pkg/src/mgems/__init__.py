"""Two-level microgrid energy management.

A market-period operational planner (LP over a 24 h horizon) coordinated
with a per-minute real-time optimizer through a piecewise-linear cost-to-go
value function built from parametric LP duals, plus a rule-based baseline
controller, a deterministic rolling simulator with full market settlement,
and plug-in forecasters with evaluation metrics.
"""

from mgems.domain import (
    DeviceFleet,
    GridContract,
    MarketClock,
    MicrogridState,
    NonFlexibleLoad,
    NonSteerableGenerator,
    SheddableLoad,
    SteerableGenerator,
    StorageDevice,
    import_price_at,
    next_boundary,
)
from mgems.lp import (
    HighsSolver,
    LpModel,
    LpSolution,
    LpStatus,
    SimplexSolver,
    dual_of,
    solve_lp,
)

__version__ = "0.1.0"
