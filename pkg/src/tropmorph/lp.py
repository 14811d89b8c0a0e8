"""Dense/sparse linear-program solving for the DC training loops.

Thin contract around scipy's HiGHS backend: minimise c.x subject to
A_ub x <= b_ub and per-variable bounds.  Variables are free unless bounded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog


class LPError(RuntimeError):
    pass


class LPInfeasible(LPError):
    pass


class LPUnbounded(LPError):
    pass


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    fun: float


def lp_solve(c, a_ub=None, b_ub=None, bounds=None) -> LPResult:
    """Solve min c.x s.t. A_ub x <= b_ub within bounds (default: free).

    Raises LPInfeasible / LPUnbounded; any other solver failure is LPError.
    """
    c = np.asarray(c, dtype=np.float64)
    if bounds is None:
        bounds = [(None, None)] * c.size
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status == 2:
        raise LPInfeasible(res.message)
    if res.status == 3:
        raise LPUnbounded(res.message)
    if res.status != 0:
        raise LPError(f"LP solver failed (status {res.status}): {res.message}")
    return LPResult(x=np.asarray(res.x, dtype=np.float64), fun=float(res.fun))
