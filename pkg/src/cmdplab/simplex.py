"""Dense two-phase simplex for small equality-form linear programs.

Solves   min/max  c.x   s.t.  A x = b,  x >= 0

with a full-tableau implementation sized for occupancy-measure programs
(a few hundred variables). Artificial columns stay in the tableau through
phase 2 (barred from entering), which makes the optimal dual vector
directly readable from their reduced costs. Pivot selection is Dantzig's
rule with a switch to Bland's rule after an iteration threshold, so the
solver cannot cycle.

Conventions for the returned duals `y` (one per row of A):
  minimize:  A^T y <= c on optimal support,  objective == b.y
  maximize:  A^T y >= c on optimal support,  objective == b.y
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class LpInfeasibleError(ValueError):
    """No feasible point; carries the phase-1 dual certificate.

    The certificate y aggregates the rows into y.A x = y.b, a single
    equality every x >= 0 violates (y.A <= 0 while y.b > 0).
    """

    def __init__(self, message: str, certificate: np.ndarray):
        super().__init__(message)
        self.certificate = certificate


class LpUnboundedError(ValueError):
    pass


@dataclass(frozen=True)
class LpSolution:
    x: np.ndarray
    objective: float
    duals: np.ndarray
    iterations: int


def simplex_solve(
    c,
    a_eq,
    b_eq,
    maximize: bool = False,
    tol: float = 1e-9,
    max_iters: Optional[int] = None,
) -> LpSolution:
    c = np.asarray(c, dtype=float).copy()
    a = np.asarray(a_eq, dtype=float).copy()
    b = np.asarray(b_eq, dtype=float).copy()
    n_rows, n_cols = a.shape
    if c.shape != (n_cols,) or b.shape != (n_rows,):
        raise ValueError("inconsistent LP dimensions")
    if maximize:
        sol = simplex_solve(-c, a, b, maximize=False, tol=tol, max_iters=max_iters)
        return LpSolution(
            x=sol.x, objective=-sol.objective, duals=-sol.duals, iterations=sol.iterations
        )
    if max_iters is None:
        max_iters = 200 * (n_rows + n_cols)

    # Normalize to b >= 0 so the artificial basis is feasible.
    flip = b < 0
    a[flip] *= -1.0
    b[flip] *= -1.0

    # Tableau layout: columns [real | artificial], last column is b.
    art = slice(n_cols, n_cols + n_rows)
    tab = np.zeros((n_rows + 1, n_cols + n_rows + 1))
    tab[:n_rows, :n_cols] = a
    tab[:n_rows, art] = np.eye(n_rows)
    tab[:n_rows, -1] = b
    basis = list(range(n_cols, n_cols + n_rows))

    # Phase 1: minimize the sum of artificials.
    tab[-1, :] = 0.0
    tab[-1, art] = 1.0
    tab[-1, :] -= tab[:n_rows, :].sum(axis=0)
    iters1 = _optimize(tab, basis, allowed=n_cols, tol=tol, max_iters=max_iters)
    phase1_obj = -tab[-1, -1]
    if phase1_obj > 1e-7:
        # Phase-1 artificials cost 1, so their reduced cost is 1 - y_i.
        certificate = 1.0 - tab[-1, art]
        certificate[flip] *= -1.0
        raise LpInfeasibleError(
            f"LP infeasible (phase-1 objective {phase1_obj:.3e})", certificate
        )
    _drive_out_artificials(tab, basis, n_cols, tol)

    # Phase 2: real objective, artificials barred from entering.
    tab[-1, :] = 0.0
    tab[-1, :n_cols] = c
    for row, var in enumerate(basis):
        if tab[-1, var] != 0.0:
            tab[-1, :] -= tab[-1, var] * tab[row, :]
    iters2 = _optimize(tab, basis, allowed=n_cols, tol=tol, max_iters=max_iters)

    x = np.zeros(n_cols)
    for row, var in enumerate(basis):
        if var < n_cols:
            x[var] = tab[row, -1]
    # Reduced cost under artificial column i is -y_i (artificials cost 0).
    duals = -tab[-1, art].copy()
    duals[flip] *= -1.0
    return LpSolution(
        x=x, objective=float(c @ x), duals=duals, iterations=iters1 + iters2
    )


def _optimize(tab, basis, allowed: int, tol: float, max_iters: int) -> int:
    """Run primal simplex pivots in place; only columns < `allowed` may enter."""
    n_rows = tab.shape[0] - 1
    bland_after = max_iters // 2
    for it in range(max_iters):
        reduced = tab[-1, :allowed]
        if it < bland_after:
            entering = int(np.argmin(reduced))
            if reduced[entering] >= -tol:
                return it
        else:  # Bland's rule: first improving column, no cycling possible
            negative = np.nonzero(reduced < -tol)[0]
            if len(negative) == 0:
                return it
            entering = int(negative[0])
        col = tab[:n_rows, entering]
        positive = col > tol
        if not np.any(positive):
            raise LpUnboundedError("LP unbounded along entering column")
        ratios = np.full(n_rows, np.inf)
        ratios[positive] = tab[:n_rows, -1][positive] / col[positive]
        leaving = int(np.argmin(ratios))
        if it >= bland_after:
            # Bland tie-break: smallest basis variable index among minimal ratios
            best = ratios[leaving]
            ties = [r for r in range(n_rows) if ratios[r] <= best + tol * (1 + abs(best))]
            leaving = min(ties, key=lambda r: basis[r])
        _pivot(tab, leaving, entering)
        basis[leaving] = entering
    raise ArithmeticError("simplex iteration limit exceeded")


def _pivot(tab, row: int, col: int) -> None:
    tab[row, :] /= tab[row, col]
    for r in range(tab.shape[0]):
        if r != row and tab[r, col] != 0.0:
            tab[r, :] -= tab[r, col] * tab[row, :]


def _drive_out_artificials(tab, basis, n_cols: int, tol: float) -> None:
    """Pivot zero-level basic artificials onto real columns after phase 1."""
    n_rows = tab.shape[0] - 1
    for row in range(n_rows):
        if basis[row] >= n_cols:
            candidates = np.nonzero(np.abs(tab[row, :n_cols]) > tol)[0]
            if len(candidates) == 0:
                raise ArithmeticError(
                    "dependent constraint row; cannot remove artificial variable"
                )
            _pivot(tab, row, int(candidates[0]))
            basis[row] = int(candidates[0])
