"""Chebyshev-centre LPs over small polyhedra (HiGHS via scipy)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

LP_TOL = 1e-9
FRAGILE_TOL = 1e-7


@dataclass
class CenterResult:
    x: np.ndarray
    radius: float
    fragile: bool = False


def _null_projector(A_eq):
    if A_eq is None or len(A_eq) == 0:
        return None
    _, s, vt = np.linalg.svd(A_eq)
    rank = int(np.sum(s > 1e-12 * s[0])) if s.size else 0
    N = vt[rank:].T
    return N @ N.T


def chebyshev_center(A, b, A_eq=None, b_eq=None, r_max: float = 1.0,
                     tol: float = LP_TOL) -> CenterResult | None:
    """Deepest point of {A x <= b, A_eq x = b_eq}, or None if it has no interior.

    Each inequality gets slack measured along its direction inside the
    equality subspace; rows (nearly) orthogonal to that subspace use their
    full norm instead, so ``radius`` is a distance-like margin in all cases.
    Returns None when the optimal margin is <= tol.  Borderline systems whose
    solve fails numerically are retried with right-hand sides relaxed by
    FRAGILE_TOL and flagged fragile.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = A.shape[1]
    P = _null_projector(A_eq)
    full = np.linalg.norm(A, axis=1)
    if P is None:
        coef = full
    else:
        # rows orthogonal to the equality subspace are constant on it: a
        # violated one makes the system infeasible, a satisfied or tight one
        # (a fold coinciding with the equality) imposes nothing
        Ae = np.asarray(A_eq, dtype=np.float64)
        be = np.asarray(b_eq, dtype=np.float64)
        x0 = np.linalg.lstsq(Ae, be, rcond=None)[0]
        if np.max(np.abs(Ae @ x0 - be)) > tol * (1.0 + np.max(np.abs(be))):
            return None
        proj = np.linalg.norm(A @ P, axis=1)
        flat = proj <= 1e-9 * np.maximum(full, 1e-300)
        const = b[flat] - A[flat] @ x0
        if np.any(const < -tol * (1.0 + np.abs(b[flat]))):
            return None
        A, b, coef = A[~flat], b[~flat], proj[~flat]
        if A.shape[0] == 0:
            return CenterResult(x=x0, radius=r_max)
    coef = np.where(coef > 0, coef, 1.0)
    # scale rows so every margin coefficient is 1
    As = A / coef[:, None]
    bs = b / coef
    A_ub = np.hstack([As, np.ones((len(As), 1))])
    eq = {}
    if A_eq is not None and len(A_eq):
        Ae = np.asarray(A_eq, dtype=np.float64)
        en = np.linalg.norm(Ae, axis=1, keepdims=True)
        en[en == 0] = 1.0
        eq = dict(A_eq=np.hstack([Ae / en, np.zeros((len(Ae), 1))]),
                  b_eq=np.asarray(b_eq, dtype=np.float64) / en[:, 0])
    c = np.zeros(n + 1)
    c[-1] = -1.0
    bounds = [(None, None)] * n + [(-1.0, r_max)]
    fragile = False
    res = linprog(c, A_ub=A_ub, b_ub=bs, bounds=bounds, method="highs", **eq)
    if res.status not in (0, 2):
        fragile = True
        res = linprog(c, A_ub=A_ub, b_ub=bs + FRAGILE_TOL, bounds=bounds, method="highs", **eq)
    if res.status != 0:
        return None
    r = float(res.x[-1])
    if r <= tol:
        return None
    return CenterResult(x=res.x[:n].copy(), radius=r, fragile=fragile or r <= FRAGILE_TOL)
