"""Preconditioned conjugate gradients for symmetric positive definite
systems, with an honest convergence report.

The operator may be a scipy sparse matrix or anything supporting @ on a
vector; when a diagonal is available it seeds a Jacobi preconditioner.
The final residual is recomputed from scratch so the report never relies
on the recurrence."""

from dataclasses import dataclass

import numpy as np

_default_tol = 1e-10
_stall_window = 250   # iterations without 1% progress => at roundoff floor
_stall_floor = 1e-8   # only residuals already below this count as a floor


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    final_residual: float   # relative, 2-norm
    tol: float


def _diagonal_of(op, n):
    if hasattr(op, "diagonal"):
        d = np.asarray(op.diagonal(), dtype=float)
        if d.shape == (n,) and np.all(d > 0):
            return d
    return np.ones(n)


def solve_spd(op, rhs, tol=_default_tol, max_iter=None, x0=None):
    """Solve op @ x = rhs for SPD op.

    input : op (n x n SPD), rhs (n,), relative tolerance, optional
            iteration cap (default 10n) and warm start.
    output: (x, SolveReport).  NaN growth raises; hitting the cap returns
            converged=False rather than lying.
    """
    if not 0.0 < tol <= 1e-2:
        raise ValueError("tolerance must lie in (0, 1e-2], got %g" % tol)
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(True, 0, 0.0, tol)

    dinv = 1.0 / _diagonal_of(op, n)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = rhs - op @ x
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    it = 0
    best = float(np.linalg.norm(r))
    since_best = 0
    while it < max_iter:
        rnorm = float(np.linalg.norm(r))
        if rnorm <= tol * bnorm:
            break
        # roundoff floor: a long plateau deep below any useful tolerance
        # means the request is unreachable; stop and report honestly.  A
        # plateau at large residual is ordinary mid-convergence behavior
        # and must not trip this, so the floor gate comes first.
        if rnorm < 0.99 * best:
            best, since_best = rnorm, 0
        else:
            since_best += 1
            if since_best >= _stall_window and best <= _stall_floor * bnorm:
                break
        ap = op @ p
        pap = float(p @ ap)
        if not np.isfinite(pap) or pap <= 0.0:
            raise RuntimeError("operator lost positive definiteness (p.Ap = %g)" % pap)
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        z = dinv * r
        rz_next = float(r @ z)
        if not np.isfinite(rz_next):
            raise RuntimeError("conjugate gradient produced non-finite iterates")
        p = z + (rz_next / rz) * p
        rz = rz_next
        it += 1

    true_res = float(np.linalg.norm(op @ x - rhs)) / bnorm
    if not np.isfinite(true_res):
        raise RuntimeError("solution contains non-finite entries")
    return x, SolveReport(true_res <= tol, it, true_res, tol)
