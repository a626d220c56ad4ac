"""Dense strictly convex QP solver (Goldfarb-Idnani dual active set).

Solves::

    min  1/2 x^T H x + g^T x
    s.t. lower <= A x <= upper,   lb <= x <= ub

H must be positive definite. The dual method starts from the unconstrained
minimizer and adds violated constraints one at a time, so infeasibility is
detected exactly when no dual step can restore a violated row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular


class QPError(RuntimeError):
    pass


@dataclass
class QPSubproblem:
    H: np.ndarray
    g: np.ndarray
    A: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None
    lb: np.ndarray = None
    ub: np.ndarray = None

    def __post_init__(self):
        n = len(self.g)
        if self.H.shape != (n, n):
            raise ValueError(f"H has shape {self.H.shape}, expected {(n, n)}")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-10:
            raise ValueError("H is not symmetric")
        if self.A is None:
            self.A = np.zeros((0, n))
        m = self.A.shape[0]
        if self.A.shape[1] != n:
            raise ValueError("A has the wrong number of columns")
        self.lower = np.full(m, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(m, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if self.lower.shape != (m,) or self.upper.shape != (m,):
            raise ValueError("row bounds do not match A")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("box bounds do not match g")

    @property
    def n(self):
        return len(self.g)

    def objective(self, x):
        return 0.5 * x @ self.H @ x + self.g @ x

    def standard_form(self):
        """Rows C x >= d with an equality mask (lower == upper)."""
        n = self.n
        C, d, eq, origin = [], [], [], []
        eye = np.eye(n)
        blocks = [(self.A, self.lower, self.upper, "row"), (eye, self.lb, self.ub, "box")]
        for M, lo, hi, kind in blocks:
            for i in range(M.shape[0]):
                if np.isfinite(lo[i]) and np.isfinite(hi[i]) and lo[i] == hi[i]:
                    C.append(M[i]); d.append(lo[i]); eq.append(True); origin.append((kind, i, 1.0))
                    continue
                if np.isfinite(lo[i]):
                    C.append(M[i]); d.append(lo[i]); eq.append(False); origin.append((kind, i, 1.0))
                if np.isfinite(hi[i]):
                    C.append(-M[i]); d.append(-hi[i]); eq.append(False); origin.append((kind, i, -1.0))
        if not C:
            return np.zeros((0, n)), np.zeros(0), np.zeros(0, dtype=bool), []
        return np.array(C), np.array(d), np.array(eq), origin


@dataclass
class QPResult:
    x: np.ndarray
    status: str                  # "optimal" | "infeasible" | "max_iter"
    iterations: int
    multipliers: np.ndarray      # one per standard-form row
    kkt: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.status == "optimal"


def kkt_residuals(problem, x, lam, C=None, d=None, eq=None):
    """Stationarity, primal, dual and complementarity residuals (infinity norms)."""
    if C is None:
        C, d, eq, _ = problem.standard_form()
    s = C @ x - d if len(d) else np.zeros(0)
    stat = problem.H @ x + problem.g - (C.T @ lam if len(d) else 0.0)
    ineq = ~eq if len(d) else np.zeros(0, dtype=bool)
    primal = np.concatenate([np.maximum(0.0, -s[ineq]), np.abs(s[~ineq])]) if len(d) else np.zeros(0)
    dual = np.maximum(0.0, -lam[ineq]) if len(d) else np.zeros(0)
    comp = np.abs(lam[ineq] * s[ineq]) if len(d) else np.zeros(0)
    return {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "primal": float(np.max(primal, initial=0.0)),
        "dual": float(np.max(dual, initial=0.0)),
        "complementarity": float(np.max(comp, initial=0.0)),
    }


def solve_qp(problem, tol=1e-9, max_iter=None):
    H, g = problem.H, problem.g
    n = problem.n
    try:
        Lc = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise QPError("H is not positive definite") from None
    C, d, eq, _ = problem.standard_form()
    m = len(d)
    max_iter = max_iter or 20 * (m + n) + 50
    J0 = solve_triangular(Lc, np.eye(n), lower=True).T  # L^{-T}

    x = -np.linalg.solve(H, g) if n else np.zeros(0)
    active: list[int] = []
    u = np.zeros(0)
    iters = 0
    status = "optimal"
    scale = 1.0 + np.max(np.abs(C), initial=0.0)

    signs: dict[int, float] = {}

    def factors():
        if not active:
            return J0, np.zeros((0, 0))
        B = J0.T @ (C[active] * np.array([signs.get(a, 1.0) for a in active])[:, None]).T
        Q, R = np.linalg.qr(B, mode="complete")
        return J0 @ Q, R[:len(active), :len(active)]

    def add_constraint(p, sign):
        """Dual step that makes row p (times sign) active; False if infeasible."""
        nonlocal x, u, iters
        n_p = sign * C[p]
        d_p = sign * d[p]
        u_plus = np.append(u, 0.0)
        while True:
            iters += 1
            if iters > max_iter:
                return "max_iter"
            J, R = factors()
            q = len(active)
            z = J[:, q:] @ (J[:, q:].T @ n_p)
            r = solve_triangular(R, J[:, :q].T @ n_p) if q else np.zeros(0)
            # partial (dual) step limit over active inequality rows
            t1, l = np.inf, -1
            for k in range(q):
                if r[k] > 1e-14 and not eq[active[k]]:
                    ratio = u_plus[k] / r[k]
                    if ratio < t1:
                        t1, l = ratio, k
            s_p = n_p @ x - d_p
            zn = z @ n_p
            t2 = np.inf if np.linalg.norm(z) <= 1e-12 * scale or zn <= 1e-14 else -s_p / zn
            t = min(t1, t2)
            if not np.isfinite(t):
                # a dependent row that already holds needs no multiplier
                return "redundant" if abs(s_p) <= tol else "infeasible"
            if np.isfinite(t2):
                x = x + t * z
            u_plus[:q] -= t * r
            u_plus[q] += t
            if t == t2:
                active.append(p)
                u = u_plus
                return "added"
            del active[l]
            u_plus = np.delete(u_plus, l)

    # equality rows first; they are never dropped
    for p in np.nonzero(eq)[0]:
        s = C[p] @ x - d[p]
        sign = -1.0 if s > 0 else 1.0
        signs[p] = sign
        res = add_constraint(p, sign)
        if res not in ("added", "redundant"):
            status = res
            break
    while status == "optimal":
        s = C @ x - d if m else np.zeros(0)
        viol = np.where(eq, -np.abs(s), s)
        if active:
            viol[active] = 0.0
        if m == 0 or viol.min() >= -tol:
            break
        p = int(np.argmin(viol))
        sign = -1.0 if (eq[p] and s[p] > 0) else 1.0
        if eq[p]:
            signs[p] = sign
        res = add_constraint(p, sign)
        if res not in ("added", "redundant"):
            status = res

    lam = np.zeros(m)
    for k, p in enumerate(active):
        lam[p] = u[k] * signs.get(p, 1.0)
    result = QPResult(x, status, iters, lam)
    result.kkt = kkt_residuals(problem, x, lam, C, d, eq)
    return result
