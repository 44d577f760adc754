"""Embedded linear and convex quadratic program solvers.

One primal-dual interior-point core (Mehrotra predictor-corrector) backs both
solve_lp and solve_qp.  Problems are stated as

    min (or max for LPs)   0.5 x'Qx + c'x
    s.t.                   a_i'x  (<=, ==, >=)  rhs_i
                           lb <= x <= ub

with Q = diag(q) + sum_k rho_k v_k v_k', restricted to the positive
semidefinite diagonal-plus-rank-one forms that variance objectives produce.
Inequality rows get slack variables internally, so the core only ever sees
equality rows plus box bounds.  Every solve is deterministic: identical inputs
produce bit-identical reports.

A report with status "optimal" carries residuals measured at the returned
point against the original problem, so callers can verify the certificate
instead of trusting the iteration log.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

LE = "<="
EQ = "=="
GE = ">="
_SENSES = (LE, EQ, GE)

_STEP_DAMP = 0.99995  # fraction-to-boundary
_DIVERGE = 1e14


class NumericsError(ValueError):
    """Raised for malformed problem definitions."""


class _NormalPathFailure(Exception):
    """Internal: the normal-equations solve lost too much accuracy."""


@dataclass(frozen=True)
class LinearConstraint:
    """One sparse constraint row: coeffs @ x[indices]  sense  rhs."""

    indices: np.ndarray
    coeffs: np.ndarray
    sense: str
    rhs: float

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        co = np.asarray(self.coeffs, dtype=np.float64)
        if idx.shape != co.shape or idx.ndim != 1:
            raise NumericsError("constraint indices and coeffs must be 1-d and matching")
        if self.sense not in _SENSES:
            raise NumericsError(f"unknown sense {self.sense!r}")
        if not np.isfinite(co).all() or not np.isfinite(self.rhs):
            raise NumericsError("constraint coefficients must be finite")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "coeffs", co)


def _as_bound(arr, n, default):
    if arr is None:
        return np.full(n, default, dtype=np.float64)
    out = np.asarray(arr, dtype=np.float64)
    if out.shape == ():
        return np.full(n, float(out))
    if out.shape != (n,):
        raise NumericsError(f"bound vector has shape {out.shape}, expected ({n},)")
    return out.copy()


def _rows_to_matrix(rows: Sequence[LinearConstraint], n):
    data, ri, ci = [], [], []
    senses = np.empty(len(rows), dtype="U2")
    rhs = np.empty(len(rows))
    for k, row in enumerate(rows):
        if len(row.indices) and (row.indices.min() < 0 or row.indices.max() >= n):
            raise NumericsError("constraint references a variable out of range")
        ri.extend([k] * len(row.indices))
        ci.extend(row.indices.tolist())
        data.extend(row.coeffs.tolist())
        senses[k] = row.sense
        rhs[k] = row.rhs
    a = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n))
    return a, senses, rhs


def _check_common(c, a, senses, rhs, lb, ub):
    n = c.shape[0]
    if a.shape[1] != n:
        raise NumericsError("constraint matrix and objective dimension mismatch")
    if senses.shape[0] != a.shape[0] or rhs.shape[0] != a.shape[0]:
        raise NumericsError("senses/rhs length must equal the number of rows")
    if not np.isfinite(c).all() or not np.isfinite(a.data).all() or not np.isfinite(rhs).all():
        raise NumericsError("objective, matrix and rhs entries must be finite")
    for s in senses:
        if s not in _SENSES:
            raise NumericsError(f"unknown sense {s!r}")
    if np.any(np.isnan(lb)) or np.any(np.isnan(ub)):
        raise NumericsError("bounds must not be NaN")
    if np.any(lb > ub):
        raise NumericsError("lower bound exceeds upper bound")


@dataclass(frozen=True)
class LinearProgram:
    """min or max c'x subject to sparse rows and box bounds."""

    c: np.ndarray
    a: sp.csr_matrix
    senses: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    maximize: bool = False

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64)
        object.__setattr__(self, "c", c)
        n = c.shape[0]
        a = self.a if sp.issparse(self.a) else sp.csr_matrix(np.atleast_2d(self.a))
        object.__setattr__(self, "a", a.tocsr().astype(np.float64))
        object.__setattr__(self, "senses", np.asarray(self.senses, dtype="U2"))
        object.__setattr__(self, "rhs", np.asarray(self.rhs, dtype=np.float64))
        object.__setattr__(self, "lb", _as_bound(self.lb, n, -np.inf))
        object.__setattr__(self, "ub", _as_bound(self.ub, n, np.inf))
        _check_common(self.c, self.a, self.senses, self.rhs, self.lb, self.ub)

    @classmethod
    def from_rows(cls, c, rows, lb=None, ub=None, maximize=False):
        c = np.asarray(c, dtype=np.float64)
        a, senses, rhs = _rows_to_matrix(rows, c.shape[0])
        return cls(c, a, senses, rhs, _as_bound(lb, len(c), -np.inf),
                   _as_bound(ub, len(c), np.inf), maximize)


@dataclass(frozen=True)
class ConvexQuadraticProgram:
    """min 0.5 x'(diag(q) + sum rho_k v_k v_k')x + c'x over rows and bounds.

    The quadratic form must be PSD by construction: q >= 0, and at most one
    rank-one term may carry rho < 0, certified against the diagonal through
    1 + rho * sum(v_i^2 / q_i) >= 0 on the support of v.  That covers the
    variance forms this library produces (diag(1/N) - (1/N^2) 11').
    """

    c: np.ndarray
    q_diag: np.ndarray
    a: sp.csr_matrix
    senses: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    rank_ones: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64)
        object.__setattr__(self, "c", c)
        n = c.shape[0]
        q = np.asarray(self.q_diag, dtype=np.float64)
        if q.shape != (n,):
            raise NumericsError("q_diag must match the variable count")
        if not np.isfinite(q).all() or np.any(q < 0):
            raise NumericsError("q_diag entries must be finite and nonnegative")
        object.__setattr__(self, "q_diag", q)
        a = self.a if sp.issparse(self.a) else sp.csr_matrix(np.atleast_2d(self.a))
        object.__setattr__(self, "a", a.tocsr().astype(np.float64))
        object.__setattr__(self, "senses", np.asarray(self.senses, dtype="U2"))
        object.__setattr__(self, "rhs", np.asarray(self.rhs, dtype=np.float64))
        object.__setattr__(self, "lb", _as_bound(self.lb, n, -np.inf))
        object.__setattr__(self, "ub", _as_bound(self.ub, n, np.inf))
        terms = []
        negatives = 0
        for rho, v in self.rank_ones:
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (n,) or not np.isfinite(v).all() or not np.isfinite(rho):
                raise NumericsError("rank-one term must be a finite n-vector with finite weight")
            if rho < 0:
                negatives += 1
                if negatives > 1:
                    raise NumericsError("at most one negative rank-one term is admitted")
                support = v != 0.0
                if np.any(q[support] <= 0):
                    raise NumericsError("negative rank-one term needs positive diagonal on its support")
                if 1.0 + rho * float(np.sum(v[support] ** 2 / q[support])) < -1e-12:
                    raise NumericsError("quadratic form is not positive semidefinite")
            terms.append((float(rho), v))
        object.__setattr__(self, "rank_ones", tuple(terms))
        _check_common(self.c, self.a, self.senses, self.rhs, self.lb, self.ub)

    @classmethod
    def from_rows(cls, c, q_diag, rows, lb=None, ub=None, rank_ones=()):
        c = np.asarray(c, dtype=np.float64)
        a, senses, rhs = _rows_to_matrix(rows, c.shape[0])
        return cls(c, q_diag, a, senses, rhs, _as_bound(lb, len(c), -np.inf),
                   _as_bound(ub, len(c), np.inf), rank_ones)


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one solve, with residuals measured at the returned point.

    status            "optimal", "infeasible", "unbounded" or "iteration_limit"
    x                 primal point (None when no meaningful point exists)
    objective         objective value in the problem's own sense
    primal_residual   max absolute violation over rows and bounds
    dual_residual     stationarity residual, inf-norm
    duality_gap       |primal objective - dual objective|
    complementarity   max |slack * multiplier|
    iterations        interior-point iterations spent
    """

    status: str
    x: np.ndarray | None
    objective: float
    primal_residual: float
    dual_residual: float
    duality_gap: float
    complementarity: float
    iterations: int


class ProblemBuilder:
    """Incremental assembly of LPs/QPs with named variable blocks."""

    def __init__(self):
        self._lb = []
        self._ub = []
        self._cost = []
        self._qdiag = []
        self._row_idx = []
        self._row_coef = []
        self._senses = []
        self._rhs = []
        self._n = 0

    @property
    def num_vars(self):
        return self._n

    def add_vars(self, count, lb=0.0, ub=np.inf, cost=0.0, qdiag=0.0):
        """Append `count` variables; returns their index array."""
        idx = np.arange(self._n, self._n + count, dtype=np.int64)
        self._lb.append(np.broadcast_to(np.asarray(lb, dtype=np.float64), (count,)).copy())
        self._ub.append(np.broadcast_to(np.asarray(ub, dtype=np.float64), (count,)).copy())
        self._cost.append(np.broadcast_to(np.asarray(cost, dtype=np.float64), (count,)).copy())
        self._qdiag.append(np.broadcast_to(np.asarray(qdiag, dtype=np.float64), (count,)).copy())
        self._n += count
        return idx

    def add_row(self, indices, coeffs, sense, rhs):
        self._row_idx.append(np.asarray(indices, dtype=np.int64))
        self._row_coef.append(np.asarray(coeffs, dtype=np.float64))
        self._senses.append(sense)
        self._rhs.append(float(rhs))

    def add_constraints(self, rows, offset=0):
        """Splice in LinearConstraint rows, shifting variable indices by offset."""
        for row in rows:
            self.add_row(row.indices + offset, row.coeffs, row.sense, row.rhs)

    def _assemble(self):
        n = self._n
        m = len(self._rhs)
        counts = [len(ix) for ix in self._row_idx]
        ri = np.repeat(np.arange(m), counts)
        ci = np.concatenate(self._row_idx) if m else np.zeros(0, dtype=np.int64)
        dat = np.concatenate(self._row_coef) if m else np.zeros(0)
        a = sp.csr_matrix((dat, (ri, ci)), shape=(m, n))
        lb = np.concatenate(self._lb) if n else np.zeros(0)
        ub = np.concatenate(self._ub) if n else np.zeros(0)
        cost = np.concatenate(self._cost) if n else np.zeros(0)
        qd = np.concatenate(self._qdiag) if n else np.zeros(0)
        return cost, qd, a, np.asarray(self._senses, dtype="U2"), np.asarray(self._rhs), lb, ub

    def lp(self, maximize=False):
        cost, qd, a, senses, rhs, lb, ub = self._assemble()
        if np.any(qd != 0):
            raise NumericsError("quadratic costs present, build a qp() instead")
        return LinearProgram(cost, a, senses, rhs, lb, ub, maximize)

    def qp(self, rank_ones=()):
        cost, qd, a, senses, rhs, lb, ub = self._assemble()
        return ConvexQuadraticProgram(cost, qd, a, senses, rhs, lb, ub, rank_ones)


# ---------------------------------------------------------------------------
# standard form and presolve

class _Standard:
    """Equality-only form: min 0.5 x'Qx + c'x, A x = b, lb <= x <= ub."""

    def __init__(self, c, qdiag, rank_ones, a, senses, rhs, lb, ub):
        m, n = a.shape
        n_slack = int(np.sum(senses != EQ))
        self.n_orig = n
        self.obj_const = 0.0
        if n_slack:
            data, ri, ci = [], [], []
            slack_of_row = {}
            j = n
            for i in range(m):
                if senses[i] == LE:
                    data.append(1.0); ri.append(i); ci.append(j)
                    slack_of_row[i] = j; j += 1
                elif senses[i] == GE:
                    data.append(-1.0); ri.append(i); ci.append(j)
                    slack_of_row[i] = j; j += 1
            s_block = sp.csr_matrix((data, (ri, ci)), shape=(m, n + n_slack))
            a = sp.hstack([a, sp.csr_matrix((m, n_slack))], format="csr") + s_block
            c = np.concatenate([c, np.zeros(n_slack)])
            qdiag = np.concatenate([qdiag, np.zeros(n_slack)])
            lb = np.concatenate([lb, np.zeros(n_slack)])
            ub = np.concatenate([ub, np.full(n_slack, np.inf)])
            rank_ones = tuple((rho, np.concatenate([v, np.zeros(n_slack)])) for rho, v in rank_ones)
        self.c = c
        self.qdiag = qdiag
        self.rank_ones = rank_ones
        self.a = a.tocsr()
        self.b = rhs.copy()
        self.lb = lb
        self.ub = ub
        self.fixed_mask = None
        self.fixed_vals = None
        self.infeasible_reason = None
        self._presolve()

    def _presolve(self):
        """Pin variables until fixpoint, then substitute them out.

        Two rules feed each other: boxes with lb == ub are constants, and a
        row whose bound-implied activity range already touches its
        right-hand side forces every remaining variable in it to the
        corresponding bound (without this, equality-pinned variables leave
        the feasible set with an empty interior and the interior-point
        iteration has no central path to follow).
        """
        lb, ub = self.lb, self.ub
        if np.any(lb > ub):
            return  # _solve reports infeasibility from the raw bounds
        fixed = lb == ub
        vals = np.where(fixed, lb, 0.0)
        m = self.a.shape[0]
        coo = self.a.tocoo()
        nz = coo.data != 0.0  # explicit zeros would turn 0*inf into nan
        rr, cc, dd = coo.row[nz], coo.col[nz], coo.data[nz]
        # a row that already forced its variables is satisfied up to the
        # forcing tolerance; re-checking it against the (tighter) residual
        # tolerance on a later pass would fabricate an infeasibility
        settled = np.zeros(m, dtype=bool)
        while m and rr.size:
            freed = ~fixed[cc]
            contrib = np.where(freed, 0.0, dd * vals[cc])
            b_eff = self.b - np.bincount(rr, weights=contrib, minlength=m)
            hi = np.where(dd > 0, ub[cc], lb[cc])
            lo = np.where(dd > 0, lb[cc], ub[cc])
            wmax = np.where(freed, dd * hi, 0.0)
            wmin = np.where(freed, dd * lo, 0.0)
            max_act = np.bincount(rr, weights=wmax, minlength=m)
            min_act = np.bincount(rr, weights=wmin, minlength=m)
            max_act = np.where(np.isnan(max_act), np.inf, max_act)
            min_act = np.where(np.isnan(min_act), -np.inf, min_act)
            tol = 1e-10 * (1.0 + np.abs(b_eff))
            bad = ((min_act > b_eff + tol) | (max_act < b_eff - tol)) \
                & ~settled
            if np.any(bad):
                self.infeasible_reason = "row bounds exclude the right-hand side"
                break
            force_up = np.isfinite(max_act) & (max_act <= b_eff + tol) \
                & ~settled
            force_dn = np.isfinite(min_act) & (min_act >= b_eff - tol) \
                & ~settled
            sel = freed & (force_up[rr] | force_dn[rr])
            if not np.any(sel):
                break
            settled |= force_up | force_dn
            cols = cc[sel]
            chosen = np.where(force_up[rr], hi, lo)[sel]
            # first assignment wins; a genuine conflict surfaces later as
            # phase-1 infeasibility in the solver proper
            first = np.unique(cols, return_index=True)[1]
            fixed[cols[first]] = True
            vals[cols[first]] = chosen[first]
        if np.any(fixed):
            self._apply_reduction(fixed, vals)

    def _apply_reduction(self, fixed, vals):
        """Substitute pinned variables into costs, rows and constants."""
        acsc = self.a.tocsc()
        self.b = self.b - acsc[:, fixed] @ vals[fixed]
        keep = ~fixed
        self.obj_const += float(self.c[fixed] @ vals[fixed]) \
            + 0.5 * float((self.qdiag[fixed] * vals[fixed]) @ vals[fixed])
        new_terms = []
        for rho, v in self.rank_ones:
            shift = float(v[fixed] @ vals[fixed])
            self.obj_const += 0.5 * rho * shift * shift
            vk = v[keep]
            ck_adjust = rho * shift * vk
            self.c = self.c.copy()
            self.c[keep] += ck_adjust  # cross term from the substitution
            new_terms.append((rho, vk))
        self.rank_ones = tuple(new_terms)
        self.a = acsc[:, keep].tocsr()
        self.c = self.c[keep]
        self.qdiag = self.qdiag[keep]
        self.lb = self.lb[keep]
        self.ub = self.ub[keep]
        self.fixed_mask = fixed
        self.fixed_vals = vals

    def expand(self, x_reduced):
        if self.fixed_mask is None:
            full = x_reduced
        else:
            full = self.fixed_vals.copy()
            full[~self.fixed_mask] = x_reduced
        return full[: self.n_orig]


def _objective(c, qdiag, rank_ones, x):
    val = float(c @ x) + 0.5 * float((qdiag * x) @ x)
    for rho, v in rank_ones:
        t = float(v @ x)
        val += 0.5 * rho * t * t
    return val


def _q_matvec(qdiag, rank_ones, x):
    out = qdiag * x
    for rho, v in rank_ones:
        out = out + rho * float(v @ x) * v
    return out


def _solve_boxed_separable(std, maximize):
    """Closed-form solve when no equality rows remain (m == 0)."""
    c, q, lb, ub = std.c, std.qdiag, std.lb, std.ub
    n = c.shape[0]
    x = np.zeros(n)
    for i in range(n):
        if q[i] > 0:
            x[i] = min(max(-c[i] / q[i], lb[i]), ub[i])
        elif c[i] > 0:
            if not np.isfinite(lb[i]):
                return None  # unbounded
            x[i] = lb[i]
        elif c[i] < 0:
            if not np.isfinite(ub[i]):
                return None
            x[i] = ub[i]
        else:
            x[i] = min(max(0.0, lb[i]), ub[i])
    return x


class _IpmResult:
    def __init__(self, status, x, y, zl, zu, iters):
        self.status = status
        self.x = x
        self.y = y
        self.zl = zl
        self.zu = zu
        self.iters = iters


def _ipm(std, tol, max_iter):
    """Mehrotra predictor-corrector on the standard form.

    Diverging iterates can overflow intermediate quantities right before the
    stall detector fires; those float warnings are expected and silenced.
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _ipm_loop(std, tol, max_iter)


def _ipm_loop(std, tol, max_iter):
    a = std.a
    m, n = a.shape
    c, qdiag, lb, ub = std.c, std.qdiag.copy(), std.lb, std.ub
    rank_ones = std.rank_ones
    has_lb = np.isfinite(lb)
    has_ub = np.isfinite(ub)
    nu = int(has_lb.sum() + has_ub.sum())
    at = a.T.tocsr()
    # row index of every stored entry of at, for per-iteration rescaling
    at_rows = np.repeat(np.arange(n), np.diff(at.indptr)) if m else None
    b = std.b
    bscale = 1.0 + float(np.abs(b).max()) if m else 1.0
    cscale = 1.0 + float(np.abs(c).max()) if n else 1.0

    dense_path = bool(rank_ones)
    if dense_path and n + m > 6000:
        raise NumericsError("rank-one quadratic terms supported only for small problems")
    # the normal-equations path needs a strictly positive diagonal for every
    # variable; free variables with zero curvature push us to the kkt path
    kkt_path = dense_path or bool(np.any(~has_lb & ~has_ub & (qdiag == 0.0)))
    if m and not kkt_path:
        # a few near-dense columns (e.g. a capacity variable coupling every
        # period) fill A D A' almost completely; the augmented system keeps
        # them as single spiky rows that the ordering can push last
        col_nnz = np.diff(at.indptr)
        if int(col_nnz.max(initial=0)) > max(32, m // 8):
            kkt_path = True

    def q_full():
        qm = np.diag(qdiag)
        for rho, v in rank_ones:
            qm += rho * np.outer(v, v)
        return qm

    qdense = q_full() if dense_path else None

    # starting point: push a least-squares-ish point strictly inside the box
    x = np.zeros(n)
    both = has_lb & has_ub
    x[both] = 0.5 * (lb[both] + ub[both])
    only_l = has_lb & ~has_ub
    x[only_l] = lb[only_l] + 1.0
    only_u = ~has_lb & has_ub
    x[only_u] = ub[only_u] - 1.0
    if m:
        # one least-norm correction toward A x = b
        try:
            reg = sp.diags(np.ones(n))
            kls = sp.bmat([[reg, at], [a, -1e-8 * sp.eye(m)]], format="csc")
            lu0 = splu(kls, permc_spec="MMD_AT_PLUS_A")
            sol = lu0.solve(np.concatenate([np.zeros(n), b - a @ x]))
            x = x + sol[:n]
        except RuntimeError:
            pass
        width = np.where(both, ub - lb, np.inf)
        margin = np.minimum(0.49 * width, np.maximum(1.0, 0.01 * (1.0 + np.abs(x))))
        x = np.where(has_lb, np.maximum(x, lb + margin), x)
        x = np.where(has_ub, np.minimum(x, ub - margin), x)
    y = np.zeros(m)
    z0 = max(1.0, 0.01 * float(np.abs(c).max() if n else 1.0))
    zl = np.where(has_lb, z0, 0.0)
    zu = np.where(has_ub, z0, 0.0)

    best = None
    best_score = np.inf
    stall = 0
    delta = 1e-10

    def residuals(x, y, zl, zu):
        qx = _q_matvec(qdiag, rank_ones, x)
        rd = qx + c - (at @ y if m else 0.0) - zl + zu
        rp = (a @ x - b) if m else np.zeros(0)
        return rd, rp, qx

    for it in range(1, max_iter + 1):
        sl = np.where(has_lb, x - lb, 1.0)
        su = np.where(has_ub, ub - x, 1.0)
        sl = np.maximum(sl, 1e-300)
        su = np.maximum(su, 1e-300)
        rd, rp, qx = residuals(x, y, zl, zu)
        comp = float((sl * zl * has_lb).sum() + (su * zu * has_ub).sum())
        mu = comp / nu if nu else 0.0

        pobj = _objective(c, qdiag, rank_ones, x)
        dobj = (float(b @ y) if m else 0.0) \
            + float((lb[has_lb] * zl[has_lb]).sum()) - float((ub[has_ub] * zu[has_ub]).sum()) \
            - (pobj - float(c @ x))  # subtract the 0.5 x'Qx part
        gap = abs(pobj - dobj)
        prim_ok = float(np.abs(rp).max() if m else 0.0) <= tol * bscale
        dual_ok = float(np.abs(rd).max() if n else 0.0) <= tol * (cscale + float(np.abs(qx).max() if n else 0.0))
        gap_ok = gap <= tol * (1.0 + abs(pobj))
        score = (float(np.abs(rp).max() if m else 0.0) / bscale
                 + float(np.abs(rd).max() if n else 0.0) / cscale
                 + gap / (1.0 + abs(pobj)))
        if score < 0.95 * best_score:
            stall = 0
        else:
            stall += 1
        if score < best_score:
            best_score = score
            best = _IpmResult("optimal", x.copy(), y.copy(), zl.copy(), zu.copy(), it)
        if prim_ok and dual_ok and gap_ok:
            return _IpmResult("optimal", x, y, zl, zu, it)
        if stall > 30 or not np.isfinite(score):
            break
        if float(np.abs(x).max() if n else 0.0) > _DIVERGE * bscale:
            break

        dvec = np.where(has_lb, zl / sl, 0.0) + np.where(has_ub, zu / su, 0.0)
        dtil = qdiag + dvec

        if kkt_path:
            if dense_path:
                kmat = np.zeros((n + m, n + m))
                kmat[:n, :n] = qdense + np.diag(dvec + delta)
                if m:
                    ad = a.toarray()
                    kmat[:n, n:] = ad.T
                    kmat[n:, :n] = ad
                    kmat[n:, n:] = -delta * np.eye(m)
                try:
                    factor = sla.lu_factor(kmat)
                    solve_kkt = lambda r1, r2: np.split(sla.lu_solve(factor, np.concatenate([r1, r2])), [n])
                except Exception:
                    break
            else:
                kmat = sp.bmat([[sp.diags(dtil + delta), at],
                                [a, -delta * sp.eye(m)]], format="csc") if m else sp.diags(dtil + delta).tocsc()
                try:
                    lu = splu(kmat, permc_spec="MMD_AT_PLUS_A")
                except RuntimeError:
                    if delta > 1.0:
                        break
                    delta *= 100.0
                    continue
                if m:
                    solve_kkt = lambda r1, r2: np.split(lu.solve(np.concatenate([r1, r2])), [n])
                else:
                    solve_kkt = lambda r1, r2: (lu.solve(r1), np.zeros(0))
        else:
            dinv = 1.0 / (dtil + delta)
            if m:
                # A D A' with the diagonal folded into at's stored data;
                # saves a sparse-sparse product per iteration
                at_scaled = sp.csr_matrix(
                    (at.data * dinv[at_rows], at.indices, at.indptr),
                    shape=at.shape)
                smat = (a @ at_scaled).tocsc()
                try:
                    lu = splu(smat, permc_spec="MMD_AT_PLUS_A")
                except RuntimeError:
                    # singular normal equations, e.g. linearly dependent rows
                    kkt_path = True
                    continue

        def newton(kappa_l, kappa_u):
            # rhat folds the complementarity targets into the dual residual
            rhat = rd - np.where(has_lb, kappa_l / sl, 0.0) + np.where(has_ub, kappa_u / su, 0.0)
            if kkt_path:
                # block system solves for (dx, w) with w = -dy
                dx, w = solve_kkt(-rhat, -rp if m else np.zeros(0))
                dy = -w
            else:
                if m:
                    rhs_y = -rp + a @ (dinv * rhat)
                    dy = lu.solve(rhs_y)
                    res_y = rhs_y - smat @ dy
                    rhs_scale = 1.0 + float(np.abs(rhs_y).max())
                    if not np.isfinite(res_y).all() or np.abs(res_y).max() > 1e-10 * rhs_scale:
                        # one refinement step; a solve that still misses means
                        # the factorization is unusable (near-singular matrix)
                        dy = dy + lu.solve(res_y) if np.isfinite(res_y).all() else dy
                        res_y = rhs_y - smat @ dy
                        if not np.isfinite(res_y).all() or np.abs(res_y).max() > 1e-6 * rhs_scale:
                            raise _NormalPathFailure
                    dx = dinv * (at @ dy - rhat)
                else:
                    dy = np.zeros(0)
                    dx = -dinv * rhat
            dzl = np.where(has_lb, (kappa_l - zl * dx) / sl, 0.0)
            dzu = np.where(has_ub, (kappa_u + zu * dx) / su, 0.0)
            return dx, dy, dzl, dzu

        def max_steps(dx, dzl, dzu):
            ap = 1.0 / _STEP_DAMP
            neg = has_lb & (dx < 0)
            if np.any(neg):
                ap = min(ap, float(np.min(-sl[neg] / dx[neg])))
            pos = has_ub & (dx > 0)
            if np.any(pos):
                ap = min(ap, float(np.min(su[pos] / dx[pos])))
            ad = 1.0 / _STEP_DAMP
            negl = has_lb & (dzl < 0)
            if np.any(negl):
                ad = min(ad, float(np.min(-zl[negl] / dzl[negl])))
            negu = has_ub & (dzu < 0)
            if np.any(negu):
                ad = min(ad, float(np.min(-zu[negu] / dzu[negu])))
            return ap, ad

        try:
            # predictor
            kl_aff = np.where(has_lb, -sl * zl, 0.0)
            ku_aff = np.where(has_ub, -su * zu, 0.0)
            dx_a, dy_a, dzl_a, dzu_a = newton(kl_aff, ku_aff)
            ap_a, ad_a = max_steps(dx_a, dzl_a, dzu_a)
            ap_a = min(1.0, ap_a)
            ad_a = min(1.0, ad_a)
            if nu:
                mu_aff = (((sl + ap_a * dx_a) * (zl + ad_a * dzl_a) * has_lb).sum()
                          + ((su - ap_a * dx_a) * (zu + ad_a * dzu_a) * has_ub).sum()) / nu
                sigma = min(max((mu_aff / mu) ** 3 if mu > 0 else 0.0, 1e-8), 1.0 - 1e-8)
            else:
                mu_aff, sigma = 0.0, 0.0

            # corrector
            kl = np.where(has_lb, sigma * mu - sl * zl - dx_a * dzl_a, 0.0)
            ku = np.where(has_ub, sigma * mu - su * zu + dx_a * dzu_a, 0.0)
            dx, dy, dzl, dzu = newton(kl, ku)
        except _NormalPathFailure:
            kkt_path = True
            continue
        ap, ad = max_steps(dx, dzl, dzu)
        ap = min(1.0, _STEP_DAMP * ap)
        ad = min(1.0, _STEP_DAMP * ad)

        x = x + ap * dx
        y = y + ad * dy
        zl = np.where(has_lb, np.maximum(zl + ad * dzl, 1e-300), 0.0)
        zu = np.where(has_ub, np.maximum(zu + ad * dzu, 1e-300), 0.0)

    result = best if best is not None else _IpmResult("iteration_limit", x, y, zl, zu, 0)
    result.status = "stalled"
    return result


def _unbounded_ray(std):
    """Look for a feasible descent ray; a certificate of unboundedness.

    The ray lives in the recession cone: A d = 0, d_i >= 0 below finite lower
    bounds, d_i <= 0 below finite upper bounds, d_i = 0 wherever the quadratic
    has curvature, and v'd = 0 for every rank-one term.  Scaling is fixed by a
    unit box, so the search problem is always bounded and feasible (d = 0).
    """
    m, n = std.a.shape
    lb_ray = np.where(np.isfinite(std.lb), 0.0, -1.0)
    ub_ray = np.where(np.isfinite(std.ub), 0.0, 1.0)
    curved = std.qdiag > 0
    lb_ray[curved] = 0.0
    ub_ray[curved] = 0.0
    rows = [std.a] if m else []
    rhs = [np.zeros(m)] if m else []
    for _, v in std.rank_ones:
        rows.append(sp.csr_matrix(v[None, :]))
        rhs.append(np.zeros(1))
    a_ray = sp.vstack(rows, format="csr") if rows else sp.csr_matrix((0, n))
    b_ray = np.concatenate(rhs) if rhs else np.zeros(0)
    mr = a_ray.shape[0]
    sub = _Standard(std.c.copy(), np.zeros(n), (), a_ray,
                    np.asarray([EQ] * mr, dtype="U2"), b_ray, lb_ray, ub_ray)
    if sub.a.shape[1] == 0:
        return False  # every direction pinned, no ray exists
    res = _ipm(sub, 1e-9, 500)
    if res.x is None:
        return False
    d = sub.expand(res.x)
    cscale = 1.0 + float(np.abs(std.c).max()) if n else 1.0
    ok_null = float(np.abs(a_ray @ d).max()) <= 1e-7 if mr else True
    ok_box = bool(np.all(d >= lb_ray - 1e-9) and np.all(d <= ub_ray + 1e-9))
    return ok_null and ok_box and float(std.c @ d) < -1e-7 * cscale


def _phase1_feasible(std, tol):
    """Minimize the l1 constraint violation; decides feasibility robustly."""
    m, n = std.a.shape
    if m == 0:
        return True, None
    a1 = sp.hstack([std.a, sp.eye(m), -sp.eye(m)], format="csr")
    c1 = np.concatenate([np.zeros(n), np.ones(2 * m)])
    q1 = np.zeros(n + 2 * m)
    lb1 = np.concatenate([std.lb, np.zeros(2 * m)])
    ub1 = np.concatenate([std.ub, np.full(2 * m, np.inf)])
    sub = _Standard(c1, q1, (), a1, np.asarray([EQ] * m, dtype="U2"), std.b.copy(), lb1, ub1)
    res = _ipm(sub, max(tol, 1e-9), 500)
    if res.x is None:
        return False, None
    viol = float(c1 @ res.x)
    bscale = 1.0 + float(np.abs(std.b).max())
    return viol <= 1e-7 * bscale, res.x[:n]


def _finish(problem, std, res, tol, maximize, qdiag_orig, rank_ones, iters_extra=0):
    """Map a core result back to the original problem and measure residuals."""
    x = std.expand(res.x)
    a, senses, rhs = problem.a, problem.senses, problem.rhs
    act = a @ x if a.shape[0] else np.zeros(0)
    viol = np.zeros(len(rhs))
    for i, s in enumerate(senses):
        if s == LE:
            viol[i] = max(0.0, act[i] - rhs[i])
        elif s == GE:
            viol[i] = max(0.0, rhs[i] - act[i])
        else:
            viol[i] = abs(act[i] - rhs[i])
    bviol = np.maximum(np.maximum(problem.lb - x, x - problem.ub), 0.0)
    bviol = bviol[np.isfinite(bviol)]
    primal_residual = float(max(viol.max() if len(viol) else 0.0,
                                bviol.max() if len(bviol) else 0.0))

    c_int = std.c  # internal (sign-adjusted, slack-extended) objective
    qx = _q_matvec(std.qdiag, std.rank_ones, res.x)
    m = std.a.shape[0]
    rd = qx + c_int - (std.a.T @ res.y if m else 0.0) - res.zl + res.zu
    dual_residual = float(np.abs(rd).max()) if len(rd) else 0.0
    sl = np.where(np.isfinite(std.lb), res.x - std.lb, 0.0)
    su = np.where(np.isfinite(std.ub), std.ub - res.x, 0.0)
    complementarity = float(max(np.abs(sl * res.zl).max() if len(sl) else 0.0,
                                np.abs(su * res.zu).max() if len(su) else 0.0))
    pobj_int = _objective(c_int, std.qdiag, std.rank_ones, res.x)
    quad = pobj_int - float(c_int @ res.x)
    fl = np.isfinite(std.lb)
    fu = np.isfinite(std.ub)
    dobj_int = (float(std.b @ res.y) if m else 0.0) \
        + float((std.lb[fl] * res.zl[fl]).sum()) \
        - float((std.ub[fu] * res.zu[fu]).sum()) - quad
    gap = abs(pobj_int - dobj_int)

    objective = pobj_int + std.obj_const
    if maximize:
        objective = -objective
    status = res.status
    if status == "optimal" or status == "stalled":
        bscale = 1.0 + float(np.abs(std.b).max()) if m else 1.0
        cscale = 1.0 + float(np.abs(c_int).max()) if len(c_int) else 1.0
        qscale = float(np.abs(qx).max()) if len(rd) else 0.0
        converged = (primal_residual <= tol * bscale
                     and dual_residual <= tol * (cscale + qscale)
                     and gap <= tol * (1.0 + abs(pobj_int)))
        status = "optimal" if converged else "iteration_limit"
    return SolveReport(status, x, objective, primal_residual, dual_residual,
                       gap, complementarity, res.iters + iters_extra)


def _solve(problem, qdiag, rank_ones, tol, max_iter, maximize):
    c = -problem.c if maximize else problem.c
    std = _Standard(c, qdiag, rank_ones, problem.a, problem.senses, problem.rhs,
                    problem.lb, problem.ub)
    if np.any(std.lb > std.ub):
        return SolveReport("infeasible", None, np.nan, np.inf, np.inf, np.inf, np.inf, 0)
    if std.infeasible_reason is not None:
        return SolveReport("infeasible", None, np.nan, np.inf, np.inf, np.inf, np.inf, 0)
    # rows that lost every variable to presolve must be consistent on their own
    m, n = std.a.shape
    if m:
        nnz_per_row = np.diff(std.a.indptr)
        empty = nnz_per_row == 0
        if np.any(empty):
            if np.any(np.abs(std.b[empty]) > 1e-9 * (1.0 + np.abs(problem.rhs).max())):
                worst = float(np.abs(std.b[empty]).max())
                return SolveReport("infeasible", None, np.nan, worst, np.inf, np.inf, np.inf, 0)
            keep = ~empty
            std.a = std.a[keep]
            std.b = std.b[keep]
            m = std.a.shape[0]
    if n == 0:
        obj = std.obj_const if not maximize else -std.obj_const
        x0 = std.expand(np.zeros(0))
        return SolveReport("optimal", x0, obj, 0.0, 0.0, 0.0, 0.0, 0)
    if m == 0 and not std.rank_ones:
        # coordinates decouple, so each one solves in closed form
        x = _solve_boxed_separable(std, maximize)
        if x is None:
            return SolveReport("unbounded", None, np.nan, 0.0, np.inf, np.inf, np.inf, 0)
        qx = _q_matvec(std.qdiag, std.rank_ones, x)
        grad = qx + std.c
        zl = np.where(np.isfinite(std.lb) & np.isclose(x, std.lb), np.maximum(grad, 0.0), 0.0)
        zu = np.where(np.isfinite(std.ub) & np.isclose(x, std.ub), np.maximum(-grad, 0.0), 0.0)
        res = _IpmResult("optimal", x, np.zeros(0), zl, zu, 0)
        return _finish(problem, std, res, tol, maximize, qdiag, rank_ones)

    res = _ipm(std, tol, max_iter)
    report = _finish(problem, std, res, tol, maximize, qdiag, rank_ones)
    if report.status == "optimal":
        return report

    # did not converge: decide between infeasible, unbounded and plain failure
    feasible, _ = _phase1_feasible(std, tol)
    if not feasible:
        return SolveReport("infeasible", None, np.nan, report.primal_residual,
                           report.dual_residual, report.duality_gap,
                           report.complementarity, res.iters)
    if _unbounded_ray(std):
        return SolveReport("unbounded", None, np.nan, report.primal_residual,
                           report.dual_residual, np.inf, report.complementarity, res.iters)
    return report


def solve_lp(problem: LinearProgram, tol: float = 1e-8, max_iter: int = 10 ** 6) -> SolveReport:
    """Solve a LinearProgram; "optimal" certifies feasibility and duality gap."""
    if not isinstance(problem, LinearProgram):
        raise NumericsError("solve_lp expects a LinearProgram")
    n = problem.c.shape[0]
    return _solve(problem, np.zeros(n), (), tol, max_iter, problem.maximize)


def solve_qp(problem: ConvexQuadraticProgram, tol: float = 1e-6, max_iter: int = 10 ** 6) -> SolveReport:
    """Solve a ConvexQuadraticProgram; "optimal" certifies the KKT residuals."""
    if not isinstance(problem, ConvexQuadraticProgram):
        raise NumericsError("solve_qp expects a ConvexQuadraticProgram")
    return _solve(problem, problem.q_diag, problem.rank_ones, tol, max_iter, False)
