"""Revised Simplex on standard-form LPs, with the pivoting primitives exposed.

Problems are ``min c^T z  s.t.  A z = b, z >= 0``. A :class:`Basis` keeps an
explicit inverse of ``A_B`` that is updated in place on every pivot and
recomputed from scratch every ``REFACTOR_EVERY`` pivots.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import IO

import numpy as np
import scipy.linalg

FEAS_TOL = 1e-9
RESIDUAL_TOL = 1e-8
PIVOT_TOL = 1e-10
PIVOT_REL_TOL = 1e-9
REDUCED_COST_TOL = 1e-9
PHASE1_TOL = 1e-8
REFACTOR_EVERY = 50
BLAND_AFTER = 50


class DegenerateBasisError(np.linalg.LinAlgError):
    """``A_B`` is singular."""


class InfeasibleError(RuntimeError):
    pass


class UnboundedError(RuntimeError):
    pass


def _rows_covered(a) -> bool:
    """True when every row owns a singleton column, which implies full row rank."""
    nz = a != 0
    single = nz.sum(axis=0) == 1
    return bool(np.all(nz[:, single].any(axis=1)))


@dataclass
class StandardLp:
    """``min c^T z`` s.t. ``A z = b``, ``z >= 0``.

    Linearly dependent rows are removed at construction; ``row_map`` lists the
    original row index of every kept row. Dependent rows whose right-hand side
    disagrees with the kept ones make the system inconsistent and raise.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    row_map: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        c = np.asarray(self.c, dtype=float).reshape(-1)
        m, n = a.shape
        if b.shape != (m,) or c.shape != (n,):
            raise ValueError(f"shapes disagree: A {a.shape}, b {b.shape}, c {c.shape}")
        rows = np.arange(m) if self.row_map is None else np.asarray(self.row_map)
        rank = m if _rows_covered(a) else np.linalg.matrix_rank(a) if m else 0
        if rank < m:
            _, _, perm = scipy.linalg.qr(a.T, pivoting=True, mode="economic")
            keep = np.sort(perm[:rank])
            coef, *_ = np.linalg.lstsq(a[keep].T, a.T, rcond=None)
            if not np.allclose(coef.T @ b[keep], b, atol=RESIDUAL_TOL * (1 + np.abs(b).max())):
                raise ValueError("dependent constraint rows have inconsistent right-hand sides")
            a, b, rows = a[keep], b[keep], rows[keep]
        if a.shape[0] > n:
            raise ValueError("more independent constraints than variables")
        self.a, self.b, self.c, self.row_map = a, b, c, rows

    @property
    def shape(self) -> tuple[int, int]:
        return self.a.shape

    def objective(self, z) -> float:
        return float(self.c @ z)

    def is_feasible(self, z, tol: float = RESIDUAL_TOL) -> bool:
        z = np.asarray(z)
        return bool(np.all(np.abs(self.a @ z - self.b) <= tol) and np.all(z >= -FEAS_TOL))


class Basis:
    """Ordered set of basic columns plus ``A_B^{-1}`` and the basic values."""

    def __init__(self, lp: StandardLp, indices):
        self.lp = lp
        self.indices = np.array(indices, dtype=int)
        m = lp.shape[0]
        if self.indices.shape != (m,) or len(set(self.indices.tolist())) != m:
            raise ValueError(f"a basis needs {m} distinct column indices")
        self.refactor()

    def refactor(self):
        a_b = self.lp.a[:, self.indices]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu = scipy.linalg.lu_factor(a_b, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise DegenerateBasisError(str(exc)) from exc
        diag = np.abs(np.diag(lu[0]))
        if diag.size and diag.min() <= 1e-13 * max(diag.max(), 1.0):
            raise DegenerateBasisError(f"basis matrix is singular: {self.indices.tolist()}")
        self.inverse = scipy.linalg.lu_solve(lu, np.eye(len(self.indices)), check_finite=False)
        self.values = self.inverse @ self.lp.b
        self.pivots_since_refactor = 0

    def copy(self) -> "Basis":
        new = object.__new__(Basis)
        new.lp = self.lp
        new.indices = self.indices.copy()
        new.inverse = self.inverse.copy()
        new.values = self.values.copy()
        new.pivots_since_refactor = self.pivots_since_refactor
        return new

    def is_basic(self, j: int) -> bool:
        return bool(np.any(self.indices == j))

    def nonbasic(self) -> np.ndarray:
        mask = np.ones(self.lp.shape[1], dtype=bool)
        mask[self.indices] = False
        return np.flatnonzero(mask)

    def direction(self, j) -> np.ndarray:
        """Coefficients expressing column(s) ``j`` in the basic columns."""
        return self.inverse @ self.lp.a[:, j]

    def solution(self) -> np.ndarray:
        z = np.zeros(self.lp.shape[1])
        z[self.indices] = self.values
        return z

    def is_feasible(self) -> bool:
        return bool(np.all(self.values >= -FEAS_TOL))

    def pivot(self, entering: int, leaving_pos: int, direction=None, theta=None):
        """In-place exchange of the basic column at ``leaving_pos`` for ``entering``."""
        h = self.direction(entering) if direction is None else direction
        pivot = h[leaving_pos]
        if abs(pivot) <= PIVOT_TOL:
            raise DegenerateBasisError(f"pivot element {pivot:g} too small")
        if theta is None:
            theta = self.values[leaving_pos] / pivot
        self.values = self.values - theta * h
        self.values[leaving_pos] = theta
        row = self.inverse[leaving_pos] / pivot
        self.inverse -= np.outer(h, row)
        self.inverse[leaving_pos] = row
        self.indices[leaving_pos] = entering
        self.pivots_since_refactor += 1
        if self.pivots_since_refactor >= REFACTOR_EVERY:
            self.refactor()


def basic_solution(lp: StandardLp, basis: Basis) -> np.ndarray:
    """Full-length solution with ``A_B^{-1} b`` on the basic columns, zero elsewhere."""
    if basis.lp is not lp:
        basis = Basis(lp, basis.indices)
    return basis.solution()


def ratio_test(lp: StandardLp, basis: Basis, entering: int, bland: bool = False):
    """Largest step along column ``entering`` that keeps the basic values nonnegative.

    Returns ``(theta, leaving_pos)``; ``(inf, None)`` when no coefficient is
    positive (unbounded direction). Ties go to the smallest basis position, or
    to the smallest variable index when ``bland`` is set.
    """
    if basis.is_basic(entering):
        raise ValueError(f"column {entering} is already basic")
    h = basis.direction(entering)
    return _ratio(basis.values, h, basis.indices if bland else None)


def _ratio(values, h, indices=None):
    positive = np.flatnonzero(h > pivot_threshold(h))
    if positive.size == 0:
        return math.inf, None
    ratios = np.maximum(values[positive], 0.0) / h[positive]
    theta = ratios.min()
    ties = positive[ratios <= theta + 1e-12 * max(1.0, abs(theta))]
    if indices is not None:
        return float(theta), int(ties[np.argmin(indices[ties])])
    return float(theta), int(ties[0])


def pivot_threshold(h, axis=None):
    """Smallest usable pivot: ``PIVOT_TOL`` absolute and ``PIVOT_REL_TOL`` of the column's largest entry."""
    return np.maximum(PIVOT_TOL, PIVOT_REL_TOL * np.abs(h).max(axis=axis, initial=0.0))


def apply_pivot(basis: Basis, entering: int, leaving_pos: int) -> Basis:
    """New basis with ``entering`` replacing the column at ``leaving_pos``."""
    new = basis.copy()
    new.pivot(entering, leaving_pos)
    new_a_b = new.lp.a[:, new.indices]
    if np.linalg.matrix_rank(new_a_b) < len(new.indices):
        raise DegenerateBasisError("pivot produced a singular basis")
    return new


@dataclass
class SimplexResult:
    basis: Basis
    z: np.ndarray
    objective: float
    pivots: int


def simplex_optimize(
    lp: StandardLp,
    start: Basis,
    max_pivots: int | None = None,
    trace: IO[str] | None = None,
) -> SimplexResult:
    """Minimize ``c^T z`` from a basic feasible ``start``.

    Dantzig pricing; after ``BLAND_AFTER`` consecutive degenerate pivots the
    entering and leaving choices switch to Bland's smallest-index rule until a
    pivot makes progress again.
    """
    basis = start.copy() if start.lp is lp else Basis(lp, start.indices)
    if not basis.is_feasible():
        raise ValueError("start basis is not feasible")
    m, n = lp.shape
    if max_pivots is None:
        max_pivots = 50 * n + 10_000
    if trace is not None:
        _trace_header(trace, lp)

    degenerate_run = 0
    for pivots in range(max_pivots + 1):
        if trace is not None:
            _trace_step(trace, basis)
        duals = lp.c[basis.indices] @ basis.inverse
        reduced = lp.c - duals @ lp.a
        reduced[basis.indices] = 0.0
        candidates = np.flatnonzero(reduced < -REDUCED_COST_TOL)
        if candidates.size == 0:
            basis.refactor()
            z = basis.solution()
            return SimplexResult(basis, z, lp.objective(z), pivots)
        bland = degenerate_run >= BLAND_AFTER
        entering = int(candidates[0] if bland else candidates[np.argmin(reduced[candidates])])
        h = basis.direction(entering)
        theta, leave = _ratio(basis.values, h, basis.indices if bland else None)
        if leave is None:
            raise UnboundedError(f"objective unbounded along column {entering}")
        degenerate_run = degenerate_run + 1 if theta <= FEAS_TOL else 0
        basis.pivot(entering, leave, h, theta)
    raise RuntimeError(f"simplex did not terminate within {max_pivots} pivots")


def two_phase_solve(lp: StandardLp, trace: IO[str] | None = None) -> tuple[Basis | None, str]:
    """Find a basic feasible solution via an artificial-variable Phase I.

    Returns ``(basis, "feasible")`` or ``(None, "infeasible")``.
    """
    m, n = lp.shape
    if m == 0:
        return Basis(lp, []), "feasible"
    sign = np.where(lp.b < 0, -1.0, 1.0)
    a_signed = lp.a * sign[:, None]
    # crash: a unit column already in A covers its row without an artificial
    start = np.full(m, -1)
    for j in np.flatnonzero((np.count_nonzero(a_signed, axis=0) == 1)):
        i = int(np.flatnonzero(a_signed[:, j])[0])
        if start[i] < 0 and a_signed[i, j] > 0:
            start[i] = j
    need = np.flatnonzero(start < 0)
    art = np.zeros((m, len(need)))
    art[need, np.arange(len(need))] = 1.0
    a1 = np.hstack([a_signed, art])
    start[need] = n + np.arange(len(need))
    aux = StandardLp(a1, lp.b * sign, np.r_[np.zeros(n), np.ones(len(need))])
    res = simplex_optimize(aux, Basis(aux, start), trace=trace)
    if res.objective > PHASE1_TOL:
        return None, "infeasible"

    basis = res.basis
    for pos in range(m):
        if basis.indices[pos] < n:
            continue
        row = basis.inverse[pos] @ a1[:, :n]
        row[basis.indices[basis.indices < n]] = 0.0
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) <= 1e-9:
            raise DegenerateBasisError("artificial variable cannot leave: constraint rows dependent")
        basis.pivot(j, pos, theta=0.0)
    out = Basis(lp, basis.indices)
    out.values = np.where(np.abs(out.values) <= FEAS_TOL, np.maximum(out.values, 0.0), out.values)
    return out, "feasible"


def vertex_basis(lp: StandardLp, z, tol: float = 1e-9) -> Basis:
    """Basis whose basic solution is the vertex ``z``.

    The positive entries of ``z`` give the first columns; the rest are chosen
    by pivoted QR on the part of ``A`` orthogonal to them. Raises
    ``DegenerateBasisError`` if ``z`` is not a vertex of ``lp``.
    """
    z = np.asarray(z, dtype=float)
    m, _ = lp.shape
    support = np.flatnonzero(z > tol * max(1.0, np.abs(z).max()))
    if support.size > m:
        raise DegenerateBasisError(f"point has {support.size} positive entries, more than {m} rows")
    a_s = lp.a[:, support]
    if support.size and np.linalg.matrix_rank(a_s) < support.size:
        raise DegenerateBasisError("positive entries do not form independent columns")
    others = np.setdiff1d(np.arange(lp.shape[1]), support)
    rest = lp.a[:, others]
    if support.size:
        q_s, _ = np.linalg.qr(a_s)
        rest = rest - q_s @ (q_s.T @ rest)
    _, _, perm = scipy.linalg.qr(rest, pivoting=True, mode="economic")
    basis = Basis(lp, np.concatenate([support, others[perm[: m - support.size]]]))
    if not basis.is_feasible() or not np.allclose(basis.solution(), z, atol=1e-7 * max(1.0, np.abs(z).max())):
        raise DegenerateBasisError("recovered basis does not reproduce the vertex")
    return basis


def solve(lp: StandardLp, trace: IO[str] | None = None) -> SimplexResult:
    """Phase I followed by Phase II."""
    start, status = two_phase_solve(lp, trace=trace)
    if start is None:
        raise InfeasibleError("linear program is infeasible")
    return simplex_optimize(lp, start, trace=trace)


def _trace_header(stream: IO[str], lp: StandardLp):
    record = {"a": lp.a.tolist(), "b": lp.b.tolist(), "c": lp.c.tolist()}
    stream.write(json.dumps(record) + "\n")


def _trace_step(stream: IO[str], basis: Basis):
    record = {"basis": basis.indices.tolist(), "z": basis.solution().tolist()}
    stream.write(json.dumps(record) + "\n")
