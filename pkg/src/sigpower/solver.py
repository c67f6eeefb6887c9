"""Joint signal / transmit-power restoration by alternating minimization.

The fusion center observes ``y = Phi H diag(eta) x + w`` with both ``x`` and
``eta`` unknown. Starting from a constant signal, the solver alternates

* a power step: box-constrained least squares, relaxation of the fit to a
  polytope around ``y``, then Simplex pivoting over that polytope's vertices
  to reach a ``K``-sparse power vector favouring likely-active sensors;
* a signal step: Laplacian-regularized least squares in closed form.

Complex observations are handled by stacking real and imaginary parts, which
keeps ``x`` real and lets the power step stay a real LP.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import IO

import numpy as np
import scipy.linalg
import scipy.optimize

from .simplex import (
    Basis,
    DegenerateBasisError,
    InfeasibleError,
    StandardLp,
    pivot_threshold,
    simplex_optimize,
    two_phase_solve,
    vertex_basis,
)

SUPPORT_TOL = 1e-9


class DegenerateInputError(ValueError):
    pass


class SingularSystemError(np.linalg.LinAlgError):
    pass


class RestorationError(RuntimeError):
    def __init__(self, message, iteration):
        super().__init__(f"outer iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass
class SolverConfig:
    mu: float | None = None  # None: scale-matched default, see default_mu
    gamma: float = 1.0
    k_target: int = 1
    max_outer_iters: int = 20
    x_convergence_tol: float = 1e-4
    max_pivots: int = 500
    mu_scale: float = 1e-2
    relax_schedule: tuple = (0.0, 1 / 64, 1 / 32, 1 / 16, 1 / 8, 1 / 4, 1 / 2, 1.0, 2.0)

    def __post_init__(self):
        if self.mu is not None and self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.k_target < 1:
            raise ValueError("k_target must be at least 1")
        if self.max_outer_iters < 0 or self.max_pivots < 0:
            raise ValueError("iteration budgets must be nonnegative")


@dataclass
class PivotSearchResult:
    eta: np.ndarray
    status: str
    pivots: int
    g: int
    objective: float
    basis: Basis
    visited: list = field(default_factory=list, repr=False)
    fallbacks: int = 0


@dataclass
class StepOneWorkspace:
    q_matrix: np.ndarray
    y: np.ndarray
    eta_star: np.ndarray
    epsilon: np.ndarray
    lp: StandardLp
    search: PivotSearchResult | None = None
    epsilon_fit: np.ndarray | None = None
    relaxation: float = 0.0
    y_scale: float = 1.0
    eta_max: np.ndarray | None = None
    start_indices: np.ndarray | None = None
    relax_level: int = 0


@dataclass
class RestorationResult:
    x_hat: np.ndarray
    eta_hat: np.ndarray
    objective_trace: list
    outer_iters: int
    converged: bool
    mu: float = 0.0
    gamma: float = 0.0
    statuses: list = field(default_factory=list)
    workspaces: list = field(default_factory=list, repr=False)

    @property
    def active_estimate(self) -> np.ndarray:
        return np.flatnonzero(self.eta_hat > SUPPORT_TOL)


def sensing_matrix(phi, h, v) -> np.ndarray:
    """``Phi H diag(v)`` as a dense array."""
    return np.asarray(phi) * (np.asarray(h) * np.asarray(v))[None, :]


def _real_rows(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return np.concatenate([a.real, a.imag], axis=0)
    return a.astype(float, copy=False)


def init_signal(y, phi, h, eta_max) -> tuple[np.ndarray, float]:
    """Best constant signal ``c * 1`` assuming every sensor sends at ``eta_max``."""
    a1 = _real_rows(sensing_matrix(phi, h, eta_max).sum(axis=1))
    yr = _real_rows(y)
    denom = float(a1 @ a1)
    if denom <= 1e-12 * max(1.0, float(yr @ yr)) or denom == 0.0:
        raise DegenerateInputError("signature/channel product is zero; signal level is unobservable")
    c = float(yr @ a1) / denom
    return np.full(np.shape(phi)[1], c), c


def signal_step(y, phi, h, eta_hat, laplacian, mu: float) -> np.ndarray:
    """Closed-form minimizer of ``||y - A x||^2 + mu x^T L x`` with ``A = Phi H diag(eta)``."""
    a = _real_rows(sensing_matrix(phi, h, eta_hat))
    yr = _real_rows(y)
    system = a.T @ a + mu * np.asarray(laplacian)
    rhs = a.T @ yr
    scale = np.abs(system).max()
    if scale == 0 or np.linalg.cond(system) > 1e13:
        raise SingularSystemError("normal equations are singular; use mu > 0 or a denser power vector")
    return scipy.linalg.solve(system, rhs, assume_a="sym")


def power_box_ls(y, q_matrix, eta_max) -> np.ndarray:
    """``argmin ||y - Q eta||^2`` over ``0 <= eta <= eta_max``.

    Solved with bounded-variable least squares after normalizing the columns
    of ``Q`` and the scale of ``y``; warns if the active-set iteration stops
    early and returns its last iterate.
    """
    q = _real_rows(q_matrix)
    yr = _real_rows(y)
    n = q.shape[1]
    upper = np.broadcast_to(np.asarray(eta_max, dtype=float), (n,))
    norms = np.linalg.norm(q, axis=0)
    live = (norms > 0) & (upper > 0)
    eta = np.zeros(n)
    if not live.any():
        return eta
    y_scale = max(np.abs(yr).max(), 1e-300)
    qs = q[:, live] / norms[live]
    ub = upper[live] * norms[live] / y_scale
    res = scipy.optimize.lsq_linear(qs, yr / y_scale, bounds=(np.zeros_like(ub), ub), method="bvls",
                                    tol=1e-14, max_iter=50 * n)
    if res.status <= 0:
        warnings.warn("box least squares did not converge; returning last iterate", RuntimeWarning)
    eta[live] = np.clip(res.x * y_scale / norms[live], 0, upper[live])
    return eta


def compute_epsilon(y, q_matrix, eta_star) -> np.ndarray:
    """Per-observation slack ``|y_i - [Q]_i eta*|``."""
    return np.abs(_real_rows(y) - _real_rows(q_matrix) @ eta_star)


def assemble_power_lp(y, epsilon, q_matrix, eta_max) -> StandardLp:
    """Standard-form LP over ``z = [eta, q1, q2, q3] >= 0`` with rows

    ``Q eta + q1 = y + eps``, ``Q eta - q2 = y - eps``, ``eta + q3 = eta_max``

    and cost ``-1`` on the ``eta`` block.
    """
    q = _real_rows(q_matrix)
    yr = _real_rows(y)
    eps = np.asarray(epsilon, dtype=float)
    if np.any(eps < 0):
        raise ValueError("epsilon must be nonnegative")
    m, n = q.shape
    upper = np.broadcast_to(np.asarray(eta_max, dtype=float), (n,))
    a = np.block([
        [q, np.eye(m), np.zeros((m, m)), np.zeros((m, n))],
        [q, np.zeros((m, m)), -np.eye(m), np.zeros((m, n))],
        [np.eye(n), np.zeros((n, m)), np.zeros((n, m)), np.eye(n)],
    ])
    b = np.concatenate([yr + eps, yr - eps, upper])
    c = np.concatenate([-np.ones(n), np.zeros(2 * m + n)])
    return StandardLp(a, b, c)


def activation_cost(psi, gamma: float) -> np.ndarray:
    return -gamma * np.log(np.asarray(psi, dtype=float))


def sparsity_pivot_search(
    lp: StandardLp,
    psi,
    k_target: int,
    gamma: float,
    initial: Basis,
    max_pivots: int = 500,
    record: bool = False,
    max_fallbacks: int = 30,
) -> PivotSearchResult:
    """Walk between vertices of ``lp`` steering the power support size ``g`` to ``k_target``.

    The first ``len(psi)`` columns of ``lp`` are the power entries. Each step
    prices every nonbasic column by its ratio test and keeps the moves that
    shrink ``g`` (``g > K``), grow it (``g < K``) or hold it (``g == K``); the
    move with the lowest support cost ``sum -gamma log psi`` wins, smaller
    column index on ties. At ``g == K`` only strictly improving moves count and
    the walk stops when none is left.

    Bases already visited are never re-entered. When no rule-conforming move
    exists, a ``g``-preserving move is taken, then any move; after
    ``max_fallbacks`` such moves in a row the search gives up.
    """
    cost = activation_cost(psi, gamma)
    n_eta = len(cost)
    a = lp.a
    basis = initial.copy()
    seen = {np.sort(basis.indices).tobytes()}
    visited = []
    fallbacks = run = 0

    def support_of(indices, values):
        mask = (indices < n_eta) & (values > SUPPORT_TOL)
        return indices[mask]

    best = None
    status = "budget"
    pivots = 0
    while True:
        idx, vals = basis.indices, basis.values
        supp = support_of(idx, vals)
        g = len(supp)
        obj = float(cost[supp].sum())
        if record:
            visited.append(basis.solution()[:n_eta])
        rank = (abs(g - k_target), obj if g == k_target else 0.0)
        if best is None or rank < best[0]:
            best = (rank, basis.copy(), g, obj)
        if pivots >= max_pivots:
            break

        nonbasic = basis.nonbasic()
        H = basis.inverse @ a[:, nonbasic]
        pos = H > pivot_threshold(H, axis=0)[None, :]
        ratios = np.where(pos, np.maximum(vals, 0.0)[:, None] / np.where(pos, H, 1.0), np.inf)
        theta = ratios.min(axis=0)
        bounded = np.isfinite(theta)
        leave = np.argmax(ratios <= theta[None, :] + 1e-12 * np.maximum(1.0, np.abs(theta)), axis=0)

        new_vals = vals[:, None] - theta[None, :] * np.where(bounded[None, :], H, 0.0)
        cols = np.arange(len(nonbasic))
        new_vals[leave, cols] = theta
        new_idx = np.repeat(idx[:, None], len(nonbasic), axis=1)
        new_idx[leave, cols] = nonbasic
        in_supp = (new_idx < n_eta) & (new_vals > SUPPORT_TOL)
        g_new = in_supp.sum(axis=0)
        obj_new = np.where(in_supp, cost[np.minimum(new_idx, n_eta - 1)], 0.0).sum(axis=0)

        def pick(mask):
            choices = np.flatnonzero(mask & bounded)
            for c in choices[np.lexsort((nonbasic[choices], obj_new[choices]))]:
                if np.sort(new_idx[:, c]).tobytes() not in seen:
                    return c
            return None

        if g > k_target:
            c = pick(g_new < g)
        elif g < k_target:
            c = pick(g_new > g)
        else:
            c = pick((g_new == g) & (obj_new < obj - 1e-12))
            if c is None:
                status = "optimal"
                break
        if c is None:
            fallbacks += 1
            run += 1
            if run > max_fallbacks:
                status = "stuck"
                break
            c = pick(g_new == g)
            if c is None:
                c = pick(np.ones_like(bounded))
            if c is None:
                status = "stuck"
                break
        else:
            run = 0

        basis.pivot(int(nonbasic[c]), int(leave[c]), H[:, c], float(theta[c]))
        seen.add(np.sort(basis.indices).tobytes())
        pivots += 1

    if status != "optimal":
        _, basis, g, obj = best
    eta = basis.solution()[:n_eta]
    if g != k_target:
        status = "infeasible-sparsity"
    return PivotSearchResult(eta, status, pivots, g, obj, basis, visited, fallbacks)


def initial_vertex(lp: StandardLp, warm_start=None) -> Basis:
    """Optimal basis of ``lp`` (a vertex maximizing total power for the power LP).

    Tries, in order: the ``warm_start`` basis, a HiGHS dual-simplex vertex
    turned into a basis, and the in-house two-phase Simplex.
    """
    if warm_start is not None:
        try:
            basis = Basis(lp, warm_start)
            if basis.is_feasible():
                return simplex_optimize(lp, basis).basis
        except (DegenerateBasisError, ValueError):
            pass
    res = scipy.optimize.linprog(lp.c, A_eq=lp.a, b_eq=lp.b, bounds=(0, None), method="highs-ds")
    if res.status == 0:
        try:
            return simplex_optimize(lp, vertex_basis(lp, np.maximum(res.x, 0.0))).basis
        except (DegenerateBasisError, ValueError):
            pass
    start, _ = two_phase_solve(lp)
    if start is None:
        raise InfeasibleError("power polytope is empty")
    return simplex_optimize(lp, start).basis


def power_step(
    y,
    q_matrix,
    eta_max,
    psi,
    config: SolverConfig,
    record: bool = False,
    warm_start=None,
    relax_from: int = 0,
) -> StepOneWorkspace:
    """One full power update for a fixed signal estimate.

    The LP is posed in normalized units: power as a fraction of its bound and
    observations divided by ``max |y|``. If the fit polytope has no reachable
    ``K``-sparse vertex, the slack is widened to ``eps + t |y|`` for each ``t``
    of ``config.relax_schedule`` in turn, starting at position ``relax_from``,
    until the pivot search reaches ``g == K``.

    ``warm_start`` is a list of basic column indices tried before Phase I
    (typically the previous call's ``start_indices``).
    """
    q = _real_rows(q_matrix)
    yr = _real_rows(y)
    n = q.shape[1]
    upper = np.broadcast_to(np.asarray(eta_max, dtype=float), (n,)).copy()
    eta_star = power_box_ls(yr, q, upper)
    eps_fit = compute_epsilon(yr, q, eta_star)

    y_scale = max(float(np.abs(yr).max()), 1e-300)
    qn = q * upper[None, :] / y_scale
    yn = yr / y_scale
    schedule = config.relax_schedule
    for level in range(min(relax_from, len(schedule) - 1), len(schedule)):
        t = schedule[level]
        eps = eps_fit + t * np.abs(yr)
        lp = assemble_power_lp(yn, eps / y_scale, qn, np.ones(n))
        start = initial_vertex(lp, warm_start)
        warm_start = start.indices.copy()
        search = sparsity_pivot_search(
            lp, psi, config.k_target, config.gamma, start, max_pivots=config.max_pivots, record=record
        )
        if search.g == config.k_target:
            break
    # basic values carry rounding of order FEAS_TOL; powers live in the box
    search.eta = np.clip(search.eta, 0.0, 1.0) * upper
    search.visited = [v * upper for v in search.visited]
    return StepOneWorkspace(q, yr, eta_star, eps, lp, search, eps_fit, t, y_scale, upper, warm_start, level)


def default_mu(phi, h, eta_max, laplacian, scale: float = 1e-2) -> float:
    """Scale-matched smoothness weight ``scale * tr(A^H A) / tr(L)``."""
    a = sensing_matrix(phi, h, eta_max)
    tr_l = float(np.trace(laplacian))
    if tr_l <= 0:
        return 0.0
    return scale * float(np.sum(np.abs(a) ** 2)) / tr_l


def joint_objective(y, phi, h, eta, x, laplacian, mu, psi, gamma) -> float:
    r = _real_rows(y) - _real_rows(sensing_matrix(phi, h, eta)) @ x
    active = np.asarray(eta) > SUPPORT_TOL
    return float(r @ r + mu * x @ laplacian @ x + activation_cost(psi, gamma)[active].sum())


def _alternate(y, phi, h, laplacian, psi, config, eta_max, step_one, diagnostics, keep_workspaces):
    phi = np.asarray(phi, dtype=float)
    n = phi.shape[1]
    eta_max = np.broadcast_to(np.asarray(np.sqrt(0.1) if eta_max is None else eta_max, dtype=float), (n,)).copy()
    laplacian = np.asarray(laplacian, dtype=float)
    mu = default_mu(phi, h, eta_max, laplacian, config.mu_scale) if config.mu is None else config.mu

    x_hat, _ = init_signal(y, phi, h, eta_max)
    eta_hat = eta_max.copy()
    result = RestorationResult(x_hat, eta_hat, [], 0, False, mu, config.gamma)
    for it in range(1, config.max_outer_iters + 1):
        try:
            q = sensing_matrix(phi, h, x_hat)
            eta_hat, status, ws = step_one(y, q, eta_max)
            x_new = signal_step(y, phi, h, eta_hat, laplacian, mu)
        except (np.linalg.LinAlgError, InfeasibleError, ValueError) as exc:
            raise RestorationError(str(exc), it) from exc
        change = np.linalg.norm(x_new - x_hat) / (np.linalg.norm(x_hat) + 1e-12)
        x_hat = x_new
        j = joint_objective(y, phi, h, eta_hat, x_hat, laplacian, mu, psi, config.gamma)
        result.objective_trace.append(j)
        result.statuses.append(status)
        if keep_workspaces and ws is not None:
            result.workspaces.append(ws)
        result.outer_iters = it
        if diagnostics is not None:
            record = {"iter": it, "J": j, "g": int(np.sum(eta_hat > SUPPORT_TOL)), "status": status,
                      "change": float(change)}
            if ws is not None and ws.search is not None:
                record["pivots"] = ws.search.pivots
            diagnostics.write(json.dumps(record) + "\n")
        if change < config.x_convergence_tol:
            result.converged = True
            break
    result.x_hat, result.eta_hat = x_hat, eta_hat
    return result


def restore(
    y,
    phi,
    h,
    laplacian,
    psi,
    config: SolverConfig,
    eta_max=None,
    diagnostics: IO[str] | None = None,
    keep_workspaces: bool = False,
) -> RestorationResult:
    """Jointly estimate the signal and the sparse power vector.

    ``eta_max`` is the per-sensor amplitude bound (scalar or vector); it
    defaults to ``sqrt(0.1)``, i.e. a 20 dBm cap.
    """

    warm, level = None, 0

    def step_one(y_, q, upper):
        # the fit slack needed last time is a good guess for this time
        nonlocal warm, level
        ws = power_step(
            y_, q, upper, psi, config, record=keep_workspaces, warm_start=warm, relax_from=max(level - 1, 0)
        )
        warm, level = ws.start_indices, ws.relax_level
        return ws.search.eta, ws.search.status, ws

    return _alternate(y, phi, h, laplacian, psi, config, eta_max, step_one, diagnostics, keep_workspaces)
