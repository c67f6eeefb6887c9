import io
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from solver_cases import network_instance, random_problem
from sigpower.simplex import StandardLp
from sigpower.solver import (
    DegenerateInputError,
    RestorationError,
    SingularSystemError,
    SolverConfig,
    activation_cost,
    assemble_power_lp,
    compute_epsilon,
    default_mu,
    init_signal,
    initial_vertex,
    power_box_ls,
    power_step,
    restore,
    sensing_matrix,
    signal_step,
    sparsity_pivot_search,
)


def step2_objective(x, y, a, lap, mu):
    r = y - a @ x
    return float(np.real(np.vdot(r, r)) + mu * x @ lap @ x)


# ---------------------------------------------------------------- init


def test_init_scalar():
    x0, c = init_signal(np.array([2.0]), np.array([[1.0]]), np.array([1.0]), np.array([1.0]))
    assert c == 2.0 and np.array_equal(x0, [2.0])


def test_init_orthogonal_gives_zero():
    phi = np.eye(2)
    y = np.array([1.0, -1.0])
    _, c = init_signal(y, phi, np.ones(2), np.ones(2))
    assert c == 0.0


def test_init_degenerate():
    with pytest.raises(DegenerateInputError):
        init_signal(np.ones(3), np.zeros((3, 4)), np.ones(4), np.ones(4))
    with pytest.raises(DegenerateInputError):
        init_signal(np.ones(3), np.ones((3, 4)), np.zeros(4), np.ones(4))


@pytest.mark.parametrize("complex_", [False, True])
def test_init_local_optimality(complex_):
    for seed in range(50):
        y, phi, h, _, _, _ = random_problem(seed, complex_=complex_)
        eta_max = np.full(phi.shape[1], 0.7)
        _, c = init_signal(y, phi, h, eta_max)
        a1 = sensing_matrix(phi, h, eta_max).sum(axis=1)
        f = lambda t: float(np.sum(np.abs(y - t * a1) ** 2))
        assert f(c) <= f(c + 1e-3) and f(c) <= f(c - 1e-3)


# ---------------------------------------------------------------- step 2


def test_signal_step_square_mu_zero():
    rng = np.random.default_rng(0)
    phi = rng.integers(0, 2, (5, 5)).astype(float) + np.eye(5)
    h, eta, x = rng.uniform(0.5, 1, 5), rng.uniform(0.5, 1, 5), rng.standard_normal(5)
    a = sensing_matrix(phi, h, eta)
    xh = signal_step(a @ x, phi, h, eta, np.zeros((5, 5)), 0.0)
    assert np.allclose(xh, x, rtol=1e-10, atol=1e-10)


def test_signal_step_large_mu_is_constant():
    y, phi, h, eta, lap, _ = random_problem(1)
    xh = signal_step(y, phi, h, eta, lap, 1e9)
    a1 = sensing_matrix(phi, h, eta).sum(axis=1)
    c = float(y @ a1 / (a1 @ a1))
    assert np.allclose(xh, c, atol=1e-4 * (1 + abs(c)))


def test_signal_step_singular():
    y, phi, h, eta, lap, _ = random_problem(2)
    eta[:] = 0
    eta[0] = 1
    with pytest.raises(SingularSystemError):
        signal_step(y, phi, h, eta, lap, 0.0)


@pytest.mark.parametrize("complex_", [False, True])
def test_signal_step_gradient_and_perturbation(complex_):
    for seed in range(30):
        y, phi, h, eta, lap, rng = random_problem(seed, complex_=complex_)
        mu = 0.3
        xh = signal_step(y, phi, h, eta, lap, mu)
        assert np.isrealobj(xh)
        a = sensing_matrix(phi, h, eta)
        grad = 2 * np.real(a.conj().T @ (a @ xh - y)) + 2 * mu * lap @ xh
        assert np.linalg.norm(grad) <= 1e-6 * (1 + np.linalg.norm(y))
        f0 = step2_objective(xh, y, a, lap, mu)
        # finite-difference gradient at a shifted point matches the analytic form
        xs = xh + rng.standard_normal(len(xh))
        g_an = 2 * np.real(a.conj().T @ (a @ xs - y)) + 2 * mu * lap @ xs
        g_fd = np.array([
            (step2_objective(xs + 1e-6 * e, y, a, lap, mu) - step2_objective(xs - 1e-6 * e, y, a, lap, mu)) / 2e-6
            for e in np.eye(len(xs))
        ])
        assert np.allclose(g_fd, g_an, atol=1e-5)
        for d in rng.standard_normal((100, len(xh))):
            assert step2_objective(xh + 1e-3 * d / np.linalg.norm(d), y, a, lap, mu) >= f0 - 1e-12


# ---------------------------------------------------------------- box LS


def test_box_ls_identity_cases():
    y = np.array([0.2, 0.5, 0.9])
    assert np.allclose(power_box_ls(y, np.eye(3), 1.0), y)
    assert np.allclose(power_box_ls(np.full(3, 5.0), np.eye(3), 1.0), 1.0)
    assert np.allclose(power_box_ls(np.array([-1.0, 0.5]), np.eye(2), [1.0, 0.2]), [0.0, 0.2])


def test_box_ls_random_search_oracle():
    rng = np.random.default_rng(0)
    for _ in range(30):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, 5))
        q = rng.standard_normal((m, n))
        y = rng.standard_normal(m) * 2
        ub = rng.uniform(0.2, 1.5, n)
        eta = power_box_ls(y, q, ub)
        assert np.all(eta >= 0) and np.all(eta <= ub)
        f = lambda e: np.sum((y - q @ e.T).T ** 2, axis=-1) if e.ndim > 1 else np.sum((y - q @ e) ** 2)
        pts = rng.uniform(0, 1, (10_000, n)) * ub
        assert f(eta) <= np.min(np.sum((y[None, :] - pts @ q.T) ** 2, axis=1)) + 1e-9


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_box_ls_kkt(seed):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(1, 12, size=2)
    q = rng.standard_normal((m, n))
    y = rng.standard_normal(m)
    ub = rng.uniform(0.1, 2, n)
    eta = power_box_ls(y, q, ub)
    grad = 2 * q.T @ (q @ eta - y)
    tol = 1e-6 * (1 + np.linalg.norm(y))
    lo, hi = eta <= 1e-12, eta >= ub - 1e-12
    inner = ~lo & ~hi
    assert np.all(np.abs(grad[inner]) <= tol)
    assert np.all(grad[lo & ~hi] >= -tol)  # pushing up would not help
    assert np.all(grad[hi & ~lo] <= tol)


# ---------------------------------------------------------------- epsilon / LP


def test_epsilon():
    q = np.array([[1.0, 2.0], [0.0, 1.0]])
    eta = np.array([0.3, 0.4])
    assert np.array_equal(compute_epsilon(q @ eta, q, eta), [0.0, 0.0])
    y, phi, h, eta, _, _ = random_problem(4)
    q = sensing_matrix(phi, h, np.ones(len(eta)))
    eta_star = power_box_ls(y, q, 1.0)
    eps = compute_epsilon(y, q, eta_star)
    assert np.all(eps >= 0)
    assert np.sum(eps**2) == pytest.approx(np.sum((y - q @ eta_star) ** 2), abs=1e-10)


def test_assemble_scalar_example():
    lp = assemble_power_lp(np.array([1.0]), np.array([0.5]), np.array([[1.0]]), 1.0)
    assert np.array_equal(lp.b, [1.5, 0.5, 1.0])
    assert np.array_equal(lp.a, [[1, 1, 0, 0], [1, 0, -1, 0], [1, 0, 0, 1]])
    assert np.array_equal(lp.c, [-1, 0, 0, 0])


@pytest.mark.parametrize("complex_", [False, True])
def test_assemble_witness(complex_):
    for seed in range(20):
        y, phi, h, x, _, _ = random_problem(seed, complex_=complex_)
        q = sensing_matrix(phi, h, x)
        ub = np.full(len(x), 0.8)
        eta_star = power_box_ls(y, q, ub)
        eps = compute_epsilon(y, q, eta_star)
        lp = assemble_power_lp(y, eps, q, ub)
        m = len(eps)
        n = len(x)
        assert lp.shape == (2 * m + n, 2 * (m + n))
        qr = lp.a[:m, :n]
        yr = lp.b[:m] - eps
        z = np.concatenate([eta_star, yr + eps - qr @ eta_star, qr @ eta_star - yr + eps, ub - eta_star])
        assert np.all(z >= -1e-12)
        assert lp.is_feasible(np.maximum(z, 0))
        assert initial_vertex(lp).is_feasible()


def test_assemble_zero_epsilon_is_equality():
    q = np.array([[1.0, 1.0]])
    lp = assemble_power_lp(np.array([0.6]), np.zeros(1), q, 1.0)
    assert lp.b[0] == lp.b[1] == 0.6
    with pytest.raises(ValueError):
        assemble_power_lp(np.array([0.6]), -np.ones(1), q, 1.0)


# ---------------------------------------------------------------- pivot search


def test_activation_costs():
    assert activation_cost([0.9, 0.1], 1.0) == pytest.approx([0.10536, 2.30259], abs=1e-5)


def test_prefers_high_probability_support():
    # wide slack: every 0/1 power vector is a vertex, so all supports are reachable
    n = 4
    q = np.eye(n)
    lp = assemble_power_lp(np.zeros(n), np.full(n, 10.0), q, 1.0)
    psi = np.array([0.9, 0.1, 0.9, 0.1])
    res = sparsity_pivot_search(lp, psi, 2, 1.0, initial_vertex(lp))
    assert res.status == "optimal"
    assert set(np.flatnonzero(res.eta > 1e-9)) == {0, 2}


def _all_vertex_supports(lp, n):
    """Support cost of every basic feasible solution, by enumeration."""
    m, nv = lp.shape
    out = {}
    for cols in itertools.combinations(range(nv), m):
        a_b = lp.a[:, cols]
        if abs(np.linalg.det(a_b)) < 1e-10:
            continue
        z_b = np.linalg.solve(a_b, lp.b)
        if np.all(z_b >= -1e-9):
            z = np.zeros(nv)
            z[list(cols)] = z_b
            supp = tuple(np.flatnonzero(z[:n] > 1e-9))
            out[supp] = z[:n]
    return out


def test_tiny_exhaustive_support_oracle():
    found_global = 0
    for seed in range(25):
        rng = np.random.default_rng(seed)
        n, m, k = 4, 2, 2
        q = rng.uniform(0.2, 1.0, (m, n))
        eta_true = np.zeros(n)
        eta_true[rng.choice(n, k, replace=False)] = rng.uniform(0.3, 1.0, k)
        y = q @ eta_true
        eta_star = power_box_ls(y, q, 1.0)
        eps = compute_epsilon(y, q, eta_star) + 0.05 * np.abs(y)
        lp = assemble_power_lp(y, eps, q, 1.0)
        psi = rng.choice([0.9, 0.1], n)
        cost = activation_cost(psi, 1.0)
        res = sparsity_pivot_search(lp, psi, k, 1.0, initial_vertex(lp))
        supports = _all_vertex_supports(lp, n)
        k_costs = {s: cost[list(s)].sum() for s in supports if len(s) == k}
        if res.g != k:
            assert res.status == "infeasible-sparsity"
            continue
        got = tuple(np.flatnonzero(res.eta > 1e-9))
        assert got in k_costs
        assert res.objective == pytest.approx(k_costs[got])
        found_global += res.objective <= min(k_costs.values()) + 1e-12
    assert found_global >= 1


def _check_visited(ws, tol=1e-8):
    """Every visited power vector lies in the polytope of the LP that produced it."""
    upper = ws.eta_max
    q = ws.q_matrix * upper[None, :] / ws.y_scale
    yn = ws.y / ws.y_scale
    eps = ws.epsilon / ws.y_scale
    for eta in ws.search.visited:
        u = eta / upper
        assert np.all(u >= -tol) and np.all(u <= 1 + tol)
        r = q @ u
        assert np.all(r <= yn + eps + tol) and np.all(r >= yn - eps - tol)


def _check_monotone(ws, psi):
    cost = activation_cost(psi, 1.0)
    prev = None
    for eta in ws.search.visited:
        supp = eta > 1e-9
        g, obj = supp.sum(), cost[supp].sum()
        if prev is not None and prev[0] == g == ws.search.g:
            assert obj <= prev[1] + 1e-12
        prev = (g, obj)


@pytest.mark.parametrize("seed", range(5))
def test_power_step_invariants(seed):
    case = network_instance(seed, policy="uniform", noise=1e-13)
    rng = np.random.default_rng(seed)
    x_guess = case["x"] + 0.3 * rng.standard_normal(30)
    q = sensing_matrix(case["phi"], case["h"], x_guess)
    ws = power_step(case["y"], q, case["cap"], case["psi"], SolverConfig(k_target=15), record=True)
    _check_visited(ws)
    _check_monotone(ws, case["psi"])
    assert np.all(ws.search.eta >= 0) and np.all(ws.search.eta <= case["cap"] * (1 + 1e-8))
    r = case["y"] - q @ ws.search.eta
    assert r @ r <= ws.epsilon @ ws.epsilon + 1e-6
    assert r @ r <= (ws.epsilon @ ws.epsilon) * (1 + 1e-6) + 1e-30
    if ws.search.status == "optimal":
        assert np.sum(ws.search.eta > 1e-9) == 15


def test_power_step_with_true_signal_recovers_support():
    for seed in range(5):
        case = network_instance(seed)
        q = sensing_matrix(case["phi"], case["h"], case["x"])
        ws = power_step(case["y"], q, case["cap"], case["psi"], SolverConfig(k_target=15))
        assert set(np.flatnonzero(ws.search.eta > 1e-9)) == set(np.flatnonzero(case["active"]))


# ---------------------------------------------------------------- restore


def test_restore_zero_iterations():
    case = network_instance(0)
    cfg = SolverConfig(k_target=15, max_outer_iters=0)
    r = restore(case["y"], case["phi"], case["h"], case["L"], case["psi"], cfg, eta_max=case["cap"])
    x0, _ = init_signal(case["y"], case["phi"], case["h"], case["cap"])
    assert np.array_equal(r.x_hat, x0) and np.array_equal(r.eta_hat, case["cap"])
    assert r.outer_iters == 0 and r.objective_trace == []


def test_restore_exact_recovery_identity_signatures():
    # every sensor active at full power with a constant field: the first
    # alternation lands on the truth
    rng = np.random.default_rng(3)
    n = 10
    h = rng.uniform(0.5, 1.5, n)
    cap = rng.uniform(0.5, 1.0, n)
    x = np.full(n, 1.7)
    y = h * cap * x
    w = np.triu(rng.uniform(0, 1, (n, n)), 1)
    lap = np.diag((w + w.T).sum(1)) - (w + w.T)
    cfg = SolverConfig(k_target=n, mu=1e-6)
    r = restore(y, np.eye(n), h, lap, np.full(n, 0.9), cfg, eta_max=cap)
    assert np.linalg.norm(r.x_hat - x) / np.linalg.norm(x) < 1e-4
    assert np.allclose(r.eta_hat, cap, rtol=1e-6)


def test_restore_support_recovery_rate():
    hits = 0
    trials = 20
    for seed in range(trials):
        case = network_instance(seed)
        r = restore(case["y"], case["phi"], case["h"], case["L"], case["psi"], SolverConfig(k_target=15),
                    eta_max=case["cap"])
        hits += set(r.active_estimate) == set(np.flatnonzero(case["active"]))
    print(f"exact support recovered on {hits}/{trials} frames")
    assert hits >= 0.8 * trials


def test_restore_invariants_and_determinism():
    case = network_instance(7, policy="uniform", noise=1e-13)
    cfg = SolverConfig(k_target=15)
    buf = io.StringIO()
    r = restore(case["y"], case["phi"], case["h"], case["L"], case["psi"], cfg, eta_max=case["cap"],
                diagnostics=buf, keep_workspaces=True)
    r2 = restore(case["y"], case["phi"], case["h"], case["L"], case["psi"], cfg, eta_max=case["cap"])
    assert np.array_equal(r.x_hat, r2.x_hat) and np.array_equal(r.eta_hat, r2.eta_hat)
    assert r.objective_trace == r2.objective_trace
    records = [json.loads(l) for l in buf.getvalue().splitlines()]
    assert len(records) == r.outer_iters == len(r.workspaces)
    assert {"iter", "J", "g", "status", "pivots"} <= set(records[0])
    for ws in r.workspaces:
        res = ws.y - ws.q_matrix @ ws.search.eta
        assert res @ res <= ws.epsilon @ ws.epsilon + 1e-6
        if ws.search.status == "optimal":
            assert ws.search.g == 15
    assert r.mu == pytest.approx(default_mu(case["phi"], case["h"], case["cap"], case["L"]))


def test_restore_complex_mode():
    rng = np.random.default_rng(5)
    case = network_instance(5)
    h = case["h"] * np.exp(1j * rng.uniform(0, 2 * np.pi, 30))
    y = case["phi"] @ (h * case["eta"] * case["x"])
    r = restore(y, case["phi"], h, case["L"], case["psi"], SolverConfig(k_target=15), eta_max=case["cap"],
                keep_workspaces=True)
    assert np.isrealobj(r.x_hat)
    assert r.workspaces[0].q_matrix.shape == (30, 30)  # 2M stacked rows


def test_restore_wraps_errors():
    case = network_instance(0)
    with pytest.raises(RestorationError) as info:
        restore(case["y"], case["phi"], case["h"], case["L"], case["psi"], SolverConfig(k_target=15, mu=0.0),
                eta_max=case["cap"])
    assert info.value.iteration == 1


def test_config_validation():
    for kw in ({"mu": -1.0}, {"gamma": -1.0}, {"k_target": 0}, {"max_outer_iters": -1}):
        with pytest.raises(ValueError):
            SolverConfig(**kw)
