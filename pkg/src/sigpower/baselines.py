"""Comparison schemes for the joint restoration solver.

* ``reference_known_power``: L1 recovery of graph Fourier coefficients with
  the true support and power.
* ``reference_unknown_power``: the same with a guessed power vector.
* ``proposed_baseline``: the alternating solver with a plain box-constrained
  least-squares power step (no activation prior, no sparsity).
* ``proposed_known_power``: the signal step alone with the true power.
"""
from __future__ import annotations

import enum

import numpy as np

from .graph import GraphSpectrum
from .simplex import InfeasibleError, StandardLp, solve
from .solver import (
    RestorationResult,
    SolverConfig,
    _alternate,
    _real_rows,
    power_box_ls,
    sensing_matrix,
    signal_step,
)


class BaselineKind(str, enum.Enum):
    REFERENCE_KNOWN_POWER = "reference_known_power"
    REFERENCE_UNKNOWN_POWER = "reference_unknown_power"
    PROPOSED_BASELINE = "proposed_baseline"
    PROPOSED_KNOWN_POWER = "proposed_known_power"


def reference_matrix(spectrum: GraphSpectrum, phi, h, eta, active) -> np.ndarray:
    """Effective sensing matrix ``Phi H diag(eta) V`` restricted to the assumed active sensors."""
    mask = np.zeros(np.shape(phi)[1], dtype=bool)
    mask[np.asarray(active)] = True
    eta = np.where(mask, eta, 0.0)
    return sensing_matrix(phi, h, eta) @ spectrum.eigenvectors


def l1_fit(b_matrix, y, slack: float) -> np.ndarray:
    """``argmin ||alpha||_1`` s.t. ``|y - B alpha| <= slack`` componentwise, as an LP.

    Raises ``InfeasibleError`` when the slack box is empty.
    """
    b = _real_rows(b_matrix)
    yr = _real_rows(y)
    m, n = b.shape
    scale = float(np.abs(b).max()) or 1.0
    b, yr, slack = b / scale, yr / scale, slack / scale
    a = np.block([
        [b, -b, np.eye(m), np.zeros((m, m))],
        [b, -b, np.zeros((m, m)), -np.eye(m)],
    ])
    rhs = np.concatenate([yr + slack, yr - slack])
    cost = np.concatenate([np.ones(2 * n), np.zeros(2 * m)])
    z = solve(StandardLp(a, rhs, cost)).z
    return z[:n] - z[n:2 * n]


def cs_reference(y, spectrum: GraphSpectrum, phi, h, eta, active, noise_slack: float) -> np.ndarray:
    """Signal estimate ``V alpha`` from L1 recovery of its graph Fourier coefficients.

    The slack is widened tenfold up to three times if the constraints are
    infeasible.
    """
    b = reference_matrix(spectrum, phi, h, eta, active)
    slack = float(noise_slack)
    for attempt in range(4):
        try:
            return spectrum.igft(l1_fit(b, y, slack))
        except InfeasibleError:
            if attempt == 3:
                raise
            slack = slack * 10 if slack > 0 else 1e-12 * max(np.abs(y).max(), 1.0)


def guess_power(active, eta_max, policy: str = "eta_max", expected=None) -> np.ndarray:
    """Power vector assumed when the true one is unknown.

    ``"eta_max"`` puts the bound on the assumed support; ``"expected"`` uses
    the supplied ``expected`` amplitudes (e.g. from mean harvested energy).
    ``eta_max`` must be a full-length vector.
    """
    eta_max = np.asarray(eta_max, dtype=float)
    mask = np.zeros(eta_max.shape, dtype=bool)
    mask[np.asarray(active)] = True
    if policy == "eta_max":
        return np.where(mask, eta_max, 0.0)
    if policy == "expected":
        if expected is None:
            raise ValueError("policy 'expected' needs expected amplitudes")
        return np.where(mask, np.asarray(expected, dtype=float), 0.0)
    raise ValueError(f"unknown power guess policy {policy!r}")


def cs_reference_unknown(
    y, spectrum, phi, h, active, eta_max, noise_slack: float, policy: str = "eta_max", expected=None
) -> np.ndarray:
    eta_guess = guess_power(active, eta_max, policy, expected)
    return cs_reference(y, spectrum, phi, h, eta_guess, active, noise_slack)


def baseline_restore(y, phi, h, laplacian, psi, config: SolverConfig, eta_max=None) -> RestorationResult:
    """Alternating restoration whose power step is plain box-constrained least squares."""

    def step_one(y_, q, upper):
        return power_box_ls(y_, q, upper), "box-ls", None

    return _alternate(y, phi, h, laplacian, psi, config, eta_max, step_one, None, False)


def known_power_restore(y, phi, h, eta_true, laplacian, mu: float) -> np.ndarray:
    return signal_step(y, phi, h, eta_true, laplacian, mu)
