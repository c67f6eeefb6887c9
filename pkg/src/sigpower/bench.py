"""Seeded MSE-versus-M experiments over all restoration schemes.

Every random draw is tied to a seed path so that results do not depend on
which schemes run, on how many frames run, or in which order:

* sensor positions: ``(seed,)``
* signature matrix for a given M: ``(seed, M, 0)``
* frame ``f`` for a given M: ``(seed, M, 1, f)``
* per-frame signature matrix (``phi_policy = "per_frame"``): ``(seed, M, 2, f)``
"""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import baseline_restore, cs_reference, cs_reference_unknown, known_power_restore
from .graph import GmrfModel, build_knn_graph, eigendecompose, sample_gmrf
from .simplex import InfeasibleError, UnboundedError
from .solver import RestorationError, SolverConfig, default_mu, restore
from .wsn import (
    FADING_MODES,
    POWER_POLICIES,
    SensorField,
    draw_channels,
    gen_signatures,
    grouped_psi,
    high_group_size,
    place_sensors,
    synthesize_frame,
)

log = logging.getLogger(__name__)

SCHEMES = (
    "proposed",
    "proposed_baseline",
    "proposed_known_power",
    "reference_known_power",
    "reference_unknown_power",
)
CSV_HEADER = ("scheme", "M", "sigma2", "mse_mean", "mse_stderr", "frames_used", "seed")
GUESS_POLICIES = ("eta_max", "expected")
PSI_RULES = ("alternating", "match_m")
K_RULES = ("m", "expected")
PHI_POLICIES = ("fixed", "per_frame")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one MSE table.

    ``psi_rule`` places the two activation-probability groups: ``"alternating"``
    gives every other sensor ``psi_high``; ``"match_m"`` sizes the high group
    so that the expected number of active sensors is M. ``k_rule`` sets the
    solver's sparsity target: ``"m"`` (K = M) or ``"expected"`` (K = sum of
    psi, rounded). ``phi_policy`` keeps one signature matrix per M
    (``"fixed"``) or redraws it every frame.
    """

    n_sensors: int = 30
    area_side_m: float = 10.0
    knn_k: int = 8
    sigma2: float = 5.0
    delta: float = 0.01
    m_values: tuple[int, ...] = (5, 10, 15, 20, 25)
    n_frames: int = 200
    seed: int = 0
    noise_power_w: float = 1e-13
    p_e_w: float = 0.1
    p_max_w: float = 0.1
    t_e: float = 1.0
    rho: float = 0.9
    psi_high: float = 0.9
    psi_low: float = 0.1
    fading_mode: str = "real"
    power_policy: str = "uniform"
    guess_policy: str = "eta_max"
    psi_rule: str = "match_m"
    k_rule: str = "m"
    phi_policy: str = "fixed"
    schemes: tuple[str, ...] = SCHEMES
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        for name in ("n_sensors", "knn_k", "n_frames"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        for name in ("area_side_m", "sigma2", "delta", "p_e_w", "p_max_w", "t_e"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.noise_power_w < 0:
            raise ConfigError("noise_power_w must be nonnegative")
        if not 0 < self.rho <= 1:
            raise ConfigError("rho must lie in (0, 1]")
        if not (0 < self.psi_low <= self.psi_high <= 1):
            raise ConfigError("need 0 < psi_low <= psi_high <= 1")
        if not self.m_values or min(self.m_values) < 1:
            raise ConfigError("m_values must be a non-empty list of positive integers")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if self.knn_k >= self.n_sensors:
            raise ConfigError("knn_k must be smaller than n_sensors")
        if self.fading_mode not in FADING_MODES:
            raise ConfigError(f"fading_mode must be one of {FADING_MODES}")
        if self.power_policy not in POWER_POLICIES:
            raise ConfigError(f"power_policy must be one of {POWER_POLICIES}")
        if self.guess_policy not in GUESS_POLICIES:
            raise ConfigError(f"guess_policy must be one of {GUESS_POLICIES}")
        if self.psi_rule not in PSI_RULES:
            raise ConfigError(f"psi_rule must be one of {PSI_RULES}")
        if self.k_rule not in K_RULES:
            raise ConfigError(f"k_rule must be one of {K_RULES}")
        if self.phi_policy not in PHI_POLICIES:
            raise ConfigError(f"phi_policy must be one of {PHI_POLICIES}")
        unknown = set(self.schemes) - set(SCHEMES)
        if unknown or not self.schemes:
            raise ConfigError(f"unknown schemes {sorted(unknown)}; choose from {SCHEMES}")


@dataclass(frozen=True)
class MseRow:
    scheme: str
    M: int
    sigma2: float
    mse_mean: float
    mse_stderr: float
    frames_used: int
    seed: int


@dataclass
class MseTable:
    """Aggregated rows plus the per-frame errors behind them.

    ``per_frame[(scheme, M)]`` holds one MSE per frame, NaN where the scheme
    failed on that frame.
    """

    rows: list[MseRow] = field(default_factory=list)
    per_frame: dict = field(default_factory=dict, repr=False)

    def row(self, scheme: str, m: int) -> MseRow:
        for r in self.rows:
            if r.scheme == scheme and r.M == m:
                return r
        raise KeyError((scheme, m))

    def failures(self, scheme: str, m: int) -> int:
        return int(np.isnan(self.per_frame[(scheme, m)]).sum())


def compute_mse(x_true, x_hat) -> float:
    """``||x - x_hat||^2 / N``."""
    x_true = np.asarray(x_true)
    x_hat = np.asarray(x_hat)
    if x_true.shape != x_hat.shape or x_true.ndim != 1:
        raise ValueError(f"shape mismatch: {x_true.shape} vs {x_hat.shape}")
    return float(np.sum(np.abs(x_true - x_hat) ** 2) / x_true.size)


def mean_stderr(values) -> tuple[float, float, int]:
    """Mean, standard error of the mean and count of the finite entries."""
    v = [float(a) for a in values if np.isfinite(a)]
    n = len(v)
    if n == 0:
        return math.nan, math.nan, 0
    mean = math.fsum(v) / n
    if n == 1:
        return mean, 0.0, 1
    var = math.fsum((a - mean) ** 2 for a in v) / (n - 1)
    return mean, math.sqrt(var / n), n


def pooled_stderr(a: MseRow, b: MseRow) -> float:
    """Standard error of the difference of two means, treating them as independent."""
    return math.hypot(a.mse_stderr, b.mse_stderr)


# ---------------------------------------------------------------- scenario


@dataclass
class Scenario:
    """Quantities shared by all frames of one M."""

    config: ExperimentConfig
    m: int
    k: int
    field: SensorField
    phi: np.ndarray
    laplacian: np.ndarray
    gmrf: GmrfModel
    spectrum: object


def _rng(*path) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in path]))


def make_scenario(config: ExperimentConfig, m: int) -> Scenario:
    positions = place_sensors(config.n_sensors, config.area_side_m, _rng(config.seed))
    graph = build_knn_graph(positions, config.knn_k, config.sigma2)
    if config.psi_rule == "match_m":
        n_high = high_group_size(config.n_sensors, m, config.psi_high, config.psi_low)
    else:
        n_high = (config.n_sensors + 1) // 2
    psi = grouped_psi(config.n_sensors, n_high, config.psi_high, config.psi_low)
    sensor_field = SensorField.create(
        positions, config.area_side_m, psi=psi, rho=config.rho,
        p_max=config.p_max_w, p_e=config.p_e_w, t_e=config.t_e,
    )
    phi = gen_signatures(m, config.n_sensors, _rng(config.seed, m, 0))
    k = m if config.k_rule == "m" else int(np.clip(round(float(psi.sum())), 1, config.n_sensors))
    return Scenario(config, m, k, sensor_field, phi, graph.laplacian, GmrfModel(graph, config.delta),
                    eigendecompose(graph))


def make_frame(scenario: Scenario, index: int):
    cfg = scenario.config
    rng = _rng(cfg.seed, scenario.m, 1, index)
    x = sample_gmrf(scenario.gmrf, rng)
    channels = draw_channels(scenario.field, rng, cfg.fading_mode)
    phi = scenario.phi
    if cfg.phi_policy == "per_frame":
        phi = gen_signatures(scenario.m, cfg.n_sensors, _rng(cfg.seed, scenario.m, 2, index))
    return synthesize_frame(scenario.field, channels, x, phi, cfg.noise_power_w, rng,
                            power_policy=cfg.power_policy)


def run_scheme(scheme: str, scenario: Scenario, frame) -> np.ndarray:
    """Signal estimate of one scheme on one frame."""
    cfg = scenario.config
    solver = dataclasses.replace(cfg.solver, k_target=scenario.k)
    phi, lap, cap = frame.phi, scenario.laplacian, frame.eta_cap
    active = np.flatnonzero(frame.active)
    slack = 3.0 * math.sqrt(cfg.noise_power_w)
    if scheme == "proposed":
        return restore(frame.y, phi, frame.h, lap, scenario.field.psi, solver, eta_max=cap).x_hat
    if scheme == "proposed_baseline":
        return baseline_restore(frame.y, phi, frame.h, lap, scenario.field.psi, solver, eta_max=cap).x_hat
    if scheme == "proposed_known_power":
        mu = solver.mu if solver.mu is not None else default_mu(phi, frame.h, cap, lap, solver.mu_scale)
        return known_power_restore(frame.y, phi, frame.h, frame.eta_true, lap, mu)
    if scheme == "reference_known_power":
        return cs_reference(frame.y, scenario.spectrum, phi, frame.h, frame.eta_true, active, slack)
    if scheme == "reference_unknown_power":
        # mean amplitude of a uniform power fraction is 2/3 of the cap
        expected = cap * (2.0 / 3.0 if cfg.power_policy == "uniform" else 1.0)
        return cs_reference_unknown(frame.y, scenario.spectrum, phi, frame.h, active, cap, slack,
                                    cfg.guess_policy, expected)
    raise ValueError(f"unknown scheme {scheme!r}")


SOLVER_FAILURES = (RestorationError, InfeasibleError, UnboundedError, np.linalg.LinAlgError, ValueError)


def run_experiment(config: ExperimentConfig) -> MseTable:
    """Monte-Carlo MSE table; all schemes see the same frames."""
    table = MseTable()
    for m in config.m_values:
        scenario = make_scenario(config, m)
        errors = {s: np.full(config.n_frames, np.nan) for s in config.schemes}
        started = time.perf_counter()
        for f in range(config.n_frames):
            frame = make_frame(scenario, f)
            for scheme in config.schemes:
                try:
                    errors[scheme][f] = compute_mse(frame.x_true, run_scheme(scheme, scenario, frame))
                except SOLVER_FAILURES as exc:
                    log.warning("M=%d frame %d: %s failed: %s", m, f, scheme, exc)
        log.info("M=%d: %d frames in %.1f s", m, config.n_frames, time.perf_counter() - started)
        for scheme in config.schemes:
            mean, se, used = mean_stderr(errors[scheme])
            table.per_frame[(scheme, m)] = errors[scheme]
            table.rows.append(MseRow(scheme, m, config.sigma2, mean, se, used, config.seed))
            log.info("  %-24s mse=%.6e se=%.2e used=%d", scheme, mean, se, used)
    return table


# --------------------------------------------------------------------- csv


def _fmt(v: float) -> str:
    return f"{v:.17e}"


def format_csv(table: MseTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in table.rows:
        writer.writerow([r.scheme, r.M, _fmt(r.sigma2), _fmt(r.mse_mean), _fmt(r.mse_stderr), r.frames_used, r.seed])
    return buf.getvalue()


def emit_csv(table: MseTable, path) -> None:
    Path(path).write_bytes(format_csv(table).encode("utf-8"))


def read_csv(path) -> MseTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        rows = [
            MseRow(s, int(m), float(s2), float(mean), float(se), int(used), int(seed))
            for s, m, s2, mean, se, used, seed in reader
        ]
    return MseTable(rows)


# ------------------------------------------------------------------ config

_SOLVER_FIELDS = {f.name: f for f in dataclasses.fields(SolverConfig)}
_EXPERIMENT_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig) if f.name != "solver"}


def _convert(name: str, text: str, template):
    text = text.strip()
    try:
        if isinstance(template, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if name in ("m_values",):
                return tuple(int(t) for t in items)
            if name == "relax_schedule":
                return tuple(float(t) for t in items)
            return tuple(items)
        if isinstance(template, bool):
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError(text)
            return text.lower() in ("true", "1")
        if isinstance(template, int):
            return int(text)
        if isinstance(template, float) or template is None:
            if template is None and text.lower() in ("none", "auto", ""):
                return None
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply ``key = value`` lines to ``base``.

    ``#`` starts a comment, arrays are comma separated, and solver options
    take a ``solver.`` prefix (``solver.gamma = 1``).
    """
    base = base or ExperimentConfig()
    top, sol = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("solver."):
            name = key[len("solver."):]
            if name not in _SOLVER_FIELDS:
                raise ConfigError(f"line {lineno}: unknown solver option {name!r}")
            sol[name] = _convert(name, value, getattr(base.solver, name))
        elif key in _EXPERIMENT_FIELDS:
            top[key] = _convert(key, value, getattr(base, key))
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    try:
        solver = dataclasses.replace(base.solver, **sol)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return dataclasses.replace(base, solver=solver, **top)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base)
