"""Physical layer of the energy-harvesting sensor network.

Placement, path loss, fading, downlink harvesting, random activation,
binary signatures and the superposed uplink observation ``y``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PATHLOSS_REF_DB = 30.0
PATHLOSS_REF_DISTANCE = 1.0
PATHLOSS_EXPONENT = 2.0

FADING_MODES = ("real", "complex", "none")
POWER_POLICIES = ("full", "uniform")


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def alternating_psi(n: int, high: float = 0.9, low: float = 0.1) -> np.ndarray:
    """Activation probabilities for two interleaved node groups.

    Sensors S_1, S_3, ... (array positions 0, 2, ...) get ``high``.
    """
    psi = np.full(n, low)
    psi[0::2] = high
    return psi


def grouped_psi(n: int, n_high: int, high: float = 0.9, low: float = 0.1) -> np.ndarray:
    """``n_high`` sensors at probability ``high``, spread evenly over the indices.

    ``grouped_psi(n, n // 2)`` equals ``alternating_psi(n)`` for even ``n``.
    """
    if not 0 <= n_high <= n:
        raise ValueError("n_high must lie in [0, n]")
    psi = np.full(n, low)
    psi[(np.arange(n_high) * n) // max(n_high, 1)] = high
    return psi


def high_group_size(n: int, expected_active: float, high: float = 0.9, low: float = 0.1) -> int:
    """Size of the high-probability group whose expected activity is closest to ``expected_active``."""
    if high == low:
        return n // 2
    sizes = np.arange(n + 1)
    mean = sizes * high + (n - sizes) * low
    return int(sizes[np.argmin(np.abs(mean - expected_active))])


@dataclass(frozen=True)
class SensorField:
    positions: np.ndarray
    fc_position: np.ndarray
    psi: np.ndarray
    rho: np.ndarray
    p_max: float = 0.1
    p_e: float = 0.1
    t_e: float = 1.0

    def __post_init__(self):
        psi, rho = np.asarray(self.psi, float), np.asarray(self.rho, float)
        if np.any(psi <= 0) or np.any(psi > 1):
            raise ValueError("activation probabilities must lie in (0, 1]")
        if np.any(rho <= 0) or np.any(rho > 1):
            raise ValueError("harvesting efficiencies must lie in (0, 1]")
        if not (self.p_max > 0 and self.p_e > 0 and self.t_e > 0):
            raise ValueError("powers and harvesting time must be positive")

    @classmethod
    def create(cls, positions, side: float, psi=None, rho: float = 0.9, **kwargs) -> "SensorField":
        positions = np.asarray(positions, dtype=float)
        n = len(positions)
        psi = alternating_psi(n) if psi is None else np.asarray(psi, dtype=float)
        return cls(positions, np.array([side / 2, side / 2]), psi, np.full(n, rho), **kwargs)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def distances(self) -> np.ndarray:
        return np.linalg.norm(self.positions - self.fc_position, axis=1)

    @property
    def eta_max(self) -> np.ndarray:
        return np.full(self.n, np.sqrt(self.p_max))


@dataclass(frozen=True)
class ChannelRealization:
    g: np.ndarray
    fading_mode: str = "real"

    @property
    def h(self) -> np.ndarray:
        # uplink equals downlink (reciprocity)
        return self.g


@dataclass(frozen=True)
class Frame:
    phi: np.ndarray
    h: np.ndarray
    active: np.ndarray
    eta_true: np.ndarray
    x_true: np.ndarray
    noise: np.ndarray
    y: np.ndarray
    eta_cap: np.ndarray

    @property
    def m(self) -> int:
        return self.phi.shape[0]


def place_sensors(n: int, side: float, rng: np.random.Generator) -> np.ndarray:
    if n < 1 or not side > 0:
        raise ValueError("need n >= 1 and side > 0")
    return rng.uniform(0.0, side, size=(n, 2))


def path_loss_db(d) -> np.ndarray | float:
    """Log-distance path loss, clamped to the reference distance below 1 m."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    d = np.maximum(d, PATHLOSS_REF_DISTANCE)
    out = PATHLOSS_REF_DB + 10 * PATHLOSS_EXPONENT * np.log10(d / PATHLOSS_REF_DISTANCE)
    return float(out) if out.ndim == 0 else out


def draw_channels(field: SensorField, rng: np.random.Generator, fading_mode: str = "real") -> ChannelRealization:
    """Block fading channel with unit-power small-scale fading.

    ``"real"`` draws Rayleigh magnitudes, ``"complex"`` draws CN(0, 1) and
    ``"none"`` switches fading off (large-scale gain only).
    """
    n = field.n
    amplitude = np.sqrt(10.0 ** (-path_loss_db(field.distances) / 10.0))
    if fading_mode == "real":
        fading = rng.rayleigh(scale=1 / np.sqrt(2), size=n)
    elif fading_mode == "complex":
        fading = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)
    elif fading_mode == "none":
        fading = np.ones(n)
    else:
        raise ValueError(f"unknown fading mode {fading_mode!r}")
    return ChannelRealization(amplitude * fading, fading_mode)


def harvest_energy(rho, g, p_e, t_e):
    """Energy harvested over the downlink phase, ``rho |g|^2 P_e T_e``."""
    return rho * np.abs(g) ** 2 * p_e * t_e


def power_cap(field: SensorField, g) -> np.ndarray:
    """Per-sensor amplitude bound ``sqrt(min(P_max, xi / T_e))``.

    Everything it needs (channel, efficiency, FC power) is available at the
    fusion center, so it doubles as the receiver-side box bound.
    """
    xi = harvest_energy(field.rho, g, field.p_e, field.t_e)
    return np.sqrt(np.minimum(field.p_max, xi / field.t_e))


def sample_activation(psi, rng: np.random.Generator) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    if np.any(psi <= 0) or np.any(psi > 1):
        raise ValueError("activation probabilities must lie in (0, 1]")
    return rng.random(psi.shape) < psi


def gen_signatures(m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli(1/2) binary signature matrix with no all-zero column."""
    if m < 1 or n < 1:
        raise ValueError("need m >= 1 and n >= 1")
    phi = rng.integers(0, 2, size=(m, n)).astype(float)
    empty = ~phi.any(axis=0)
    while empty.any():
        phi[:, empty] = rng.integers(0, 2, size=(m, int(empty.sum())))
        empty = ~phi.any(axis=0)
    return phi


def synthesize_frame(
    field: SensorField,
    channels: ChannelRealization,
    x,
    phi,
    noise_power: float,
    rng: np.random.Generator,
    power_policy: str = "full",
) -> Frame:
    """One transmission round ``y = Phi H diag(eta) x + w``.

    Active sensors transmit at their whole budget (``"full"``) or at a
    uniformly drawn fraction of it (``"uniform"``).
    """
    if noise_power < 0:
        raise ValueError("noise power must be nonnegative")
    x = np.asarray(x, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if phi.shape[1] != field.n or x.shape != (field.n,):
        raise ValueError("dimension mismatch between field, signal and signatures")

    active = sample_activation(field.psi, rng)
    cap = power_cap(field, channels.g)
    if power_policy == "full":
        power = cap**2
    elif power_policy == "uniform":
        power = rng.uniform(0.0, 1.0, field.n) * cap**2
    else:
        raise ValueError(f"unknown power policy {power_policy!r}")
    eta = np.where(active, np.sqrt(power), 0.0)

    m = phi.shape[0]
    h = channels.h
    if np.iscomplexobj(h):
        w = np.sqrt(noise_power / 2) * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
    else:
        w = np.sqrt(noise_power) * rng.standard_normal(m)
    y = phi @ (h * eta * x) + w
    return Frame(phi, h, active, eta, x, w, y, cap)
