"""Stochastic channel blocks: AWGN, Wiener laser phase noise, surrogate RPN."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class ConfigError(ValueError):
    pass


class ChannelKind(str, Enum):
    AWGN_ONLY = "awgn_only"
    WIENER = "wiener"
    RPN_SURROGATE = "rpn_surrogate"


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float = 17.0
    linewidth_hz: float = 100e3
    symbol_rate_baud: float = 32e9
    rpn_sigma: float = 0.005
    kind: ChannelKind = ChannelKind.WIENER

    def __post_init__(self):
        object.__setattr__(self, "kind", ChannelKind(self.kind))
        if self.symbol_rate_baud <= 0:
            raise ConfigError("symbol_rate_baud must be positive")
        if self.linewidth_hz < 0:
            raise ConfigError("linewidth_hz must be non-negative")
        if self.rpn_sigma < 0:
            raise ConfigError("rpn_sigma must be non-negative")

    @property
    def noise_variance(self) -> float:
        return noise_variance(self.snr_db)

    @property
    def phase_variance(self) -> float:
        return sigma_phi(self.linewidth_hz, self.symbol_rate_baud)


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    Streams with different ids are statistically independent (numpy
    ``SeedSequence`` spawn keys). Each call to :meth:`generator` restarts the
    stream from its beginning.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream_id: int) -> "RngStream":
        # fold the parent id in so children of different parents never collide
        return RngStream(self.seed, self.stream_id * 1_000_003 + stream_id + 1)


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def noise_variance(snr_db: float) -> float:
    """Total complex noise variance at unit signal power; 0 for infinite SNR."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return 10.0 ** (-snr_db / 10.0)


def sigma_phi(linewidth_hz: float, symbol_rate_baud: float) -> float:
    """Per-symbol Wiener increment variance 2*pi*linewidth/symbol_rate (rad^2)."""
    if symbol_rate_baud <= 0:
        raise ConfigError("symbol rate must be positive")
    if linewidth_hz < 0:
        raise ConfigError("linewidth must be non-negative")
    return 2.0 * math.pi * linewidth_hz / symbol_rate_baud


def complex_noise(shape, variance: float, rng) -> np.ndarray:
    """Circular complex Gaussian samples with total variance ``variance``."""
    gen = _generator(rng)
    scale = math.sqrt(variance / 2.0)
    return scale * (gen.standard_normal(shape) + 1j * gen.standard_normal(shape))


def awgn(x, snr_db: float, rng) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    var = noise_variance(snr_db)
    if var == 0.0:
        return x.copy()
    return x + complex_noise(x.shape, var, rng)


def wiener_phase(count: int, sigma_phi2: float, rng, batch: tuple = ()) -> np.ndarray:
    """Random-walk phase starting at 0 with Normal(0, sigma_phi2) increments.

    ``batch`` prepends independent realizations; the walk runs along the last
    axis. The result is not wrapped.
    """
    if count < 1:
        raise ConfigError("count must be >= 1")
    shape = tuple(batch) + (count,)
    phi = np.zeros(shape)
    if sigma_phi2 > 0 and count > 1:
        steps = math.sqrt(sigma_phi2) * _generator(rng).standard_normal(tuple(batch) + (count - 1,))
        np.cumsum(steps, axis=-1, out=phi[..., 1:])
    return phi


def apply_phase(x, phi) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    phi = np.asarray(phi, dtype=np.float64)
    if x.shape != phi.shape:
        raise ValueError(f"shape mismatch: symbols {x.shape} vs phases {phi.shape}")
    return x * np.exp(1j * phi)


def rpn_phases(shape, sigma_rpn: float, rng) -> np.ndarray:
    if sigma_rpn < 0:
        raise ConfigError("sigma_rpn must be non-negative")
    if sigma_rpn == 0:
        return np.zeros(shape)
    return sigma_rpn * _generator(rng).standard_normal(shape)


def rpn(x, sigma_rpn: float, rng) -> np.ndarray:
    """Memoryless Gaussian phase rotation of every symbol."""
    x = np.asarray(x, dtype=np.complex128)
    return apply_phase(x, rpn_phases(x.shape, sigma_rpn, rng))
