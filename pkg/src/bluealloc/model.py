"""Core domain types for amplify-and-forward sensor networks.

Every quantity is linear scale (watts, or dimensionless ratios). dB and dBm
conversions happen at configuration boundaries, never here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import DegenerateSensor

__all__ = [
    "SensorProfile",
    "ChannelRealization",
    "NetworkRealization",
    "AllocationResult",
    "observation_snr",
    "channel_snr",
    "delta",
    "transmit_power",
]


def _require_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


def _require_positive(name: str, value: float) -> float:
    value = _require_finite(name, value)
    if value <= 0.0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    return value


@dataclass(frozen=True)
class SensorProfile:
    """Observation gain and observation-noise variance of a single sensor."""

    h: float
    sigma_o2: float

    def __post_init__(self):
        _require_finite("h", self.h)
        _require_positive("sigma_o2", self.sigma_o2)


@dataclass(frozen=True)
class ChannelRealization:
    """Sensor-to-fusion-center channel gain and channel-noise variance."""

    g: float
    sigma_c2: float

    def __post_init__(self):
        _require_finite("g", self.g)
        _require_positive("sigma_c2", self.sigma_c2)


@dataclass(frozen=True)
class NetworkRealization:
    """One snapshot of the whole network.

    Bundles the per-sensor observation profiles, the per-sensor channel
    draws, the prior variance of the parameter being estimated, and the
    variance target the allocator must hit. Derived per-sensor SNR vectors
    are computed once and cached; they never change because the snapshot is
    immutable.
    """

    sensors: tuple[SensorProfile, ...]
    channels: tuple[ChannelRealization, ...]
    sigma_theta2: float
    d0_target: float

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(self.sensors))
        object.__setattr__(self, "channels", tuple(self.channels))
        if len(self.sensors) == 0:
            raise ValueError("a network needs at least one sensor")
        if len(self.sensors) != len(self.channels):
            raise ValueError(
                f"sensor count {len(self.sensors)} != channel count {len(self.channels)}"
            )
        _require_positive("sigma_theta2", self.sigma_theta2)
        _require_positive("d0_target", self.d0_target)

    @classmethod
    def from_arrays(
        cls,
        h: Sequence[float],
        sigma_o2: Sequence[float],
        g: Sequence[float],
        sigma_c2: Sequence[float] | float,
        sigma_theta2: float,
        d0_target: float,
    ) -> "NetworkRealization":
        h = np.asarray(h, dtype=float)
        if np.isscalar(sigma_c2):
            sigma_c2 = np.full(h.shape, float(sigma_c2))
        sensors = tuple(SensorProfile(float(a), float(b)) for a, b in zip(h, sigma_o2, strict=True))
        channels = tuple(ChannelRealization(float(a), float(b)) for a, b in zip(g, sigma_c2, strict=True))
        return cls(sensors, channels, sigma_theta2, d0_target)

    @property
    def k(self) -> int:
        return len(self.sensors)

    @cached_property
    def h(self) -> np.ndarray:
        arr = np.array([s.h for s in self.sensors], dtype=float)
        arr.flags.writeable = False
        return arr

    @cached_property
    def sigma_o2(self) -> np.ndarray:
        arr = np.array([s.sigma_o2 for s in self.sensors], dtype=float)
        arr.flags.writeable = False
        return arr

    @cached_property
    def g(self) -> np.ndarray:
        arr = np.array([c.g for c in self.channels], dtype=float)
        arr.flags.writeable = False
        return arr

    @cached_property
    def sigma_c2(self) -> np.ndarray:
        arr = np.array([c.sigma_c2 for c in self.channels], dtype=float)
        arr.flags.writeable = False
        return arr

    @cached_property
    def beta(self) -> np.ndarray:
        """Per-sensor observation SNR, |h|^2 sigma_theta^2 / sigma_o^2."""
        arr = self.h**2 * self.sigma_theta2 / self.sigma_o2
        arr.flags.writeable = False
        return arr

    @cached_property
    def gamma(self) -> np.ndarray:
        """Per-sensor channel SNR, |g|^2 / sigma_c^2."""
        arr = self.g**2 / self.sigma_c2
        arr.flags.writeable = False
        return arr

    @cached_property
    def delta(self) -> np.ndarray:
        """Per-sensor quality score (1 + beta) / (beta * gamma).

        Lower is better. Degenerate sensors (beta or gamma equal to zero)
        get +inf instead of raising, so vector callers can mask them out.
        """
        beta, gamma = self.beta, self.gamma
        with np.errstate(divide="ignore", invalid="ignore"):
            arr = np.where(
                (beta > 0) & (gamma > 0),
                (1.0 + beta) / np.where(beta > 0, beta, 1.0) / np.where(gamma > 0, gamma, 1.0),
                np.inf,
            )
        arr.flags.writeable = False
        return arr

    @property
    def degenerate(self) -> np.ndarray:
        """Boolean mask of sensors that can never be active."""
        return ~np.isfinite(self.delta)


@dataclass(frozen=True)
class AllocationResult:
    """Solver output for one network snapshot.

    ``b`` holds the per-sensor information shares, ``a2`` the squared
    amplification gains that realize them, ``power`` the resulting transmit
    powers, ``cost_j`` the L2 norm of the power vector, and ``variance`` the
    estimator variance actually achieved.
    """

    b: np.ndarray
    lambda0: float
    k1: int
    a2: np.ndarray
    power: np.ndarray
    cost_j: float
    variance: float

    def __post_init__(self):
        for name in ("b", "a2", "power"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not (len(self.b) == len(self.a2) == len(self.power)):
            raise ValueError("b, a2 and power must have equal length")
        if not (1 <= self.k1 <= len(self.b)):
            raise ValueError(f"k1 must lie in 1..{len(self.b)}, got {self.k1}")


def observation_snr(sensor: SensorProfile, sigma_theta2: float) -> float:
    """SNR of the local observation: |h|^2 sigma_theta^2 / sigma_o^2."""
    _require_positive("sigma_theta2", sigma_theta2)
    return sensor.h**2 * sigma_theta2 / sensor.sigma_o2


def channel_snr(channel: ChannelRealization) -> float:
    """SNR of the sensor-to-fusion-center link: |g|^2 / sigma_c^2."""
    return channel.g**2 / channel.sigma_c2


def delta(beta: float, gamma: float) -> float:
    """Quality score (1 + beta) / (beta * gamma); lower means cheaper information.

    Raises DegenerateSensor when either SNR is zero, since such a sensor can
    never be activated at finite cost.
    """
    if beta <= 0.0 or gamma <= 0.0:
        raise DegenerateSensor(
            f"sensor with beta={beta!r}, gamma={gamma!r} can never be active"
        )
    return (1.0 + beta) / (beta * gamma)


def transmit_power(a2: float, sensor: SensorProfile, beta: float) -> float:
    """Average transmit power a^2 sigma_o^2 (1 + beta) of one sensor."""
    if a2 < 0.0:
        raise ValueError(f"squared gain must be >= 0, got {a2!r}")
    return a2 * sensor.sigma_o2 * (1.0 + beta)
