"""Best linear unbiased fusion of amplified-and-forwarded observations.

The fusion center receives y_i = g_i a_i (h_i theta + n_i) + w_i and combines
them with inverse-variance weights. Sums run through ``math.fsum`` so the
results stay stable for networks up to ten thousand sensors whose terms span
many orders of magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AllChannelsSilent
from .model import NetworkRealization

__all__ = [
    "FusionInput",
    "blue_estimate",
    "blue_variance_from_gains",
    "blue_variance_from_b",
]


@dataclass(frozen=True)
class FusionInput:
    """Received samples plus the network state they were produced under."""

    y: np.ndarray
    realization: NetworkRealization
    a2: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        a2 = np.asarray(self.a2, dtype=float)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a2", a2)
        k = self.realization.k
        if y.shape != (k,) or a2.shape != (k,):
            raise ValueError(
                f"y and a2 must both have shape ({k},), got {y.shape} and {a2.shape}"
            )
        if np.any(a2 < 0.0):
            raise ValueError("squared gains must be >= 0")


def blue_estimate(inp: FusionInput) -> float:
    """Minimum-variance linear unbiased estimate of the underlying parameter.

    Each sample is weighted by its effective channel h_i a_i g_i over its
    total noise a_i^2 g_i^2 sigma_o^2 + sigma_c^2; the weighted sum is then
    normalized so the estimator is unbiased.
    """
    r = inp.realization
    a = np.sqrt(inp.a2)
    eff = r.h * a * r.g
    noise = inp.a2 * r.g**2 * r.sigma_o2 + r.sigma_c2
    norm = math.fsum((eff**2 / noise).tolist())
    if norm == 0.0:
        raise AllChannelsSilent(
            "every sensor has zero effective gain; the estimate is undefined"
        )
    num = math.fsum((eff * inp.y / noise).tolist())
    return num / norm


def blue_variance_from_gains(realization: NetworkRealization, a2: np.ndarray) -> float:
    """Estimator variance achieved by a squared-gain vector.

    Returns ``math.inf`` instead of raising when no sensor contributes, so
    sweep code can record unreachable configurations without try/except.
    """
    a2 = np.asarray(a2, dtype=float)
    if a2.shape != (realization.k,):
        raise ValueError(f"a2 must have shape ({realization.k},), got {a2.shape}")
    if np.any(a2 < 0.0):
        raise ValueError("squared gains must be >= 0")
    t = realization.gamma * a2 * realization.sigma_o2
    beta = realization.beta
    terms = []
    for bi, ti in zip(beta.tolist(), t.tolist()):
        if math.isinf(ti):
            terms.append(bi)
        else:
            terms.append(bi * ti / (1.0 + ti))
    total = math.fsum(terms)
    if total == 0.0:
        return math.inf
    return realization.sigma_theta2 / total


def blue_variance_from_b(sigma_theta2: float, b: np.ndarray) -> float:
    """Variance implied by information shares directly: sigma_theta^2 / sum(b)."""
    b = np.asarray(b, dtype=float)
    if np.any(b < 0.0):
        raise ValueError("information shares must be >= 0")
    total = math.fsum(b.tolist())
    if total == 0.0:
        return math.inf
    return float(sigma_theta2) / total
