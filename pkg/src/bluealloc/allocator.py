"""Variance-constrained minimum-energy power allocation.

Solves, per network snapshot:

    minimize   L2 norm of the transmit-power vector
    subject to estimator variance <= d0_target

The problem is convex in the per-sensor information shares b_i (each share
lives in [0, beta_i) and the achieved variance is sigma_theta^2 / sum(b)).
Stationarity at a fixed multiplier lambda0 reduces to a depressed cubic per
sensor whose unique real root has a closed form; the multiplier itself is
pinned down by bracketing and bisection so that the shares sum to the
required total. An active-set descent over the delta-sorted sensors mirrors
classic water-filling: the accepted solution is the largest prefix of the
quality ordering whose shares all come out strictly positive.

Every closed-form root is validated by substitution into the stationarity
cubic. On validation failure (which happens for extremely poor sensors,
where the closed form loses all its significant digits to cancellation) the
root is recomputed by a safeguarded Newton iteration that converges
monotonically from below; each rescue is logged.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BOutOfRange,
    BracketFailure,
    ClosedFormMismatch,
    InfeasibleTarget,
)
from .estimator import blue_variance_from_gains
from .model import AllocationResult, NetworkRealization

logger = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "OracleConfig",
    "b_given_lambda",
    "lambda_residual",
    "solve_lambda0",
    "waterfill",
    "gains_from_b",
    "cost_j",
    "brute_force_oracle",
]


@dataclass(frozen=True)
class SolverConfig:
    """Numeric tolerances for the share solver.

    lambda_tol: relative width at which the multiplier bisection stops.
    residual_tol: allowed relative error when a closed-form share is
        substituted back into the stationarity cubic.
    max_bracket_doublings: cap on outward bracket growth for the multiplier.
    feasibility_margin: targets within this relative distance of the total
        available information are rejected as infeasible.
    """

    lambda_tol: float = 1e-12
    residual_tol: float = 1e-8
    max_bracket_doublings: int = 200
    feasibility_margin: float = 1e-9


# ---------------------------------------------------------------------------
# per-sensor stationarity root
# ---------------------------------------------------------------------------

def _cardano_u(kappa: np.ndarray) -> np.ndarray:
    """Real root u of u^3 + 2*kappa*u - 2*kappa = 0, evaluated in closed form.

    u is the fraction of beta that stays unallocated (b = beta * (1 - u)).
    """
    with np.errstate(over="ignore", invalid="ignore"):
        t = 1.0 + np.sqrt(1.0 + (8.0 / 27.0) * kappa)
        r1 = np.cbrt(kappa * t)
        r2 = np.cbrt(kappa / (t * t))
        return r1 * (1.0 - (2.0 / 3.0) * r2)


def _fraction_root_newton(kappa: float) -> float:
    """Accurate root x in (0, 1) of (1 - x)^3 = 2*kappa*x.

    Starts at 1/(2*kappa + 3), which always sits below the root, so the
    Newton steps increase monotonically and cannot overshoot (the residual
    function is convex and decreasing). Used when the closed form fails its
    substitution check.
    """
    if not math.isfinite(kappa):
        return 0.0
    x = 1.0 / (2.0 * kappa + 3.0)
    for _ in range(120):
        om = 1.0 - x
        gx = om * om * om - 2.0 * kappa * x
        dg = -3.0 * om * om - 2.0 * kappa
        xn = x - gx / dg
        if xn <= 0.0:
            xn = 0.5 * x
        elif xn >= 1.0:
            xn = 0.5 * (x + 1.0)
        if abs(xn - x) <= 1e-16 * xn:
            return xn
        x = xn
    return x


def _stationarity_ratio(beta, delta, frac, lambda0):
    """Marginal-cost ratio 2 beta^3 delta^2 b / (beta - b)^3 / lambda0 in share-fraction form."""
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        om = 1.0 - frac
        return 2.0 * beta * delta * delta * frac / (om * om * om) / lambda0


def _share_fractions(
    beta: np.ndarray,
    delta: np.ndarray,
    lambda0: float,
    cfg: SolverConfig,
) -> np.ndarray:
    """Vector of share fractions x_i = b_i / beta_i at a fixed multiplier.

    Closed form first, clamped at zero, then substitution-checked; entries
    that fail the check are recomputed numerically.
    """
    kappa = beta * delta * delta / lambda0
    frac = 1.0 - _cardano_u(kappa)
    frac = np.where(np.isfinite(frac) & (frac > 0.0), frac, 0.0)

    positive = frac > 0.0
    if np.any(positive):
        ratio = _stationarity_ratio(beta, delta, frac, lambda0)
        bad = positive & ~(np.abs(ratio - 1.0) <= cfg.residual_tol)
        if np.any(bad):
            for i in np.flatnonzero(bad):
                logger.debug(
                    "closed-form share failed validation "
                    "(beta=%.6g delta=%.6g lambda0=%.6g rel residual=%.3g), "
                    "falling back to numeric root",
                    beta[i], delta[i], lambda0,
                    abs(float(ratio[i]) - 1.0) if math.isfinite(ratio[i]) else math.inf,
                )
                frac[i] = _fraction_root_newton(float(kappa[i]))
            ratio = _stationarity_ratio(beta, delta, frac, lambda0)
            still = positive & (frac > 0.0) & ~(np.abs(ratio - 1.0) <= cfg.residual_tol)
            if np.any(still):
                i = int(np.flatnonzero(still)[0])
                raise ClosedFormMismatch(
                    f"stationarity root failed validation even after numeric rescue "
                    f"(beta={beta[i]!r}, delta={delta[i]!r}, lambda0={lambda0!r})"
                )
    return frac


def b_given_lambda(
    beta: float,
    delta: float,
    lambda0: float,
    cfg: SolverConfig | None = None,
) -> float:
    """Share b in [0, beta) that equalizes marginal cost with the multiplier.

    Evaluates the closed-form root of the stationarity cubic
    2 beta^3 delta^2 b = lambda0 (beta - b)^3, clamps negative brackets to
    zero, and validates the result by substitution (falling back to a
    numeric solve when cancellation has destroyed the closed form).
    """
    if not (beta > 0.0 and math.isfinite(beta)):
        raise ValueError(f"beta must be finite and > 0, got {beta!r}")
    if not (delta > 0.0 and math.isfinite(delta)):
        raise ValueError(f"delta must be finite and > 0, got {delta!r}")
    if not (lambda0 > 0.0 and math.isfinite(lambda0)):
        raise ValueError(f"lambda0 must be finite and > 0, got {lambda0!r}")
    cfg = cfg or SolverConfig()
    frac = _share_fractions(
        np.array([beta]), np.array([delta]), float(lambda0), cfg
    )
    return float(beta * frac[0])


def _as_active_arrays(active: Iterable[tuple[float, float]]):
    pairs = list(active)
    if not pairs:
        raise ValueError("active set must not be empty")
    beta = np.array([p[0] for p in pairs], dtype=float)
    delta = np.array([p[1] for p in pairs], dtype=float)
    if np.any(~np.isfinite(beta)) or np.any(beta <= 0.0):
        raise ValueError("every active beta must be finite and > 0")
    if np.any(~np.isfinite(delta)) or np.any(delta <= 0.0):
        raise ValueError("every active delta must be finite and > 0")
    return beta, delta


def lambda_residual(
    active: Iterable[tuple[float, float]],
    lambda0: float,
    rhs: float,
) -> float:
    """Residual of the multiplier equation at lambda0.

    The left side sums beta_i times the unclamped closed-form root u_i, i.e.
    the amount of information each active sensor leaves on the table; at the
    correct multiplier it equals ``rhs`` (total information minus the share
    sum demanded by the variance target). Strictly decreasing in lambda0.
    """
    beta, delta = _as_active_arrays(active)
    if not (lambda0 > 0.0 and math.isfinite(lambda0)):
        raise ValueError(f"lambda0 must be finite and > 0, got {lambda0!r}")
    kappa = beta * delta * delta / float(lambda0)
    lhs = math.fsum((beta * _cardano_u(kappa)).tolist())
    return lhs - rhs


def solve_lambda0(
    active: Iterable[tuple[float, float]],
    target_sum_b: float,
    cfg: SolverConfig | None = None,
) -> float:
    """Multiplier at which the active shares sum to ``target_sum_b``.

    Brackets outward from lambda0 = 1 by doubling (the share sum is
    increasing in the multiplier), then bisects to relative width
    ``cfg.lambda_tol``.
    """
    cfg = cfg or SolverConfig()
    beta, delta = _as_active_arrays(active)
    if not (target_sum_b > 0.0 and math.isfinite(target_sum_b)):
        raise ValueError(f"target_sum_b must be finite and > 0, got {target_sum_b!r}")
    total_beta = math.fsum(beta.tolist())
    if not (target_sum_b < total_beta * (1.0 - cfg.feasibility_margin)):
        raise InfeasibleTarget(
            f"requested share sum {target_sum_b!r} is not safely below the "
            f"available information {total_beta!r}",
        )

    def share_sum(lam: float) -> float:
        frac = _share_fractions(beta, delta, lam, cfg)
        return math.fsum((beta * frac).tolist())

    lam = 1.0
    s = share_sum(lam) - target_sum_b
    if s == 0.0:
        return lam
    if s < 0.0:
        lo, hi = lam, 2.0 * lam
        for _ in range(cfg.max_bracket_doublings):
            s = share_sum(hi) - target_sum_b
            if s >= 0.0:
                break
            lo, hi = hi, 2.0 * hi
        else:
            raise BracketFailure(
                f"no upper bracket for the multiplier within "
                f"{cfg.max_bracket_doublings} doublings"
            )
        if s == 0.0:
            return hi
    else:
        lo, hi = 0.5 * lam, lam
        for _ in range(cfg.max_bracket_doublings):
            s = share_sum(lo) - target_sum_b
            if s <= 0.0:
                break
            lo, hi = 0.5 * lo, lo
        else:
            raise BracketFailure(
                f"no lower bracket for the multiplier within "
                f"{cfg.max_bracket_doublings} doublings"
            )
        if s == 0.0:
            return lo

    while hi - lo > cfg.lambda_tol * lo:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        s = share_sum(mid) - target_sum_b
        if s == 0.0:
            return mid
        if s < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# full allocation
# ---------------------------------------------------------------------------

def waterfill(
    realization: NetworkRealization,
    cfg: SolverConfig | None = None,
) -> AllocationResult:
    """Minimum-L2-power allocation hitting the snapshot's variance target.

    Sensors are ranked by the quality score delta (stable sort, original
    index breaks ties); degenerate sensors are left out entirely. The
    active-set size descends from the full count and the first prefix whose
    solved shares are all strictly positive is accepted. Shares for sensors
    outside the accepted prefix are exactly zero.
    """
    cfg = cfg or SolverConfig()
    r = realization
    beta, deltas = r.beta, r.delta
    usable = np.isfinite(deltas)
    target = r.sigma_theta2 / r.d0_target

    total_beta = math.fsum(beta[usable].tolist())
    min_var = r.sigma_theta2 / total_beta if total_beta > 0.0 else math.inf
    if not (target < total_beta * (1.0 - cfg.feasibility_margin)):
        raise InfeasibleTarget(
            f"variance target {r.d0_target!r} is unreachable; the minimum "
            f"achievable variance is {min_var!r}",
            min_achievable_variance=min_var,
        )

    idx = np.flatnonzero(usable)
    order = idx[np.argsort(deltas[idx], kind="stable")]

    lam = math.nan
    prefix = order
    frac_prefix = None
    for k1 in range(len(order), 0, -1):
        prefix = order[:k1]
        avail = math.fsum(beta[prefix].tolist())
        if not (target < avail * (1.0 - cfg.feasibility_margin)):
            raise BracketFailure(
                "active-set descent lost feasibility before finding an "
                "all-positive prefix"
            )
        lam = solve_lambda0(
            zip(beta[prefix].tolist(), deltas[prefix].tolist()),
            target,
            cfg,
        )
        frac_prefix = _share_fractions(beta[prefix], deltas[prefix], lam, cfg)
        if np.all(frac_prefix > 0.0):
            break

    k = r.k
    b = np.zeros(k)
    a2 = np.zeros(k)
    b[prefix] = beta[prefix] * frac_prefix
    # a2 = b / (gamma sigma_o2 (beta - b)) expressed through the share
    # fraction, which avoids cancellation when b sits very close to beta.
    a2[prefix] = frac_prefix / (
        r.gamma[prefix] * r.sigma_o2[prefix] * (1.0 - frac_prefix)
    )
    power = a2 * r.sigma_o2 * (1.0 + beta)
    cost = cost_j(power)
    variance = blue_variance_from_gains(r, a2)
    return AllocationResult(
        b=b,
        lambda0=float(lam),
        k1=int(len(prefix)),
        a2=a2,
        power=power,
        cost_j=cost,
        variance=variance,
    )


def gains_from_b(realization: NetworkRealization, b: np.ndarray) -> np.ndarray:
    """Squared amplification gains that realize the given shares.

    Inverts b = beta gamma a2 sigma_o2 / (1 + gamma a2 sigma_o2). Shares of
    exactly zero map to zero gain, including for degenerate sensors.
    """
    r = realization
    b = np.asarray(b, dtype=float)
    if b.shape != (r.k,):
        raise ValueError(f"b must have shape ({r.k},), got {b.shape}")
    beta = r.beta
    offenders = (b < 0.0) | ((b > 0.0) & (b >= beta))
    if np.any(offenders):
        i = int(np.flatnonzero(offenders)[0])
        raise BOutOfRange(
            f"share {b[i]!r} at index {i} lies outside [0, beta={beta[i]!r})"
        )
    if np.any((b > 0.0) & r.degenerate):
        i = int(np.flatnonzero((b > 0.0) & r.degenerate)[0])
        raise BOutOfRange(
            f"positive share {b[i]!r} at index {i} cannot be realized through "
            f"a degenerate sensor"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        a2 = b / (r.gamma * r.sigma_o2 * (beta - b))
    return np.where(b > 0.0, a2, 0.0)


def cost_j(power: Sequence[float]) -> float:
    """Energy figure of merit: the L2 norm of the transmit-power vector."""
    p = np.asarray(power, dtype=float)
    if np.any(p < 0.0) or np.any(~np.isfinite(p)):
        raise ValueError("powers must be finite and >= 0")
    return math.sqrt(math.fsum((p * p).tolist()))


# ---------------------------------------------------------------------------
# independent reference solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleConfig:
    """Knobs for the projected-gradient reference solver (desk-scale K)."""

    starts: int = 4
    iterations: int = 1200
    seed: int = 0
    bound_margin: float = 1e-9
    stall_window: int = 40
    stall_tol: float = 1e-13


def _project_capped_simplex(v: np.ndarray, u: np.ndarray, c: float) -> np.ndarray:
    """Euclidean projection of v onto {x : sum(x) = c, 0 <= x <= u}.

    The coordinates of the projection are clip(v - tau, 0, u) for a shift
    tau found by walking the piecewise-linear breakpoints.
    """
    taus = np.sort(np.concatenate([v, v - u]))
    sums = np.clip(v[None, :] - taus[:, None], 0.0, u).sum(axis=1)
    # sums is non-increasing along taus; locate the segment containing c
    if c >= sums[0]:
        return u.copy()
    j = int(np.searchsorted(-sums, -c, side="right")) - 1
    if j >= len(taus) - 1:
        tau = taus[-1]
    else:
        mid = 0.5 * (taus[j] + taus[j + 1])
        free = (v - mid > 0.0) & (v - mid < u)
        n_free = int(np.count_nonzero(free))
        if n_free == 0:
            tau = taus[j]
        else:
            tau = taus[j] + (sums[j] - c) / n_free
    return np.clip(v - tau, 0.0, u)


def brute_force_oracle(
    realization: NetworkRealization,
    cfg: OracleConfig | None = None,
) -> AllocationResult:
    """Reference allocation found by projected gradient descent in share space.

    Multiple random starts descend the exact power-norm objective on the
    capped simplex {sum(b) = target, 0 <= b_i < beta_i}; the best end point
    wins. Completely independent of the closed-form machinery, hence usable
    as a cross-check. Intended for small sensor counts.
    """
    cfg = cfg or OracleConfig()
    r = realization
    beta, gamma, so2 = r.beta, r.gamma, r.sigma_o2
    usable = ~r.degenerate
    target = r.sigma_theta2 / r.d0_target

    caps = np.where(usable, beta * (1.0 - cfg.bound_margin), 0.0)
    if not target < math.fsum(caps.tolist()):
        total_beta = math.fsum(beta[usable].tolist())
        raise InfeasibleTarget(
            f"variance target {r.d0_target!r} is unreachable",
            min_achievable_variance=(
                r.sigma_theta2 / total_beta if total_beta > 0.0 else math.inf
            ),
        )

    pref = np.where(usable, (1.0 + beta) / np.where(usable, gamma, 1.0), 0.0)

    def powers(bmat: np.ndarray) -> np.ndarray:
        return pref * bmat / (beta - bmat)

    def objective(bmat: np.ndarray) -> np.ndarray:
        p = powers(bmat)
        return (p * p).sum(axis=1)

    rng = np.random.default_rng(cfg.seed)
    starts = [caps * (target / math.fsum(caps.tolist()))]
    for _ in range(max(0, cfg.starts - 1)):
        w = rng.uniform(0.05, 1.0, size=r.k) * np.where(usable, 1.0, 0.0)
        starts.append(_project_capped_simplex(w * target, caps, target))
    bmat = np.stack(starts)

    fvals = objective(bmat)
    grad0 = 2.0 * powers(bmat) * pref * beta / (beta - bmat) ** 2
    gmax = np.maximum(np.abs(grad0).max(axis=1), 1e-300)
    step = 0.25 * target / gmax

    history = fvals.copy()
    for it in range(cfg.iterations):
        p = powers(bmat)
        grad = 2.0 * p * pref * beta / (beta - bmat) ** 2
        cand = np.stack(
            [
                _project_capped_simplex(bmat[s] - step[s] * grad[s], caps, target)
                for s in range(bmat.shape[0])
            ]
        )
        fc = objective(cand)
        better = fc < fvals
        bmat = np.where(better[:, None], cand, bmat)
        fvals = np.where(better, fc, fvals)
        step = np.where(better, step * 1.3, step * 0.3)
        if it % cfg.stall_window == cfg.stall_window - 1:
            if np.all(history - fvals <= cfg.stall_tol * np.abs(history)):
                break
            history = fvals.copy()

    best = int(np.argmin(fvals))
    b = bmat[best]
    with np.errstate(divide="ignore", invalid="ignore"):
        a2 = b / (gamma * so2 * (beta - b))
    a2 = np.where(b > 0.0, a2, 0.0)
    power = a2 * so2 * (1.0 + beta)
    active = b > 0.0
    if np.any(active):
        marginals = (
            2.0 * beta[active] ** 3 * r.delta[active] ** 2 * b[active]
            / (beta[active] - b[active]) ** 3
        )
        lam = float(np.median(marginals))
    else:
        lam = math.nan
    return AllocationResult(
        b=b,
        lambda0=lam,
        k1=int(np.count_nonzero(active)),
        a2=a2,
        power=power,
        cost_j=cost_j(power),
        variance=blue_variance_from_gains(r, a2),
    )
