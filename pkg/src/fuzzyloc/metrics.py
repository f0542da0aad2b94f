"""Ensemble error and consistency metrics.

The chi-square quantiles needed for consistency bands are computed here from
the regularized incomplete gamma function, so the runtime has no dependency
beyond numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ekf import GaussianState
from .errors import SingularCovarianceError
from .models import Pose, wrap_angle

STATE_DIM = 3


def nees(truth: Pose, est: GaussianState) -> float:
    """Normalized estimation error squared e^T P^-1 e.

    The heading error is wrapped before weighting. Exactly matching truth
    gives 0; a consistent filter yields chi-square values with one degree of
    freedom per state dimension.
    """
    e = np.array(
        [
            truth.x - est.mean[0],
            truth.y - est.mean[1],
            wrap_angle(truth.phi - est.mean[2]),
        ]
    )
    try:
        sol = np.linalg.solve(est.P, e)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError("state covariance is singular") from None
    return max(float(e @ sol), 0.0)


def _stack_nees(logs: Sequence) -> np.ndarray:
    lengths = {len(log.nees) for log in logs}
    if len(lengths) != 1:
        raise ValueError("runs have different lengths; cannot average per timestep")
    return np.array([log.nees for log in logs])


def average_nees(logs: Sequence) -> np.ndarray:
    """Per-timestep mean NEES across runs."""
    return _stack_nees(logs).mean(axis=0)


def rmse(logs: Sequence) -> np.ndarray:
    """Per-timestep position RMSE across runs."""
    sq = np.array([log.position_error() ** 2 for log in logs])
    return np.sqrt(sq.mean(axis=0))


def heading_rmse(logs: Sequence) -> np.ndarray:
    """Per-timestep heading RMSE across runs, errors wrapped."""
    sq = np.array([log.heading_error() ** 2 for log in logs])
    return np.sqrt(sq.mean(axis=0))


def in_band_fraction(series: np.ndarray, lo: float, hi: float) -> float:
    """Fraction of entries inside [lo, hi]."""
    series = np.asarray(series)
    return float(np.mean((series >= lo) & (series <= hi)))


def _reg_lower_gamma(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x).

    Series expansion for x < a + 1, continued fraction (modified Lentz)
    otherwise; both converge fast in that split.
    """
    if a <= 0.0:
        raise ValueError("shape parameter must be positive")
    if x < 0.0:
        raise ValueError("argument must be nonnegative")
    if x == 0.0:
        return 0.0
    log_prefactor = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1.0:
        term = 1.0 / a
        total = term
        n = a
        for _ in range(1000):
            n += 1.0
            term *= x / n
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        return min(total * math.exp(log_prefactor), 1.0)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return max(1.0 - h * math.exp(log_prefactor), 0.0)


def _inv_reg_lower_gamma(a: float, p: float) -> float:
    """Solve P(a, x) = p for x by bracketed bisection."""
    hi = max(a, 1.0)
    while _reg_lower_gamma(a, hi) < p and hi < 1e12:
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _reg_lower_gamma(a, mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chi2_ppf(p: float, dof: int) -> float:
    """Chi-square quantile function for dof degrees of freedom."""
    if not 0.0 < p < 1.0:
        raise ValueError("probability must lie strictly inside (0, 1)")
    if dof < 1:
        raise ValueError("degrees of freedom must be at least 1")
    return 2.0 * _inv_reg_lower_gamma(0.5 * dof, p)


def chi2_band(n_runs: int, state_dim: int, confidence: float) -> tuple[float, float]:
    """Two-sided acceptance band for the per-timestep average NEES.

    The average of n_runs independent NEES values, scaled by n_runs, is
    chi-square with n_runs * state_dim degrees of freedom; the band is that
    distribution's central confidence interval divided back by n_runs.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    if state_dim < 1:
        raise ValueError("state_dim must be at least 1")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie strictly inside (0, 1)")
    dof = n_runs * state_dim
    q_lo = 0.5 * (1.0 - confidence)
    q_hi = 0.5 * (1.0 + confidence)
    return chi2_ppf(q_lo, dof) / n_runs, chi2_ppf(q_hi, dof) / n_runs


@dataclass
class EnsembleReport:
    """Monte Carlo ensemble evaluation of one variant on one scenario."""

    variant: str
    n_runs: int
    t: np.ndarray
    rmse_pos: np.ndarray
    rmse_heading: np.ndarray
    avg_nees: np.ndarray
    band: tuple[float, float]
    in_band: float
    run_summaries: list

    @property
    def time_avg_rmse_pos(self) -> float:
        return float(np.mean(self.rmse_pos))


def build_report(logs: Sequence, confidence: float = 0.95) -> EnsembleReport:
    """Aggregate an ensemble of run logs into one report.

    All logs must come from the same scenario (equal lengths and variant).
    """
    if not logs:
        raise ValueError("cannot build a report from zero runs")
    variants = {log.variant for log in logs}
    if len(variants) != 1:
        raise ValueError(f"mixed variants in one ensemble: {sorted(variants)}")
    n_runs = len(logs)
    avg = average_nees(logs)
    band = chi2_band(n_runs, STATE_DIM, confidence)
    return EnsembleReport(
        variant=variants.pop(),
        n_runs=n_runs,
        t=logs[0].t.copy(),
        rmse_pos=rmse(logs),
        rmse_heading=heading_rmse(logs),
        avg_nees=avg,
        band=band,
        in_band=in_band_fraction(avg, band[0], band[1]),
        run_summaries=[log.summary() for log in logs],
    )
