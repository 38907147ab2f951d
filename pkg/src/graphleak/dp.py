"""Differential-privacy mechanisms applied to explanation or feature matrices.

Calibration formulas:
  Gaussian   sigma = sqrt(2 ln(1.25/delta)) * sensitivity / epsilon
  Laplace    scale b = sensitivity / epsilon, per-coordinate variance 2 b^2
  Renyi      eps_rdp = max(eps - ln(1/delta)/(alpha - 1), 0.01),
             sigma = sqrt(alpha * sensitivity^2 / (2 eps_rdp))

Rows are always clipped to the configured L2 sensitivity before noise is
added, so the stated sensitivity is a true sensitivity even when callers
forget to clip.  epsilon -> infinity is represented by an explicit
"none" (no-noise) spec rather than a huge epsilon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

MECHANISMS = ("gaussian", "laplace", "rdp", "none")

RDP_EPSILON_FLOOR = 0.01


class DpError(ValueError):
    """Invalid privacy parameters."""


@dataclass(frozen=True)
class DpSpec:
    """A calibrated mechanism: parameters plus derived per-coordinate scale.

    ``sigma`` is the per-coordinate noise standard deviation sigma_M; for
    Laplace it stores sqrt(2) * b so that sigma^2 = 2 b^2.
    """

    mechanism: str
    epsilon: float | None
    delta: float | None
    alpha: float | None
    sensitivity: float
    sigma: float
    laplace_scale: float | None = None

    @property
    def noiseless(self) -> bool:
        return self.mechanism == "none"


def calibrate(
    mechanism: str,
    epsilon: float | None = None,
    delta: float | None = None,
    alpha: float | None = None,
    sensitivity: float = 1.0,
) -> DpSpec:
    """Derive the per-coordinate noise scale for one of the three mechanisms."""
    mechanism = mechanism.lower()
    if mechanism not in MECHANISMS:
        raise DpError(f"unknown mechanism {mechanism!r}")
    if sensitivity <= 0:
        raise DpError("sensitivity must be positive")
    if mechanism == "none":
        return DpSpec("none", None, None, None, sensitivity, 0.0)

    if epsilon is None or epsilon <= 0:
        raise DpError("epsilon must be positive")
    if mechanism == "laplace":
        b = sensitivity / epsilon
        return DpSpec("laplace", epsilon, None, None, sensitivity,
                      math.sqrt(2.0) * b, laplace_scale=b)

    if delta is None or not 0.0 < delta < 1.0:
        raise DpError("delta must lie in (0, 1) for gaussian/rdp")
    if mechanism == "gaussian":
        sigma = math.sqrt(2.0 * math.log(1.25 / delta)) * sensitivity / epsilon
        return DpSpec("gaussian", epsilon, delta, None, sensitivity, sigma)

    if alpha is None or alpha <= 1.0:
        raise DpError("rdp order alpha must exceed 1")
    eps_rdp = max(epsilon - math.log(1.0 / delta) / (alpha - 1.0), RDP_EPSILON_FLOOR)
    sigma = math.sqrt(alpha * sensitivity**2 / (2.0 * eps_rdp))
    return DpSpec("rdp", epsilon, delta, alpha, sensitivity, sigma)


def clip_rows(matrix: np.ndarray, sensitivity: float) -> np.ndarray:
    """Rescale each row to L2 norm <= sensitivity; shorter rows pass through.

    Rows within one part in 1e12 of the bound are left untouched so that
    clipping is exactly idempotent despite float rounding.
    """
    if sensitivity <= 0:
        raise DpError("sensitivity must be positive")
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    over = norms > sensitivity * (1.0 + 1e-12)
    factor = np.where(over, sensitivity / np.maximum(norms, 1e-300), 1.0)
    return matrix * factor


def _noise(shape, spec: DpSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.mechanism == "gaussian" or spec.mechanism == "rdp":
        return rng.normal(0.0, spec.sigma, size=shape)
    if spec.mechanism == "laplace":
        return rng.laplace(0.0, spec.laplace_scale, size=shape)
    return np.zeros(shape)


def perturb(matrix, spec: DpSpec, seed=0):
    """Clip rows to the spec's sensitivity, then add i.i.d. mechanism noise.

    Accepts a raw array (returns an array) or an explanation-matrix record
    carrying ``values``; the record comes back with its perturbed flag set.
    """
    rng = np.random.default_rng(seed)
    if hasattr(matrix, "values") and hasattr(matrix, "perturbed"):
        clipped = clip_rows(matrix.values, spec.sensitivity)
        noisy = clipped + _noise(clipped.shape, spec, rng)
        return replace(matrix, values=noisy, perturbed=True)
    clipped = clip_rows(np.asarray(matrix, dtype=np.float64), spec.sensitivity)
    return clipped + _noise(clipped.shape, spec, rng)


@dataclass(frozen=True)
class NoiseEstimate:
    """Variance-difference estimate of the applied noise scale."""

    sigma2: float
    clamped: bool


def estimate_noise_scale(perturbed: np.ndarray, clean_variance: float) -> NoiseEstimate:
    """Estimate sigma^2 as Var(perturbed entries) minus a clean-variance estimate.

    The clean estimate comes from held-out calibration data or generator
    knowledge.  Negative differences clamp to zero with a warning flag.
    """
    if clean_variance < 0:
        raise DpError("clean variance estimate must be non-negative")
    observed = float(np.var(np.asarray(perturbed, dtype=np.float64)))
    diff = observed - clean_variance
    if diff < 0.0:
        return NoiseEstimate(0.0, True)
    return NoiseEstimate(diff, False)


def sigma_relative_error(kappa: float, sign: int = +1) -> float:
    """Exact relative error of sigma_G when epsilon is misestimated.

    With sigma proportional to 1/epsilon, guessing eps_hat = eps*(1+kappa)
    gives |sigma_hat - sigma|/sigma = kappa/(1+kappa) <= kappa; the
    underestimating sign gives kappa/(1-kappa), which exceeds kappa.  This is
    the exact propagation behind the approximate "half of kappa" remark that
    accompanies the adaptive-attacker lower bound.
    """
    if kappa < 0:
        raise DpError("kappa must be non-negative")
    if sign >= 0:
        return kappa / (1.0 + kappa)
    if kappa >= 1.0:
        return math.inf
    return kappa / (1.0 - kappa)
