"""Closed-form Gaussian-state path.

States are described by the mean of (X, P) and their symmetrized covariance.
A pulse with strength ``chi`` and kick ``omega`` acts as a position-diagonal
Gaussian Kraus operator, which on a Gaussian state is a Kalman update of the
X quadrature plus momentum diffusion chi^2 / (4 Var(P_L^in)).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import RegimeError

HEISENBERG_TOL = 1e-9


class RegimeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GaussianState:
    mean: np.ndarray = field(default_factory=lambda: np.zeros(2))
    cov: np.ndarray = field(default_factory=lambda: 0.5 * np.eye(2))

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(2)
        cov = np.asarray(self.cov, dtype=float).reshape(2, 2)
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
            raise ValueError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        if np.linalg.eigvalsh(cov)[0] <= 0:
            raise ValueError("covariance must be positive definite")
        if np.linalg.det(cov) < 0.25 - HEISENBERG_TOL:
            raise ValueError(f"covariance violates the uncertainty relation: det={np.linalg.det(cov):.6g}")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def var_x(self) -> float:
        return float(self.cov[0, 0])

    @property
    def var_p(self) -> float:
        return float(self.cov[1, 1])

    def as_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}


@dataclass(frozen=True)
class BathSpec:
    """Markovian thermal bath: damping ``gamma_m`` (rad/s), occupation ``nbar_bath``."""

    gamma_m: float
    nbar_bath: float
    omega_m: float

    def __post_init__(self):
        if self.gamma_m <= 0 or self.omega_m <= 0 or self.nbar_bath < 0:
            raise ValueError("bath rates must be positive and nbar_bath non-negative")
        if self.Q < 1:
            raise ValueError(f"quality factor {self.Q:.3g} < 1")

    @property
    def Q(self) -> float:
        return self.omega_m / self.gamma_m

    @classmethod
    def from_quality(cls, Q: float, omega_m: float, nbar_bath: float) -> "BathSpec":
        return cls(gamma_m=omega_m / Q, nbar_bath=nbar_bath, omega_m=omega_m)

    @classmethod
    def from_temperature(cls, Q: float, omega_m: float, temperature: float,
                         high_temperature: bool = False) -> "BathSpec":
        from .hilbert import thermal_occupation

        nbar = thermal_occupation(temperature, omega_m, high_temperature)
        return cls.from_quality(Q, omega_m, nbar)


def thermal_gaussian(nbar: float) -> GaussianState:
    if nbar < 0:
        raise ValueError("nbar must be non-negative")
    return GaussianState(np.zeros(2), (nbar + 0.5) * np.eye(2))


def coherent_gaussian(alpha: complex) -> GaussianState:
    alpha = complex(alpha)
    return GaussianState(math.sqrt(2.0) * np.array([alpha.real, alpha.imag]), 0.5 * np.eye(2))


def rotation_matrix(theta: float) -> np.ndarray:
    """Phase-space map for rho -> exp(-i theta n) rho exp(i theta n)."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def rotate_gaussian(g: GaussianState, theta: float) -> GaussianState:
    R = rotation_matrix(theta)
    return GaussianState(R @ g.mean, R @ g.cov @ R.T)


def pulse_outcome_stats(g: GaussianState, chi: float, var_pl_in: float = 0.5):
    """Mean and variance of the homodyne outcome for one pulse."""
    return chi * g.mean[0], var_pl_in + chi * chi * g.cov[0, 0]


def kalman_gain(cov: np.ndarray, chi: float, noise_var: float) -> np.ndarray:
    return cov[:, 0] * chi / (chi * chi * cov[0, 0] + noise_var)


def conditional_update(g: GaussianState, chi: float, omega: float, p_l: float,
                       var_pl_in: float = 0.5) -> GaussianState:
    """State conditioned on outcome ``p_l`` of a pulse (chi, omega).

    For a thermal input this reproduces the closed-form conditional moments of
    ``thermal_conditional_moments`` for every rotation angle.
    """
    if chi == 0:
        return GaussianState(g.mean + np.array([0.0, omega]), g.cov)
    K = kalman_gain(g.cov, chi, var_pl_in)
    mean = g.mean + K * (p_l - chi * g.mean[0]) + np.array([0.0, omega])
    # Joseph form; 1 - K chi is formed directly to avoid cancellation at large Var(X)
    A = np.array([[var_pl_in / (chi * chi * g.cov[0, 0] + var_pl_in), 0.0], [-K[1] * chi, 1.0]])
    cov = A @ g.cov @ A.T + var_pl_in * np.outer(K, K)
    cov = cov + np.diag([0.0, chi * chi / (4.0 * var_pl_in)])
    return GaussianState(mean, cov)


def conditional_means(g: GaussianState, chi: float, omega: float, p_l, var_pl_in: float = 0.5) -> np.ndarray:
    """Vectorized post-measurement means for an array of outcomes, shape (n, 2)."""
    p_l = np.asarray(p_l, dtype=float)
    if chi == 0:
        return np.broadcast_to(g.mean + np.array([0.0, omega]), p_l.shape + (2,)).copy()
    K = kalman_gain(g.cov, chi, var_pl_in)
    return g.mean + np.outer(p_l - chi * g.mean[0], K) + np.array([0.0, omega])


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_outcome(g: GaussianState, chi: float, rng_seed=None, size=None,
                   var_pl_in: float = 0.5, extra_noise_var: float = 0.0):
    rng = _rng(rng_seed)
    mu, var = pulse_outcome_stats(g, chi, var_pl_in + extra_noise_var)
    return rng.normal(mu, math.sqrt(var), size=size)


def effective_occupation(g: GaussianState) -> float:
    """n_eff from 1 + 2 n_eff = sqrt(4 Var(X) Var(P)) with the axis-fixed variances."""
    return 0.5 * (math.sqrt(4.0 * g.cov[0, 0] * g.cov[1, 1]) - 1.0)


def thermal_conditional_moments(nbar: float, chi: float, omega: float, p_l: float, theta: float):
    """Closed-form mean and variance of the rotated quadrature after one pulse on a thermal state.

    The sign of the kick term follows the rotation convention of this package
    (+omega sin(theta)).
    """
    d = chi * chi + 1.0 / (1.0 + 2.0 * nbar)
    c, s = math.cos(theta), math.sin(theta)
    mean = chi * p_l / d * c + omega * s
    var = 0.5 * c * c / d + 0.5 * (chi * chi + 1.0 + 2.0 * nbar) * s * s
    return mean, var


def thermalize(g: GaussianState, bath: BathSpec, t: float, frame: str = "lab") -> GaussianState:
    """Weak coupling to a thermal bath for a time ``t`` (seconds).

    In the frame rotating with the oscillator the state passes through a thermal
    attenuator of transmissivity exp(-gamma t): means shrink by exp(-gamma t/2),
    the covariance relaxes as dSigma/dt = -gamma (Sigma - (nbar + 1/2) I). With
    ``frame="lab"`` the free rotation by omega_m t is applied on top.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if frame not in ("lab", "rotating"):
        raise ValueError("frame must be 'lab' or 'rotating'")
    gt = bath.gamma_m * t
    if gt > 0.1 and math.isfinite(gt):
        warnings.warn(f"gamma_m * t = {gt:.3g} is outside the weak-damping regime", RegimeWarning)
    T = math.exp(-gt)
    mean = math.sqrt(T) * g.mean
    cov = T * g.cov + (1.0 - T) * (bath.nbar_bath + 0.5) * np.eye(2)
    out = GaussianState(mean, cov)
    if frame == "lab":
        out = rotate_gaussian(out, bath.omega_m * t if math.isfinite(t) else 0.0)
    return out


def variance_crossing_time(g: GaussianState, bath: BathSpec, level: float = 0.5) -> float:
    """Time at which the rotating-frame Var(X) under ``thermalize`` reaches ``level``."""
    if g.cov[0, 0] >= level:
        return 0.0
    if bath.nbar_bath + 0.5 <= level:
        raise RegimeError("bath fixed point never reaches the requested variance")

    def f(t):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RegimeWarning)
            return thermalize(g, bath, t, frame="rotating").cov[0, 0] - level

    hi = 1.0 / bath.gamma_m
    while f(hi) < 0:
        hi *= 2.0
    return brentq(f, 0.0, hi, xtol=1e-16, rtol=1e-12)


def squeezing_lifetime(chi: float, Q: float, nbar: float, omega_m: float) -> float:
    """Linear-growth estimate of the time for Var(X) = 1/(2 chi^2) to reach 1/2."""
    if chi <= 1:
        raise ValueError("chi must exceed 1 for the state to be squeezed")
    return Q / (nbar * omega_m) * 0.5 * (1.0 - 1.0 / chi**2)


def predicted_neff2(chi: float) -> float:
    if chi <= 0:
        raise ValueError("chi must be positive")
    return 0.5 * (math.sqrt(1.0 + chi**-4) - 1.0)


def predicted_neff2_thermal(chi: float, Q: float, nbar: float) -> float:
    if chi <= 0:
        raise ValueError("chi must be positive")
    return 0.5 * (math.sqrt(1.0 + chi**-4 + math.pi * nbar / (Q * chi**2)) - 1.0)
