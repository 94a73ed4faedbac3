"""Pulsed position measurement acting on number-basis states.

The measurement operator is diagonal in position,

    Upsilon(x) = (2 pi V)^(-1/4) exp[i omega x - (p_l - chi x)^2 / (4 V)],

with V = Var(P_L^in). It is applied by sandwiching between Hermite functions on
a dense position grid, so arbitrary (non-Gaussian) states are handled exactly up
to the Fock truncation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import hilbert
from .errors import GridError, MissingMeanError
from .hilbert import FockState

NOISE_MODES = ("record", "subsume")


@dataclass(frozen=True)
class MeasurementSpec:
    """Pulse parameters as seen by the mechanics.

    ``extra_noise_var`` is classical noise on the recorded outcome. In
    ``noise_mode="record"`` (default) it only widens the outcome distribution;
    in ``"subsume"`` it is folded into Var(P_L^in) for the state update as well.
    """

    chi: float
    omega_kick: float = 0.0
    var_pl_in: float = 0.5
    extra_noise_var: float = 0.0
    noise_mode: str = "record"

    def __post_init__(self):
        if self.chi < 0:
            raise ValueError("chi must be non-negative")
        if self.var_pl_in <= 0 or self.extra_noise_var < 0:
            raise ValueError("variances must be positive")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")

    @property
    def record_var(self) -> float:
        """Variance of the outcome kernel, including classical noise."""
        return self.var_pl_in + self.extra_noise_var

    @property
    def update_var(self) -> float:
        """Var(P_L^in) entering the conditional state update."""
        return self.record_var if self.noise_mode == "subsume" else self.var_pl_in

    def with_efficiency(self, eta: float) -> "MeasurementSpec":
        if not 0 < eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        return replace(self, chi=self.chi * math.sqrt(eta))

    def as_dict(self) -> dict:
        return {
            "chi": self.chi,
            "omega_kick": self.omega_kick,
            "var_pl_in": self.var_pl_in,
            "extra_noise_var": self.extra_noise_var,
            "noise_mode": self.noise_mode,
        }


@dataclass(frozen=True)
class MeasurementRecord:
    p_l: float
    theta: float
    spec: MeasurementSpec
    known_mean: float | None = None


# ---------------------------------------------------------------------------
# position grids


def _support_radius(n_max: int) -> float:
    return math.sqrt(2.0 * n_max + 1.0) + 8.0


def _position_grid(n_max: int, bandwidth: float = 0.0, resolution: float = math.inf) -> np.ndarray:
    """Uniform grid covering the support of Hermite functions up to ``n_max``."""
    k = math.sqrt(2.0 * n_max + 1.0)
    dx = min(0.5 * math.pi / (2.0 * k + bandwidth + 4.0), resolution)
    R = _support_radius(n_max)
    n = int(math.ceil(R / dx))
    return np.linspace(-R, R, 2 * n + 1)


@lru_cache(maxsize=8)
def _hermite_cache(n_max: int, npts: int, R: float):
    x = np.linspace(-R, R, npts)
    return x, hilbert.hermite_functions(n_max, x)


def _grid_and_basis(n_max: int, bandwidth: float = 0.0, resolution: float = math.inf):
    x = _position_grid(n_max, bandwidth, resolution)
    return _hermite_cache(n_max, x.size, float(x[-1]))


def upsilon_values(x, spec: MeasurementSpec, p_l: float, var: float | None = None) -> np.ndarray:
    v = spec.update_var if var is None else var
    x = np.asarray(x, dtype=float)
    return (2.0 * math.pi * v) ** -0.25 * np.exp(
        1j * spec.omega_kick * x - (p_l - spec.chi * x) ** 2 / (4.0 * v)
    )


def _kernel_bandwidth(spec: MeasurementSpec, var: float) -> float:
    return abs(spec.omega_kick) + 4.0 * spec.chi / math.sqrt(var)


def upsilon_matrix(dim: int, spec: MeasurementSpec, p_l: float) -> np.ndarray:
    """Number-basis matrix of the measurement operator for outcome ``p_l``."""
    x, psi = _grid_and_basis(dim - 1, _kernel_bandwidth(spec, spec.update_var))
    dx = x[1] - x[0]
    u = upsilon_values(x, spec, p_l)
    return (psi * (u * dx)) @ psi.T


def povm_element(dim: int, spec: MeasurementSpec, p_l: float) -> np.ndarray:
    """Upsilon^dag Upsilon for the recorded outcome (record variance)."""
    v = spec.record_var
    x, psi = _grid_and_basis(dim - 1, 2.0 * spec.chi / math.sqrt(v) * 2.0)
    dx = x[1] - x[0]
    w = np.exp(-(p_l - spec.chi * x) ** 2 / (2.0 * v)) / math.sqrt(2.0 * math.pi * v)
    return (psi * (w * dx)) @ psi.T


# ---------------------------------------------------------------------------
# operations


def apply_upsilon(state: FockState, spec: MeasurementSpec, p_l: float, check: bool = True) -> FockState:
    """Conditional state Upsilon rho Upsilon^dag / Tr(...)."""
    K = upsilon_matrix(state.dim, spec, p_l)
    out = K @ state.matrix @ K.conj().T
    tr = np.trace(out).real
    if tr <= 0:
        raise GridError(f"outcome p_l={p_l} has vanishing probability for this state")
    out = out / tr
    if check:
        hilbert.check_truncation(out)
    return FockState(out)


def outcome_pdf(state: FockState, spec: MeasurementSpec, p_grid, theta: float = 0.0,
                check: bool = True) -> np.ndarray:
    """Outcome density as the rotated marginal convolved with the Gaussian kernel."""
    p_grid = np.asarray(p_grid, dtype=float)
    v = spec.record_var
    if spec.chi == 0:
        pdf = np.exp(-p_grid**2 / (2 * v)) / math.sqrt(2 * math.pi * v)
    else:
        sigma_x = math.sqrt(v) / spec.chi
        x = _position_grid(state.n_max, 0.0, resolution=sigma_x / 4.0)
        rho = hilbert.rotate(state, theta)
        m = hilbert.position_density(rho, x)
        w = np.full(x.size, x[1] - x[0])
        w[[0, -1]] *= 0.5
        pdf = np.empty_like(p_grid)
        for start in range(0, p_grid.size, 512):
            pp = p_grid[start:start + 512]
            kern = np.exp(-(pp[:, None] - spec.chi * x[None, :]) ** 2 / (2 * v))
            pdf[start:start + 512] = kern @ (m * w) / math.sqrt(2 * math.pi * v)
    if check:
        mass = float(np.trapezoid(pdf, p_grid))
        if abs(mass - 1.0) > 1e-6:
            raise GridError(f"outcome grid captures probability {mass:.8f}")
    return pdf


def outcome_pdf_trace(state: FockState, spec: MeasurementSpec, p_grid, theta: float = 0.0) -> np.ndarray:
    """Same density computed as Tr(Upsilon^dag Upsilon rho) in the number basis."""
    rho = hilbert.rotate(state, theta).matrix
    return np.array([np.real(np.sum(povm_element(state.dim, spec, p) * rho.T)) for p in np.asarray(p_grid)])


def outcome_moments(state: FockState, spec: MeasurementSpec, theta: float = 0.0):
    mx, _, cov = hilbert.moments(hilbert.rotate(state, theta))
    return spec.chi * mx, spec.record_var + spec.chi**2 * cov[0, 0]


def outcome_grid(state: FockState, spec: MeasurementSpec, theta: float = 0.0, npts: int = 4001,
                 nsd: float = 8.0) -> np.ndarray:
    mu, var = outcome_moments(state, spec, theta)
    sd = math.sqrt(var)
    return np.linspace(mu - nsd * sd, mu + nsd * sd, npts)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_from_density(grid, pdf, size, rng) -> np.ndarray:
    """Inverse-CDF sampling of a tabulated density (piecewise-linear CDF)."""
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return np.interp(rng.random(size), cdf[keep], np.asarray(grid)[keep])


def outcome_quantile(state: FockState, spec: MeasurementSpec, u, theta: float = 0.0):
    """Inverse CDF of the outcome distribution evaluated at ``u`` in (0, 1)."""
    grid = outcome_grid(state, spec, theta)
    pdf = outcome_pdf(state, spec, grid, theta, check=False)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return np.interp(u, cdf[keep], grid[keep])


def sample_outcome_fock(state: FockState, spec: MeasurementSpec, rng_seed=None, size=None,
                        theta: float = 0.0):
    """Draw outcomes distributed as ``outcome_pdf``; deterministic under a fixed seed."""
    rng = _rng(rng_seed)
    grid = outcome_grid(state, spec, theta)
    pdf = outcome_pdf(state, spec, grid, theta, check=False)
    draws = sample_from_density(grid, pdf, 1 if size is None else size, rng)
    return float(draws[0]) if size is None else draws


def compensate(record: MeasurementRecord) -> float:
    """Outcome with its known conditional mean removed."""
    if record.known_mean is None:
        raise MissingMeanError("record carries no known mean to compensate")
    return record.p_l - record.known_mean
