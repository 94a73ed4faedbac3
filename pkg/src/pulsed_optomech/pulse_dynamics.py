"""Cavity input-output treatment of a short optical pulse.

The intracavity envelope obeys d(alpha)/dt = sqrt(2 kappa) alpha_in - kappa alpha.
The phase imprinted by the mechanical position accumulates in the temporal mode

    phi(t) = (2 kappa)^(3/2) exp(-kappa t) int_{-inf}^t exp(kappa t') alpha(t') dt',

which the local oscillator is matched to. From these follow the measurement
strength chi = sqrt(2) |phi| (g0/kappa) sqrt(N_p) and the momentum kick
Omega = sqrt(2) g0 N_p int alpha^2 dt.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import constants
from scipy.signal import lfilter

from .errors import GridError, RegimeError

ENVELOPE_HEADER = "# pulse-envelope v1"
DEFAULT_SPAN = 16.0
DEFAULT_POINTS = 16385


# ---------------------------------------------------------------------------
# physical parameters


@dataclass(frozen=True)
class PhysicalParams:
    """Microcavity geometry and mechanical resonator.

    ``kappa`` is the amplitude decay rate pi c / (2 F L): the field round trip
    time is 2L/c and a fraction pi/F of the amplitude leaks per round trip.
    """

    wavelength: float
    cavity_length: float
    mass: float
    omega_m: float
    finesse: float

    def __post_init__(self):
        for name in ("wavelength", "cavity_length", "mass", "omega_m", "finesse"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def microcavity(cls) -> "PhysicalParams":
        """1064 nm microcavity of length 4 wavelengths, 10 ng resonator at 500 kHz."""
        lam = 1064e-9
        return cls(wavelength=lam, cavity_length=4 * lam, mass=10e-12,
                   omega_m=2 * math.pi * 500e3, finesse=7000.0)

    @property
    def x0(self) -> float:
        return math.sqrt(constants.hbar / (self.mass * self.omega_m))

    @property
    def omega_c(self) -> float:
        return 2 * math.pi * constants.c / self.wavelength

    @property
    def g0(self) -> float:
        return self.omega_c * self.x0 / (math.sqrt(2.0) * self.cavity_length)

    @property
    def kappa(self) -> float:
        return math.pi * constants.c / (2.0 * self.finesse * self.cavity_length)


def derive_physical(p: PhysicalParams):
    """Return (x0 [m], g0 [rad/s], kappa [rad/s])."""
    return p.x0, p.g0, p.kappa


# ---------------------------------------------------------------------------
# drive envelopes


def default_time_grid(kappa: float, span: float = DEFAULT_SPAN, n_points: int = DEFAULT_POINTS) -> np.ndarray:
    """Uniform grid on [-span/kappa, span/kappa]; odd point count keeps t = 0 on the grid."""
    return np.linspace(-span / kappa, span / kappa, n_points)


def _normalize(t, a):
    norm = math.sqrt(np.trapezoid(a * a, t))
    if norm == 0:
        raise ValueError("envelope is identically zero")
    return a / norm


def optimal_drive(kappa: float, t_grid) -> np.ndarray:
    """sqrt(kappa) exp(-kappa |t|): the drive with Lorentzian spectrum."""
    t = np.asarray(t_grid, dtype=float)
    if t[0] > -10.0 / kappa or t[-1] < 10.0 / kappa:
        raise GridError("time grid must span at least 10/kappa on both sides of t = 0")
    return _normalize(t, np.sqrt(kappa) * np.exp(-kappa * np.abs(t)))


def gaussian_drive(t_grid, rms: float) -> np.ndarray:
    """Gaussian envelope whose intensity has standard deviation ``rms``."""
    t = np.asarray(t_grid, dtype=float)
    return _normalize(t, np.exp(-t * t / (4.0 * rms * rms)))


def square_drive(t_grid, rms: float) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float)
    half = math.sqrt(3.0) * rms
    return _normalize(t, (np.abs(t) <= half).astype(float))


def one_sided_exp_drive(t_grid, rms: float) -> np.ndarray:
    """Step-on exponential decay; the intensity decay time equals ``rms``."""
    t = np.asarray(t_grid, dtype=float)
    tau = rms
    a = np.where(t >= 0, np.exp(-np.clip(t, 0, None) / (2.0 * tau)), 0.0)
    return _normalize(t, a)


def intensity_rms(t_grid, envelope) -> float:
    t = np.asarray(t_grid, dtype=float)
    w = envelope**2
    m = np.trapezoid(t * w, t)
    return math.sqrt(np.trapezoid((t - m) ** 2 * w, t))


@dataclass(frozen=True)
class PulseSpec:
    kappa: float
    g0: float
    n_photons: float
    t_grid: np.ndarray = field(repr=False)
    drive_envelope: np.ndarray = field(repr=False)
    eta: float = 1.0
    shape: str = "custom"

    def __post_init__(self):
        if self.kappa <= 0 or self.n_photons <= 0 or self.g0 < 0:
            raise ValueError("kappa and n_photons must be positive")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        t = np.asarray(self.t_grid, dtype=float)
        a = np.asarray(self.drive_envelope, dtype=float)
        if t.shape != a.shape or t.ndim != 1:
            raise ValueError("t_grid and drive_envelope must be 1-d arrays of equal length")
        if not np.allclose(np.diff(t), t[1] - t[0], rtol=1e-9, atol=0):
            raise ValueError("t_grid must be uniform")
        norm = np.trapezoid(a * a, t)
        if abs(norm - 1.0) > 1e-8:
            raise ValueError(f"drive envelope is not normalized: int alpha_in^2 dt = {norm:.10f}")
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "drive_envelope", a)

    @classmethod
    def optimal(cls, kappa, g0, n_photons, eta=1.0, t_grid=None) -> "PulseSpec":
        t = default_time_grid(kappa) if t_grid is None else np.asarray(t_grid, float)
        return cls(kappa, g0, n_photons, t, optimal_drive(kappa, t), eta, "optimal")

    @classmethod
    def from_envelope(cls, kappa, g0, n_photons, t_grid, envelope, eta=1.0, shape="custom") -> "PulseSpec":
        t = np.asarray(t_grid, float)
        return cls(kappa, g0, n_photons, t, _normalize(t, np.asarray(envelope, float)), eta, shape)

    @classmethod
    def from_physical(cls, p: PhysicalParams, n_photons: float, eta: float = 1.0) -> "PulseSpec":
        return cls.optimal(p.kappa, p.g0, n_photons, eta)

    def with_eta(self, eta: float) -> "PulseSpec":
        return replace(self, eta=eta)


@dataclass(frozen=True)
class CavityResponse:
    t: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    n_phi: float
    lo_envelope: np.ndarray = field(repr=False)
    chi: float
    chi_ideal: float
    omega_kick: float
    alpha_energy: float

    @property
    def phi_norm2(self) -> float:
        return self.n_phi**-2


# ---------------------------------------------------------------------------
# integration


def exp_filter(t, u, rate: float, y0: float = 0.0) -> np.ndarray:
    """Solve y' = -rate*y + u(t) exactly for u linear between grid points."""
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    h = t[1] - t[0]
    kh = rate * h
    E = math.exp(-kh)
    A = -math.expm1(-kh) / rate
    B = h * A - (1.0 - E * (1.0 + kh)) / rate**2
    drive = u[:-1] * A + np.diff(u) * (B / h)
    y = np.empty_like(u)
    y[0] = y0
    y[1:] = lfilter([1.0], [1.0, -E], drive, zi=[E * y0])[0]
    return y


def anticausal_filter(t, u, rate: float) -> np.ndarray:
    """int_t^inf exp(-rate (s - t)) u(s) ds on the grid."""
    return exp_filter(t, np.asarray(u)[::-1], rate)[::-1]


def compute_response(pulse: PulseSpec) -> CavityResponse:
    k = pulse.kappa
    t = pulse.t_grid
    alpha = exp_filter(t, math.sqrt(2.0 * k) * pulse.drive_envelope, k)
    if not np.all(np.isfinite(alpha)):
        raise RegimeError("intracavity envelope integration diverged")
    phi = exp_filter(t, (2.0 * k) ** 1.5 * alpha, k)
    phi_norm2 = float(np.trapezoid(phi * phi, t))
    n_phi = phi_norm2**-0.5
    lo = n_phi * phi
    chi_ideal = math.sqrt(2.0 * phi_norm2) * (pulse.g0 / k) * math.sqrt(pulse.n_photons)
    alpha_energy = float(np.trapezoid(alpha * alpha, t))
    omega_kick = math.sqrt(2.0) * pulse.g0 * pulse.n_photons * alpha_energy
    if pulse.shape == "optimal":
        closed = optimal_omega(pulse.g0, k, pulse.n_photons)
        if closed > 0 and abs(omega_kick - closed) > 0.01 * closed:
            raise RegimeError(
                f"kick from envelope integral ({omega_kick:.6g}) deviates from the "
                f"optimal-drive closed form ({closed:.6g}) by more than 1%"
            )
    return CavityResponse(t, alpha, phi, n_phi, lo, math.sqrt(pulse.eta) * chi_ideal,
                          chi_ideal, omega_kick, alpha_energy)


def optimal_chi(g0: float, kappa: float, n_photons: float) -> float:
    return 2.0 * math.sqrt(5.0) * g0 / kappa * math.sqrt(n_photons)


def optimal_omega(g0: float, kappa: float, n_photons: float) -> float:
    return 3.0 / math.sqrt(2.0) * g0 / kappa * n_photons


def optimal_alpha_closed_form(kappa: float, t) -> np.ndarray:
    """Intracavity envelope driven by the optimal pulse, solved by hand."""
    t = np.asarray(t, dtype=float)
    s = kappa * t
    return np.where(s < 0, np.exp(s) / math.sqrt(2.0), (1.0 / math.sqrt(2.0) + math.sqrt(2.0) * s) * np.exp(-s))


def phase_mode_norm2_spectral(pulse: PulseSpec, pad: int = 4) -> float:
    """int phi^2 dt evaluated in the frequency domain.

    int phi^2 dt = (16 kappa^4 / 2 pi) int |alpha_in(w)|^2 / (w^2 + kappa^2)^2 dw.
    """
    t = pulse.t_grid
    dt = t[1] - t[0]
    n = pad * t.size
    spec = np.fft.fft(pulse.drive_envelope, n) * dt
    w = 2 * np.pi * np.fft.fftfreq(n, dt)
    dw = 2 * np.pi / (n * dt)
    k = pulse.kappa
    return float(16 * k**4 / (2 * np.pi) * np.sum(np.abs(spec) ** 2 / (w * w + k * k) ** 2) * dw)


# ---------------------------------------------------------------------------
# finite mechanical evolution during the pulse


@dataclass(frozen=True)
class FiniteEvolutionCoeffs:
    """First-order corrections in omega_m/kappa.

    Rotating-frame input-output relations (eps = omega_m/kappa):
        P_out = P_in + Omega + N1 chi X_C1
        X_out = X_in - eps xi1 Omega - eps chi N2 X_C2
        P_L   = P_L^in + chi (X_in + eps xi2 P_in) + chi eps xi3 Omega + chi^2 eps N3 X_C3
    X_C1..3 are unit-norm amplitude-noise temporal modes; ``weights`` holds the
    un-normalized mode functions w1..w3 on the dimensionless time grid ``s``.
    The frame is referenced to t = 0 of the drive grid; zeta does not depend on
    that choice.
    """

    xi: tuple
    norms: tuple
    zeta: float
    omega_m_over_kappa: float
    s: np.ndarray = field(repr=False, default=None)
    weights: tuple = field(repr=False, default=None)
    measurement_weight: np.ndarray = field(repr=False, default=None)


def finite_evolution_coeffs(pulse: PulseSpec, omega_m: float, max_ratio: float = 0.1) -> FiniteEvolutionCoeffs:
    eps = omega_m / pulse.kappa
    if eps > max_ratio:
        raise RegimeError(f"omega_m/kappa = {eps:.3g} exceeds {max_ratio}; first-order treatment invalid")
    resp = compute_response(pulse)
    return _coeffs_from_response(resp, pulse.kappa, eps)


def _coeffs_from_response(resp: CavityResponse, kappa: float, eps: float) -> FiniteEvolutionCoeffs:
    s = kappa * resp.t
    alpha = resp.alpha
    lo = resp.lo_envelope / math.sqrt(kappa)
    norm_phi = math.sqrt(resp.phi_norm2)
    c = math.sqrt(2.0) / norm_phi

    def integ(f):
        return float(np.trapezoid(f, s))

    a2 = alpha * alpha
    e_a2 = integ(a2)
    q = anticausal_filter(s, lo, 1.0)
    mu = 2.0 * math.sqrt(2.0) / norm_phi * alpha * q
    xi1 = integ(s * a2) / e_a2
    xi2 = integ(s * mu)
    # r(s') = int_{s'}^inf mu(u) (u - s') du
    tail_mass = np.concatenate([np.cumsum((0.5 * (mu[1:] + mu[:-1]) * np.diff(s))[::-1])[::-1], [0.0]])
    tail_first = np.concatenate([np.cumsum((0.5 * (s[1:] * mu[1:] + s[:-1] * mu[:-1]) * np.diff(s))[::-1])[::-1], [0.0]])
    r = tail_first - s * tail_mass
    xi3 = integ(r * a2) / e_a2

    def mode(f):
        return math.sqrt(2.0) * anticausal_filter(s, f * alpha, 1.0)

    w1, w2, w3 = mode(np.ones_like(s)), mode(s), mode(r)
    n1, n2, n3 = (c * math.sqrt(integ(w * w)) for w in (w1, w2, w3))
    combo = xi2 * w1 - w2 - w3
    zeta = c * math.sqrt(integ(combo * combo))
    return FiniteEvolutionCoeffs((xi1, xi2, xi3), (n1, n2, n3), zeta, eps, s, (w1, w2, w3), mu)


def corrected_conditional_variance(chi, omega_m_over_kappa, zeta):
    """Conditional variance of the measured (slightly rotated) quadrature."""
    chi = np.asarray(chi, dtype=float)
    return 0.5 * (1.0 / chi**2 + zeta**2 * chi**2 * omega_m_over_kappa**2)


def optimal_finite_chi(omega_m_over_kappa: float, zeta: float):
    """(chi, minimum variance) of the corrected conditional variance."""
    return 1.0 / math.sqrt(zeta * omega_m_over_kappa), zeta * omega_m_over_kappa


# ---------------------------------------------------------------------------
# envelope files


def write_envelope(path, t, amplitude) -> None:
    path = Path(path)
    data = np.column_stack([np.asarray(t, float), np.asarray(amplitude, float)])
    with open(path, "w") as fh:
        fh.write(ENVELOPE_HEADER + "\n")
        fh.write("# time_seconds amplitude\n")
        np.savetxt(fh, data, fmt="%.17g")


def read_envelope(path):
    path = Path(path)
    with open(path) as fh:
        first = fh.readline().strip()
    if first != ENVELOPE_HEADER:
        raise ValueError(f"{path}: expected header {ENVELOPE_HEADER!r}, found {first!r}")
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns")
    return data[:, 0], data[:, 1]
