"""Homodyne tomography of the mechanical state.

Pipeline: simulated outcome histograms over a set of rotation angles, kernel
calibration with the mirror held fixed, Wiener deconvolution of each outcome
density back onto the position axis, and filtered backprojection (Ram-Lak with
Gaussian apodization) of the recovered marginals into a Wigner function, with an
optional projection to the nearest physical density matrix.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import OptimizeWarning, curve_fit
from scipy.signal import argrelextrema
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import hilbert, measurement
from ._validation import (
    check_angles,
    check_densities,
    check_random_state,
    check_uniform_grid,
    spawn_generators,
)
from .errors import NoOscillationError, NoPositionInformation
from .hilbert import FockState, Marginal, WignerGrid
from .measurement import MeasurementSpec

DEFAULT_BINS = 101
MIN_ANGLES = 12


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    def density(self) -> np.ndarray:
        return self.counts / (self.counts.sum() * self.width)

    def mean(self) -> float:
        return float(np.sum(self.centers * self.counts) / self.counts.sum())

    def variance(self) -> float:
        """Bin-center variance with Sheppard's correction."""
        m = self.mean()
        v = np.sum((self.centers - m) ** 2 * self.counts) / self.counts.sum()
        return float(v - self.width**2 / 12.0)


@dataclass(frozen=True)
class Tomogram:
    angles: np.ndarray
    histograms: list
    spec: MeasurementSpec
    shots_per_angle: int
    samples: list | None = field(default=None, repr=False)

    def __post_init__(self):
        for h in self.histograms:
            if np.any(h.counts < 0):
                raise ValueError("histogram counts must be non-negative")
            if int(h.counts.sum()) != self.shots_per_angle:
                raise ValueError("histogram counts must sum to shots_per_angle")


@dataclass(frozen=True)
class Kernel:
    """Outcome distribution with the mechanical contribution frozen, centred at 0."""

    grid: np.ndarray
    values: np.ndarray
    chi: float
    variance: float

    @classmethod
    def gaussian(cls, chi: float, variance: float, half_width_sd: float = 10.0, n: int = 2001) -> "Kernel":
        sd = math.sqrt(variance)
        grid = np.linspace(-half_width_sd * sd, half_width_sd * sd, n)
        values = np.exp(-grid**2 / (2 * variance)) / math.sqrt(2 * math.pi * variance)
        values /= np.trapezoid(values, grid)
        return cls(grid, values, chi, variance)

    def as_gaussian(self) -> "Kernel":
        return Kernel.gaussian(self.chi, self.variance)

    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.grid))


# ---------------------------------------------------------------------------
# data acquisition


def bin_outcomes(outcomes, bins: int = DEFAULT_BINS, known_means=None, nsd: float = 5.0) -> Histogram:
    """Histogram over mean +/- nsd*sd, widened symmetrically to keep every sample."""
    x = np.asarray(outcomes, dtype=float)
    if known_means is not None:
        x = x - np.asarray(known_means, dtype=float)
    mu = float(x.mean())
    sd = float(x.std()) or 1.0
    half = max(nsd * sd, float(np.max(np.abs(x - mu))) * (1 + 1e-9))
    counts, edges = np.histogram(x, bins=bins, range=(mu - half, mu + half))
    return Histogram(edges, counts)


def acquire(state: FockState, spec: MeasurementSpec, angles, shots: int, rng_seed=None,
            bins: int = DEFAULT_BINS, keep_samples: bool = False) -> Tomogram:
    """Simulate ``shots`` read-out pulses at each rotation angle."""
    angles = check_angles(angles)
    if angles.size == 0:
        raise ValueError("angle list is empty")
    rngs = spawn_generators(rng_seed, angles.size)
    hists, samples = [], []
    for theta, rng in zip(angles, rngs):
        draws = measurement.sample_outcome_fock(state, spec, rng, size=shots, theta=float(theta))
        hists.append(bin_outcomes(draws, bins))
        if keep_samples:
            samples.append(draws)
    return Tomogram(angles, hists, spec, int(shots), samples if keep_samples else None)


def frozen_mirror_outcomes(spec: MeasurementSpec, displacement: float, shots: int, rng_seed=None) -> np.ndarray:
    """Outcomes with the mirror clamped at position ``displacement`` (quadrature units)."""
    rng = check_random_state(rng_seed)
    return spec.chi * displacement + rng.normal(0.0, math.sqrt(spec.record_var), size=shots)


def calibrate_kernel(spec: MeasurementSpec, shots: int, rng_seed=None, displacement: float = 0.0,
                     bins: int = DEFAULT_BINS) -> Kernel:
    draws = frozen_mirror_outcomes(spec, displacement, shots, rng_seed) - spec.chi * displacement
    hist = bin_outcomes(draws, bins)
    values = hist.density()
    values = values / np.trapezoid(values, hist.centers)
    return Kernel(hist.centers, values, spec.chi, float(np.var(draws, ddof=1)))


def calibrate_chi(spec: MeasurementSpec, displacements, shots: int, rng_seed=None) -> float:
    """Slope of mean outcome against known mirror displacement."""
    displacements = np.asarray(displacements, dtype=float)
    rngs = spawn_generators(rng_seed, displacements.size)
    means = [frozen_mirror_outcomes(spec, d, shots, r).mean() for d, r in zip(displacements, rngs)]
    slope, _ = np.polyfit(displacements, means, 1)
    return float(slope)


# ---------------------------------------------------------------------------
# deconvolution


def _kernel_on_grid(kernel: Kernel, dx: float, chi: float, n_half: int) -> np.ndarray:
    """Kernel in position units sampled at offsets j*dx, j = -n_half..n_half."""
    offsets = np.arange(-n_half, n_half + 1) * dx
    k = chi * np.interp(offsets * chi, kernel.grid, kernel.values, left=0.0, right=0.0)
    return k / (np.sum(k) * dx)


def deconvolve(p_grid, density, kernel: Kernel, regularization: float = 1e-4, chi: float | None = None,
               theta: float = 0.0) -> Marginal:
    """Recover a position marginal from an outcome density by Wiener division.

    ``density`` is sampled on the uniform outcome grid ``p_grid``; the result
    lives on x = p_grid / chi. ``regularization`` is relative to the peak
    spectral power of the kernel.
    """
    chi = kernel.chi if chi is None else chi
    if chi == 0:
        raise NoPositionInformation("chi = 0: outcomes carry no position information")
    if regularization < 0:
        raise ValueError("regularization must be non-negative")
    p_grid = check_uniform_grid(p_grid, "p_grid")
    h = np.asarray(density, dtype=float) * chi
    x = p_grid / chi
    dx = x[1] - x[0]
    n = x.size
    half_support = float(np.max(np.abs(kernel.grid))) / chi
    n_half = int(min(math.ceil(half_support / dx), n))
    k = _kernel_on_grid(kernel, dx, chi, n_half)
    size = 1 << int(math.ceil(math.log2(n + 2 * n_half + 1)))
    kc = np.zeros(size)
    kc[: n_half + 1] = k[n_half:]
    kc[size - n_half:] = k[:n_half]
    Fk = np.fft.rfft(kc) * dx
    Fh = np.fft.rfft(h, size)
    power = np.abs(Fk) ** 2
    est = Fh * np.conj(Fk) / (power + regularization * power.max())
    m = np.fft.irfft(est, size)[:n]
    m = np.clip(m, 0.0, None)
    m /= np.trapezoid(m, x)
    return Marginal(float(theta), x, m)


def convolve_marginal(marginal: Marginal, kernel: Kernel) -> tuple:
    """Forward model: outcome density on p = chi * x for a known marginal."""
    x = marginal.x_grid
    dx = x[1] - x[0]
    chi = kernel.chi
    n_half = int(math.ceil(float(np.max(np.abs(kernel.grid))) / chi / dx))
    k = _kernel_on_grid(kernel, dx, chi, n_half)
    conv = np.convolve(marginal.values, k, mode="same") * dx
    return chi * x, conv / chi


# ---------------------------------------------------------------------------
# reconstruction


def ram_lak(n: int, ds: float) -> np.ndarray:
    """Spatial Ram-Lak filter taps for offsets -n..n."""
    j = np.arange(-n, n + 1)
    h = np.zeros(j.size)
    h[j == 0] = 1.0 / (4.0 * ds * ds)
    odd = (j % 2) == 1
    h[odd] = -1.0 / (math.pi**2 * j[odd] ** 2 * ds * ds)
    return h


def filter_projection(values, ds: float, apodization: float | None = 1.0) -> np.ndarray:
    """Ram-Lak filtering with optional Gaussian roll-off.

    ``apodization`` is the 1/e frequency of the roll-off as a fraction of the
    Nyquist frequency; ``None`` disables it.
    """
    n = values.size
    size = 1 << int(math.ceil(math.log2(3 * n)))
    taps = ram_lak(n, ds)
    hc = np.zeros(size)
    hc[: n + 1] = taps[n:]
    hc[size - n:] = taps[:n]
    H = np.fft.rfft(hc) * ds
    if apodization is not None:
        f = np.fft.rfftfreq(size, ds)
        nyq = 0.5 / ds
        H = H * np.exp(-(f / (apodization * nyq)) ** 2)
    return np.fft.irfft(np.fft.rfft(values, size) * H, size)[:n]


def backproject(marginals, angles, x_grid, p_grid, apodization: float | None = 1.0,
                upsample: int = 4) -> WignerGrid:
    """Filtered backprojection of quadrature marginals sampled on a common grid.

    Projections are spline-interpolated onto a grid ``upsample`` times finer
    before filtering so that the linear interpolation of the backprojection
    step does not wash out fine fringes. Points outside the disc covered by
    the projections are set to zero.
    """
    angles = check_angles(angles, MIN_ANGLES, half_period=True)
    s = marginals[0].x_grid
    fine = np.linspace(s[0], s[-1], (s.size - 1) * upsample + 1)
    ds = fine[1] - fine[0]
    X, P = np.meshgrid(x_grid, p_grid, indexing="ij")
    W = np.zeros(X.shape)
    for m, theta in zip(marginals, angles):
        vals = CubicSpline(s, m.values)(fine) if upsample > 1 else m.values
        q = filter_projection(vals, ds, apodization)
        W += np.interp(X * math.cos(theta) + P * math.sin(theta), fine, q, left=0.0, right=0.0)
    W *= math.pi / angles.size
    radius = min(abs(s[0]), abs(s[-1]))
    W[X**2 + P**2 > radius**2] = 0.0
    return WignerGrid(np.asarray(x_grid, float), np.asarray(p_grid, float), W)


def reconstruct(marginals, angles=None, x_grid=None, p_grid=None, n_max: int | None = 40,
                apodization: float | None = 1.0, physical: bool = True):
    """Wigner function and (optionally) a density-matrix estimate from marginals.

    Returns ``(WignerGrid, FockState | None)``.
    """
    if angles is None:
        angles = [m.theta for m in marginals]
    angles = check_angles(angles, MIN_ANGLES, half_period=True)
    if len(marginals) != angles.size:
        raise ValueError("need one marginal per angle")
    s = check_uniform_grid(marginals[0].x_grid, "marginal grid")
    x_grid = s if x_grid is None else check_uniform_grid(x_grid, "x_grid")
    p_grid = x_grid if p_grid is None else check_uniform_grid(p_grid, "p_grid")
    w = backproject(marginals, angles, x_grid, p_grid, apodization)
    if n_max is None:
        return w, None
    rho = hilbert.density_from_wigner(w, n_max)
    state = hilbert.project_physical(rho) if physical else FockState(rho / np.trace(rho).real)
    return w, state


def exact_outcome_densities(state: FockState, spec: MeasurementSpec, angles, x_grid):
    """Outcome densities on p = chi * x_grid for each angle (no sampling noise)."""
    p_grid = spec.chi * np.asarray(x_grid, dtype=float)
    return p_grid, [measurement.outcome_pdf(state, spec, p_grid, float(t), check=False) for t in angles]


# ---------------------------------------------------------------------------
# fringe analysis


def _fringe_model(x, a0, a2, a1, vis, k, phase):
    return np.exp(a0 + a1 * x + a2 * x * x) * (1.0 + vis * np.cos(k * x + phase))


def fringe_visibility(marginal: Marginal, rel_floor: float = 1e-3, min_contrast: float = 1e-3) -> float:
    """Contrast of the central interference fringe relative to its envelope.

    A Gaussian envelope is first fitted to log(values); extrema of the ratio
    to that envelope locate the central fringe and seed a least-squares fit
    of exp(quadratic) * (1 + V cos(kx + phase)) over the central fringes.
    """
    x = marginal.x_grid
    v = np.asarray(marginal.values, dtype=float)
    mask = v > rel_floor * v.max()
    idx = np.flatnonzero(mask)
    lo_i, hi_i = idx[0], idx[-1]
    xs, vs = x[lo_i:hi_i + 1], np.clip(v[lo_i:hi_i + 1], 1e-300, None)
    coef = np.polyfit(xs, np.log(vs), 2, w=np.sqrt(vs / vs.max()))
    r = vs / np.exp(np.polyval(coef, xs))
    maxima = list(argrelextrema(r, np.greater)[0])
    minima = list(argrelextrema(r, np.less)[0])
    if len(maxima) < 1 or len(minima) < 2:
        raise NoOscillationError("marginal shows no interference fringes")
    centre = float(np.sum(x * v) / np.sum(v))
    c = min(maxima, key=lambda i: abs(xs[i] - centre))
    left = [i for i in minima if i < c]
    right = [i for i in minima if i > c]
    if not left or not right:
        raise NoOscillationError("central maximum is not bracketed by fringe minima")
    lo, hi = left[-1], right[0]
    contrast = (r[c] - 0.5 * (r[lo] + r[hi])) / (r[c] + 0.5 * (r[lo] + r[hi]))
    if contrast < min_contrast:
        raise NoOscillationError(f"fringe contrast {contrast:.2e} below threshold")
    k0 = 2 * math.pi / (xs[hi] - xs[lo])
    sel = slice(max(0, lo - (c - lo)), min(xs.size, hi + (hi - c) + 1))
    p0 = [coef[2], coef[0], coef[1], min(0.99, 2 * contrast), k0, -k0 * xs[c]]
    try:
        with warnings.catch_warnings():
            # an exact fit leaves the parameter covariance undefined
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, _ = curve_fit(_fringe_model, xs[sel], vs[sel], p0=p0, maxfev=20000)
    except RuntimeError as exc:
        raise NoOscillationError(f"fringe fit failed: {exc}") from exc
    return float(abs(popt[3]))


def cat_fringe_suppression(delta: float, chi: float) -> float:
    """Visibility factor of cat fringes after convolution with the outcome kernel."""
    return math.exp(-2.0 * delta**2 / (chi**2 + 1.0))


# ---------------------------------------------------------------------------
# estimator interface


class MarginalDeconvolver(TransformerMixin, BaseEstimator):
    """Calibrate the outcome kernel, then map outcome densities to position marginals.

    Parameters
    ----------
    chi : float
        Measurement strength used to rescale outcomes onto the position axis.
    p_grid : array
        Uniform outcome grid on which densities passed to ``transform`` are sampled.
    regularization : float
        Wiener parameter relative to the kernel's peak spectral power.
    smooth_kernel : bool
        Replace the calibration histogram by a Gaussian of the same variance.
    """

    def __init__(self, chi=1.0, p_grid=None, regularization=1e-4, smooth_kernel=True):
        self.chi = chi
        self.p_grid = p_grid
        self.regularization = regularization
        self.smooth_kernel = smooth_kernel

    def fit(self, X, y=None):
        """``X``: frozen-mirror outcomes (centred), or a ``Kernel`` instance."""
        if isinstance(X, Kernel):
            kernel = X
        else:
            draws = np.asarray(X, dtype=float).ravel()
            hist = bin_outcomes(draws)
            vals = hist.density()
            kernel = Kernel(hist.centers, vals / np.trapezoid(vals, hist.centers), self.chi,
                            float(np.var(draws, ddof=1)))
        self.kernel_ = kernel.as_gaussian() if self.smooth_kernel else kernel
        self.kernel_variance_ = kernel.variance
        return self

    def transform(self, X, thetas=None):
        check_is_fitted(self, "kernel_")
        grid = check_uniform_grid(self.p_grid, "p_grid")
        rows = check_densities(X, grid.size)
        thetas = np.zeros(len(rows)) if thetas is None else np.asarray(thetas, float)
        out = [deconvolve(grid, r, self.kernel_, self.regularization, self.chi, t)
               for r, t in zip(rows, thetas)]
        return np.vstack([m.values for m in out])

    @property
    def x_grid_(self):
        return np.asarray(self.p_grid, float) / self.chi


class WignerReconstructor(BaseEstimator):
    """Filtered-backprojection reconstruction from marginals on a common grid.

    After ``fit`` the estimator exposes ``wigner_`` (a ``WignerGrid``) and,
    when ``n_max`` is set, ``state_`` (a ``FockState``).
    """

    def __init__(self, angles=None, s_grid=None, x_grid=None, p_grid=None, n_max=40,
                 apodization=1.0, physical=True):
        self.angles = angles
        self.s_grid = s_grid
        self.x_grid = x_grid
        self.p_grid = p_grid
        self.n_max = n_max
        self.apodization = apodization
        self.physical = physical

    def fit(self, X, y=None):
        s = check_uniform_grid(self.s_grid, "s_grid")
        angles = check_angles(self.angles, MIN_ANGLES, half_period=True)
        rows = check_densities(X, s.size)
        if rows.shape[0] != angles.size:
            raise ValueError("need one marginal per angle")
        marginals = [Marginal(float(t), s, r) for t, r in zip(angles, rows)]
        self.wigner_, self.state_ = reconstruct(marginals, angles, self.x_grid, self.p_grid,
                                                self.n_max, self.apodization, self.physical)
        return self

    def predict(self, X):
        """Marginals of the reconstructed state at the angles in ``X``, on ``s_grid``."""
        check_is_fitted(self, "wigner_")
        s = np.asarray(self.s_grid, float)
        angles = np.atleast_1d(np.asarray(X, float))
        if self.state_ is None:
            raise ValueError("marginal prediction needs n_max set so a density matrix is built")
        return np.vstack([hilbert.marginal(self.state_, t, s, check=False).values for t in angles])
