"""Truncated number-basis representation of a single mechanical mode.

Conventions: hbar = 1, X = (b + b^dag)/sqrt(2), P = i(b^dag - b)/sqrt(2), so the
ground state has Var(X) = Var(P) = 1/2. Free evolution by an angle theta maps
rho -> exp(-i theta n) rho exp(i theta n); under this map the state means rotate
as <X> -> <X> cos(theta) + <P> sin(theta), <P> -> <P> cos(theta) - <X> sin(theta).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridError, TruncationError

TAIL_TOL = 1e-6


@dataclass(frozen=True)
class FockState:
    """Density matrix in the truncated number basis {|0>, ..., |n_max>}."""

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("density matrix must be square")
        m = 0.5 * (m + m.conj().T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_max(self) -> int:
        return self.dim - 1

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix.T, self.matrix)))

    def mean_number(self) -> float:
        return float(np.dot(np.arange(self.dim), np.diag(self.matrix).real))

    def populations(self) -> np.ndarray:
        return np.diag(self.matrix).real.copy()


@dataclass(frozen=True)
class Marginal:
    """Probability density of the rotated quadrature X cos(theta) + P sin(theta)."""

    theta: float
    x_grid: np.ndarray
    values: np.ndarray

    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.x_grid))

    def mean(self) -> float:
        return float(np.trapezoid(self.x_grid * self.values, self.x_grid) / self.integral())

    def variance(self) -> float:
        mu = self.mean()
        return float(
            np.trapezoid((self.x_grid - mu) ** 2 * self.values, self.x_grid) / self.integral()
        )


@dataclass(frozen=True)
class WignerGrid:
    """Wigner quasi-probability sampled on a rectangular phase-space grid.

    ``values[i, j]`` is W(x_grid[i], p_grid[j]).
    """

    x_grid: np.ndarray
    p_grid: np.ndarray
    values: np.ndarray

    def integral(self) -> float:
        return float(np.trapezoid(np.trapezoid(self.values, self.p_grid, axis=1), self.x_grid))

    def x_marginal(self) -> np.ndarray:
        return np.trapezoid(self.values, self.p_grid, axis=1)

    def p_marginal(self) -> np.ndarray:
        return np.trapezoid(self.values, self.x_grid, axis=0)

    def moments(self):
        """Means and covariance computed directly from the grid."""
        norm = self.integral()
        X, P = np.meshgrid(self.x_grid, self.p_grid, indexing="ij")

        def avg(f):
            return np.trapezoid(np.trapezoid(f * self.values, self.p_grid, axis=1), self.x_grid) / norm

        mx, mp = avg(X), avg(P)
        vxx = avg((X - mx) ** 2)
        vpp = avg((P - mp) ** 2)
        vxp = avg((X - mx) * (P - mp))
        return float(mx), float(mp), np.array([[vxx, vxp], [vxp, vpp]])


# ---------------------------------------------------------------------------
# basis functions and operators


def hermite_functions(n_max: int, x) -> np.ndarray:
    """Position wavefunctions <x|n> for n = 0..n_max, shape (n_max + 1, len(x)).

    Uses the normalized three-term recurrence, which stays finite for n in the
    hundreds where the explicit factorial formula overflows.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * x**2)
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * x * out[0]
    for n in range(1, n_max):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * x * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out


def annihilation(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def quadrature_operators(dim: int):
    """Return (X, P, X^2, P^2, (XP + PX)/2) with second moments built exactly.

    Squaring the truncated X matrix would corrupt the top level; the explicit
    forms below do not.
    """
    a = annihilation(dim)
    ad = a.conj().T
    n = np.diag(np.arange(dim, dtype=float)).astype(complex)
    a2 = a @ a
    ad2 = ad @ ad
    eye = np.eye(dim)
    X = (a + ad) / math.sqrt(2.0)
    P = 1j * (ad - a) / math.sqrt(2.0)
    X2 = 0.5 * (a2 + ad2 + 2 * n + eye)
    P2 = 0.5 * (-a2 - ad2 + 2 * n + eye)
    XPsym = 0.5j * (ad2 - a2)
    return X, P, X2, P2, XPsym


# ---------------------------------------------------------------------------
# truncation bookkeeping


def check_truncation(matrix: np.ndarray, tol: float = TAIL_TOL) -> None:
    pops = np.diag(matrix).real
    tail = float(pops[-2:].sum()) if len(pops) > 1 else 0.0
    if tail > tol:
        raise TruncationError(
            f"population {tail:.3e} in the top two Fock levels exceeds {tol:.0e}; "
            f"increase n_max (currently {len(pops) - 1})"
        )


def default_n_max(nbar: float = 0.0, alpha: complex = 0.0, squeeze_margin: int = 0) -> int:
    """Truncation that keeps thermal and coherent tails negligible.

    The thermal part is sized so the geometric tail mass is below 1e-9; the
    coherent part uses |alpha|^2 + 8|alpha| + 16.
    """
    n = 8
    if nbar > 0:
        q = nbar / (nbar + 1.0)
        n = max(n, int(math.ceil(math.log(1e-9) / math.log(q))))
    a = abs(alpha)
    n_coh = int(math.ceil(a * a + 8 * a + 16))
    return int(max(n, n_coh) + squeeze_margin)


def _finalize(matrix: np.ndarray, check: bool = True) -> FockState:
    matrix = 0.5 * (matrix + matrix.conj().T)
    matrix = matrix / np.trace(matrix).real
    if check:
        check_truncation(matrix)
    return FockState(matrix)


# ---------------------------------------------------------------------------
# constructors


def new_thermal(nbar: float, n_max: int | None = None) -> FockState:
    """Thermal state with mean occupation ``nbar``."""
    if nbar < 0:
        raise ValueError("nbar must be non-negative")
    if n_max is None:
        n_max = default_n_max(nbar)
    n = np.arange(n_max + 1)
    if nbar == 0:
        w = (n == 0).astype(float)
    else:
        w = (nbar / (nbar + 1.0)) ** n / (nbar + 1.0)
    return _finalize(np.diag(w).astype(complex))


def coherent_vector(alpha: complex, n_max: int) -> np.ndarray:
    c = np.empty(n_max + 1, dtype=complex)
    c[0] = math.exp(-0.5 * abs(alpha) ** 2)
    for n in range(1, n_max + 1):
        c[n] = c[n - 1] * alpha / math.sqrt(n)
    return c


def new_pure(vector) -> FockState:
    v = np.asarray(vector, dtype=complex)
    v = v / np.linalg.norm(v)
    return _finalize(np.outer(v, v.conj()))


def new_fock(n: int, n_max: int) -> FockState:
    v = np.zeros(n_max + 1, dtype=complex)
    v[n] = 1.0
    return FockState(np.outer(v, v))


def new_coherent(alpha: complex, n_max: int | None = None) -> FockState:
    """Coherent state |alpha>; <X> = sqrt(2) Re(alpha), <P> = sqrt(2) Im(alpha)."""
    a = abs(alpha)
    if n_max is None:
        n_max = default_n_max(alpha=alpha)
    if a * a + 6 * a > n_max:
        raise TruncationError(f"n_max={n_max} too small for |alpha|={a:.3g}")
    return new_pure(coherent_vector(complex(alpha), n_max))


CAT_AXES = ("plus_i", "minus_i", "real")


def cat_vector(delta: float, phase_axis: str = "plus_i", n_max: int = 40) -> np.ndarray:
    """Unnormalized cat-state amplitudes.

    ``plus_i``: |i delta> + |-i delta>;  ``minus_i``: |i delta> - |-i delta>;
    ``real``: |delta> + |-delta>.
    """
    if phase_axis not in CAT_AXES:
        raise ValueError(f"phase_axis must be one of {CAT_AXES}")
    amp = 1j * delta if phase_axis in ("plus_i", "minus_i") else delta
    sign = -1.0 if phase_axis == "minus_i" else 1.0
    return coherent_vector(amp, n_max) + sign * coherent_vector(-amp, n_max)


def new_cat(delta: float, phase_axis: str = "plus_i", n_max: int | None = None) -> FockState:
    """Two-component coherent-state superposition with separation 2*delta."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if n_max is None:
        n_max = default_n_max(alpha=delta)
    if delta * delta + 6 * delta > n_max:
        raise TruncationError(f"n_max={n_max} too small for delta={delta:.3g}")
    v = cat_vector(delta, phase_axis, n_max)
    if np.linalg.norm(v) < 1e-12:
        # odd cat at delta -> 0 tends to |1>
        return new_fock(1, n_max)
    return new_pure(v)


def thermal_occupation(temperature: float, omega_m: float, high_temperature: bool = False) -> float:
    """Mean phonon number at ``temperature`` (K) for angular frequency ``omega_m``."""
    from scipy.constants import hbar, k

    if high_temperature:
        return k * temperature / (hbar * omega_m)
    return 1.0 / math.expm1(hbar * omega_m / (k * temperature))


# ---------------------------------------------------------------------------
# operations


def rotate(state: FockState, theta: float) -> FockState:
    """Free harmonic evolution by phase angle ``theta``."""
    n = np.arange(state.dim)
    phase = np.exp(-1j * theta * (n[:, None] - n[None, :]))
    return FockState(state.matrix * phase)


def moments(state: FockState):
    """Return (mean_x, mean_p, cov) with cov the symmetrized 2x2 covariance."""
    X, P, X2, P2, XPsym = quadrature_operators(state.dim)
    rho = state.matrix

    def ev(op):
        return float(np.real(np.sum(op * rho.T)))

    mx, mp = ev(X), ev(P)
    vxx = ev(X2) - mx * mx
    vpp = ev(P2) - mp * mp
    vxp = ev(XPsym) - mx * mp
    return mx, mp, np.array([[vxx, vxp], [vxp, vpp]])


def position_density(state: FockState, x_grid) -> np.ndarray:
    """<x|rho|x> on ``x_grid`` without any span checks."""
    psi = hermite_functions(state.n_max, x_grid)
    vals = np.einsum("mx,mn,nx->x", psi, state.matrix, psi, optimize=True).real
    return np.clip(vals, 0.0, None)


def marginal(state: FockState, theta: float, x_grid, check: bool = True) -> Marginal:
    """Marginal density of the quadrature rotated by ``theta``."""
    x_grid = np.asarray(x_grid, dtype=float)
    rotated = rotate(state, theta)
    out = Marginal(float(theta), x_grid, position_density(rotated, x_grid))
    if check:
        mass = out.integral()
        if abs(mass - 1.0) > 1e-6:
            mx, _, cov = moments(rotated)
            raise GridError(
                f"x_grid [{x_grid.min():.3g}, {x_grid.max():.3g}] captures probability {mass:.8f}; "
                f"state has mean {mx:.3g} and sd {math.sqrt(cov[0, 0]):.3g}"
            )
    return out


def _support_radius(dim: int) -> float:
    return math.sqrt(2.0 * (dim - 1) + 1.0) + 6.0


def wigner(state: FockState, x_grid, p_grid, check: bool = True) -> WignerGrid:
    """Wigner function W(x, p) = (1/pi) int dy <x+y|rho|x-y> exp(-2ipy).

    The y integral is a trapezoid sum on a grid fine enough to resolve both the
    Hermite-function oscillations and the largest |p| requested.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    p_grid = np.asarray(p_grid, dtype=float)
    R = _support_radius(state.dim)
    kmax = math.sqrt(2.0 * state.n_max + 1.0)
    dy = 0.5 * math.pi / (2.0 * kmax + 2.0 * np.abs(p_grid).max() + 4.0)
    ny = int(math.ceil(R / dy))
    y = np.linspace(-R, R, 2 * ny + 1)
    dy = y[1] - y[0]
    phase = np.exp(-2j * np.outer(y, p_grid)) * dy / math.pi
    rho = state.matrix
    values = np.empty((x_grid.size, p_grid.size))
    chunk = max(1, int(2e6 // (state.dim * y.size)))
    for start in range(0, x_grid.size, chunk):
        xs = x_grid[start:start + chunk]
        plus = hermite_functions(state.n_max, xs[:, None] + y[None, :])
        minus = hermite_functions(state.n_max, xs[:, None] - y[None, :])
        f = np.einsum("mxy,mn,nxy->xy", plus, rho, minus, optimize=True)
        values[start:start + chunk] = (f @ phase).real
    out = WignerGrid(x_grid, p_grid, values)
    if check and abs(out.integral() - 1.0) > 1e-4:
        raise GridError(f"phase-space grid captures quasi-probability {out.integral():.6f}")
    return out


def density_from_wigner(w: WignerGrid, n_max: int) -> np.ndarray:
    """Number-basis matrix elements of the operator whose Wigner function is ``w``.

    Inverts the Weyl map: <x+y|rho|x-y> = int dp W(x, p) exp(2ipy), then
    projects onto Hermite functions. The result is not forced to be physical.
    """
    x = w.x_grid
    p = w.p_grid
    R = _support_radius(n_max + 1)
    kmax = math.sqrt(2.0 * n_max + 1.0)
    dy = 0.5 * math.pi / (2.0 * kmax + 2.0 * np.abs(p).max() + 4.0)
    ny = int(math.ceil(R / dy))
    y = np.linspace(-R, R, 2 * ny + 1)
    dy = y[1] - y[0]
    wp = np.full(p.size, p[1] - p[0])
    wp[[0, -1]] *= 0.5
    wx = np.full(x.size, x[1] - x[0])
    wx[[0, -1]] *= 0.5
    g = (w.values * wp[None, :]) @ np.exp(2j * np.outer(p, y))  # (nx, ny)
    rho = np.zeros((n_max + 1, n_max + 1), dtype=complex)
    chunk = max(1, int(2e6 // ((n_max + 1) * y.size)))
    for start in range(0, x.size, chunk):
        sl = slice(start, start + chunk)
        xs = x[sl]
        plus = hermite_functions(n_max, xs[:, None] + y[None, :])
        minus = hermite_functions(n_max, xs[:, None] - y[None, :])
        weight = g[sl] * (2.0 * dy * wx[sl])[:, None]
        rho += np.einsum("mxy,xy,nxy->mn", plus, weight, minus, optimize=True)
    return 0.5 * (rho + rho.conj().T)


def project_physical(matrix: np.ndarray) -> FockState:
    """Nearest density matrix by eigenvalue clipping and renormalization."""
    h = 0.5 * (matrix + matrix.conj().T)
    vals, vecs = np.linalg.eigh(h)
    vals = np.clip(vals, 0.0, None)
    if vals.sum() <= 0:
        raise ValueError("matrix has no positive part")
    rho = (vecs * vals) @ vecs.conj().T
    return FockState(rho / vals.sum())


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.conj().T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T


def fidelity(a: FockState, b: FockState) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(a) b sqrt(a)))^2."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    s = _psd_sqrt(a.matrix)
    vals = np.linalg.eigvalsh(s @ b.matrix @ s)
    f = float(np.sum(np.sqrt(np.clip(vals, 0.0, None))) ** 2)
    return min(max(f, 0.0), 1.0)


def embed(state: FockState, n_max: int) -> FockState:
    """Zero-pad (or truncate, with a tail check) to a new cutoff."""
    d = n_max + 1
    m = np.zeros((d, d), dtype=complex)
    k = min(d, state.dim)
    m[:k, :k] = state.matrix[:k, :k]
    if d < state.dim:
        return _finalize(m)
    return FockState(m)


def cat_marginal_exact(delta: float, x, theta: float = 0.0, phase_axis: str = "plus_i") -> np.ndarray:
    """Closed-form marginal of a cat state from coherent-state wavefunctions."""
    amp = 1j * delta if phase_axis in ("plus_i", "minus_i") else complex(delta)
    sign = -1.0 if phase_axis == "minus_i" else 1.0
    x = np.asarray(x, dtype=float)

    def coh_wf(a):
        a = a * np.exp(-1j * theta)
        q = math.sqrt(2.0) * a.real
        p = math.sqrt(2.0) * a.imag
        return np.pi ** -0.25 * np.exp(-0.5 * (x - q) ** 2 + 1j * p * x - 0.5j * q * p)

    psi = coh_wf(amp) + sign * coh_wf(-amp)
    norm = 2.0 + sign * 2.0 * math.exp(-2.0 * abs(amp) ** 2)
    return np.abs(psi) ** 2 / norm
