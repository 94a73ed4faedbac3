"""Pulse sequences: measurement pulses, free evolution and bath coupling.

A sequence runs either on Gaussian moments or on a truncated density matrix.
Both paths share the same seeded outcome stream so their moments can be
compared step by step.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import ndtri

from . import gaussian as gs
from . import hilbert, measurement
from .config import check_keys, get_float, get_float_list, get_int, get_str
from .errors import ConfigError, MissingMeanError
from .gaussian import BathSpec, GaussianState
from .hilbert import FockState
from .measurement import MeasurementRecord, MeasurementSpec

CONFIG_VERSION = "protocol-config v1"
REPRESENTATIONS = ("gaussian", "fock")
INITIAL_KINDS = ("thermal", "coherent", "cat")
MEASUREMENT_MARGIN = 60


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class InitialState:
    kind: str = "thermal"
    nbar: float = 0.0
    alpha: complex = 0.0
    delta: float = 0.0
    phase_axis: str = "plus_i"

    def __post_init__(self):
        if self.kind not in INITIAL_KINDS:
            raise ConfigError(f"initial.kind must be one of {INITIAL_KINDS}")
        if self.nbar < 0:
            raise ConfigError("initial.nbar must be non-negative")

    def gaussian(self) -> GaussianState:
        if self.kind == "thermal":
            return gs.thermal_gaussian(self.nbar)
        if self.kind == "coherent":
            return gs.coherent_gaussian(self.alpha)
        raise ConfigError("gaussian representation cannot hold a cat state")

    def fock(self, n_max: int) -> FockState:
        if self.kind == "thermal":
            return hilbert.new_thermal(self.nbar, n_max)
        if self.kind == "coherent":
            return hilbert.new_coherent(self.alpha, n_max)
        return hilbert.new_cat(self.delta, self.phase_axis, n_max)

    def default_n_max(self) -> int:
        if self.kind == "thermal":
            base = hilbert.default_n_max(self.nbar)
        elif self.kind == "coherent":
            base = hilbert.default_n_max(alpha=self.alpha)
        else:
            base = hilbert.default_n_max(alpha=self.delta)
        return base + MEASUREMENT_MARGIN

    def as_dict(self) -> dict:
        if self.kind == "thermal":
            return {"kind": "thermal", "nbar": self.nbar}
        if self.kind == "coherent":
            a = complex(self.alpha)
            return {"kind": "coherent", "alpha": [a.real, a.imag]}
        return {"kind": "cat", "delta": self.delta, "phase_axis": self.phase_axis}


@dataclass(frozen=True)
class PulseStep:
    spec: MeasurementSpec
    outcome: float | None = None


@dataclass(frozen=True)
class EvolveStep:
    theta: float | None = None
    duration: float | None = None


@dataclass(frozen=True)
class ThermalizeStep:
    duration: float
    bath: BathSpec


@dataclass(frozen=True)
class SequenceConfig:
    initial: InitialState
    steps: tuple = ()
    representation: str = "gaussian"
    master_seed: int | None = 0
    omega_m: float | None = None
    n_max: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"representation must be one of {REPRESENTATIONS}")
        if self.representation == "gaussian" and self.initial.kind == "cat":
            raise ConfigError("gaussian representation rejected for cat initial states")
        for i, step in enumerate(self.steps):
            if isinstance(step, EvolveStep):
                self._check_evolve(step, i)
            elif isinstance(step, ThermalizeStep):
                if step.duration < 0:
                    raise ConfigError(f"steps[{i}].thermalize.duration must be non-negative")
                if self.omega_m is not None and not math.isclose(step.bath.omega_m, self.omega_m, rel_tol=1e-12):
                    raise ConfigError(f"steps[{i}].thermalize.bath.omega_m differs from omega_m")
            elif not isinstance(step, PulseStep):
                raise ConfigError(f"steps[{i}]: unknown step type {type(step).__name__}")

    def _check_evolve(self, step: EvolveStep, i: int):
        if step.theta is None and step.duration is None:
            raise ConfigError(f"steps[{i}].evolve needs theta or duration")
        if step.duration is not None:
            if self.omega_m is None:
                raise ConfigError(f"steps[{i}].evolve.duration requires omega_m")
            if step.theta is not None and not math.isclose(step.theta, self.omega_m * step.duration,
                                                          rel_tol=1e-9, abs_tol=1e-12):
                raise ConfigError(f"steps[{i}].evolve: theta inconsistent with omega_m * duration")

    def evolve_angle(self, step: EvolveStep) -> float:
        return step.theta if step.theta is not None else self.omega_m * step.duration

    def resolved_n_max(self) -> int:
        return self.n_max if self.n_max is not None else self.initial.default_n_max()

    # -- serialization -----------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict, path: str = "") -> "SequenceConfig":
        check_keys(doc, {"format", "initial", "steps", "representation", "master_seed", "omega_m", "n_max"},
                   path, required=("initial",))
        fmt = doc.get("format", CONFIG_VERSION)
        if fmt != CONFIG_VERSION:
            raise ConfigError(f"{_p(path, 'format')}: expected {CONFIG_VERSION!r}")
        initial = parse_initial(doc["initial"], _p(path, "initial"))
        omega_m = get_float(doc, "omega_m", path, positive=True)
        steps_doc = doc.get("steps", [])
        if not isinstance(steps_doc, list):
            raise ConfigError(f"{_p(path, 'steps')}: expected a list")
        steps = [_parse_step(s, f"{_p(path, 'steps')}[{i}]", omega_m) for i, s in enumerate(steps_doc)]
        return cls(
            initial=initial,
            steps=steps,
            representation=get_str(doc, "representation", path, "gaussian", REPRESENTATIONS),
            master_seed=get_int(doc, "master_seed", path, 0, minimum=0),
            omega_m=omega_m,
            n_max=get_int(doc, "n_max", path, None, minimum=1),
        )

    def as_dict(self) -> dict:
        steps = []
        for s in self.steps:
            if isinstance(s, PulseStep):
                d = s.spec.as_dict()
                if s.outcome is not None:
                    d["outcome"] = s.outcome
                steps.append({"pulse": d})
            elif isinstance(s, EvolveStep):
                d = {k: v for k, v in (("theta", s.theta), ("duration", s.duration)) if v is not None}
                steps.append({"evolve": d})
            else:
                steps.append({"thermalize": {"duration": s.duration, "bath": {
                    "gamma_m": s.bath.gamma_m, "nbar_bath": s.bath.nbar_bath, "omega_m": s.bath.omega_m}}})
        out = {
            "format": CONFIG_VERSION,
            "initial": self.initial.as_dict(),
            "steps": steps,
            "representation": self.representation,
            "master_seed": self.master_seed,
        }
        if self.omega_m is not None:
            out["omega_m"] = self.omega_m
        if self.n_max is not None:
            out["n_max"] = self.n_max
        return out


def _p(path, key):
    return f"{path}.{key}" if path else key


def parse_initial(node, path) -> InitialState:
    kind = get_str(node if isinstance(node, dict) else {}, "kind", path, required=True, choices=INITIAL_KINDS)
    if kind == "thermal":
        check_keys(node, {"kind", "nbar"}, path, required=("nbar",))
        return InitialState("thermal", nbar=get_float(node, "nbar", path, minimum=0.0))
    if kind == "coherent":
        check_keys(node, {"kind", "alpha"}, path, required=("alpha",))
        a = node["alpha"]
        if isinstance(a, (int, float)) and not isinstance(a, bool):
            alpha = complex(a)
        else:
            vals = get_float_list(node, "alpha", path)
            if len(vals) != 2:
                raise ConfigError(f"{path}.alpha: expected a number or [re, im]")
            alpha = complex(vals[0], vals[1])
        return InitialState("coherent", alpha=alpha)
    check_keys(node, {"kind", "delta", "phase_axis"}, path, required=("delta",))
    return InitialState("cat", delta=get_float(node, "delta", path, minimum=0.0),
                        phase_axis=get_str(node, "phase_axis", path, "plus_i", hilbert.CAT_AXES))


def parse_spec(node, path, extra=()) -> MeasurementSpec:
    check_keys(node, {"chi", "omega_kick", "var_pl_in", "extra_noise_var", "noise_mode", *extra}, path,
               required=("chi",))
    try:
        return MeasurementSpec(
            chi=get_float(node, "chi", path, minimum=0.0),
            omega_kick=get_float(node, "omega_kick", path, 0.0),
            var_pl_in=get_float(node, "var_pl_in", path, 0.5, positive=True),
            extra_noise_var=get_float(node, "extra_noise_var", path, 0.0, minimum=0.0),
            noise_mode=get_str(node, "noise_mode", path, "record", measurement.NOISE_MODES),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_bath(node, path, omega_m=None) -> BathSpec:
    check_keys(node, {"gamma_m", "nbar_bath", "omega_m", "Q", "temperature"}, path)
    om = get_float(node, "omega_m", path, omega_m, positive=True)
    if om is None:
        raise ConfigError(f"{path}.omega_m: missing required field")
    try:
        if "Q" in node:
            Q = get_float(node, "Q", path, positive=True)
            if "temperature" in node:
                return BathSpec.from_temperature(Q, om, get_float(node, "temperature", path, positive=True))
            return BathSpec.from_quality(Q, om, get_float(node, "nbar_bath", path, required=True, minimum=0.0))
        return BathSpec(get_float(node, "gamma_m", path, required=True, positive=True),
                        get_float(node, "nbar_bath", path, required=True, minimum=0.0), om)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_step(node, path, omega_m) -> object:
    if not isinstance(node, dict) or len(node) != 1:
        raise ConfigError(f"{path}: a step is a mapping with exactly one of pulse/evolve/thermalize")
    (kind, body), = node.items()
    sub = f"{path}.{kind}"
    if kind == "pulse":
        spec = parse_spec(body, sub, extra=("outcome",))
        return PulseStep(spec, get_float(body, "outcome", sub))
    if kind == "evolve":
        check_keys(body, {"theta", "duration"}, sub)
        return EvolveStep(get_float(body, "theta", sub), get_float(body, "duration", sub, minimum=0.0))
    if kind == "thermalize":
        check_keys(body, {"duration", "bath"}, sub, required=("duration", "bath"))
        return ThermalizeStep(get_float(body, "duration", sub, minimum=0.0),
                              parse_bath(body["bath"], f"{sub}.bath", omega_m))
    raise ConfigError(f"{path}.{kind}: unknown step type")


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class Snapshot:
    label: str
    mean: np.ndarray
    cov: np.ndarray
    n_eff: float
    state: object = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {
            "label": self.label,
            "mean": [float(v) for v in self.mean],
            "cov": [[float(v) for v in row] for row in self.cov],
            "var_x": float(self.cov[0, 0]),
            "var_p": float(self.cov[1, 1]),
            "n_eff": float(self.n_eff),
        }


@dataclass(frozen=True)
class Trajectory:
    config: SequenceConfig
    snapshots: tuple
    records: tuple

    def __post_init__(self):
        if len(self.snapshots) != len(self.config.steps) + 1:
            raise ValueError("snapshot count must equal step count + 1")

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]

    @property
    def n_eff(self) -> np.ndarray:
        return np.array([s.n_eff for s in self.snapshots])

    def as_dict(self) -> dict:
        return {
            "format": "trajectory v1",
            "config": self.config.as_dict(),
            "snapshots": [s.as_dict() for s in self.snapshots],
            "records": [
                {"p_l": r.p_l, "theta": r.theta, "chi": r.spec.chi, "omega_kick": r.spec.omega_kick,
                 "known_mean": r.known_mean}
                for r in self.records
            ],
        }


def _n_eff(cov) -> float:
    # clip tiny negative values from truncation round-off
    return max(0.5 * (math.sqrt(max(4.0 * cov[0, 0] * cov[1, 1], 0.0)) - 1.0), 0.0)


def _snapshot(label, state) -> Snapshot:
    if isinstance(state, GaussianState):
        mean, cov = np.array(state.mean), np.array(state.cov)
    else:
        mx, mp, cov = hilbert.moments(state)
        mean = np.array([mx, mp])
    return Snapshot(label, mean, cov, _n_eff(cov), state)


def thermalize_fock(state: FockState, bath: BathSpec, t: float, frame: str = "lab") -> FockState:
    """Thermal damping of a density matrix, the number-basis counterpart of ``gaussian.thermalize``.

    Integrates the weak-coupling master equation with rates gamma (nbar+1) and
    gamma nbar in the rotating frame, then applies the free rotation for
    ``frame="lab"``.
    """
    gt = bath.gamma_m * t
    if gt > 0.1:
        warnings.warn(f"gamma_m * t = {gt:.3g} is outside the weak-damping regime", gs.RegimeWarning)
    d = state.dim
    b = hilbert.annihilation(d)
    bd = b.conj().T
    n_op = bd @ b
    m_op = b @ bd
    m_op[-1, -1] = d  # keep b b^dag consistent with the untruncated operator on the top level
    up, down = bath.nbar_bath + 1.0, bath.nbar_bath

    def rhs(_, y):
        r = y.reshape(d, d)
        out = up * (b @ r @ bd - 0.5 * (n_op @ r + r @ n_op))
        out += down * (bd @ r @ b - 0.5 * (m_op @ r + r @ m_op))
        return out.ravel()

    if gt > 0:
        sol = solve_ivp(rhs, (0.0, gt), state.matrix.astype(complex).ravel(), rtol=1e-10, atol=1e-13)
        rho = sol.y[:, -1].reshape(d, d)
    else:
        rho = state.matrix
    rho = 0.5 * (rho + rho.conj().T)
    hilbert.check_truncation(rho)
    out = FockState(rho / np.trace(rho).real)
    if frame == "lab":
        out = hilbert.rotate(out, bath.omega_m * t)
    return out


def _apply_pulse(state, step: PulseStep, rng, rep):
    # both representations invert their outcome CDF at the same uniform draw,
    # so a seeded sequence follows the same outcome stream in either one
    spec = step.spec
    if rep == "gaussian":
        mx = float(state.mean[0])
        p = step.outcome
        if p is None:
            mu, var = gs.pulse_outcome_stats(state, spec.chi, spec.record_var)
            p = mu + math.sqrt(var) * float(ndtri(rng.random()))
        new = gs.conditional_update(state, spec.chi, spec.omega_kick, p, spec.update_var)
    else:
        mx = hilbert.moments(state)[0]
        p = step.outcome
        if p is None:
            p = float(measurement.outcome_quantile(state, spec, rng.random()))
        new = measurement.apply_upsilon(state, spec, p)
    return new, float(p), spec.chi * mx


def run_sequence(cfg: SequenceConfig) -> Trajectory:
    """Execute the configured steps; pulses sample an outcome then condition the state."""
    rep = cfg.representation
    rng = np.random.default_rng(cfg.master_seed)
    state = cfg.initial.gaussian() if rep == "gaussian" else cfg.initial.fock(cfg.resolved_n_max())
    snaps = [_snapshot("initial", state)]
    records = []
    angle = 0.0
    for i, step in enumerate(cfg.steps):
        if isinstance(step, PulseStep):
            state, p, known = _apply_pulse(state, step, rng, rep)
            records.append(MeasurementRecord(p, angle % (2 * math.pi), step.spec, known))
            label = f"pulse {len(records)}"
        elif isinstance(step, EvolveStep):
            theta = cfg.evolve_angle(step)
            state = gs.rotate_gaussian(state, theta) if rep == "gaussian" else hilbert.rotate(state, theta)
            angle += theta
            label = f"evolve {theta:.6g}"
        else:
            if rep == "gaussian":
                state = gs.thermalize(state, step.bath, step.duration)
            else:
                state = thermalize_fock(state, step.bath, step.duration)
            angle += step.bath.omega_m * step.duration
            label = f"thermalize {step.duration:.6g}"
        snaps.append(_snapshot(label, state))
    return Trajectory(cfg, tuple(snaps), tuple(records))


# ---------------------------------------------------------------------------
# standard protocols


def single_pulse_variance(nbar: float, chi: float, var_pl_in: float = 0.5) -> float:
    """Conditional Var(X) after one pulse on a thermal state (Gaussian path)."""
    g = gs.conditional_update(gs.thermal_gaussian(nbar), chi, 0.0, 0.0, var_pl_in)
    return g.var_x


def two_pulse_config(nbar: float, chi: float, bath: BathSpec | None = None, omega: float = 0.0,
                     outcomes=(None, None), master_seed: int = 0) -> SequenceConfig:
    spec = MeasurementSpec(chi=chi, omega_kick=omega)
    if bath is None:
        gap = EvolveStep(theta=math.pi / 2)
    else:
        gap = ThermalizeStep(duration=math.pi / (2.0 * bath.omega_m), bath=bath)
    steps = [PulseStep(spec, outcomes[0]), gap, PulseStep(spec, outcomes[1])]
    return SequenceConfig(InitialState("thermal", nbar=nbar), steps, "gaussian", master_seed,
                          omega_m=None if bath is None else bath.omega_m)


def purify_two_pulse(nbar: float, chi: float, bath: BathSpec | None = None, master_seed: int = 0,
                     n_realizations: int = 8):
    """Two pulses a quarter period apart; returns (final GaussianState, n_eff).

    n_eff is averaged over ``n_realizations`` sampled outcome pairs. For
    Gaussian states the covariance does not depend on the outcomes, which is
    asserted here.
    """
    if chi <= 0:
        raise ValueError("chi must be positive")
    seeds = np.random.SeedSequence(master_seed).generate_state(n_realizations)
    trajs = [run_sequence(two_pulse_config(nbar, chi, bath, master_seed=int(s))) for s in seeds]
    covs = np.array([t.final.cov for t in trajs])
    spread = float(np.max(np.abs(covs - covs[0])))
    assert spread <= 1e-12 * max(1.0, float(np.max(np.abs(covs[0])))), "covariance depends on outcomes"
    n_eff = float(np.mean([t.final.n_eff for t in trajs]))
    return trajs[0].final.state, n_eff


# ---------------------------------------------------------------------------
# read-out


@dataclass(frozen=True)
class ReadoutCurve:
    theta: np.ndarray
    variance: np.ndarray
    predicted: np.ndarray
    stderr: np.ndarray
    mean: np.ndarray


def _vectorized_prep(cfg: SequenceConfig, shots: int, rng):
    """Propagate ``shots`` independent runs of a Gaussian prep sequence.

    Returns the per-shot conditional means (shots, 2), the shared covariance,
    and the outcome-independent kick part of the mean.
    """
    if cfg.representation != "gaussian":
        raise ConfigError("read-out sessions need a gaussian prep sequence")
    g0 = cfg.initial.gaussian()
    means = np.tile(g0.mean, (shots, 1))
    drift = np.array(g0.mean)
    cov = np.array(g0.cov)
    for step in cfg.steps:
        if isinstance(step, PulseStep):
            s = step.spec
            g = GaussianState(np.zeros(2), cov)
            mu_var = s.record_var + s.chi**2 * cov[0, 0]
            if step.outcome is None:
                p = s.chi * means[:, 0] + rng.normal(0.0, math.sqrt(mu_var), size=shots)
            else:
                p = np.full(shots, step.outcome)
            K = gs.kalman_gain(cov, s.chi, s.update_var)
            means = means + np.outer(p - s.chi * means[:, 0], K) + np.array([0.0, s.omega_kick])
            drift = drift + np.array([0.0, s.omega_kick]) - K * s.chi * drift[0]
            cov = gs.conditional_update(g, s.chi, 0.0, 0.0, s.update_var).cov
        elif isinstance(step, EvolveStep):
            R = gs.rotation_matrix(cfg.evolve_angle(step))
            means, drift, cov = means @ R.T, R @ drift, R @ cov @ R.T
        else:
            out = gs.thermalize(GaussianState(np.zeros(2), cov), step.bath, step.duration)
            T = math.exp(-step.bath.gamma_m * step.duration)
            R = gs.rotation_matrix(step.bath.omega_m * step.duration)
            means = math.sqrt(T) * means @ R.T
            drift = math.sqrt(T) * R @ drift
            cov = np.array(out.cov)
    return means, cov, drift


def readout_session(prep: SequenceConfig, theta_grid, shots: int, read_spec: MeasurementSpec | None = None,
                    rng_seed=None) -> ReadoutCurve:
    """Conditional-variance curve from compensated read-out outcomes.

    Each shot runs the prep sequence with freshly sampled outcomes, evolves by
    theta and records a read-out pulse; the outcome-dependent part of the
    conditional mean is subtracted before the variance is taken.
    """
    if read_spec is None:
        pulses = [s for s in prep.steps if isinstance(s, PulseStep)]
        if not pulses:
            raise ConfigError("prep has no pulse; pass read_spec")
        read_spec = pulses[-1].spec
    thetas = np.atleast_1d(np.asarray(theta_grid, dtype=float))
    rng = np.random.default_rng(rng_seed if rng_seed is not None else prep.master_seed)
    var, pred, err, mean = [], [], [], []
    chi = read_spec.chi
    for theta in thetas:
        means, cov, drift = _vectorized_prep(prep, shots, rng)
        R = gs.rotation_matrix(theta)
        m_theta = means @ R.T
        c_theta = R @ cov @ R.T
        outcomes = chi * m_theta[:, 0] + rng.normal(0.0, math.sqrt(read_spec.record_var + chi**2 * c_theta[0, 0]),
                                                    size=shots)
        known = chi * (m_theta[:, 0] - (R @ drift)[0])
        comp = compensate_outcomes(outcomes, known)
        v = float(np.var(comp, ddof=1))
        var.append(v)
        mean.append(float(np.mean(comp)))
        pred.append(read_spec.record_var + chi**2 * c_theta[0, 0])
        err.append(v * math.sqrt(2.0 / (shots - 1)))
    return ReadoutCurve(thetas, np.array(var), np.array(pred), np.array(err), np.array(mean))


def compensate_outcomes(outcomes, known_means) -> np.ndarray:
    """Outcomes minus their known conditional means."""
    if known_means is None:
        raise MissingMeanError("read-out compensation needs the conditional means of the prep")
    return np.asarray(outcomes, dtype=float) - np.asarray(known_means, dtype=float)


def compensate_records(records) -> np.ndarray:
    return np.array([measurement.compensate(r) for r in records])


def calibrate_omega(chi_known: float | None, omega: float, nbar: float = 0.0, shots: int = 10**6,
                    prep_chi: float | None = None, rng_seed=None, rotation_sign: int = 1) -> float:
    """Estimate the kick from the mean displacement a quarter period after a pulse.

    ``rotation_sign=+1`` reads the displacement with this package's rotation
    convention (kick appears as +omega sin(theta)); ``-1`` applies the opposite
    convention and flips the estimate.
    """
    if chi_known is None or not chi_known > 0:
        raise ValueError("a calibrated chi is required")
    if rotation_sign not in (1, -1):
        raise ValueError("rotation_sign must be +1 or -1")
    chi_p = chi_known if prep_chi is None else prep_chi
    prep = SequenceConfig(InitialState("thermal", nbar=nbar),
                          [PulseStep(MeasurementSpec(chi=chi_p, omega_kick=omega))], "gaussian", 0)
    rng = np.random.default_rng(rng_seed)
    means, cov, drift = _vectorized_prep(prep, shots, rng)
    R = gs.rotation_matrix(math.pi / 2)
    m_theta = means @ R.T
    c_theta = R @ cov @ R.T
    outcomes = chi_known * m_theta[:, 0] + rng.normal(0.0, math.sqrt(0.5 + chi_known**2 * c_theta[0, 0]), size=shots)
    # remove the outcome-dependent part of the conditional mean, keep the kick
    known = chi_known * (m_theta[:, 0] - (R @ drift)[0])
    comp = compensate_outcomes(outcomes, known)
    return rotation_sign * float(np.mean(comp)) / chi_known
