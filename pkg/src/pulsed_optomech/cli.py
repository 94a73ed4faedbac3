"""Command-line front end.

    pulsed-optomech pulse      --config pulse.yaml --out runs/pulse
    pulsed-optomech tomography --config cat.yaml   --out runs/cat --seed 7
    pulsed-optomech purify     --config purify.json --out runs/purify

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
Environment: ``PULSED_OPTOMECH_SEED`` and ``PULSED_OPTOMECH_THREADS`` stand in
for the flags; ``PULSED_OPTOMECH_<KEY>[__<SUBKEY>...]`` overrides config values.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import math
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, formats, hilbert, protocol, pulse_dynamics as pd, tomography as tomo
from .config import ENV_PREFIX, apply_env_overrides, check_keys, get_float, get_int, get_str, load_document
from .errors import ConfigError, OptomechError
from .hilbert import Marginal

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
MANIFEST_NAME = "manifest.json"
PULSE_VERSION = "pulse-config v1"
TOMOGRAPHY_VERSION = "tomography-config v1"
PURIFY_VERSION = "purify-config v1"
SHAPES = ("optimal", "gaussian", "square", "one_sided_exp")


class _Outputs:
    """Collects files written by a command so the manifest can list them."""

    def __init__(self, root: Path):
        self.root = root
        self.files = {}

    def text(self, name: str, data: str):
        path = self.root / name
        formats.atomic_write(path, data)
        self.files[name] = hashlib.sha256(data.encode()).hexdigest()

    def json(self, name: str, obj):
        self.text(name, formats.dumps_json(obj))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _csv_table(names, columns, header=()) -> str:
    lines = [f"# {h}" for h in header]
    lines.append(",".join(names))
    for row in zip(*columns):
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# pulse


def _physical(node, path) -> pd.PhysicalParams:
    if node in (None, "microcavity"):
        return pd.PhysicalParams.microcavity()
    if isinstance(node, str):
        raise ConfigError(f"{path}: unknown preset {node!r}")
    check_keys(node, {"wavelength", "cavity_length", "cavity_length_wavelengths", "mass", "omega_m", "finesse"},
               path, required=("wavelength", "mass", "omega_m", "finesse"))
    lam = get_float(node, "wavelength", path, positive=True)
    if "cavity_length" in node:
        length = get_float(node, "cavity_length", path, positive=True)
    else:
        length = lam * get_float(node, "cavity_length_wavelengths", path, required=True, positive=True)
    return pd.PhysicalParams(lam, length, get_float(node, "mass", path, positive=True),
                             get_float(node, "omega_m", path, positive=True),
                             get_float(node, "finesse", path, positive=True))


def _envelope(shape, kappa, t, rms):
    if shape == "optimal":
        return pd.optimal_drive(kappa, t)
    fn = {"gaussian": pd.gaussian_drive, "square": pd.square_drive, "one_sided_exp": pd.one_sided_exp_drive}[shape]
    return fn(t, rms)


def cmd_pulse(doc: dict, out: _Outputs, seed) -> dict:
    check_keys(doc, {"format", "physical", "n_photons", "eta", "shape", "rms_kappa", "time_grid",
                     "compare_shapes", "finite_evolution"}, "")
    _check_format(doc, PULSE_VERSION)
    phys = _physical(doc.get("physical"), "physical")
    n_photons = get_float(doc, "n_photons", "", 1e8, positive=True)
    eta = get_float(doc, "eta", "", 1.0, positive=True)
    shape = get_str(doc, "shape", "", "optimal", SHAPES)
    grid = doc.get("time_grid", {}) or {}
    check_keys(grid, {"span", "points"}, "time_grid")
    span = get_float(grid, "span", "time_grid", pd.DEFAULT_SPAN, positive=True)
    points = get_int(grid, "points", "time_grid", pd.DEFAULT_POINTS, minimum=3)
    x0, g0, kappa = pd.derive_physical(phys)
    t = pd.default_time_grid(kappa, span, points)
    rms = get_float(doc, "rms_kappa", "", 1.0 / math.sqrt(2.0), positive=True) / kappa
    try:
        pulse = pd.PulseSpec.from_envelope(kappa, g0, n_photons, t, _envelope(shape, kappa, t, rms), eta, shape)
    except ValueError as exc:
        raise ConfigError(f"eta: {exc}") from exc
    resp = pd.compute_response(pulse)
    scale = 1.0 / math.sqrt(kappa)
    out.text("envelopes.csv", _csv_table(
        ["t_kappa", "t_seconds", "alpha_in", "alpha", "alpha_lo"],
        [t * kappa, t, pulse.drive_envelope * scale, resp.alpha * scale, resp.lo_envelope * scale],
        ["pulse-envelopes v1", "amplitudes scaled by 1/sqrt(kappa)", f"shape={shape}"]))
    summary = {
        "format": "pulse-summary v1",
        "shape": shape,
        "x0_m": x0,
        "g0_rad_s": g0,
        "g0_over_2pi_hz": g0 / (2 * math.pi),
        "kappa_rad_s": kappa,
        "kappa_over_2pi_hz": kappa / (2 * math.pi),
        "omega_m_over_kappa": phys.omega_m / kappa,
        "n_photons": n_photons,
        "eta": eta,
        "chi": resp.chi,
        "chi_ideal": resp.chi_ideal,
        "chi_closed_form": pd.optimal_chi(g0, kappa, n_photons) * math.sqrt(eta),
        "omega_kick": resp.omega_kick,
        "phi_norm2": resp.phi_norm2,
        "intensity_rms_s": pd.intensity_rms(t, pulse.drive_envelope),
    }
    if doc.get("compare_shapes", False):
        table = {}
        for s in SHAPES:
            p = pd.PulseSpec.from_envelope(kappa, g0, n_photons, t, _envelope(s, kappa, t, rms), eta, s)
            table[s] = pd.compute_response(p).chi
        summary["chi_by_shape"] = table
    if doc.get("finite_evolution", False):
        c = pd.finite_evolution_coeffs(pd.PulseSpec.optimal(kappa, g0, n_photons, eta, t), phys.omega_m)
        summary["finite_evolution"] = {"xi": list(c.xi), "norms": list(c.norms), "zeta": c.zeta,
                                       "omega_m_over_kappa": c.omega_m_over_kappa}
    out.json("summary.json", summary)
    return {"master_seed": seed}


# ---------------------------------------------------------------------------
# tomography


def _initial(node, path) -> protocol.InitialState:
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: expected a mapping")
    if node.get("kind") == "vacuum":
        check_keys(node, {"kind"}, path)
        return protocol.InitialState("thermal", nbar=0.0)
    return protocol.parse_initial(node, path)


def cmd_tomography(doc: dict, out: _Outputs, seed) -> dict:
    check_keys(doc, {"format", "state", "n_max", "measurement", "angles", "grid", "mode", "shots", "bins",
                     "regularization", "apodization", "kernel_shots", "master_seed"}, "",
               required=("state", "measurement"))
    _check_format(doc, TOMOGRAPHY_VERSION)
    init = _initial(doc["state"], "state")
    spec = protocol.parse_spec(doc["measurement"], "measurement")
    n_angles = get_int(doc, "angles", "", 24, minimum=tomo.MIN_ANGLES)
    grid = doc.get("grid", {}) or {}
    check_keys(grid, {"half_width", "points"}, "grid")
    half = get_float(grid, "half_width", "grid", 9.0, positive=True)
    npts = get_int(grid, "points", "grid", 201, minimum=11)
    mode = get_str(doc, "mode", "", "exact", ("exact", "sampled"))
    shots = get_int(doc, "shots", "", 100000, minimum=2)
    bins = get_int(doc, "bins", "", tomo.DEFAULT_BINS, minimum=3)
    reg = get_float(doc, "regularization", "", 1e-4, minimum=0.0)
    apod = get_float(doc, "apodization", "", 1.0, positive=True)
    kernel_shots = get_int(doc, "kernel_shots", "", 100000, minimum=2)
    master_seed = seed if seed is not None else get_int(doc, "master_seed", "", 0, minimum=0)
    n_max = get_int(doc, "n_max", "", None, minimum=1)
    if n_max is None:
        n_max = init.default_n_max() - protocol.MEASUREMENT_MARGIN
    state = init.fock(n_max)

    angles = np.arange(n_angles) * math.pi / n_angles
    x = np.linspace(-half, half, npts)
    p_grid = spec.chi * x
    rng_tomo, rng_kernel = np.random.SeedSequence(master_seed).spawn(2)
    if mode == "exact":
        p_grid, densities = tomo.exact_outcome_densities(state, spec, angles, x)
        kernel = tomo.Kernel.gaussian(spec.chi, spec.record_var)
        out.text("outcome_densities.csv", _csv_table(
            ["p_l"] + [f"theta_{i:02d}" for i in range(n_angles)], [p_grid, *densities],
            ["outcome-densities v1", "angles=" + " ".join(repr(float(a)) for a in angles)]))
    else:
        data = tomo.acquire(state, spec, angles, shots, rng_tomo, bins)
        formats.save_tomogram(out.root / "tomogram.json", data)
        out.files["tomogram.json"] = _sha(out.root / "tomogram.json")
        kernel = tomo.calibrate_kernel(spec, kernel_shots, np.random.default_rng(rng_kernel)).as_gaussian()
        densities = [np.interp(p_grid, h.centers, h.density(), left=0.0, right=0.0) for h in data.histograms]
    marginals = [tomo.deconvolve(p_grid, d, kernel, reg, spec.chi, float(a)) for d, a in zip(densities, angles)]
    marginals = [Marginal(m.theta, x, m.values) for m in marginals]
    for i, m in enumerate(marginals):
        out.text(f"marginals/theta_{i:02d}.csv", formats.marginal_csv(m))
    w, est = tomo.reconstruct(marginals, angles, x, x, n_max=n_max, apodization=apod)
    out.text("wigner.csv", formats.wigner_csv(w))
    mx, mp, cov = hilbert.moments(est)
    report = {
        "format": "tomography-report v1",
        "mode": mode,
        "fidelity": hilbert.fidelity(est, state),
        "wigner_min": float(w.values.min()),
        "wigner_integral": w.integral(),
        "reconstructed_mean": [mx, mp],
        "reconstructed_cov": cov.tolist(),
        "reconstructed_var_x": float(cov[0, 0]),
        "reconstructed_var_p": float(cov[1, 1]),
        "n_max": n_max,
        "angles": n_angles,
        "regularization": reg,
    }
    if init.kind == "cat":
        true0 = hilbert.marginal(state, 0.0, x, check=False)
        try:
            v0 = tomo.fringe_visibility(true0)
            vc = tomo.fringe_visibility(Marginal(0.0, x, densities[0] * spec.chi))
            vd = tomo.fringe_visibility(marginals[0])
            report["fringe_visibility"] = {"true": v0, "convolved": vc, "deconvolved": vd,
                                           "suppression": vc / v0,
                                           "predicted_suppression": tomo.cat_fringe_suppression(init.delta, spec.chi)}
        except OptomechError as exc:
            report["fringe_visibility"] = {"error": str(exc)}
    out.json("report.json", report)
    return {"master_seed": master_seed}


def _sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# purify


def _purify_config(doc: dict, seed) -> protocol.SequenceConfig:
    check_keys(doc, {"format", "nbar", "chi", "omega_kick", "bath", "outcomes", "master_seed"}, "",
               required=("nbar", "chi"))
    nbar = get_float(doc, "nbar", "", minimum=0.0)
    chi = get_float(doc, "chi", "", positive=True)
    omega = get_float(doc, "omega_kick", "", 0.0)
    bath = None
    if doc.get("bath") is not None:
        bath = protocol.parse_bath(doc["bath"], "bath")
    outcomes = doc.get("outcomes", [None, None])
    if not isinstance(outcomes, list) or len(outcomes) != 2:
        raise ConfigError("outcomes: expected a list of two values (number or null)")
    for i, v in enumerate(outcomes):
        if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
            raise ConfigError(f"outcomes[{i}]: expected a number or null")
    master_seed = seed if seed is not None else get_int(doc, "master_seed", "", 0, minimum=0)
    return protocol.two_pulse_config(nbar, chi, bath, omega, tuple(outcomes), master_seed)


def cmd_purify(doc: dict, out: _Outputs, seed) -> dict:
    fmt = doc.get("format", PURIFY_VERSION)
    if fmt == protocol.CONFIG_VERSION:
        cfg = protocol.SequenceConfig.from_dict(doc)
        if seed is not None:
            cfg = protocol.SequenceConfig(cfg.initial, cfg.steps, cfg.representation, seed, cfg.omega_m, cfg.n_max)
    elif fmt == PURIFY_VERSION:
        cfg = _purify_config(doc, seed)
    else:
        raise ConfigError(f"format: expected {PURIFY_VERSION!r} or {protocol.CONFIG_VERSION!r}")
    traj = protocol.run_sequence(cfg)
    out.json("trajectory.json", traj.as_dict())
    snaps = traj.snapshots
    out.text("neff.csv", _csv_table(
        ["step", "mean_x", "mean_p", "var_x", "var_p", "cov_xp", "n_eff"],
        [np.arange(len(snaps)), [s.mean[0] for s in snaps], [s.mean[1] for s in snaps],
         [s.cov[0, 0] for s in snaps], [s.cov[1, 1] for s in snaps], [s.cov[0, 1] for s in snaps],
         [s.n_eff for s in snaps]],
        ["neff-table v1", "steps: " + "; ".join(s.label for s in snaps)]))
    out.json("summary.json", {"format": "purify-summary v1", "final_n_eff": traj.final.n_eff,
                              "final_var_x": float(traj.final.cov[0, 0]),
                              "final_var_p": float(traj.final.cov[1, 1]),
                              "outcomes": [r.p_l for r in traj.records]})
    return {"master_seed": cfg.master_seed}


COMMANDS = {"pulse": cmd_pulse, "tomography": cmd_tomography, "purify": cmd_purify}


def _check_format(doc, expected):
    fmt = doc.get("format", expected)
    if fmt != expected:
        raise ConfigError(f"format: expected {expected!r}, got {fmt!r}")


# ---------------------------------------------------------------------------
# entry point


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
            else _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0))
    return when.isoformat()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pulsed-optomech", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON or YAML config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--threads", type=int, default=None, help="limit for BLAS thread pools")
    return parser


def _env_int(name):
    val = os.environ.get(ENV_PREFIX + name)
    if val is None:
        return None
    try:
        return int(val)
    except ValueError:
        raise ConfigError(f"environment {ENV_PREFIX + name}: expected an integer") from None


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        seed = args.seed if args.seed is not None else _env_int("SEED")
        threads = args.threads if args.threads is not None else _env_int("THREADS")
        if seed is not None and seed < 0:
            raise ConfigError("seed must be non-negative")
        if threads is not None and threads < 1:
            raise ConfigError("threads must be >= 1")
        doc = apply_env_overrides(load_document(args.config))
        out = _Outputs(Path(args.out))
        with threadpool_limits(limits=threads):
            info = COMMANDS[args.command](doc, out, seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OptomechError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    manifest = {
        "format": "run-manifest v1",
        "command": args.command,
        "config_path": str(Path(args.config)),
        "config_sha256": _sha(args.config),
        "master_seed": info.get("master_seed"),
        "output_dir": str(Path(args.out)),
        "tool_version": __version__,
        "timestamp": _timestamp(),
        "outputs": dict(sorted(out.files.items())),
    }
    formats.write_json(Path(args.out) / MANIFEST_NAME, manifest)
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
