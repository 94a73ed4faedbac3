import math
import warnings

import numpy as np
import pytest

from pulsed_optomech import gaussian as G
from pulsed_optomech import hilbert
from pulsed_optomech import protocol as P
from pulsed_optomech.errors import ConfigError, MissingMeanError
from pulsed_optomech.measurement import MeasurementSpec

OMEGA_M = 2 * math.pi * 5e5


def forced_two_pulse(nbar=10.0, chi=1.5):
    return P.two_pulse_config(nbar, chi, outcomes=(4 * chi, -3 * chi))


def test_forced_outcome_snapshots():
    traj = P.run_sequence(forced_two_pulse())
    assert len(traj.snapshots) == 4
    first = traj.snapshots[1]
    assert abs(first.mean[0] - 3.9171) < 1e-4
    assert abs(first.cov[0, 0] - 0.21762) < 1e-5
    # final state: second pulse conditions the rotated state
    g = G.conditional_update(G.thermal_gaussian(10), 1.5, 0.0, 6.0)
    g = G.conditional_update(G.rotate_gaussian(g, math.pi / 2), 1.5, 0.0, -4.5)
    assert np.allclose(traj.final.mean, g.mean) and np.allclose(traj.final.cov, g.cov)
    assert [r.p_l for r in traj.records] == [6.0, -4.5]
    assert traj.records[1].theta == pytest.approx(math.pi / 2)
    assert traj.records[0].known_mean == 0.0


def test_zero_step_sequence():
    cfg = P.SequenceConfig(P.InitialState("thermal", nbar=3.0))
    traj = P.run_sequence(cfg)
    assert len(traj.snapshots) == 1
    assert np.allclose(traj.final.cov, 3.5 * np.eye(2))
    assert traj.final.n_eff == pytest.approx(3.0)


def test_seeded_sequence_deterministic():
    cfg = P.two_pulse_config(5.0, 1.2, master_seed=4)
    a, b = P.run_sequence(cfg), P.run_sequence(cfg)
    assert [r.p_l for r in a.records] == [r.p_l for r in b.records]


@pytest.mark.parametrize("nbar", [0.0, 2.0, 10.0, 20.0])
def test_dual_representation_agreement(nbar):
    bath = G.BathSpec.from_quality(50.0, 1.0, 3.0)
    steps = [
        P.PulseStep(MeasurementSpec(1.5, omega_kick=0.7)),
        P.EvolveStep(theta=0.9),
        P.PulseStep(MeasurementSpec(1.0)),
        P.ThermalizeStep(0.05, bath),
    ]
    kw = dict(initial=P.InitialState("thermal", nbar=nbar), steps=steps, master_seed=17, omega_m=1.0)
    g = P.run_sequence(P.SequenceConfig(representation="gaussian", **kw))
    f = P.run_sequence(P.SequenceConfig(representation="fock", **kw))
    for a, b in zip(g.snapshots, f.snapshots):
        assert np.allclose(a.mean, b.mean, atol=1e-3)
        assert np.allclose(a.cov, b.cov, atol=1e-3)
    assert np.allclose([r.p_l for r in g.records], [r.p_l for r in f.records], atol=1e-3)


def test_coherent_dual_representation():
    kw = dict(initial=P.InitialState("coherent", alpha=1 + 0.5j),
              steps=[P.PulseStep(MeasurementSpec(2.0)), P.EvolveStep(theta=1.0)], master_seed=3)
    g = P.run_sequence(P.SequenceConfig(representation="gaussian", **kw))
    f = P.run_sequence(P.SequenceConfig(representation="fock", **kw))
    assert np.allclose(g.final.mean, f.final.mean, atol=1e-3)
    assert np.allclose(g.final.cov, f.final.cov, atol=1e-3)


def test_cat_sequence_on_fock_path():
    cfg = P.SequenceConfig(P.InitialState("cat", delta=1.2), [P.PulseStep(MeasurementSpec(1.0), 0.0)],
                           representation="fock")
    traj = P.run_sequence(cfg)
    assert isinstance(traj.final.state, hilbert.FockState)
    with pytest.raises(ConfigError):
        P.SequenceConfig(P.InitialState("cat", delta=1.2), representation="gaussian")


def test_config_validation():
    init = P.InitialState("thermal", nbar=1.0)
    with pytest.raises(ConfigError):
        P.SequenceConfig(init, [P.EvolveStep()])
    with pytest.raises(ConfigError):
        P.SequenceConfig(init, [P.EvolveStep(duration=1.0)])
    with pytest.raises(ConfigError):
        P.SequenceConfig(init, [P.EvolveStep(theta=1.0, duration=1.0)], omega_m=2.0)
    P.SequenceConfig(init, [P.EvolveStep(theta=2.0, duration=1.0)], omega_m=2.0)
    bath = G.BathSpec.from_quality(10.0, 3.0, 1.0)
    with pytest.raises(ConfigError):
        P.SequenceConfig(init, [P.ThermalizeStep(1.0, bath)], omega_m=2.0)
    with pytest.raises(ConfigError):
        P.SequenceConfig(init, representation="other")
    with pytest.raises(ConfigError):
        P.InitialState("squeezed")


def test_config_round_trip():
    doc = {
        "format": "protocol-config v1",
        "initial": {"kind": "thermal", "nbar": 10},
        "omega_m": OMEGA_M,
        "steps": [
            {"pulse": {"chi": 1.5, "outcome": 6.0}},
            {"evolve": {"duration": math.pi / (2 * OMEGA_M)}},
            {"thermalize": {"duration": 1e-9, "bath": {"Q": 1e5, "nbar_bath": 100.0}}},
            {"pulse": {"chi": 1.5}},
        ],
    }
    cfg = P.SequenceConfig.from_dict(doc)
    again = P.SequenceConfig.from_dict(cfg.as_dict())
    assert again.as_dict() == cfg.as_dict()
    assert cfg.evolve_angle(cfg.steps[1]) == pytest.approx(math.pi / 2)


@pytest.mark.parametrize("doc,fragment", [
    ({"initial": {"kind": "thermal"}}, "initial.nbar: missing required field"),
    ({"initial": {"kind": "thermal", "nbar": 1}, "stepz": []}, "stepz: unknown key"),
    ({"initial": {"kind": "thermal", "nbar": 1}, "steps": [{"pulse": {"chii": 1}}]}, "steps[0].pulse.chii"),
    ({"initial": {"kind": "thermal", "nbar": 1}, "steps": [{"pulse": {"chi": "big"}}]}, "steps[0].pulse.chi"),
    ({"initial": {"kind": "thermal", "nbar": 1}, "steps": [{"jump": {}}]}, "steps[0].jump"),
    ({"initial": {"kind": "thermal", "nbar": 1}, "format": "v0"}, "format"),
])
def test_config_errors_name_the_field(doc, fragment):
    with pytest.raises(ConfigError, match=None) as info:
        P.SequenceConfig.from_dict(doc)
    assert fragment in str(info.value)


def test_trajectory_snapshot_count_enforced():
    cfg = P.two_pulse_config(1.0, 1.0)
    with pytest.raises(ValueError):
        P.Trajectory(cfg, (), ())


def test_single_pulse_large_nbar():
    assert abs(P.single_pulse_variance(1e4, 1.5) - 0.2222) < 1e-3


def test_squeezing_threshold():
    for chi in np.linspace(0.2, 3.0, 20):
        v = P.single_pulse_variance(1e6, chi)
        assert (v < 0.5) == (chi > 1)


def test_purification_values():
    _, n_eff = P.purify_two_pulse(1e4, 1.5)
    assert abs(n_eff - G.predicted_neff2(1.5)) < 1e-3
    assert abs(n_eff - 0.047) < 1e-3
    bath = G.BathSpec.from_temperature(1e5, OMEGA_M, 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error", G.RegimeWarning)
        _, hot = P.purify_two_pulse(bath.nbar_bath, 1.5, bath)
    assert abs(hot - 0.15) < 0.05


def test_purification_approaches_large_nbar_limit():
    # the two-pulse result tends to the occupation-free value from below as nbar grows
    vals = [P.purify_two_pulse(n, 1.5)[1] for n in (10, 100, 1000, 1e5)]
    assert np.all(np.diff(vals) > 0)
    assert abs(vals[-1] - G.predicted_neff2(1.5)) < 1e-4


@pytest.mark.parametrize("nbar", [10.0, 1e3])
@pytest.mark.parametrize("chi", [1.2, 1.5, 3.0])
def test_purification_monotone(nbar, chi):
    traj = P.run_sequence(P.two_pulse_config(nbar, chi, master_seed=1))
    assert traj.snapshots[3].n_eff <= traj.snapshots[1].n_eff


def test_bath_gap_degrades_purity():
    base = P.purify_two_pulse(100.0, 1.5)[1]
    prev = None
    for nbar_bath in (1e5, 1e3, 1.0):
        bath = G.BathSpec.from_quality(1e6, OMEGA_M, nbar_bath)
        n = P.purify_two_pulse(100.0, 1.5, bath)[1]
        assert n >= base - 1e-12
        if prev is not None:
            assert n <= prev
        prev = n
    assert abs(prev - base) < 1e-4


def test_purify_requires_positive_chi():
    with pytest.raises(ValueError):
        P.purify_two_pulse(10.0, 0.0)


def test_thermalize_fock_matches_gaussian():
    bath = G.BathSpec(gamma_m=0.2, nbar_bath=1.5, omega_m=3.0)
    g = G.conditional_update(G.thermal_gaussian(1.0), 1.5, 0.5, 0.3)
    rho = hilbert.new_thermal(1.0, 80)
    from pulsed_optomech.measurement import apply_upsilon

    rho = apply_upsilon(rho, MeasurementSpec(1.5, omega_kick=0.5), 0.3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", G.RegimeWarning)
        a = G.thermalize(g, bath, 0.4)
        b = P.thermalize_fock(rho, bath, 0.4)
    mx, mp, cov = hilbert.moments(b)
    assert np.allclose([mx, mp], a.mean, atol=1e-6)
    assert np.allclose(cov, a.cov, atol=1e-6)


def test_readout_curve():
    prep = P.SequenceConfig(P.InitialState("thermal", nbar=10.0), [P.PulseStep(MeasurementSpec(1.5))],
                            master_seed=5)
    curve = P.readout_session(prep, [0.0, math.pi / 2], 100_000)
    assert abs(curve.predicted[0] - 0.98964) < 1e-4
    assert abs(curve.variance[0] - curve.predicted[0]) < 3 * curve.stderr[0]
    assert curve.variance[0] < 1.625
    anti = 0.5 + 1.5**2 * (1.5**2 + 1 + 20) / 2
    assert abs(curve.predicted[1] - anti) < 1e-9
    assert abs(curve.variance[1] - anti) < 3 * curve.stderr[1]


def test_readout_requires_gaussian_prep():
    prep = P.SequenceConfig(P.InitialState("thermal", nbar=1.0), [P.PulseStep(MeasurementSpec(1.0))],
                            representation="fock")
    with pytest.raises(ConfigError):
        P.readout_session(prep, [0.0], 10)


def test_compensation_needs_means():
    with pytest.raises(MissingMeanError):
        P.compensate_outcomes([1.0, 2.0], None)
    traj = P.run_sequence(forced_two_pulse())
    assert np.allclose(P.compensate_records(traj.records), [r.p_l - r.known_mean for r in traj.records])


def test_calibrate_omega():
    est = P.calibrate_omega(1.5, 7300.0, rng_seed=1)
    assert abs(est - 7300.0) / 7300.0 < 0.01
    flipped = P.calibrate_omega(1.5, 7300.0, rng_seed=1, rotation_sign=-1)
    assert flipped == -est
    zero = P.calibrate_omega(1.5, 0.0, shots=10**5, rng_seed=2)
    assert abs(zero) < 4 * math.sqrt(0.5 + 1.5**2 * 0.5 * 3.25) / 1.5 / math.sqrt(1e5)
    with pytest.raises(ValueError):
        P.calibrate_omega(None, 7300.0)
