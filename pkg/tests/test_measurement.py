import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from pulsed_optomech import hilbert
from pulsed_optomech import measurement as M
from pulsed_optomech.errors import GridError, MissingMeanError, TruncationError
from pulsed_optomech.gaussian import conditional_update, thermal_gaussian


def cat_outcome_pdf(delta, chi, p, var=0.5):
    """Closed-form outcome density for the plus_i cat at theta = 0.

    The bare marginal is e^{-x^2}(1 + cos(k x)) up to normalization, with
    k = 2 sqrt(2) delta; convolving with a Gaussian of variance s2 = var/chi^2
    in x multiplies the fringe term by exp(-k^2 s2 / (2 (1 + 2 s2))).
    """
    k = 2 * math.sqrt(2) * delta
    s2 = var / chi**2
    w = 1 + 2 * s2
    x = np.asarray(p) / chi
    env = np.exp(-x * x / w) / math.sqrt(math.pi * w)
    fringe = math.exp(-k * k * s2 / (2 * w)) * np.cos(k * x / w)
    norm = 1 + math.exp(-2 * delta * delta)
    return env * (1 + fringe) / norm / chi


def test_spec_validation():
    with pytest.raises(ValueError):
        M.MeasurementSpec(-1.0)
    with pytest.raises(ValueError):
        M.MeasurementSpec(1.0, var_pl_in=0.0)
    with pytest.raises(ValueError):
        M.MeasurementSpec(1.0, noise_mode="other")
    with pytest.raises(ValueError):
        M.MeasurementSpec(1.0).with_efficiency(1.5)
    assert M.MeasurementSpec(2.0).with_efficiency(0.25).chi == pytest.approx(1.0)


def test_zero_strength_leaves_state_unchanged():
    s = hilbert.new_cat(1.2, "plus_i", 40)
    out = M.apply_upsilon(s, M.MeasurementSpec(0.0), 0.7)
    assert np.max(np.abs(out.matrix - s.matrix)) < 1e-10


def test_vacuum_conditioning_squeezes():
    out = M.apply_upsilon(hilbert.new_thermal(0.0, 60), M.MeasurementSpec(1.5), 0.0)
    mx, mp, cov = hilbert.moments(out)
    assert abs(cov[0, 0] - 0.5 / 3.25) < 1e-3
    assert abs(np.linalg.det(cov) - 0.25) < 1e-6
    assert abs(out.purity() - 1.0) < 1e-8


def test_thermal_conditioning_matches_gaussian():
    out = M.apply_upsilon(hilbert.new_thermal(10.0, 300), M.MeasurementSpec(1.5), 6.0)
    mx, mp, cov = hilbert.moments(out)
    g = conditional_update(thermal_gaussian(10.0), 1.5, 0.0, 6.0)
    assert np.allclose([mx, mp], g.mean, atol=1e-3)
    assert np.allclose(cov, g.cov, atol=1e-3)


def test_squeezed_output_needs_headroom():
    with pytest.raises(TruncationError):
        M.apply_upsilon(hilbert.new_thermal(0.0, 12), M.MeasurementSpec(6.0), 8.0)


def test_apply_upsilon_preserves_validity():
    s = hilbert.new_cat(1.0, "real", 60)
    out = M.apply_upsilon(s, M.MeasurementSpec(1.2, omega_kick=0.8), 0.9)
    assert abs(out.trace() - 1) < 1e-12
    assert np.allclose(out.matrix, out.matrix.conj().T)
    assert np.linalg.eigvalsh(out.matrix)[0] > -1e-10


def test_vacuum_outcome_pdf():
    s = hilbert.new_thermal(0.0, 20)
    spec = M.MeasurementSpec(1.5)
    p = np.linspace(-10, 10, 2001)
    pdf = M.outcome_pdf(s, spec, p)
    assert np.max(np.abs(pdf - stats.norm.pdf(p, 0, math.sqrt(1.625)))) < 1e-10


def test_cat_outcome_pdf_against_closed_form():
    s = hilbert.new_cat(1.5, "plus_i", 40)
    p = np.linspace(-12, 12, 1201)
    pdf = M.outcome_pdf(s, M.MeasurementSpec(2.0), p)
    assert np.max(np.abs(pdf - cat_outcome_pdf(1.5, 2.0, p))) < 1e-6
    # the closed form carries the fringe suppression factor explicitly
    assert abs(math.exp(-2 * 1.5**2 / (2.0**2 + 1)) - 0.4066) < 1e-4


def test_outcome_pdf_trace_form_equals_convolution():
    s = hilbert.new_cat(1.2, "plus_i", 30)
    spec = M.MeasurementSpec(1.3)
    p = np.linspace(-6, 6, 41)
    for theta in (0.0, 0.9):
        conv = M.outcome_pdf(s, spec, p, theta, check=False)
        trace = M.outcome_pdf_trace(s, spec, p, theta)
        assert np.max(np.abs(conv - trace)) < 1e-6


def test_outcome_pdf_grid_too_narrow():
    with pytest.raises(GridError):
        M.outcome_pdf(hilbert.new_thermal(0.0, 10), M.MeasurementSpec(1.5), np.linspace(-1, 1, 101))


def test_projective_limit():
    s = hilbert.new_cat(1.5, "plus_i", 40)
    chi = 50.0
    x = np.linspace(-5, 5, 1001)
    pdf = M.outcome_pdf(s, M.MeasurementSpec(chi), chi * x, check=False)
    marg = hilbert.marginal(s, 0.0, x).values
    assert np.max(np.abs(chi * pdf - marg)) < 0.01


def test_povm_completeness():
    dim = 15
    spec = M.MeasurementSpec(1.5)
    p = np.linspace(-25, 25, 1001)
    total = sum(M.povm_element(dim, spec, pp) for pp in p) * (p[1] - p[0])
    assert np.max(np.abs(total - np.eye(dim))) < 1e-4


@pytest.mark.parametrize("state", [
    hilbert.new_thermal(2.0, 80),
    hilbert.new_cat(1.3, "plus_i", 80),
    hilbert.new_coherent(0.5 + 1j, 80),
])
@pytest.mark.parametrize("p_l", [-2.0, 0.3, 2.5])
def test_kick_does_not_change_x_statistics(state, p_l):
    a = M.apply_upsilon(state, M.MeasurementSpec(1.5, omega_kick=0.0), p_l)
    b = M.apply_upsilon(state, M.MeasurementSpec(1.5, omega_kick=2.0), p_l)
    # equal up to truncation: the kick moves population toward n_max
    x = np.linspace(-9, 9, 301)
    assert np.max(np.abs(hilbert.marginal(a, 0.0, x).values - hilbert.marginal(b, 0.0, x).values)) < 1e-5
    ma, pa, ca = hilbert.moments(a)
    mb, pb, cb = hilbert.moments(b)
    assert abs(ma - mb) < 1e-6 and abs(ca[0, 0] - cb[0, 0]) < 1e-6
    assert abs(pb - pa - 2.0) < 1e-3


@given(st.floats(-4, 4), st.floats(0.3, 2.5))
def test_measurement_never_broadens_position(p_l, chi):
    s = hilbert.new_cat(1.1, "real", 70)
    var_in = hilbert.moments(s)[2][0, 0]
    out = M.apply_upsilon(s, M.MeasurementSpec(chi), p_l)
    assert hilbert.moments(out)[2][0, 0] <= var_in + 1e-9


def test_extra_noise_only_affects_record_by_default():
    s = hilbert.new_thermal(1.0, 60)
    a = M.apply_upsilon(s, M.MeasurementSpec(1.5), 0.4)
    b = M.apply_upsilon(s, M.MeasurementSpec(1.5, extra_noise_var=0.3), 0.4)
    assert np.allclose(a.matrix, b.matrix)
    mu, var = M.outcome_moments(s, M.MeasurementSpec(1.5, extra_noise_var=0.3))
    assert abs(var - (0.8 + 2.25 * 1.5)) < 1e-8
    c = M.apply_upsilon(s, M.MeasurementSpec(1.5, extra_noise_var=0.3, noise_mode="subsume"), 0.4)
    assert hilbert.moments(c)[2][0, 0] > hilbert.moments(a)[2][0, 0]


def test_sample_vacuum_variance():
    draws = M.sample_outcome_fock(hilbert.new_thermal(0.0, 20), M.MeasurementSpec(1.5), rng_seed=1, size=100_000)
    assert abs(draws.var() - 1.625) < 0.03


def test_sample_zero_strength():
    draws = M.sample_outcome_fock(hilbert.new_cat(1.0, "real", 30), M.MeasurementSpec(0.0), rng_seed=2, size=50_000)
    assert stats.kstest(draws, "norm", args=(0, math.sqrt(0.5))).pvalue > 0.01


def test_sample_deterministic():
    s = hilbert.new_thermal(1.0, 40)
    spec = M.MeasurementSpec(1.0)
    assert np.array_equal(M.sample_outcome_fock(s, spec, 5, 20), M.sample_outcome_fock(s, spec, 5, 20))
    assert isinstance(M.sample_outcome_fock(s, spec, 5), float)


def test_cat_samples_chi_square():
    s = hilbert.new_cat(1.5, "plus_i", 40)
    spec = M.MeasurementSpec(2.0)
    draws = M.sample_outcome_fock(s, spec, rng_seed=11, size=100_000)
    edges = np.linspace(-8, 8, 61)
    counts, _ = np.histogram(draws, edges)
    fine = np.linspace(-8, 8, 6001)
    cdf = np.concatenate([[0], np.cumsum(0.5 * np.diff(fine) * (lambda f: f[1:] + f[:-1])(cat_outcome_pdf(1.5, 2.0, fine)))])
    expected = np.diff(np.interp(edges, fine, cdf)) * draws.size
    keep = expected > 5
    chi2 = np.sum((counts[keep] - expected[keep]) ** 2 / expected[keep])
    assert stats.chi2.sf(chi2, keep.sum() - 1) > 0.01


def test_outcome_quantile_inverts_cdf():
    s = hilbert.new_thermal(0.0, 20)
    spec = M.MeasurementSpec(1.5)
    u = np.array([0.01, 0.3, 0.5, 0.9])
    q = M.outcome_quantile(s, spec, u)
    assert np.allclose(q, stats.norm.ppf(u, 0, math.sqrt(1.625)), atol=1e-4)


def test_compensate():
    spec = M.MeasurementSpec(1.5)
    assert M.compensate(M.MeasurementRecord(3.0, 0.0, spec, known_mean=3.0)) == 0.0
    with pytest.raises(MissingMeanError):
        M.compensate(M.MeasurementRecord(3.0, 0.0, spec))
