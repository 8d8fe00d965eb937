import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsqmd import dsp
from dsqmd.dsp import NoiseShaper, SignalBuffer, SpectrumTarget


def bandlimited_periodic(n, lam, rng):
    """Random real periodic sequence with no energy at or above pi/lam."""
    spec = np.zeros(n // 2 + 1, dtype=complex)
    keep = int(n / (2 * lam)) - 1
    spec[1:keep] = rng.standard_normal(keep - 1) + 1j * rng.standard_normal(keep - 1)
    return np.fft.irfft(spec, n)


# --- SignalBuffer -------------------------------------------------------------

def test_signal_buffer_guard_invariants():
    b = SignalBuffer(np.arange(10.0), guard=2)
    assert np.array_equal(b.interior, np.arange(2.0, 8.0))
    with pytest.raises(ValueError):
        SignalBuffer(np.arange(4.0), guard=2)
    with pytest.raises(ValueError):
        SignalBuffer(np.arange(4.0), guard=-1)


# --- upsample -------------------------------------------------------------------

def test_upsample_identity():
    x = np.random.default_rng(0).standard_normal(100)
    assert np.array_equal(dsp.upsample(x, 1).samples, x)


def test_upsample_constant():
    a = dsp.upsample(np.full(2000, 1.7), 3)
    assert len(a) == 6000 and a.rate_factor == 3
    assert np.max(np.abs(a.samples - 1.7)) < 1e-12


def test_upsample_impulse_matches_sinc_kernel():
    n, lam = 1 << 16, 3
    x = np.zeros(n)
    x[n // 2] = 1.0
    a = dsp.upsample(x, lam).samples
    k = np.arange(-256 * lam, 256 * lam + 1)
    # periodic kernel differs from the infinite sinc by O(k / n**2)
    assert np.max(np.abs(a[lam * (n // 2) + k] - np.sinc(k / lam))) <= 1e-6


def test_upsample_sinusoid_interpolates():
    n, lam = 2000, 3
    w0 = 0.3 * np.pi
    x = np.cos(w0 * np.arange(n))
    a = dsp.upsample(x, lam).samples
    expect = np.cos(w0 * np.arange(lam * n) / lam)
    assert np.max(np.abs(a - expect)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2 ** 31))
def test_upsample_then_decimate_recovers_input(lam, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(512)
    a = dsp.upsample(x, lam)
    assert np.max(np.abs(dsp.decimate(a, lam, 0) - x)) < 1e-9


# --- fractional delay -------------------------------------------------------------

def test_fractional_delay_zero_is_identity():
    x = np.random.default_rng(1).standard_normal(64)
    assert np.array_equal(dsp.fractional_delay(x, 0.0).samples, x)


@pytest.mark.parametrize("tau", [0.25, 1 / 3, 0.5, 0.9])
def test_fractional_delay_sinusoid(tau):
    # 0.3*pi completes 3 cycles every 20 samples; N = 2000 keeps it periodic
    n = 2000
    w0 = 0.3 * np.pi
    t = np.arange(n)
    y = dsp.fractional_delay(np.cos(w0 * t), tau).samples
    g = 512
    assert np.max(np.abs(y - np.cos(w0 * (t - tau)))[g:n - g]) < 1e-6


def test_fractional_delay_matches_sinc_sum_on_periodic_input():
    rng = np.random.default_rng(2)
    n, tau = 256, 0.3
    s = bandlimited_periodic(n, 1.2, rng)
    y = dsp.fractional_delay(s, tau).samples
    # sinc sum over many periods of the periodic extension
    ext = np.tile(s, 81)
    k = np.arange(ext.size) - 40 * n
    direct = np.array([np.sum(ext * np.sinc(m - k - tau)) for m in range(0, n, 17)])
    assert np.max(np.abs(y[::17] - direct)) < 2e-3


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.999), st.integers(0, 2 ** 31))
def test_fractional_delay_composes_to_integer_shift(tau, seed):
    s = bandlimited_periodic(1024, 1.0, np.random.default_rng(seed))
    y = dsp.fractional_delay(dsp.fractional_delay(s, tau), 1.0 - tau).samples
    assert np.max(np.abs(y - np.roll(s, 1))) < 1e-9
    back = dsp.fractional_delay(dsp.fractional_delay(s, tau), -tau).samples
    assert np.max(np.abs(back - s)) < 1e-9


# --- targets and filters ---------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.floats(1.0, 8.0), st.integers(2, 6))
def test_spectrum_target_logmean_is_zero(delta, lam):
    t = SpectrumTarget(delta, lam)
    assert abs(t.logmean()) < 1e-12
    w = np.linspace(-np.pi, np.pi, 7, endpoint=False) + 1e-3
    vals = t(w)
    assert set(np.round(vals, 12)) <= {round(delta ** (1 - lam), 12), round(delta, 12)}


def test_identity_filter_for_white_target():
    f = dsp.design_noise_shaper(1.0, 3, 16)
    assert np.array_equal(f.coefficients, np.r_[1.0, np.zeros(16)])
    assert dsp.spectrum_error(f) == (0.0, 0.0, 0.0)


@pytest.mark.parametrize("p", [16, 64, 256])
def test_shaper_is_monic_min_phase(p):
    f = dsp.design_noise_shaper(2.0, 3, p)
    assert f.coefficients[0] == 1.0
    assert f.order == p and f.feedback_taps.size == p
    assert f.is_minimum_phase()
    assert abs(f.report["logmean"]) <= 0.05


def test_shaper_logmean_at_p64():
    f = dsp.design_noise_shaper(2.0, 3, 64)
    assert abs(dsp.spectrum_error(f)[2]) <= 0.02


def test_band_means_converge():
    errs = []
    for p in (32, 64, 128, 256):
        lo, hi = dsp.band_means(dsp.design_noise_shaper(2.0, 3, p))
        e = (abs(lo / 0.25 - 1), abs(hi / 2.0 - 1))
        assert max(e) < 0.15
        errs.append(e)
    assert all(b[0] < a[0] and b[1] < a[1] for a, b in zip(errs, errs[1:]))


def test_spectrum_errors_decrease_with_order():
    errs = [dsp.spectrum_error(dsp.design_noise_shaper(2.0, 3, p))[:2] for p in (16, 64, 256)]
    assert all(b[0] < a[0] and b[1] < a[1] for a, b in zip(errs, errs[1:]))


def test_inband_power_fraction():
    f = dsp.design_noise_shaper(2.0, 3, 256)
    expect = 0.25 / (0.25 + 2 * 2.0)
    assert dsp.inband_power_fraction(f) == pytest.approx(expect, rel=0.05)


def test_parseval_filtered_noise_variance():
    f = dsp.design_noise_shaper(2.0, 3, 64)
    rng = np.random.default_rng(3)
    s2 = 0.12
    e = rng.uniform(-0.5, 0.5, 10 ** 6) * np.sqrt(12 * s2)
    y = np.convolve(e, f.coefficients)[f.order:e.size]
    assert y.var() == pytest.approx(s2 * f.response().mean(), rel=0.01)


def test_maximum_phase_mirror_keeps_magnitude():
    f = dsp.design_noise_shaper(2.0, 3, 64)
    g = dsp.maximum_phase_mirror(f)
    r1 = np.abs(np.fft.fft(f.coefficients, 4096))
    r2 = np.abs(np.fft.fft(g, 4096))
    assert np.max(np.abs(r1 - r2)) < 1e-10
    assert not NoiseShaper(g / g[0], 2.0, 3).is_minimum_phase()


def test_design_rejects_bad_arguments():
    with pytest.raises(ValueError):
        dsp.design_noise_shaper(0.5, 3, 16)
    with pytest.raises(ValueError):
        dsp.design_noise_shaper(2.0, 3, 0)
