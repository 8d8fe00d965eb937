import io
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsqmd import codec, dsp, theory
from dsqmd.codec import CodecError, Description, DescriptionSet, SchemeParams


def run(params, n, trial=0, keep_taps=False):
    x = codec.source_sequence(params.seed, trial, n, params.sigma_x2)
    return x, codec.encode(x, params, trial=trial, keep_taps=keep_taps)


def phase_corrected_noise(eps, L):
    return {i: dsp.fractional_delay(eps[i::L], i / L).samples for i in range(L)}


NYQ = SchemeParams(L=3, K=2, lam=3, delta=2.0, sigma_E2=0.12, filter_order=256, seed=11)
SUB = SchemeParams(L=4, K=2, lam=2, delta=2.0, sigma_E2=0.12, filter_order=256, seed=5)


# --- params and sets ---------------------------------------------------------------

def test_scheme_params_validation():
    assert NYQ.step == pytest.approx(math.sqrt(1.44))
    assert NYQ.nyquist and not SUB.nyquist
    for bad in (dict(lam=3), dict(sigma_E2=0.0), dict(delta=0.5), dict(K=5)):
        kw = dict(L=4, K=2, lam=2, delta=2.0, sigma_E2=0.1)
        kw.update(bad)
        with pytest.raises(CodecError):
            SchemeParams(**kw)


def test_description_set_classification():
    assert DescriptionSet((0, 2), 4).uniform
    assert DescriptionSet((1, 3), 4).uniform
    assert not DescriptionSet((0, 1), 4).uniform
    assert not DescriptionSet((0, 1, 2), 4).uniform
    assert DescriptionSet((3, 1, 0, 2), 4).label() == "{0,1,2,3}"
    assert DescriptionSet((1,), 4).classification == "uniform"
    with pytest.raises(CodecError):
        DescriptionSet((), 4)
    with pytest.raises(CodecError):
        DescriptionSet((4,), 4)


def test_enumerate_subsets_lexicographic():
    subs = codec.enumerate_subsets(3)
    assert [s.members for s in subs] == [(0,), (1,), (2,), (0, 1), (0, 2), (1, 2), (0, 1, 2)]
    uni = codec.enumerate_subsets(4, "uniform_only")
    assert [s.members for s in uni] == [(0,), (1,), (2,), (3,), (0, 2), (1, 3), (0, 1, 2, 3)]
    with pytest.raises(CodecError):
        codec.enumerate_subsets(3, "most")


# --- quantizer -------------------------------------------------------------------

def test_ecdq_step_examples():
    q, e = codec.ecdq_step(0.3, 0.4, 1.0)
    assert q == 1 and e == pytest.approx(0.3)
    assert codec.ecdq_step(0.0, 0.0, 1.0) == (0, 0.0)


def test_ecdq_ties_round_away_from_zero():
    assert codec.ecdq_step(0.5, 0.0, 1.0)[0] == 1
    assert codec.ecdq_step(-0.5, 0.0, 1.0)[0] == -1


@settings(max_examples=300, deadline=None)
@given(st.floats(-50, 50), st.floats(-0.5, 0.5), st.floats(0.01, 4.0))
def test_ecdq_subtractive_identity(v, zf, step):
    z = zf * step
    q, e = codec.ecdq_step(v, z, step)
    assert q * step - z == pytest.approx(v + e, abs=1e-9 * max(1.0, abs(v)))
    assert -step / 2 - 1e-12 <= e <= step / 2 + 1e-12


def test_ecdq_error_uniform_and_uncorrelated():
    rng = np.random.default_rng(0)
    n, step = 10 ** 6, 0.7
    v = rng.standard_normal(n)
    z = codec.dither_sequence(1, 0, n, step)
    u = v + z
    q = np.sign(u) * np.floor(np.abs(u) / step + 0.5)
    e = q * step - u
    assert abs(np.corrcoef(e, v)[0, 1]) < 0.005
    hist = np.histogram(e, bins=20, range=(-step / 2, step / 2))[0]
    assert np.max(np.abs(hist / (n / 20) - 1)) < 0.03
    assert e.var() == pytest.approx(step ** 2 / 12, rel=0.01)


def test_dither_range_and_reproducibility():
    z = codec.dither_sequence(3, 1, 10 ** 5, 2.0)
    assert z.min() > -1.0 and z.max() <= 1.0
    assert np.array_equal(z, codec.dither_sequence(3, 1, 10 ** 5, 2.0))
    assert not np.array_equal(z, codec.dither_sequence(3, 2, 10 ** 5, 2.0))


# --- encoder ---------------------------------------------------------------------

def test_encoder_subtractive_identity_and_polyphase():
    x, enc = run(NYQ, 1 << 14, keep_taps=True)
    t = enc.taps
    c = enc.shaper.coefficients
    filtered = np.convolve(t["e"], c)[:t["e"].size]
    assert np.max(np.abs((t["a_hat"] - t["a"]) - filtered)) < 1e-9
    idx = np.round((t["a_hat"] + t["z"]) / NYQ.step).astype(np.int64)
    for i, d in enumerate(enc.descriptions):
        assert d.stream_index == i
        assert np.array_equal(d.indices, idx[i::3])
    assert np.max(np.abs(t["e"])) <= NYQ.step / 2 + 1e-12


def test_encoder_deterministic():
    _, a = run(NYQ, 1 << 13)
    _, b = run(NYQ, 1 << 13)
    for da, db in zip(a.descriptions, b.descriptions):
        assert np.array_equal(da.indices, db.indices)
    assert np.array_equal(codec.decode_nyquist(a.descriptions, NYQ).samples,
                          codec.decode_nyquist(b.descriptions, NYQ).samples)


def test_encoder_length_check():
    with pytest.raises(CodecError):
        codec.encode(np.zeros(1001), SUB)


def test_vanishing_noise_recovers_source():
    step = 1e-6
    p = SchemeParams(L=3, K=2, lam=3, delta=2.0, sigma_E2=step ** 2 / 12, filter_order=64)
    # odd length: no Nyquist bin, whose phase cannot be corrected
    x, enc = run(p, (1 << 13) - 1)
    xhat = codec.decode_nyquist(enc.descriptions, p)
    assert codec.measure(x, xhat, codec.guard_source(p)) < 1e-9


def test_even_length_nyquist_bin_loss_is_order_one_over_n():
    p = SchemeParams(L=3, K=2, lam=3, delta=2.0, sigma_E2=1e-14, filter_order=64)
    for n in (1 << 13, 1 << 16):
        x, enc = run(p, n)
        mse = codec.measure(x, codec.decode_nyquist(enc.descriptions, p), codec.guard_source(p))
        assert mse < 2.0 / n


def test_white_noise_stream_variance():
    p = SchemeParams(L=3, K=3, lam=3, delta=1.0, sigma_E2=0.2, filter_order=16, seed=2)
    x, enc = run(p, 10 ** 6 - 1, keep_taps=True)
    eps = enc.taps["a_hat"] - enc.taps["a"]
    g = 200
    for i, s in phase_corrected_noise(eps, 3).items():
        assert s[g:-g].var() == pytest.approx(0.2, rel=0.02)


def test_stream_covariances_short_run():
    x, enc = run(NYQ, 1 << 17, keep_taps=True)
    eps = enc.taps["a_hat"] - enc.taps["a"]
    s = phase_corrected_noise(eps, 3)
    g = 256
    c = np.cov(np.stack([v[g:-g] for v in s.values()]))
    d = NYQ.dsq()
    assert np.diag(c) == pytest.approx(np.full(3, theory.stream_cross_covariance(d, 0, 0)), rel=0.03)
    off = c[np.triu_indices(3, 1)]
    assert off == pytest.approx(np.full(3, theory.stream_cross_covariance(d, 0, 1)), rel=0.03)


def test_stream_statistics_depend_on_magnitude_only():
    # filter the same white sequence with the min-phase taps and their time reversal
    f = NYQ.shaper()
    rng = np.random.default_rng(4)
    n = 3 * (1 << 17)
    e = rng.uniform(-0.5, 0.5, n + f.order) * NYQ.step
    covs = []
    for taps in (f.coefficients, dsp.maximum_phase_mirror(f)):
        eps = np.convolve(e, taps, mode="valid")[:n]
        s = phase_corrected_noise(eps, 3)
        covs.append(np.cov(np.stack([v[256:-256] for v in s.values()])))
    # standard error of a covariance estimate at this length
    se = 0.17 * math.sqrt(2 / (n / 3))
    assert np.max(np.abs(covs[0] - covs[1])) < 4 * se
    assert covs[1][0, 1] == pytest.approx(-0.07, rel=0.03)


# --- decoders --------------------------------------------------------------------

def nyquist_mse(params, members, n=1 << 17, trials=2):
    vals = []
    for t in range(trials):
        x, enc = run(params, n, trial=t)
        xhat = codec.decode_nyquist([enc.descriptions[i] for i in members], params)
        vals.append(codec.batch_means(codec.squared_errors(x, xhat, codec.guard_source(params))))
    return codec.mean_and_stderr(np.concatenate(vals))


def test_single_description_white_noise_is_scalar_wiener():
    p = SchemeParams(L=3, K=1, lam=3, delta=1.0, sigma_E2=0.3, filter_order=8, seed=1)
    mse, _ = nyquist_mse(p, [1])
    assert mse == pytest.approx(0.3 / 1.3, rel=0.02)


@pytest.mark.parametrize("members", [(0, 1), (1, 2), (0, 1, 2)])
def test_nyquist_mse_matches_closed_form(members):
    mse, _ = nyquist_mse(NYQ, members)
    assert mse == pytest.approx(theory.dsq_distortion(NYQ.dsq(), len(members)), rel=0.03)


def test_nyquist_rejects_unknown_stream():
    _, enc = run(NYQ, 1 << 12)
    bad = Description(5, enc.descriptions[0].indices, enc.descriptions[0].dither_key)
    with pytest.raises(CodecError):
        codec.decode_nyquist([bad], NYQ)
    with pytest.raises(CodecError):
        codec.decode_nyquist([enc.descriptions[0], enc.descriptions[0]], NYQ)


def test_more_descriptions_never_hurt():
    chain = [(0,), (0, 1), (0, 1, 2)]
    res = [nyquist_mse(NYQ, m, n=1 << 16, trials=1) for m in chain]
    for (a, sa), (b, sb) in zip(res, res[1:]):
        assert b <= a + 2 * math.hypot(sa, sb)


@pytest.fixture(scope="module")
def sub_run():
    x, enc = run(SUB, 1 << 16)
    return x, enc


def sub_mse(sub_run, members, **kw):
    x, enc = sub_run
    dec = codec.decode_subnyquist([enc.descriptions[i] for i in members], SUB, **kw)
    err = codec.squared_errors(x, dec.estimate, codec.guard_source(SUB))
    return dec, codec.mean_and_stderr(codec.batch_means(err))


def test_subnyquist_uniform_pair_matches_half_scheme(sub_run):
    target = theory.dsq_distortion(theory.DSQParams(0.12, 2.0, 2), 1)
    for m in ((0, 2), (1, 3)):
        dec, (mse, _) = sub_mse(sub_run, m)
        assert dec.uniform and dec.method == "lowpass"
        assert dec.theory_mse == pytest.approx(target)
        assert mse == pytest.approx(target, rel=0.03)


def test_subnyquist_nonuniform_pair_is_amplified(sub_run):
    _, (u, su) = sub_mse(sub_run, (0, 2))
    dec, (n, sn) = sub_mse(sub_run, (0, 1))
    assert not dec.uniform and dec.method == "lmmse"
    assert n - u > 5 * math.hypot(su, sn)
    assert n == pytest.approx(dec.predicted_mse, rel=0.05)


def test_subnyquist_full_set(sub_run):
    _, (mse, _) = sub_mse(sub_run, (0, 1, 2, 3))
    assert mse == pytest.approx(theory.dsq_distortion(theory.DSQParams(0.12, 2.0, 2), 2), rel=0.03)


def test_subnyquist_single_description_is_aliased(sub_run):
    dec, (mse, _) = sub_mse(sub_run, (2,))
    assert dec.aliased
    assert mse == pytest.approx(dec.predicted_mse, rel=0.05)


def test_lmmse_equals_lowpass_on_uniform_pattern(sub_run):
    x, enc = sub_run
    recv = [enc.descriptions[i] for i in (1, 3)]
    _, est = codec.lmmse_nonuniform(recv, SUB)
    lp = codec.decode_subnyquist(recv, SUB).estimate
    g = codec.guard_source(SUB)
    assert codec.measure(x, est, g) == pytest.approx(codec.measure(x, lp, g), rel=0.01)


def test_windowed_lmmse_converges_toward_exact(sub_run):
    _, (exact, _) = sub_mse(sub_run, (0, 1))
    ws = [sub_mse(sub_run, (0, 1), window=w)[1][0] for w in (64, 128, 256)]
    assert ws[0] > ws[1] > ws[2] > exact * 0.999
    assert ws[2] == pytest.approx(exact, rel=0.02)


def test_subnyquist_noiseless_limit():
    p = SchemeParams(L=4, K=2, lam=2, delta=2.0, sigma_E2=1e-10, filter_order=64, seed=1)
    x, enc = run(p, 1 << 13)
    for m in ((0, 2), (1, 2, 3), (0, 1)):
        dec = codec.decode_subnyquist([enc.descriptions[i] for i in m], p)
        mse = codec.measure(x, dec.estimate, codec.guard_source(p))
        # the periodic model cannot place the source Nyquist bin for every pattern
        assert mse < (1e-8 if dec.uniform else 1.0 / x.size)


# --- metrics ---------------------------------------------------------------------

def test_measure_examples():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(10 ** 5)
    assert codec.measure(x, x) == 0.0
    assert codec.measure(x, x + 0.3) == pytest.approx(0.09)
    assert codec.measure(x, rng.standard_normal(10 ** 5)) == pytest.approx(2.0, rel=0.03)
    with pytest.raises(CodecError):
        codec.measure(x, x[:-1])


def test_batch_means():
    b = codec.batch_means(np.arange(32.0), batches=4)
    assert np.array_equal(b, [3.5, 11.5, 19.5, 27.5])
    m, se = codec.mean_and_stderr(b)
    assert m == 15.5 and se == pytest.approx(np.std(b, ddof=1) / 2)


# --- rates -----------------------------------------------------------------------

def test_rate_closed_form_white_unit_noise():
    assert theory.ecdq_gaussian_rate(1.0, 1.0, 1.0) == pytest.approx(
        0.5 + 0.5 * math.log2(2 * math.pi * math.e / 12))


def test_rate_grows_one_bit_per_quartering():
    p1 = SchemeParams(L=2, K=2, lam=2, delta=1.0, sigma_E2=0.01, filter_order=8)
    p2 = SchemeParams(L=2, K=2, lam=2, delta=1.0, sigma_E2=0.0025, filter_order=8)
    r1 = codec.empirical_rate(run(p1, 1 << 17)[1].descriptions, p1)
    r2 = codec.empirical_rate(run(p2, 1 << 17)[1].descriptions, p2)
    assert r2.plugin - r1.plugin == pytest.approx(1.0, abs=0.02)
    assert r2.gaussian - r1.gaussian == pytest.approx(1.0, abs=0.01)


def test_rate_few_samples_warns():
    p = SchemeParams(L=2, K=2, lam=2, delta=1.0, sigma_E2=0.1, filter_order=8)
    with pytest.warns(UserWarning):
        r = codec.empirical_rate(run(p, 1 << 12)[1].descriptions, p)
    assert r.few_samples and r.samples == 1 << 13


def test_dither_conditioning_lowers_entropy():
    p = SchemeParams(L=2, K=2, lam=2, delta=2.0, sigma_E2=0.5, filter_order=32)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r = codec.empirical_rate(run(p, 1 << 16)[1].descriptions, p)
    assert r.plugin < r.unconditional


# --- serialization ---------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.integers(0, 255), st.lists(st.integers(-2 ** 31, 2 ** 31 - 1), max_size=200))
def test_description_round_trip(stream, values):
    d = Description(stream, np.array(values, dtype=np.int64))
    buf = io.BytesIO()
    codec.write_description(buf, d)
    raw = buf.getvalue()
    assert raw[0] == stream and int.from_bytes(raw[1:9], "little") == len(values)
    buf.seek(0)
    back = codec.read_description(buf)
    assert back.stream_index == stream and np.array_equal(back.indices, d.indices)
    assert codec.read_description(buf) is None


def test_description_serialization_errors(tmp_path):
    with pytest.raises(CodecError):
        codec.write_description(io.BytesIO(), Description(256, np.zeros(1)))
    with pytest.raises(CodecError):
        codec.write_description(io.BytesIO(), Description(0, np.array([2 ** 40])))
    buf = io.BytesIO()
    codec.write_description(buf, Description(1, np.arange(5)))
    with pytest.raises(CodecError):
        codec.read_description(io.BytesIO(buf.getvalue()[:-2]))
    _, enc = run(NYQ, 1 << 10)
    path = tmp_path / "d.bin"
    codec.dump_descriptions(path, enc.descriptions)
    back = codec.load_descriptions(path, dither_key=enc.descriptions[0].dither_key)
    assert [b.stream_index for b in back] == [0, 1, 2]
    assert all(np.array_equal(a.indices, b.indices) for a, b in zip(enc.descriptions, back))
