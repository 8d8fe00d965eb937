"""DSQ encoder and decoders.

The encoder oversamples the source, runs a dithered scalar quantizer inside
a noise-feedback loop and demultiplexes the index sequence into L
description streams.  Decoders rebuild the source from any subset of
streams: phase correction plus Wiener averaging at the Nyquist rate, and a
multichannel LMMSE estimator for the sub-Nyquist variant.

Buffers are processed as single periods in the frequency domain (see
:mod:`dsqmd.dsp`); metrics skip a guard region at both ends.
"""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import BinaryIO, Iterable, Sequence

import numba
import numpy as np

from . import theory
from .dsp import (
    DEFAULT_GUARD,
    NoiseShaper,
    SignalBuffer,
    design_noise_shaper,
    fractional_delay,
    upsample,
)


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class SchemeParams:
    L: int
    K: int
    lam: int
    delta: float
    sigma_E2: float
    sigma_x2: float = 1.0
    filter_order: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.L < 1 or not (1 <= self.K <= self.L):
            raise CodecError(f"need 1 <= K <= L, got K={self.K}, L={self.L}")
        if not (self.lam == self.L or self.lam * self.K == self.L):
            raise CodecError(f"lambda must be L or L/K, got lambda={self.lam}, L={self.L}, K={self.K}")
        if self.sigma_E2 <= 0.0:
            raise CodecError("sigma_E2 must be positive")
        if self.delta < 1.0:
            raise CodecError("delta must be >= 1")
        if self.filter_order < 1:
            raise CodecError("filter order must be >= 1")

    @property
    def step(self) -> float:
        return math.sqrt(12.0 * self.sigma_E2)

    @property
    def nyquist(self) -> bool:
        return self.lam == self.L

    @property
    def phases_per_period(self) -> int:
        """Source samples per L oversampled samples."""
        return self.L // self.lam

    def dsq(self) -> theory.DSQParams:
        """Closed-form parameters of the equivalent Nyquist-rate scheme."""
        return theory.DSQParams(self.sigma_E2, self.delta, self.lam)

    def shaper(self) -> NoiseShaper:
        return _cached_shaper(self.delta, self.lam, self.filter_order)


_SHAPERS: dict = {}


def _cached_shaper(delta: float, lam: int, p: int) -> NoiseShaper:
    key = (float(delta), int(lam), int(p))
    if key not in _SHAPERS:
        _SHAPERS[key] = design_noise_shaper(delta, lam, p)
    return _SHAPERS[key]


@dataclass
class Description:
    stream_index: int
    indices: np.ndarray
    dither_key: tuple[int, int] = (0, 0)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)


@dataclass(frozen=True)
class DescriptionSet:
    members: tuple[int, ...]
    L: int

    def __post_init__(self):
        members = tuple(sorted(set(int(m) for m in self.members)))
        if not members:
            raise CodecError("a description set must be nonempty")
        if members[0] < 0 or members[-1] >= self.L:
            raise CodecError(f"stream index outside 0..{self.L - 1}: {members}")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)

    @property
    def uniform(self) -> bool:
        m = len(self.members)
        if self.L % m:
            return False
        step = self.L // m
        first = self.members[0]
        return set(self.members) == {(first + r * step) % self.L for r in range(m)}

    @property
    def classification(self) -> str:
        return "uniform" if self.uniform else "nonuniform"

    def label(self) -> str:
        return "{" + ",".join(map(str, self.members)) + "}"


def enumerate_subsets(L: int, which: str | Sequence[Sequence[int]] = "all") -> list[DescriptionSet]:
    """Description sets in lexicographic order (by size, then members)."""
    if isinstance(which, str):
        out = [DescriptionSet(c, L) for m in range(1, L + 1) for c in combinations(range(L), m)]
        if which == "all":
            return out
        if which == "uniform_only":
            return [s for s in out if s.uniform]
        raise CodecError(f"unknown subset selection {which!r}")
    return [DescriptionSet(tuple(c), L) for c in which]


@dataclass
class EncodeOutput:
    descriptions: list[Description]
    params: SchemeParams
    shaper: NoiseShaper
    n_source: int
    taps: dict[str, np.ndarray] | None = None


# --- random sequences -------------------------------------------------------

_SOURCE_TAG, _DITHER_TAG = 0, 1


def _generator(seed: int, trial: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, trial, tag])))


def source_sequence(seed: int, trial: int, n: int, sigma_x2: float = 1.0) -> np.ndarray:
    return math.sqrt(sigma_x2) * _generator(seed, trial, _SOURCE_TAG).standard_normal(n)


def dither_sequence(seed: int, trial: int, length: int, step: float) -> np.ndarray:
    """I.i.d. dither on (-step/2, step/2] at the oversampled rate."""
    u = _generator(seed, trial, _DITHER_TAG).random(length)
    return step * (0.5 - u)


# --- quantizer --------------------------------------------------------------

def _round_half_away(u):
    return np.sign(u) * np.floor(np.abs(u) + 0.5)


def ecdq_step(v: float, z: float, step: float) -> tuple[int, float]:
    """One dithered quantization: index = round((v+z)/step), e = index*step - (v+z)."""
    u = v + z
    index = int(_round_half_away(u / step))
    return index, index * step - u


@numba.njit(cache=True, nogil=True)
def _noise_feedback_loop(a, z, fb, step):
    n = a.size
    p = fb.size
    index = np.empty(n, dtype=np.int64)
    e = np.zeros(n)
    e_tilde = np.zeros(n)
    for k in range(n):
        acc = 0.0
        top = min(p, k)
        for m in range(top):
            acc += fb[m] * e[k - 1 - m]
        e_tilde[k] = acc
        u = a[k] + acc + z[k]
        q = math.floor(abs(u) / step + 0.5)
        if u < 0:
            q = -q
        index[k] = np.int64(q)
        e[k] = q * step - u
    return index, e, e_tilde


def encode(x: SignalBuffer | np.ndarray, params: SchemeParams, trial: int = 0,
           keep_taps: bool = False, shaper: NoiseShaper | None = None) -> EncodeOutput:
    buf = x if isinstance(x, SignalBuffer) else SignalBuffer(x)
    n = len(buf)
    lam, L = params.lam, params.L
    if (n * lam) % L:
        raise CodecError(f"source length {n} times lambda={lam} must be divisible by L={L}")
    shaper = shaper or params.shaper()
    a = upsample(buf, lam).samples
    z = dither_sequence(params.seed, trial, a.size, params.step)
    index, e, e_tilde = _noise_feedback_loop(a, z, shaper.feedback_taps.astype(float), params.step)
    key = (params.seed, trial)
    descriptions = [Description(i, index[i::L], key) for i in range(L)]
    taps = None
    if keep_taps:
        a_hat = index * params.step - z
        taps = {"a": a, "a_prime": a + e_tilde, "e": e, "e_tilde": e_tilde,
                "a_hat": a_hat, "z": z}
    return EncodeOutput(descriptions, params, shaper, n, taps)


# --- decoding helpers -------------------------------------------------------

def _select(received: Iterable[Description], L: int) -> list[Description]:
    descs = sorted(received, key=lambda d: d.stream_index)
    if not descs:
        raise CodecError("no descriptions received")
    seen = set()
    for d in descs:
        if not (0 <= d.stream_index < L):
            raise CodecError(f"unknown stream index {d.stream_index} for L={L}")
        if d.stream_index in seen:
            raise CodecError(f"duplicate stream {d.stream_index}")
        seen.add(d.stream_index)
    return descs


def dequantize(descs: Sequence[Description], params: SchemeParams) -> dict[int, np.ndarray]:
    """Subtract the regenerated dither: a_hat^(i) = index * step - z^(i)."""
    out = {}
    cache: dict[tuple[int, int], np.ndarray] = {}
    for d in descs:
        total = d.indices.size * params.L
        if d.dither_key not in cache:
            cache[d.dither_key] = dither_sequence(*d.dither_key, total, params.step)
        z = cache[d.dither_key]
        out[d.stream_index] = d.indices * params.step - z[d.stream_index::params.L]
    return out


def phase_corrected_streams(received: Iterable[Description], params: SchemeParams) -> dict[int, np.ndarray]:
    """Resample each Nyquist-rate stream i to the source grid (delay i/L)."""
    if not params.nyquist:
        raise CodecError("phase correction needs lambda = L")
    descs = _select(received, params.L)
    a_hat = dequantize(descs, params)
    return {i: fractional_delay(s, i / params.L).samples for i, s in a_hat.items()}


def decode_nyquist(received: Iterable[Description], params: SchemeParams) -> SignalBuffer:
    """Average of phase-corrected streams scaled by the Wiener coefficient."""
    streams = phase_corrected_streams(received, params)
    j = len(streams)
    alpha = theory.wiener_alpha(params.dsq(), j, params.sigma_x2)
    avg = np.mean(np.stack(list(streams.values())), axis=0)
    return SignalBuffer(alpha * avg, 1, guard_source(params))


def guard_source(params: SchemeParams, guard: int = DEFAULT_GUARD) -> int:
    """Oversampled-rate guard expressed in source samples."""
    return -(-guard // params.lam)


# --- second-order model -----------------------------------------------------

class _PolyphaseModel:
    """Polyphase cross-spectra of the oversampled source and the shaped noise.

    For a periodic buffer of M = lam * n oversampled samples with pattern
    period L, polyphase component u is s[u::L] and has P = M / L samples.
    ``cross(psd, u, v)[g]`` is the cross-spectrum of components u and v at
    bin g, normalised so its mean over g is the lag-0 covariance.
    """

    def __init__(self, params: SchemeParams, shaper: NoiseShaper, n_source: int):
        self.params = params
        lam, L = params.lam, params.L
        self.M = lam * n_source
        self.P = self.M // L
        self.n_source = n_source
        f = np.arange(self.M)
        freq = np.minimum(f, self.M - f)
        psd_a = np.where(freq < n_source / 2, lam * params.sigma_x2, 0.0)
        if n_source % 2 == 0:
            psd_a[freq == n_source // 2] = 0.25 * lam * params.sigma_x2
        self.psd_a = psd_a
        taps = np.zeros(self.M)
        taps[:shaper.coefficients.size] = shaper.coefficients
        self.psd_e = params.sigma_E2 * np.abs(np.fft.fft(taps)) ** 2
        self.freq = f.reshape(L, self.P)

    def cross(self, psd: np.ndarray, u: int, v: int) -> np.ndarray:
        ph = np.exp(2j * np.pi * self.freq * (u - v) / self.M)
        return (psd.reshape(self.params.L, self.P) * ph).sum(axis=0) / self.params.L


@dataclass
class LMMSEEstimator:
    members: tuple[int, ...]
    targets: tuple[int, ...]
    gains: np.ndarray | None
    predicted_mse: float
    window: int | None = None
    aliased: bool = False
    weights: list[np.ndarray] = field(default_factory=list)


def _interleave_targets(parts: list[np.ndarray]) -> np.ndarray:
    Q = len(parts)
    out = np.empty(Q * parts[0].size)
    for q, part in enumerate(parts):
        out[q::Q] = part
    return out


def lmmse_nonuniform(received: Iterable[Description], params: SchemeParams,
                     window: int | None = None, ridge: float = 1e-10,
                     shaper: NoiseShaper | None = None) -> tuple[LMMSEEstimator, SignalBuffer]:
    """Linear MMSE reconstruction from an arbitrary periodic sampling pattern.

    With ``window=None`` the estimator is the exact multichannel Wiener
    filter of the periodic model, solved bin by bin in the frequency domain.
    With an integer window W, each source sample is estimated from its W
    nearest received samples by solving the time-domain normal equations.
    Both use the source sinc autocorrelation and the noise spectrum of the
    actual designed filter taps.
    """
    descs = _select(received, params.L)
    shaper = shaper or params.shaper()
    a_hat = dequantize(descs, params)
    members = tuple(d.stream_index for d in descs)
    n_source = descs[0].indices.size * params.L // params.lam
    aliased = len(members) < params.K
    if window is not None:
        return _lmmse_windowed(a_hat, members, params, shaper, n_source, window, ridge, aliased)

    model = _PolyphaseModel(params, shaper, n_source)
    Q = params.phases_per_period
    targets = tuple(q * params.lam for q in range(Q))
    m = len(members)
    syy = np.empty((model.P, m, m), dtype=complex)
    for r, u in enumerate(members):
        for c, v in enumerate(members):
            syy[:, r, c] = model.cross(model.psd_a, u, v) + model.cross(model.psd_e, u, v)
    scale = np.real(np.trace(syy, axis1=1, axis2=2)).mean() / m
    syy += ridge * scale * np.eye(m)
    sxy = np.empty((model.P, Q, m), dtype=complex)
    for r, t in enumerate(targets):
        for c, v in enumerate(members):
            sxy[:, r, c] = model.cross(model.psd_a, t, v)
    try:
        gains_h = np.linalg.solve(syy, np.conj(np.transpose(sxy, (0, 2, 1))))
    except np.linalg.LinAlgError as exc:
        raise CodecError("singular normal equations after ridge") from exc
    gains = np.conj(np.transpose(gains_h, (0, 2, 1)))  # (P, Q, m)
    sxx = np.stack([np.real(model.cross(model.psd_a, t, t)) for t in targets], axis=1)
    explained = np.real(np.einsum("gqm,gqm->gq", gains, np.conj(sxy)))
    predicted = float(np.mean(sxx - explained))

    Y = np.stack([np.fft.fft(a_hat[i]) for i in members], axis=1)  # (P, m)
    Xq = np.einsum("gqm,gm->gq", gains, Y)
    parts = [np.real(np.fft.ifft(Xq[:, q])) for q in range(Q)]
    xhat = _interleave_targets(parts)
    est = LMMSEEstimator(members, targets, gains, predicted, None, aliased)
    return est, SignalBuffer(xhat, 1, guard_source(params))


def _noise_autocorrelation(shaper: NoiseShaper, sigma_E2: float, max_lag: int) -> np.ndarray:
    c = shaper.coefficients
    full = np.correlate(c, c, mode="full")[c.size - 1:]
    out = np.zeros(max_lag + 1)
    out[:min(full.size, max_lag + 1)] = full[:max_lag + 1]
    return sigma_E2 * out


def _lmmse_windowed(a_hat, members, params, shaper, n_source, W, ridge, aliased):
    if W < 32:
        raise CodecError("LMMSE window must be at least 32 samples")
    L, lam, Q = params.L, params.lam, params.phases_per_period
    m = len(members)
    # received oversampled positions over a few periods either side of 0
    reach = W // m + 2
    pos = np.array([j + r * L for r in range(-reach, reach + 1) for j in members])
    stream_of = np.array([j for r in range(-reach, reach + 1) for j in members])
    period_of = np.array([r for r in range(-reach, reach + 1) for j in members])
    max_lag = int(np.ptp(pos)) + 1
    r_e = _noise_autocorrelation(shaper, params.sigma_E2, max_lag)
    weights = []
    xhat_parts = []
    predicted = 0.0
    P = n_source * lam // L
    for q in range(Q):
        t = q * lam  # target oversampled position
        order = np.argsort(np.abs(pos - t), kind="stable")[:W]
        p_sel = pos[order]
        diff = p_sel[:, None] - p_sel[None, :]
        R = params.sigma_x2 * np.sinc(diff / lam) + r_e[np.abs(diff)]
        R += ridge * np.trace(R) / W * np.eye(W)
        rxy = params.sigma_x2 * np.sinc((t - p_sel) / lam)
        try:
            w = np.linalg.solve(R, rxy)
        except np.linalg.LinAlgError as exc:
            raise CodecError("singular normal equations after ridge") from exc
        predicted += (params.sigma_x2 - w @ rxy) / Q
        weights.append(w)
        # x[q + nQ] = sum_w w * a_hat[stream][n + period]
        est = np.zeros(P)
        for wk, s, r in zip(w, stream_of[order], period_of[order]):
            est += wk * np.roll(a_hat[int(s)], -int(r))
        xhat_parts.append(est)
    xhat = _interleave_targets(xhat_parts)
    est = LMMSEEstimator(tuple(members), tuple(q * lam for q in range(Q)), None,
                         float(predicted), W, aliased, weights)
    return est, SignalBuffer(xhat, 1, guard_source(params))


@dataclass
class SubNyquistDecode:
    estimate: SignalBuffer
    members: tuple[int, ...]
    uniform: bool
    aliased: bool
    method: str
    predicted_mse: float
    theory_mse: float | None


def uniform_noise_variance(params: SchemeParams, members: Sequence[int], shaper: NoiseShaper,
                           n_source: int) -> float:
    """Noise variance left after low-passing a uniform interleave to the source band."""
    m = len(members)
    s = params.L // m
    M = params.lam * n_source
    taps = np.zeros(M)
    taps[:shaper.coefficients.size] = shaper.coefficients
    psd = params.sigma_E2 * np.abs(np.fft.fft(taps)) ** 2
    folded = psd.reshape(s, M // s).sum(axis=0) / params.lam
    f = np.arange(M // s)
    freq = np.minimum(f, M // s - f)
    return float(folded[freq < n_source / 2].sum() / n_source)


def uniform_theory_mse(params: SchemeParams, size: int) -> float | None:
    """Closed-form MSE of a uniform receiver, when it maps onto the Nyquist scheme."""
    if params.nyquist:
        return theory.dsq_distortion(params.dsq(), size, params.sigma_x2)
    if size % params.K:
        return None
    return theory.dsq_distortion(params.dsq(), size // params.K, params.sigma_x2)


def _lowpass_resample(y: np.ndarray, rate: float, t0: float, n_source: int) -> np.ndarray:
    """Band-limit samples y (taken at times t0 + r/rate) to the source band and sample at integers."""
    Y = np.fft.fft(y)
    M = y.size
    X = np.zeros(n_source, dtype=complex)
    half = (n_source - 1) // 2
    f = np.arange(-half, half + 1)
    X[f % n_source] = Y[f % M] * np.exp(-2j * np.pi * f * t0 / n_source) / rate
    if n_source % 2 == 0:
        # the source Nyquist bin was split over +-n/2 of the finer grid
        h = n_source // 2
        X[h] = Y[h] * np.exp(-1j * np.pi * t0) / rate
        if M > n_source:
            X[h] += Y[M - h] * np.exp(1j * np.pi * t0) / rate
    return np.real(np.fft.ifft(X))


def decode_subnyquist(received: Iterable[Description], params: SchemeParams,
                      shaper: NoiseShaper | None = None, window: int | None = None) -> SubNyquistDecode:
    """Reconstruct from a subset of sub-Nyquist (lambda = L/K) descriptions.

    Uniform subsets of at least K streams are interleaved, low-passed to the
    source band and Wiener scaled.  Every other pattern goes through the
    LMMSE estimator; with fewer than K streams the result is tagged aliased.
    """
    descs = _select(received, params.L)
    shaper = shaper or params.shaper()
    members = tuple(d.stream_index for d in descs)
    dset = DescriptionSet(members, params.L)
    n_source = descs[0].indices.size * params.L // params.lam
    aliased = len(members) < params.K
    theory_mse = uniform_theory_mse(params, len(members)) if dset.uniform else None
    if dset.uniform and not aliased:
        a_hat = dequantize(descs, params)
        m = len(members)
        s = params.L // m
        inter = np.empty(m * a_hat[members[0]].size)
        first = members[0]
        ordered = sorted(members, key=lambda j: (j - first) % params.L)
        for r, j in enumerate(ordered):
            inter[r::m] = a_hat[j]
        rate = params.lam / s
        t0 = first / params.lam
        lp = _lowpass_resample(inter, rate, t0, n_source)
        noise = uniform_noise_variance(params, members, shaper, n_source)
        alpha = params.sigma_x2 / (params.sigma_x2 + noise)
        est = SignalBuffer(alpha * lp, 1, guard_source(params))
        predicted = params.sigma_x2 * noise / (params.sigma_x2 + noise)
        return SubNyquistDecode(est, members, True, False, "lowpass", predicted, theory_mse)
    estimator, est = lmmse_nonuniform(descs, params, window=window, shaper=shaper)
    return SubNyquistDecode(est, members, dset.uniform, aliased, "lmmse",
                            estimator.predicted_mse, theory_mse)


def decode(received: Iterable[Description], params: SchemeParams) -> SignalBuffer:
    if params.nyquist:
        return decode_nyquist(received, params)
    return decode_subnyquist(received, params).estimate


# --- metrics ----------------------------------------------------------------

def measure(x, xhat, guard: int = 0) -> float:
    x = x.samples if isinstance(x, SignalBuffer) else np.asarray(x, dtype=float)
    xhat = xhat.samples if isinstance(xhat, SignalBuffer) else np.asarray(xhat, dtype=float)
    if x.shape != xhat.shape:
        raise CodecError(f"length mismatch: {x.shape} vs {xhat.shape}")
    if 2 * guard >= x.size:
        raise CodecError("guard leaves no interior samples")
    err = (x - xhat)[guard:x.size - guard]
    return float(np.mean(err ** 2))


def squared_errors(x, xhat, guard: int = 0) -> np.ndarray:
    x = x.samples if isinstance(x, SignalBuffer) else np.asarray(x, dtype=float)
    xhat = xhat.samples if isinstance(xhat, SignalBuffer) else np.asarray(xhat, dtype=float)
    if x.shape != xhat.shape:
        raise CodecError(f"length mismatch: {x.shape} vs {xhat.shape}")
    return ((x - xhat)[guard:x.size - guard]) ** 2


def batch_means(values: np.ndarray, batches: int = 16) -> np.ndarray:
    """Means of contiguous batches; robust input for standard errors under correlation."""
    values = np.asarray(values)
    size = values.size // batches
    return values[:size * batches].reshape(batches, size).mean(axis=1)


def mean_and_stderr(batch_values: np.ndarray) -> tuple[float, float]:
    b = np.asarray(batch_values, dtype=float)
    se = float(b.std(ddof=1) / math.sqrt(b.size)) if b.size > 1 else float("nan")
    return float(b.mean()), se


@dataclass
class RateEstimate:
    plugin: float
    gaussian: float
    unconditional: float
    samples: int
    few_samples: bool


def empirical_rate(descriptions: Sequence[Description], params: SchemeParams,
                   dither_bins: int = 64, shaper: NoiseShaper | None = None) -> RateEstimate:
    """Bits per source sample per description of the memoryless ECDQ stage.

    ``plugin`` is the plug-in conditional entropy H(index | dither) from a
    joint histogram of indices and binned dither values, pooled over
    streams.  ``gaussian`` is the closed-form Gaussian bound with the
    scalar-quantizer constant.  ``unconditional`` is the pooled plug-in
    H(index), which ignores the dither.
    """
    shaper = shaper or params.shaper()
    descs = _select(descriptions, params.L)
    idx_all, zb_all = [], []
    for d in descs:
        z = dither_sequence(*d.dither_key, d.indices.size * params.L, params.step)[d.stream_index::params.L]
        zb = np.minimum(((z / params.step + 0.5) * dither_bins).astype(np.int64), dither_bins - 1)
        idx_all.append(d.indices)
        zb_all.append(zb)
    idx = np.concatenate(idx_all)
    zb = np.concatenate(zb_all)
    n = idx.size
    shifted = idx - idx.min()
    joint = np.bincount(shifted * dither_bins + zb).astype(float)
    joint = joint[joint > 0] / n
    marg_z = np.bincount(zb, minlength=dither_bins).astype(float)
    marg_z = marg_z[marg_z > 0] / n
    h_joint = -np.sum(joint * np.log2(joint))
    h_z = -np.sum(marg_z * np.log2(marg_z))
    marg_i = np.bincount(shifted).astype(float)
    marg_i = marg_i[marg_i > 0] / n
    h_idx = -np.sum(marg_i * np.log2(marg_i))
    per_source = params.lam / params.L
    eq_var = params.sigma_E2 * shaper.power_gain()
    gauss = theory.ecdq_gaussian_rate(params.sigma_x2, eq_var, params.sigma_E2)
    few = n < 100_000
    if few:
        warnings.warn(f"only {n} quantizer samples; rate estimate is unreliable", stacklevel=2)
    return RateEstimate((h_joint - h_z) * per_source, gauss * per_source, h_idx * per_source, n, few)


# --- serialization ----------------------------------------------------------

_HEADER = struct.Struct("<BQ")


def write_description(fh: BinaryIO, d: Description) -> None:
    """Stream index (u8), length (u64), then little-endian int32 indices."""
    if not (0 <= d.stream_index < 256):
        raise CodecError("stream index does not fit in u8")
    if d.indices.size and (d.indices.max() > np.iinfo(np.int32).max or d.indices.min() < np.iinfo(np.int32).min):
        raise CodecError("quantizer index does not fit in int32")
    fh.write(_HEADER.pack(d.stream_index, d.indices.size))
    fh.write(d.indices.astype("<i4").tobytes())


def read_description(fh: BinaryIO, dither_key: tuple[int, int] = (0, 0)) -> Description | None:
    head = fh.read(_HEADER.size)
    if not head:
        return None
    if len(head) < _HEADER.size:
        raise CodecError("truncated description header")
    stream, length = _HEADER.unpack(head)
    body = fh.read(4 * length)
    if len(body) < 4 * length:
        raise CodecError("truncated description body")
    return Description(stream, np.frombuffer(body, dtype="<i4").astype(np.int64), dither_key)


def dump_descriptions(path, descriptions: Sequence[Description]) -> None:
    with open(path, "wb") as fh:
        for d in descriptions:
            write_description(fh, d)


def load_descriptions(path, dither_key: tuple[int, int] = (0, 0)) -> list[Description]:
    out = []
    with open(path, "rb") as fh:
        while (d := read_description(fh, dither_key)) is not None:
            out.append(d)
    return out
