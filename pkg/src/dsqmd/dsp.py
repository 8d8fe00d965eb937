"""Band-limited resampling and noise-shaping filter design.

All resampling is done on the whole buffer in the frequency domain, which
treats the buffer as one period of a periodic band-limited signal.  For
periodic inputs the results are exact; for anything else the edges leak
and callers exclude a guard region from every metric.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_GUARD = 512
QA_GRID = 4096


@dataclass
class SignalBuffer:
    samples: np.ndarray
    rate_factor: int = 1
    guard: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.guard < 0:
            raise ValueError("guard must be non-negative")
        if self.samples.size and 2 * self.guard >= self.samples.size:
            raise ValueError("guard leaves no interior samples")

    def __len__(self):
        return self.samples.size

    @property
    def interior(self) -> np.ndarray:
        g = self.guard
        return self.samples[g:self.samples.size - g] if g else self.samples


def upsample(x: SignalBuffer | np.ndarray, lam: int) -> SignalBuffer:
    """Band-limited (sinc) interpolation by an integer factor ``lam``."""
    buf = x if isinstance(x, SignalBuffer) else SignalBuffer(x)
    if lam < 1:
        raise ValueError("oversampling factor must be >= 1")
    if lam == 1:
        return SignalBuffer(buf.samples.copy(), buf.rate_factor, buf.guard)
    n = len(buf)
    spec = np.fft.rfft(buf.samples)
    out = np.zeros(lam * n // 2 + 1, dtype=complex)
    out[:spec.size] = spec * lam
    if n % 2 == 0:
        # split the Nyquist bin between +pi and -pi
        out[n // 2] *= 0.5
    a = np.fft.irfft(out, lam * n)
    return SignalBuffer(a, buf.rate_factor * lam, buf.guard * lam)


def decimate(a: SignalBuffer | np.ndarray, factor: int, phase: int = 0) -> np.ndarray:
    samples = a.samples if isinstance(a, SignalBuffer) else np.asarray(a)
    return samples[phase::factor]


def fractional_delay(s: SignalBuffer | np.ndarray, tau: float) -> SignalBuffer:
    """Evaluate a band-limited sequence at times n - tau.

    Equivalent to y_n = sum_k s_k sinc(n - k - tau) for a periodic input;
    implemented as the all-pass phase shift exp(-j w tau).
    """
    buf = s if isinstance(s, SignalBuffer) else SignalBuffer(s)
    if tau == 0:
        return SignalBuffer(buf.samples.copy(), buf.rate_factor, buf.guard)
    n = len(buf)
    spec = np.fft.rfft(buf.samples)
    w = 2.0 * np.pi * np.arange(spec.size) / n
    y = np.fft.irfft(spec * np.exp(-1j * w * tau), n)
    return SignalBuffer(y, buf.rate_factor, buf.guard)


def target_spectrum(delta: float, lam: int, n_grid: int) -> np.ndarray:
    """Two-level |C|^2 target on an FFT frequency grid (numpy fftfreq order)."""
    w = 2.0 * np.pi * np.fft.fftfreq(n_grid)
    inband = np.abs(w) <= np.pi / lam + 1e-12
    return np.where(inband, float(delta) ** (1 - lam), float(delta))


@dataclass
class SpectrumTarget:
    delta: float
    lam: int

    def __call__(self, w) -> np.ndarray:
        w = np.abs(np.angle(np.exp(1j * np.asarray(w, dtype=float))))
        return np.where(w <= np.pi / self.lam, self.delta ** (1 - self.lam), self.delta)

    def logmean(self) -> float:
        return ((1 - self.lam) * np.log(self.delta) + (self.lam - 1) * np.log(self.delta)) / self.lam


@dataclass
class NoiseShaper:
    coefficients: np.ndarray
    delta: float
    lam: int
    grid_size: int = 0
    report: dict = field(default_factory=dict)

    @property
    def order(self) -> int:
        return self.coefficients.size - 1

    @property
    def feedback_taps(self) -> np.ndarray:
        """Strictly causal part C'(z) = C(z) - 1, taps c_1..c_p."""
        return self.coefficients[1:]

    def response(self, n_grid: int = QA_GRID) -> np.ndarray:
        """|C(e^{jw})|^2 on an n_grid-point FFT grid."""
        return np.abs(np.fft.fft(self.coefficients, max(n_grid, self.coefficients.size))) ** 2

    def power_gain(self) -> float:
        return float(np.sum(self.coefficients ** 2))

    def zeros(self) -> np.ndarray:
        if self.order == 0:
            return np.zeros(0, dtype=complex)
        return np.roots(self.coefficients)

    def is_minimum_phase(self, tol: float = 1e-9) -> bool:
        z = self.zeros()
        return bool(np.all(np.abs(z) <= 1.0 + tol)) if z.size else True


class FilterDesignError(RuntimeError):
    pass


def _min_phase_from_log_magnitude(log_mag: np.ndarray) -> np.ndarray:
    n = log_mag.size
    cep = np.fft.ifft(log_mag).real
    fold = np.zeros(n)
    fold[0] = cep[0]
    fold[1:n // 2] = 2.0 * cep[1:n // 2]
    if n % 2 == 0:
        fold[n // 2] = cep[n // 2]
    return np.fft.ifft(np.exp(np.fft.fft(fold))).real


def design_noise_shaper(delta: float, lam: int, p: int, grid_size: int | None = None,
                        check: bool = True) -> NoiseShaper:
    """Monic causal minimum-phase FIR of order p approximating the target.

    Real-cepstrum spectral factorization of the two-level target on an FFT
    grid, truncated to p+1 taps and rescaled to c_0 = 1.
    """
    if delta < 1.0:
        raise ValueError("delta must be >= 1")
    if p < 1:
        raise ValueError("filter order must be >= 1")
    if delta == 1.0 or lam < 2:
        coeffs = np.zeros(p + 1)
        coeffs[0] = 1.0
        return NoiseShaper(coeffs, float(delta), lam, 0)
    n_grid = grid_size or max(4096, 32 * p)
    for _ in range(4):
        log_mag = 0.5 * np.log(target_spectrum(delta, lam, n_grid))
        h = _min_phase_from_log_magnitude(log_mag)
        coeffs = h[:p + 1] / h[0]
        shaper = NoiseShaper(coeffs, float(delta), lam, n_grid)
        if not check or shaper.is_minimum_phase():
            shaper.report = dict(zip(("passband_err", "stopband_err", "logmean"),
                                     spectrum_error(shaper)))
            return shaper
        n_grid *= 4
    raise FilterDesignError(f"truncated factor is not minimum phase (delta={delta}, lam={lam}, p={p})")


def spectrum_error(f: NoiseShaper, n_grid: int = QA_GRID) -> tuple[float, float, float]:
    """Relative L2 errors against the target in each band, and the grid log-mean of |C|^2."""
    resp = f.response(n_grid)
    n = resp.size
    target = target_spectrum(f.delta, f.lam, n)
    w = 2.0 * np.pi * np.fft.fftfreq(n)
    inband = np.abs(w) <= np.pi / f.lam + 1e-12
    if f.lam < 2:
        inband = np.ones(n, dtype=bool)

    def rel(mask):
        if not mask.any():
            return 0.0
        return float(np.sqrt(np.sum((resp[mask] - target[mask]) ** 2) / np.sum(target[mask] ** 2)))

    return rel(inband), rel(~inband), float(np.mean(np.log(resp)))


def band_means(f: NoiseShaper, n_grid: int = QA_GRID) -> tuple[float, float]:
    """Mean of |C|^2 strictly inside |w| < pi/lam and outside it."""
    resp = f.response(n_grid)
    w = 2.0 * np.pi * np.fft.fftfreq(resp.size)
    inband = np.abs(w) < np.pi / f.lam
    return float(resp[inband].mean()), float(resp[~inband].mean())


def inband_power_fraction(f: NoiseShaper, n_grid: int = QA_GRID) -> float:
    resp = f.response(n_grid)
    w = 2.0 * np.pi * np.fft.fftfreq(resp.size)
    return float(resp[np.abs(w) < np.pi / f.lam].sum() / resp.sum())


def maximum_phase_mirror(f: NoiseShaper) -> np.ndarray:
    """Time-reversed taps: identical |C|^2, every zero reflected outside the circle.

    Not monic, so it cannot drive the quantizer feedback loop; it is for
    filtering white noise directly when checking that stream statistics
    depend on the magnitude response only.
    """
    return f.coefficients[::-1].copy()
