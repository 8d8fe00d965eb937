"""Closed-form rates and distortions for the symmetric K-or-L Gaussian problem.

Everything here is a pure function of scalar parameters.  Results for the
PPR test channel are defined for a unit-variance source and are rescaled
for general ``sigma_x2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

IDEAL_G = 1.0 / (2.0 * math.pi * math.e)
SCALAR_G = 1.0 / 12.0


class DomainError(ValueError):
    """Parameters outside the region where a formula is defined."""


class InfeasibleError(DomainError):
    """A distortion pair that no noise-shaping parameter delta >= 1 reaches."""


class SingularCovarianceError(DomainError):
    pass


def quantizer_loss(G: float) -> float:
    """Rate penalty 0.5*log2(2*pi*e*G) of a quantizer with second moment G."""
    return 0.5 * math.log2(2.0 * math.pi * math.e * G)


@dataclass(frozen=True)
class KorLPoint:
    sigma_x2: float
    d_K: float
    d_L: float
    K: int
    L: int

    def validate(self) -> None:
        if not (1 <= self.K < self.L):
            raise DomainError(f"need 1 <= K < L, got K={self.K}, L={self.L}")
        if not (0.0 < self.d_L < self.d_K < self.sigma_x2):
            raise DomainError(
                f"need 0 < d_L < d_K < sigma_x2, got d_L={self.d_L}, d_K={self.d_K}, "
                f"sigma_x2={self.sigma_x2}"
            )


@dataclass(frozen=True)
class PPRParams:
    sigma_V2: float
    rho: float


@dataclass(frozen=True)
class DSQParams:
    sigma_E2: float
    delta: float
    L: int
    lam: int | None = None

    def __post_init__(self):
        if self.lam is None:
            object.__setattr__(self, "lam", self.L)
        if self.delta < 1.0:
            raise DomainError(f"delta must be >= 1, got {self.delta}")
        if self.sigma_E2 < 0.0:
            raise DomainError(f"sigma_E2 must be >= 0, got {self.sigma_E2}")
        if self.L < 1:
            raise DomainError("L must be positive")


@dataclass(frozen=True)
class RateValue:
    bits: float
    includes_quantizer_loss: bool = False
    G: float = IDEAL_G
    argmax_j: int | None = None
    below_floor: bool = False

    def __float__(self) -> float:
        return self.bits


def rdf_k_or_l(point: KorLPoint) -> RateValue:
    """Per-description rate R_{K,L}(d_K, d_L) of a memoryless Gaussian source.

    The result is flagged ``below_floor`` when it drops under the rate the
    central receiver alone needs, ``log2(sigma_x2/d_L) / (2L)``; the formula
    is still returned as written in that case.
    """
    point.validate()
    s, dK, dL, K, L = point.sigma_x2, point.d_K, point.d_L, point.K, point.L
    first = ((L - K) * (s - dL)) / (L * (dK - dL))
    second = (K * s * (dK - dL)) / ((L - K) * dL * (s - dK))
    if first <= 0.0 or second <= 0.0:
        raise DomainError("log argument of the K-or-L rate is not positive")
    bits = math.log2(first) / (2 * K) + math.log2(second) / (2 * L)
    floor = math.log2(s / dL) / (2 * L)
    return RateValue(bits, below_floor=bits < floor)


def ppr_distortion(p: PPRParams, j: int, sigma_x2: float = 1.0) -> float:
    if j < 1:
        raise DomainError("subset size must be >= 1")
    v = p.sigma_V2 / sigma_x2
    eff = v * (1.0 + (j - 1) * p.rho)
    if eff < 0.0:
        raise DomainError(f"1 + (j-1) rho < 0 for j={j}, rho={p.rho}")
    return sigma_x2 * eff / (j + eff)


def ppr_rate(p: PPRParams, K: int, L: int, sigma_x2: float = 1.0) -> RateValue:
    """Ideal (lattice-limit) PPR rate per description."""
    if not (1 <= K <= L):
        raise DomainError(f"need 1 <= K <= L, got K={K}, L={L}")
    if p.sigma_V2 <= 0.0:
        raise DomainError("sigma_V2 must be positive")
    if p.rho >= 1.0:
        raise DomainError("rho = 1 makes the PPR rate undefined")
    if 1.0 + (L - 1) * p.rho <= 0.0:
        raise DomainError("1 + (L-1) rho must be positive")
    v = p.sigma_V2 / sigma_x2
    inner_k = (K + v * (1.0 + (K - 1) * p.rho)) / (v * (1.0 - p.rho))
    inner_l = (1.0 - p.rho) / (1.0 + (L - 1) * p.rho)
    if inner_k <= 0.0:
        raise DomainError("K-term of the PPR rate is not positive")
    bits = 0.5 * (math.log2(inner_k) / K + math.log2(inner_l) / L)
    return RateValue(bits)


def _noise_term(d: DSQParams, j: int) -> float:
    # variance of the averaged phase-corrected noise over j descriptions
    L, delta = d.L, d.delta
    return d.sigma_E2 * (delta ** (1 - L) / L + (1.0 / j - 1.0 / L) * delta)


def _check_j(d: DSQParams, j: int) -> None:
    if not (1 <= j <= d.L):
        raise DomainError(f"subset size must be in 1..{d.L}, got {j}")


def dsq_distortion(d: DSQParams, j: int, sigma_x2: float = 1.0) -> float:
    """MSE of the Nyquist-rate decoder from any j of the L descriptions."""
    _check_j(d, j)
    n = _noise_term(d, j)
    return sigma_x2 * n / (sigma_x2 + n)


def wiener_alpha(d: DSQParams, j: int, sigma_x2: float = 1.0) -> float:
    _check_j(d, j)
    return sigma_x2 / (sigma_x2 + _noise_term(d, j))


def map_dsq_to_ppr(d: DSQParams) -> PPRParams:
    L, delta, s = d.L, d.delta, d.sigma_E2
    sigma_V2 = (s / L) * (delta ** (1 - L) + (L - 1) * delta)
    rho_v = -(s / L) * (delta - delta ** (1 - L))
    return PPRParams(sigma_V2=sigma_V2, rho=rho_v / sigma_V2)


def solve_delta_sigma(d_K: float, d_L: float, K: int, L: int,
                      sigma_x2: float = 1.0) -> DSQParams:
    """Find (delta, sigma_E2) reproducing the distortion pair (d_K, d_L).

    Uses the closed-form inversion: the ratio of the two noise terms equals
    ``1 + (L/K - 1) * delta**L``.
    """
    if not (1 <= K < L):
        raise DomainError(f"need 1 <= K < L, got K={K}, L={L}")
    if not (0.0 < d_L < sigma_x2 and 0.0 < d_K < sigma_x2):
        raise DomainError("distortions must lie in (0, sigma_x2)")
    n_K = sigma_x2 * d_K / (sigma_x2 - d_K)
    n_L = sigma_x2 * d_L / (sigma_x2 - d_L)
    delta_pow = (n_K / n_L - 1.0) / (L / K - 1.0)
    if delta_pow < 1.0 - 1e-9:
        raise InfeasibleError(
            f"d_K/d_L too small: needs delta**L = {delta_pow:.6g} < 1 (white noise is the limit)"
        )
    delta = max(delta_pow, 1.0) ** (1.0 / L)
    sigma_E2 = L * n_L * delta ** (L - 1)
    return DSQParams(sigma_E2=sigma_E2, delta=delta, L=L)


def stream_cross_covariance(d: DSQParams, i: int, j: int, k: int = 0) -> float:
    """Covariance between phase-corrected noise streams i and j at lag k."""
    L = d.L
    if not (0 <= i < L and 0 <= j < L):
        raise DomainError(f"stream indices must be in 0..{L - 1}")
    if k != 0:
        return 0.0
    if i == j:
        return d.sigma_E2 * (d.delta ** (1 - L) / L + (L - 1) * d.delta / L)
    return -(d.sigma_E2 / L) * (d.delta - d.delta ** (1 - L))


def noise_covariance(d: DSQParams, members=None) -> np.ndarray:
    """Lag-0 covariance matrix of the phase-corrected noise for a set of streams."""
    members = list(range(d.L)) if members is None else list(members)
    return np.array([[stream_cross_covariance(d, a, b) for b in members] for a in members])


def observation_covariance(d: DSQParams, j: int, sigma_x2: float = 1.0) -> np.ndarray:
    """Covariance of (x + noise) seen through j phase-corrected streams."""
    return sigma_x2 * np.ones((j, j)) + noise_covariance(d, range(j))


def gaussian_entropy_bits(cov: np.ndarray) -> float:
    """Differential entropy (bits) of a zero-mean Gaussian vector."""
    cov = np.atleast_2d(cov)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("covariance is not positive definite") from exc
    n = cov.shape[0]
    logdet2 = 2.0 * np.sum(np.log2(np.diag(chol)))
    return 0.5 * (n * math.log2(2.0 * math.pi * math.e) + logdet2)


def dsq_rb_rate(d: DSQParams, K: int, sigma_x2: float = 1.0, G: float = SCALAR_G) -> RateValue:
    """Random-binning rate of the Nyquist-rate scheme, per description.

    For every subset size j in K..L the per-description Gaussian entropy of
    j phase-corrected streams, minus the entropy of the white quantization
    noise, is evaluated; the largest value binds.  ``G`` selects the
    quantizer: the loss 0.5*log2(2*pi*e*G) vanishes for the ideal lattice.
    """
    if not (1 <= K <= d.L):
        raise DomainError(f"need 1 <= K <= L, got K={K}, L={d.L}")
    if d.sigma_E2 <= 0.0:
        raise SingularCovarianceError("sigma_E2 must be positive for a finite rate")
    noise_bits = 0.5 * math.log2(2.0 * math.pi * math.e * d.sigma_E2)
    best, best_j = -math.inf, None
    for j in range(K, d.L + 1):
        r = gaussian_entropy_bits(observation_covariance(d, j, sigma_x2)) / j - noise_bits
        if r > best:
            best, best_j = r, j
    loss = quantizer_loss(G)
    return RateValue(best + loss, includes_quantizer_loss=G != IDEAL_G, G=G, argmax_j=best_j)


def conditional_rate(d: DSQParams, known: int, decoded: int = 1,
                     sigma_x2: float = 1.0, G: float = SCALAR_G) -> float:
    """Per-sample rate to losslessly send ``decoded`` streams given ``known`` others.

    Gaussian conditional entropy of the phase-corrected observations, minus
    the quantization-noise entropy, plus the quantizer loss.
    """
    total = known + decoded
    h_all = gaussian_entropy_bits(observation_covariance(d, total, sigma_x2))
    h_known = gaussian_entropy_bits(observation_covariance(d, known, sigma_x2)) if known else 0.0
    noise_bits = 0.5 * math.log2(2.0 * math.pi * math.e * d.sigma_E2)
    return (h_all - h_known) / decoded - noise_bits + quantizer_loss(G)


def ecdq_gaussian_rate(sigma_x2: float, equivalent_noise_var: float, sigma_E2: float,
                       G: float = SCALAR_G) -> float:
    """Gaussian upper bound on H(index | dither) for a memoryless ECDQ stream."""
    return (0.5 * math.log2((sigma_x2 + equivalent_noise_var) / sigma_E2)
            + quantizer_loss(G))
