"""Random binning of quantizer-index blocks and ML-within-bin decoding.

Each description stream is cut into blocks of N indices.  A block is
hashed (seeded 64-bit mixing) into one of 2**ceil(N*R) bins and only the
bin index is sent.  The decoder searches, bin by bin, for the most likely
index tuple under a Gaussian model of the dequantized samples given the
dither.  Bins at different rates are nested: the bin at b bits is the low
b bits of the block hash, so one hash per candidate serves a whole sweep.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import theory
from .codec import (
    CodecError,
    Description,
    SchemeParams,
    dequantize,
    encode,
    guard_source,
    source_sequence,
)

EXHAUSTIVE_LIMIT = 10 ** 8
SIDE_INFO_LIMIT = 4 * 10 ** 6
CSV_COLUMNS = ("schema_version", "subset", "R_bin", "blocks", "errors", "error_rate",
               "theory_threshold")


class BinningConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BinningConfig:
    N: int
    R_bin: float
    seed: int = 0
    A: int = 4
    decoder: str = "side_info"
    radius: float = 3.0
    known: tuple[int, ...] = ()

    def __post_init__(self):
        if self.N < 1:
            raise BinningConfigError("block length must be positive")
        if self.R_bin < 0:
            raise BinningConfigError("binning rate must be non-negative")
        if self.A < 0:
            raise BinningConfigError("clamp half-width must be non-negative")
        if self.decoder not in ("exhaustive", "side_info"):
            raise BinningConfigError(f"unknown decoder {self.decoder!r}")

    @property
    def bits(self) -> int:
        # tolerate float noise in N*R_bin
        return int(math.ceil(self.N * self.R_bin - 1e-9))

    @property
    def n_bins(self) -> int:
        return 2 ** self.bits

    @property
    def alphabet(self) -> int:
        return 2 * self.A + 1

    @property
    def injective(self) -> bool:
        return self.alphabet ** self.N <= self.n_bins

    def with_rate(self, R_bin: float) -> "BinningConfig":
        return BinningConfig(self.N, R_bin, self.seed, self.A, self.decoder, self.radius, self.known)


@dataclass
class BinnedStream:
    stream_index: int
    bin_indices: np.ndarray


def default_clamp(params: SchemeParams) -> int:
    return int(math.ceil(4.0 * math.sqrt(params.sigma_x2 + params.sigma_E2) / params.step))


# --- hashing ----------------------------------------------------------------

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(h: np.ndarray) -> np.ndarray:
    h = h ^ (h >> np.uint64(30))
    h = h * _M1
    h = h ^ (h >> np.uint64(27))
    h = h * _M2
    return h ^ (h >> np.uint64(31))


def block_hash(blocks: np.ndarray, stream_index: int, block_position, seed: int) -> np.ndarray:
    """64-bit hash of each row of ``blocks`` (clamped integer indices)."""
    blocks = np.atleast_2d(np.asarray(blocks, dtype=np.int64))
    with np.errstate(over="ignore"):
        head = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN * np.uint64(stream_index + 1))
        h = np.broadcast_to(head, blocks.shape[:1]).copy()
        h = _mix64(h ^ np.asarray(block_position, dtype=np.uint64))
        for t in range(blocks.shape[1]):
            h = _mix64(h + _GOLDEN ^ blocks[:, t].astype(np.uint64))
    return h


def _enumerate(blocks: np.ndarray, A: int) -> np.ndarray:
    blocks = np.atleast_2d(blocks)
    base = 2 * A + 1
    weights = base ** np.arange(blocks.shape[1], dtype=np.uint64)
    return ((blocks + A).astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)


def _unenumerate(code: int, N: int, A: int) -> np.ndarray:
    base = 2 * A + 1
    digits = np.empty(N, dtype=np.int64)
    for t in range(N):
        code, digits[t] = divmod(code, base)
    return digits - A


def _bins_from(blocks: np.ndarray, stream_index: int, block_position, config: BinningConfig):
    if config.injective:
        return _enumerate(blocks, config.A)
    h = block_hash(blocks, stream_index, block_position, config.seed)
    return h & np.uint64(config.n_bins - 1)


def clamp(indices: np.ndarray, A: int) -> np.ndarray:
    return np.clip(indices, -A, A)


def bin_assign(block: Sequence[int], stream_index: int, block_position: int,
               config: BinningConfig) -> int:
    """Bin index of one clamped block of N quantizer indices."""
    block = clamp(np.asarray(block, dtype=np.int64), config.A)
    if block.size != config.N:
        raise BinningConfigError(f"block length {block.size} != N={config.N}")
    return int(_bins_from(block[None, :], stream_index, block_position, config)[0])


def bin_stream(desc: Description, config: BinningConfig, first_block: int = 0,
               n_blocks: int | None = None) -> BinnedStream:
    N = config.N
    total = (desc.indices.size // N) - first_block
    n_blocks = total if n_blocks is None else min(n_blocks, total)
    start = first_block * N
    blocks = clamp(desc.indices[start:start + n_blocks * N], config.A).reshape(n_blocks, N)
    positions = np.arange(first_block, first_block + n_blocks, dtype=np.uint64)
    if config.injective:
        bins = _enumerate(blocks, config.A)
    else:
        bins = block_hash(blocks, desc.stream_index, positions, config.seed) & np.uint64(config.n_bins - 1)
    return BinnedStream(desc.stream_index, bins)


# --- Gaussian model of dequantized blocks -----------------------------------

@dataclass
class BlockModel:
    """Joint covariance of dequantized samples a_hat^(j)_t, t < N, for a set of streams.

    Built from the sinc autocorrelation of the oversampled source and the
    autocorrelation of the shaped quantization noise of the designed filter.
    """
    params: SchemeParams
    N: int
    noise_acf: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if not self.params.nyquist:
            raise BinningConfigError("binning operates on the lambda = L scheme")
        c = self.params.shaper().coefficients
        acf = np.correlate(c, c, mode="full")[c.size - 1:]
        span = self.params.L * (self.N + 1)
        out = np.zeros(span + 1)
        out[:min(acf.size, span + 1)] = acf[:span + 1]
        self.noise_acf = self.params.sigma_E2 * out

    def positions(self, streams: Sequence[int]) -> np.ndarray:
        return np.array([j + t * self.params.L for j in streams for t in range(self.N)])

    def covariance(self, streams: Sequence[int]) -> np.ndarray:
        pos = self.positions(streams)
        diff = pos[:, None] - pos[None, :]
        return (self.params.sigma_x2 * np.sinc(diff / self.params.lam)
                + self.noise_acf[np.abs(diff)])

    def conditional(self, target: int, given: Sequence[int]):
        """Conditional mean map and covariance of one stream's block given others."""
        streams = [target, *given]
        cov = self.covariance(streams)
        N = self.N
        s11 = cov[:N, :N]
        if not given:
            return np.zeros((N, 0)), s11
        s12 = cov[:N, N:]
        s22 = cov[N:, N:]
        gain = np.linalg.solve(s22, s12.T).T
        return gain, s11 - gain @ s12.T

    def conditional_entropy_rate(self, target: int, given: Sequence[int]) -> float:
        """Per-sample H(block | given blocks) estimate: Gaussian h minus log2(step)."""
        _, cov = self.conditional(target, given)
        return theory.gaussian_entropy_bits(cov) / self.N - math.log2(self.params.step)


# --- decoding ---------------------------------------------------------------

@dataclass
class BlockResult:
    decoded: dict[int, np.ndarray] | None
    failure: bool
    truth_excluded: bool = False


def _gauss_loglik(values: np.ndarray, mean: np.ndarray, whitener: np.ndarray) -> np.ndarray:
    w = (values - mean) @ whitener.T
    return -0.5 * np.einsum("ij,ij->i", w, w)


class _Candidates:
    """Candidate blocks of one stream with log-likelihoods and hashes."""

    def __init__(self, blocks, loglik, hashes):
        order = np.lexsort(blocks.T[::-1])
        self.blocks = blocks[order]
        self.loglik = loglik[order]
        self.hashes = hashes[order]

    def best_in_bin(self, target_bin: int, config: BinningConfig):
        if config.injective:
            bins = _enumerate(self.blocks, config.A)
        else:
            bins = self.hashes & np.uint64(config.n_bins - 1)
        hit = np.flatnonzero(bins == np.uint64(target_bin))
        if hit.size == 0:
            return None
        return self.blocks[hit[np.argmax(self.loglik[hit])]]


def _side_info_candidates(model: BlockModel, stream: int, given: dict[int, np.ndarray],
                          z: np.ndarray, block_position: int, config: BinningConfig,
                          truth: np.ndarray | None = None):
    step = model.params.step
    gain, cov = model.conditional(stream, list(given))
    obs = np.concatenate([given[g] for g in given]) if given else np.zeros(0)
    mean = gain @ obs
    sd = np.sqrt(np.diag(cov))
    lo = np.ceil((mean + z - config.radius * sd) / step).astype(np.int64)
    hi = np.floor((mean + z + config.radius * sd) / step).astype(np.int64)
    lo = np.clip(lo, -config.A, config.A)
    hi = np.clip(hi, -config.A, config.A)
    if np.any(hi < lo):
        return None, truth is not None
    ranges = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    count = math.prod(r.size for r in ranges)
    if count > SIDE_INFO_LIMIT:
        raise BinningConfigError(f"side-info ball holds {count} candidates; lower the radius")
    grids = np.meshgrid(*ranges, indexing="ij")
    blocks = np.stack([g.ravel() for g in grids], axis=1)
    whitener = np.linalg.inv(np.linalg.cholesky(cov))
    loglik = _gauss_loglik(blocks * step - z, mean, whitener)
    hashes = block_hash(blocks, stream, block_position, config.seed)
    excluded = False
    if truth is not None:
        excluded = bool(np.any(truth < lo) or np.any(truth > hi))
    return _Candidates(blocks, loglik, hashes), excluded


def decode_bins(bins: dict[int, int], dither: dict[int, np.ndarray], config: BinningConfig,
                model: BlockModel, block_position: int = 0,
                side_info: dict[int, np.ndarray] | None = None,
                truth: dict[int, np.ndarray] | None = None) -> BlockResult:
    """Recover the clamped index blocks behind the received bins.

    ``dither`` maps stream to its N dither values for this block;
    ``side_info`` maps already-known streams to their index blocks (side-info
    mode).  Returns ``failure`` when no candidate matches a bin.
    """
    side_info = side_info or {}
    step = model.params.step
    streams = [s for s in sorted(bins) if s not in side_info]
    if config.injective:
        return BlockResult({s: _unenumerate(bins[s], config.N, config.A) for s in streams}, False)
    if config.decoder == "exhaustive":
        return _decode_exhaustive(bins, dither, config, model, block_position, side_info, streams)
    decoded: dict[int, np.ndarray] = {}
    known_values = {s: side_info[s] * step - dither[s] for s in side_info}
    excluded_any = False
    for s in streams:
        cands, excluded = _side_info_candidates(
            model, s, known_values, dither[s], block_position, config,
            None if truth is None else clamp(truth[s], config.A))
        excluded_any |= excluded
        best = None if cands is None else cands.best_in_bin(bins[s], config)
        if best is None:
            return BlockResult(None, True, excluded_any)
        decoded[s] = best
        known_values[s] = best * step - dither[s]
    return BlockResult(decoded, False, excluded_any)


def _decode_exhaustive(bins, dither, config, model, block_position, side_info, streams):
    step = model.params.step
    N, A = config.N, config.A
    space = config.alphabet ** (N * len(streams))
    if space > EXHAUSTIVE_LIMIT:
        raise BinningConfigError(
            f"exhaustive search over {space} tuples exceeds {EXHAUSTIVE_LIMIT}; use side_info")
    alphabet = np.arange(-A, A + 1)
    all_blocks = np.array(list(itertools.product(alphabet, repeat=N)), dtype=np.int64)
    per_stream = []
    for s in streams:
        ok = _bins_from(all_blocks, s, block_position, config) == np.uint64(bins[s])
        if not ok.any():
            return BlockResult(None, True)
        per_stream.append(all_blocks[ok])
    given = list(side_info)
    order = [*streams, *given]
    cov = model.covariance(order)
    k = N * len(streams)
    known_vals = (np.concatenate([side_info[g] * step - dither[g] for g in given])
                  if given else np.zeros(0))
    if given:
        gain = np.linalg.solve(cov[k:, k:], cov[:k, k:].T).T
        cond = cov[:k, :k] - gain @ cov[:k, k:].T
        mean = gain @ known_vals
    else:
        cond, mean = cov, np.zeros(k)
    whitener = np.linalg.inv(np.linalg.cholesky(cond))
    z_all = np.concatenate([dither[s] for s in streams])
    best_ll, best = -np.inf, None
    # lexicographic order over (stream, sample); the first maximum wins ties
    for combo in _product_chunks(per_stream):
        vals = combo * step - z_all
        ll = _gauss_loglik(vals, mean, whitener)
        i = int(np.argmax(ll))
        if ll[i] > best_ll:
            best_ll, best = ll[i], combo[i]
    decoded = {s: best[r * N:(r + 1) * N] for r, s in enumerate(streams)}
    return BlockResult(decoded, False)


def _product_chunks(per_stream: list[np.ndarray], chunk: int = 1 << 18):
    sizes = [p.shape[0] for p in per_stream]
    total = math.prod(sizes)
    for start in range(0, total, chunk):
        flat = np.arange(start, min(total, start + chunk))
        idx = np.unravel_index(flat, sizes)
        yield np.concatenate([p[i] for p, i in zip(per_stream, idx)], axis=1)


# --- sweeps -----------------------------------------------------------------

@dataclass
class SweepPoint:
    subset: tuple[int, ...]
    R_bin: float
    blocks: int
    errors: int
    failures: int
    truth_excluded: int
    theory_threshold: float

    @property
    def error_rate(self) -> float:
        return self.errors / self.blocks if self.blocks else float("nan")

    @property
    def stderr(self) -> float:
        p = self.error_rate
        return math.sqrt(max(p * (1 - p), 1e-12) / self.blocks)


@dataclass
class SweepResult:
    points: list[SweepPoint]
    clamp_fraction: float
    A: int
    finite_n_threshold: dict[tuple[int, ...], float]

    def curve(self, subset: Sequence[int]) -> list[SweepPoint]:
        subset = tuple(subset)
        return [p for p in self.points if p.subset == subset]


def theory_threshold(params: SchemeParams, subset: Sequence[int], config: BinningConfig) -> float:
    """Per-sample binning rate the decoder needs, from the Gaussian stream model.

    Side-info mode decodes one stream at a time, so the first stream after
    the known ones binds.  Exhaustive mode must resolve every sub-tuple of
    the unknown streams given the rest.
    """
    d = params.dsq()
    known = [s for s in config.known if s in subset]
    unknown = len(subset) - len(known)
    if unknown <= 0:
        return 0.0
    if config.decoder == "side_info":
        return theory.conditional_rate(d, len(known), 1, params.sigma_x2)
    return max(theory.conditional_rate(d, len(subset) - s, s, params.sigma_x2)
               for s in range(1, unknown + 1))


def rate_sweep(params: SchemeParams, config: BinningConfig, rates: Sequence[float],
               subsets: Iterable[Sequence[int]], n_blocks: int = 2000,
               trial: int = 0) -> SweepResult:
    """Block error rate against binning rate for each subset, with theory thresholds.

    One encoder run supplies every block; the same blocks are reused at every
    rate, so curves are monotone up to the nesting of bins.
    """
    if not params.nyquist:
        raise BinningConfigError("binning sweeps use the lambda = L scheme")
    rates = sorted(rates)
    subsets = [tuple(sorted(s)) for s in subsets]
    N, L = config.N, params.L
    first_block = -(-guard_source(params) // N) + 1
    per_stream = (first_block * 2 + n_blocks) * N
    n_source = per_stream  # lambda = L: one stream sample per source sample
    x = source_sequence(params.seed, trial, n_source, params.sigma_x2)
    enc = encode(x, params, trial=trial)
    descs = {d.stream_index: d for d in enc.descriptions}
    a_hat_z = _dither_blocks(enc.descriptions, params, N, first_block, n_blocks)
    truth = {s: d.indices[first_block * N:(first_block + n_blocks) * N].reshape(n_blocks, N)
             for s, d in descs.items()}
    raw = np.concatenate([t.ravel() for t in truth.values()])
    clamp_fraction = float(np.mean(np.abs(raw) > config.A))
    model = BlockModel(params, N)
    points: list[SweepPoint] = []
    finite = {}
    for subset in subsets:
        known = [s for s in config.known if s in subset]
        unknown = [s for s in subset if s not in known]
        finite[subset] = (model.conditional_entropy_rate(unknown[0], known) if unknown else 0.0)
        thr = theory_threshold(params, subset, config)
        tallies = {r: [0, 0, 0] for r in rates}
        for b in range(n_blocks):
            pos = first_block + b
            dither = {s: a_hat_z[s][b] for s in subset}
            clamped = {s: clamp(truth[s][b], config.A) for s in subset}
            side = {s: clamped[s] for s in known}
            _sweep_block(params, config, model, rates, subset, unknown, pos, dither,
                         clamped, side, tallies)
        for r in rates:
            errors, failures, excluded = tallies[r]
            points.append(SweepPoint(subset, r, n_blocks, errors, failures, excluded, thr))
    return SweepResult(points, clamp_fraction, config.A, finite)


def _dither_blocks(descs, params, N, first_block, n_blocks):
    from .codec import dither_sequence
    out = {}
    for d in descs:
        z = dither_sequence(*d.dither_key, d.indices.size * params.L, params.step)[d.stream_index::params.L]
        out[d.stream_index] = z[first_block * N:(first_block + n_blocks) * N].reshape(n_blocks, N)
    return out


def _sweep_block(params, config, model, rates, subset, unknown, pos, dither, clamped, side, tallies):
    if config.decoder == "side_info" and len(unknown) == 1:
        # one unknown stream: candidates and hashes do not depend on the rate
        s = unknown[0]
        step = params.step
        known_values = {k: side[k] * step - dither[k] for k in side}
        cands, excluded = _side_info_candidates(model, s, known_values, dither[s], pos,
                                                config, clamped[s])
        for r in rates:
            cfg = config.with_rate(r)
            target = int(_bins_from(clamped[s][None, :], s, pos, cfg)[0])
            if cfg.injective:
                best = _unenumerate(target, cfg.N, cfg.A)
            else:
                best = None if cands is None else cands.best_in_bin(target, cfg)
            t = tallies[r]
            if best is None:
                t[0] += 1
                t[1] += 1
            elif not np.array_equal(best, clamped[s]):
                t[0] += 1
            t[2] += int(excluded)
        return
    for r in rates:
        cfg = config.with_rate(r)
        bins = {s: int(_bins_from(clamped[s][None, :], s, pos, cfg)[0]) for s in subset}
        res = decode_bins(bins, dither, cfg, model, pos, side_info=side,
                          truth={s: clamped[s] for s in subset})
        t = tallies[r]
        wrong = res.failure or any(not np.array_equal(res.decoded[s], clamped[s]) for s in unknown)
        t[0] += int(wrong)
        t[1] += int(res.failure)
        t[2] += int(res.truth_excluded)


def crossing_rate(curve: Sequence[SweepPoint], level: float = 0.5) -> float:
    """Binning rate where the error curve first drops through ``level`` (linear interpolation)."""
    pts = sorted(curve, key=lambda p: p.R_bin)
    for lo, hi in zip(pts, pts[1:]):
        if lo.error_rate >= level > hi.error_rate:
            frac = (lo.error_rate - level) / (lo.error_rate - hi.error_rate)
            return lo.R_bin + frac * (hi.R_bin - lo.R_bin)
    return float("nan")


def write_sweep_csv(path, result: SweepResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for p in result.points:
            w.writerow([1, "{" + ",".join(map(str, p.subset)) + "}", f"{p.R_bin:.6g}", p.blocks,
                        p.errors, f"{p.error_rate:.6g}", f"{p.theory_threshold:.6g}"])
