"""Parameter gradients, sample Jacobians and streaming numerical rank."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Iterator

import numpy as np
import scipy.linalg

from . import _kernels
from .network import DEFAULT_ZERO_ATOL, Network, ShapeMismatchError, as_arch, label_batch
from .rng import keyed_rng

log = logging.getLogger(__name__)

SAMPLE_BLOCK = 1024
MAX_RESAMPLE_ATTEMPTS = 100
DEFAULT_REL_TOL = 1e-6


class NonFiniteError(ArithmeticError):
    pass


def fdim_upper_bound(arch) -> int:
    """D minus one scaling direction per hidden neuron."""
    arch = as_arch(arch)
    return arch.D - arch.n_hidden


def grad_wrt_params(params: Network, x, backend=None) -> np.ndarray:
    """Gradient of every output coordinate; shape (n_d, D), flat order."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.arch.n_in,):
        raise ShapeMismatchError(f"x has shape {x.shape}, expected ({params.arch.n_in},)")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("input contains non-finite values")
    with np.errstate(over="ignore", invalid="ignore"):
        g = _kernels.grad_rows(params.flat, params.widths_array, x[None], backend=backend,
                                out_bias=params.arch.output_bias)
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("gradient overflowed")
    return g


# ------------------------------------------------------------------ sampling

def _normal(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape)


def sample_points(params: Network, start: int, stop: int, seed: int,
                  zero_atol: float = DEFAULT_ZERO_ATOL,
                  sampler: Callable | None = None) -> tuple[np.ndarray, int]:
    """Points ``start..stop-1`` of the keyed sample stream, fold-free.

    Point i depends only on (seed, i), so any prefix of the stream is the
    same whatever block sizes the caller uses.  Points whose trace has a hidden
    pre-activation within ``zero_atol`` of zero are redrawn from their own
    keyed stream; the number of redraws is returned.
    """
    sampler = sampler or _normal
    n0 = params.arch.n_in
    pts = np.empty((stop - start, n0))
    b0, b1 = start // SAMPLE_BLOCK, (stop - 1) // SAMPLE_BLOCK
    for blk in range(b0, b1 + 1):
        block = sampler(keyed_rng(seed, "samples", blk), (SAMPLE_BLOCK, n0))
        lo = max(start, blk * SAMPLE_BLOCK)
        hi = min(stop, (blk + 1) * SAMPLE_BLOCK)
        pts[lo - start:hi - start] = block[lo - blk * SAMPLE_BLOCK:hi - blk * SAMPLE_BLOCK]
    resampled = 0
    # the output layer is affine, so only hidden zeros break smoothness
    nh = params.arch.n_hidden
    bad = np.flatnonzero(np.any(label_batch(params, pts, zero_atol)[:, :nh] == 0, axis=1))
    for r in bad:
        for attempt in range(MAX_RESAMPLE_ATTEMPTS):
            cand = sampler(keyed_rng(seed, "resample", start + int(r), attempt), (1, n0))
            resampled += 1
            if not np.any(label_batch(params, cand, zero_atol)[:, :nh] == 0):
                pts[r] = cand[0]
                break
        else:
            raise RuntimeError(f"could not draw a fold-free point for index {start + r}")
    return pts, resampled


@dataclass
class JacobianBatch:
    matrix: np.ndarray
    points: np.ndarray
    seed: int
    resampled: int = 0


def batch_jacobian(params: Network, m: int, seed: int, zero_atol: float = DEFAULT_ZERO_ATOL,
                   sampler: Callable | None = None, backend=None) -> JacobianBatch:
    """Jacobian of the stacked evaluation map at m keyed sample points."""
    if m < 1:
        raise ValueError("m must be at least 1")
    pts, resampled = sample_points(params, 0, m, seed, zero_atol, sampler)
    mat = _kernels.grad_rows(params.flat, params.widths_array, pts, backend=backend,
                             out_bias=params.arch.output_bias)
    return JacobianBatch(matrix=mat, points=pts, seed=seed, resampled=resampled)


def jacobian_blocks(params: Network, m: int, seed: int, block: int = SAMPLE_BLOCK,
                    zero_atol: float = DEFAULT_ZERO_ATOL, sampler=None,
                    backend=None) -> Iterator[tuple[int, np.ndarray, int]]:
    """Yield (points_so_far, gradient rows, resamples) for consecutive blocks."""
    D = params.arch.D
    n_out = params.arch.n_out
    buf = np.empty((block * n_out, D))
    for lo in range(0, m, block):
        hi = min(m, lo + block)
        pts, res = sample_points(params, lo, hi, seed, zero_atol, sampler)
        rows = _kernels.grad_rows(params.flat, params.widths_array, pts,
                                  out=buf[:(hi - lo) * n_out], backend=backend,
                                  out_bias=params.arch.output_bias)
        yield hi, rows, res


# ---------------------------------------------------------------------- rank

class RankAccumulator:
    """Streaming numerical rank of a tall matrix fed in row blocks.

    ``method="qr"`` keeps the triangular factor of the rows seen so far
    (rank from its singular values, identical to an SVD of the full matrix up
    to rounding).  ``method="gram"`` accumulates the Gram matrix, which is
    about 4x cheaper but only resolves singular values above roughly
    sqrt(machine eps) * sigma_max; it is used when rel_tol >= 1e-7.
    """

    def __init__(self, ncols: int, rel_tol: float = DEFAULT_REL_TOL, method: str = "auto"):
        if method == "auto":
            method = "gram" if rel_tol >= 1e-7 else "qr"
        if method not in ("gram", "qr"):
            raise ValueError(f"unknown rank method {method!r}")
        self.ncols = ncols
        self.rel_tol = rel_tol
        self.method = method
        self.rows_seen = 0
        self._G = np.zeros((ncols, ncols)) if method == "gram" else None
        self._R = np.zeros((0, ncols))

    def add(self, rows) -> None:
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != self.ncols:
            raise ValueError(f"rows must have {self.ncols} columns")
        if not np.all(np.isfinite(rows)):
            raise NonFiniteError("rank accumulator received non-finite rows")
        if rows.shape[0] == 0:
            return
        self.rows_seen += rows.shape[0]
        if self.method == "gram":
            self._G += rows.T @ rows
        else:
            stacked = np.vstack([self._R, rows])
            self._R = scipy.linalg.qr(stacked, mode="r", check_finite=False)[0][:self.ncols]

    def singular_values(self) -> np.ndarray:
        if self.rows_seen == 0:
            return np.zeros(0)
        if self.method == "gram":
            ev = np.linalg.eigvalsh(self._G)[::-1]
            return np.sqrt(np.clip(ev, 0.0, None))
        return scipy.linalg.svd(self._R, compute_uv=False, check_finite=False)

    def rank(self) -> int:
        s = self.singular_values()
        if s.size == 0 or s[0] == 0.0:
            return 0
        return int(np.count_nonzero(s > self.rel_tol * s[0]))


def numerical_rank(matrix, rel_tol: float = DEFAULT_REL_TOL, cap: int | None = None,
                   method: str = "qr", block_rows: int = 4096) -> int:
    """Number of singular values above rel_tol * sigma_max, streamed by rows.

    With ``cap`` the rank is checked after cap, 2 cap, 4 cap, ... rows and the
    function returns as soon as it reaches the cap.
    """
    A = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if A.size == 0:
        return 0
    acc = RankAccumulator(A.shape[1], rel_tol, method)
    nxt = cap if cap else None
    for lo in range(0, A.shape[0], block_rows):
        acc.add(A[lo:lo + block_rows])
        if nxt is not None and acc.rows_seen >= nxt:
            r = acc.rank()
            if r >= cap:
                return r
            while nxt <= acc.rows_seen:
                nxt *= 2
    return acc.rank()


@dataclass
class FdimEstimate:
    rank: int
    m: int
    tolerance: float
    upper_bound: int
    attained_max: bool
    resampled: int = 0
    rows_used: int = 0
    seed: int = 0
    method: str = "gram"

    def to_dict(self) -> dict:
        return asdict(self)


def rank_at_sample_counts(params: Network, counts, seed: int, rel_tol: float = DEFAULT_REL_TOL,
                          method: str = "auto", cap: int | None = None,
                          zero_atol: float = DEFAULT_ZERO_ATOL, sampler=None,
                          backend=None) -> tuple[list[int], list[int], int]:
    """Ranks of the sample Jacobian at each prefix length in ``counts``.

    One pass over the keyed sample stream; every count reuses the rows of
    the smaller ones, so the ranks are nondecreasing.  Returns (ranks,
    rows_used, resamples).  When ``cap`` is reached, the remaining counts
    report the capped rank without drawing more samples; intermediate
    checks happen after cap, 2 cap, 4 cap ... rows.
    """
    counts = [int(c) for c in counts]
    if any(c < 1 for c in counts) or counts != sorted(counts):
        raise ValueError("sample counts must be positive and ascending")
    D = params.arch.D
    n_out = params.arch.n_out
    acc = RankAccumulator(D, rel_tol, method)
    ranks: list[int] = []
    rows_used: list[int] = []
    resampled = 0
    nxt = cap
    done_at = None
    ci = 0
    m = counts[-1]
    for hi, rows, res in jacobian_blocks(params, m, seed, zero_atol=zero_atol,
                                         sampler=sampler, backend=backend):
        lo = hi - rows.shape[0] // n_out
        resampled += res
        # split the block at requested prefix boundaries
        pos = lo
        while ci < len(counts) and counts[ci] <= hi:
            c = counts[ci]
            acc.add(rows[(pos - lo) * n_out:(c - lo) * n_out])
            pos = c
            ranks.append(acc.rank())
            rows_used.append(acc.rows_seen)
            ci += 1
            if cap is not None and ranks[-1] >= cap:
                done_at = ranks[-1]
                break
        if done_at is not None:
            break
        acc.add(rows[(pos - lo) * n_out:])
        if nxt is not None and acc.rows_seen >= nxt:
            r = acc.rank()
            while nxt <= acc.rows_seen:
                nxt *= 2
            if r >= cap:
                done_at = r
                break
    if done_at is not None:
        while len(ranks) < len(counts):
            ranks.append(done_at)
            rows_used.append(acc.rows_seen)
    return ranks, rows_used, resampled


def estimate_fdim(params: Network, m_multiplier: int = 100, seed: int = 0,
                  rel_tol: float = DEFAULT_REL_TOL, method: str = "auto",
                  zero_atol: float = DEFAULT_ZERO_ATOL, early_exit: bool = True,
                  sampler=None, backend=None) -> FdimEstimate:
    """Sampled lower bound on functional dimension.

    m = m_multiplier * upper_bound points from the keyed N(0, I) stream.
    """
    if m_multiplier < 1:
        raise ValueError("m_multiplier must be at least 1")
    ub = fdim_upper_bound(params.arch)
    m = int(m_multiplier) * ub
    if method == "auto":
        method = "gram" if rel_tol >= 1e-7 else "qr"
    ranks, used, res = rank_at_sample_counts(
        params, [m], seed, rel_tol, method, cap=ub if early_exit else None,
        zero_atol=zero_atol, sampler=sampler, backend=backend)
    r = ranks[0]
    if r > ub:
        log.warning("rank %d exceeds the upper bound %d for %s: tolerance failure",
                    r, ub, params.arch)
    return FdimEstimate(rank=r, m=m, tolerance=rel_tol, upper_bound=ub,
                        attained_max=(r == ub), resampled=res, rows_used=used[0],
                        seed=seed, method=method)
