"""Seeded Brownian increment ensembles.

Paths are generated in fixed blocks of ``BLOCK`` paths; block ``b`` draws
from its own PCG64 stream keyed by ``SeedSequence(seed, spawn_key=(b,))``.
Path ``m`` therefore depends only on ``(seed, m, N)``: not on ``M``, not on
how many workers generated the blocks, and not on their order.
"""
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .grid import Partition, make_uniform

BLOCK = 4096

MAGIC = b"VEPATHS\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIdQQQ")  # magic, version, flags, T, N, M, seed


@dataclass(frozen=True)
class PathEnsemble:
    """``M`` Brownian paths on a partition, stored as increments ``(M, N)``."""

    partition: Partition
    increments: np.ndarray = field(repr=False)
    seed: int = 0
    antithetic: bool = False

    @property
    def M(self):
        return self.increments.shape[0]

    @property
    def N(self):
        return self.partition.N

    def brownian(self):
        """Node values ``W(t_i)``, shape ``(M, N+1)``, ``W(0) = 0``.

        Summed strictly left to right (``np.cumsum``), so ``W(t_N)`` is the
        sequential sum of a path's increments.
        """
        w = np.zeros((self.M, self.N + 1))
        np.cumsum(self.increments, axis=1, out=w[:, 1:])
        return w


def _block_normals(seed, block, rows, n):
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(block,))
    rng = np.random.Generator(np.random.PCG64(ss))
    return rng.standard_normal((rows, n))


def _standard_normals(seed, count, n, workers=1):
    out = np.empty((count, n))
    blocks = range((count + BLOCK - 1) // BLOCK)

    def fill(b):
        lo = b * BLOCK
        hi = min(count, lo + BLOCK)
        out[lo:hi] = _block_normals(seed, b, hi - lo, n)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, blocks))
    else:
        for b in blocks:
            fill(b)
    return out


def _check_seed(seed):
    if isinstance(seed, bool) or int(seed) != seed or not 0 <= int(seed) < 2**64:
        raise InvalidArgumentError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)


def sample(partition, M, seed=0, antithetic=False, workers=1):
    """Draw ``M`` paths of i.i.d. ``Normal(0, Delta)`` increments.

    With ``antithetic`` set, path ``2j+1`` is the negation of path ``2j`` and
    ``M`` must be even.
    """
    if isinstance(M, bool) or int(M) != M or M < 1:
        raise InvalidArgumentError(f"M must be a positive integer, got {M!r}")
    M = int(M)
    seed = _check_seed(seed)
    if antithetic and M % 2:
        raise InvalidArgumentError("antithetic sampling needs an even M")
    scale = np.sqrt(partition.delta)
    if antithetic:
        base = _standard_normals(seed, M // 2, partition.N, workers) * scale
        inc = np.empty((M, partition.N))
        inc[0::2] = base
        inc[1::2] = -base
    else:
        inc = _standard_normals(seed, M, partition.N, workers)
        inc *= scale
    inc.setflags(write=False)
    return PathEnsemble(partition, inc, seed=seed, antithetic=antithetic)


def coarsen(e, factor):
    """Sum consecutive groups of ``factor`` increments (same Brownian paths)."""
    if isinstance(factor, bool) or int(factor) != factor or factor < 1:
        raise InvalidArgumentError(f"factor must be a positive integer, got {factor!r}")
    factor = int(factor)
    if e.N % factor:
        raise InvalidArgumentError(f"factor {factor} does not divide N={e.N}")
    if factor == 1:
        return e
    coarse = make_uniform(e.partition.T, e.N // factor)
    inc = e.increments[:, 0::factor].copy()
    for j in range(1, factor):
        inc += e.increments[:, j::factor]
    inc.setflags(write=False)
    return PathEnsemble(coarse, inc, seed=e.seed, antithetic=e.antithetic)


def dump(e, path):
    """Write the ensemble as a little-endian binary file."""
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, int(e.antithetic),
                          e.partition.T, e.N, e.M, e.seed)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(e.increments, dtype="<f8").tobytes())


def load(path):
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise InvalidArgumentError(f"{path}: truncated header")
        magic, version, flags, T, N, M, seed = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise InvalidArgumentError(f"{path}: not a path ensemble file")
        if version != FORMAT_VERSION:
            raise InvalidArgumentError(f"{path}: unsupported format version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != M * N:
        raise InvalidArgumentError(f"{path}: expected {M * N} values, found {data.size}")
    inc = data.astype(np.float64).reshape(M, N)
    inc.setflags(write=False)
    return PathEnsemble(make_uniform(T, N), inc, seed=seed, antithetic=bool(flags & 1))
