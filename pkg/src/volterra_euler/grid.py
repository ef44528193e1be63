"""Uniform time partitions of ``[0, T]`` and the floor maps onto them."""
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidPartitionError


@dataclass(frozen=True)
class Partition:
    """Uniform grid ``t_i = i*T/N``, ``i = 0..N``.

    Build it with :func:`make_uniform`; the constructor does no validation.
    """

    T: float
    N: int
    nodes: np.ndarray = field(repr=False, compare=False)

    @property
    def mesh(self):
        return self.T / self.N

    @property
    def delta(self):
        return self.T / self.N

    def __eq__(self, other):
        return isinstance(other, Partition) and self.T == other.T and self.N == other.N

    def __hash__(self):
        return hash((self.T, self.N))

    def refines(self, other):
        """True if every node of ``other`` is a node of ``self``."""
        return self.T == other.T and self.N % other.N == 0


def make_uniform(T, N):
    """Uniform partition with ``N`` steps; requires ``T/N <= 1``."""
    if isinstance(N, bool) or int(N) != N:
        raise InvalidPartitionError(f"N must be an integer, got {N!r}")
    N = int(N)
    T = float(T)
    if not np.isfinite(T) or T <= 0:
        raise InvalidPartitionError(f"T must be positive, got {T}")
    if N < 1:
        raise InvalidPartitionError(f"N must be >= 1, got {N}")
    if T / N > 1:
        raise InvalidPartitionError(f"mesh T/N = {T / N} exceeds 1")
    nodes = np.arange(N + 1, dtype=np.float64) * T / N
    nodes[-1] = T
    nodes.setflags(write=False)
    return Partition(T=T, N=N, nodes=nodes)


def pi_index(p, t):
    """Index ``i`` with ``t in [t_i, t_{i+1})``; ``t = T`` maps to ``N-1``.

    Accepts scalars or arrays.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(t_arr)) or np.any(t_arr < 0) or np.any(t_arr > p.T):
        raise DomainError(f"time {t} outside [0, {p.T}]")
    idx = np.searchsorted(p.nodes, t_arr, side="right") - 1
    idx = np.minimum(idx, p.N - 1)
    if idx.ndim == 0:
        return int(idx)
    return idx


def tau(p, t):
    """Grid node ``t_i`` at or below ``t`` (``tau(T) = t_{N-1}``)."""
    idx = pi_index(p, t)
    if np.ndim(idx) == 0:
        return float(p.nodes[idx])
    return p.nodes[idx]
