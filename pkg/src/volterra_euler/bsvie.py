"""Triangular backward Euler scheme for BSVIEs.

For every outer index ``k`` the scheme runs a backward recursion::

    Y^k(t_N) = g(t_k, x(T))
    Z^k(t_l) = E[ (dW_l / Delta) (Y^k(t_{l+1}) + f_kl Delta) | F_l ]
    Y^k(t_l) = E[ Y^k(t_{l+1}) + f_kl Delta | F_l ]
    f_kl     = f(t_k, t_l, x(t_l), Y^l(t_{l+1}), Z^k(t_l))

for ``k <= l``. The recursions are coupled only through the diagonal values
``Y^l(t_{l+1})``. The sweep runs ``l = N-1, ..., 0`` and holds two time slices
``{Y^k(t_{l+1})}_k`` and ``{Y^k(t_l)}_k``; Z values are handed to observers
as they are produced and kept only on request.

Since ``E[dW_l (E[V | F_l]) | F_l] = 0``, the Z target is computed as
``E[(dW_l/Delta)(V - E[V | F_l]) | F_l]``: the same quantity, with a much
smaller regression variance.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .condexp import BinaryTree, Projector, StateFeatures, default_features
from .errors import (InvalidArgumentError, PicardConvergenceError,
                     PicardDivergenceError, ProblemDefinitionError, StorageError)

K_CHUNK = 32
FIELD_CAP = 64


@dataclass(frozen=True)
class LsmcBackend:
    """Least-squares Monte Carlo backend.

    ``features`` is ``"problem"`` (the problem's feature map when it has one,
    else ``(W, x)``), ``"raw"`` (always ``(W, x)``), or a callable
    ``(t, w, x) -> (M, q)``.
    """

    degree: int = 3
    ridge: float = 1e-8
    features: Union[str, Callable] = "problem"
    kind: str = field(default="lsmc", init=False)


@dataclass(frozen=True)
class TreeBackend:
    """Exact binary-tree backend for problems whose state is a function of ``(t, W(t))``."""

    forward: object
    partition: object
    kind: str = field(default="tree", init=False)


# ---------------------------------------------------------------------------
# per-step contexts
# ---------------------------------------------------------------------------

class _LsmcLevel:
    """Paths at ``t_l``; lifting is the identity."""

    def __init__(self, sweep, l):
        self.l = l
        self.x = sweep.x[:, l]
        self.dw = sweep.dW[:, l][:, None, None]
        if l == 0:
            feats = np.zeros((sweep.M, 1))
        else:
            feats = sweep.feature_fn(sweep.t[l], sweep.W[:, l], self.x)
            feats = feats.values if isinstance(feats, StateFeatures) else np.asarray(feats)
        self.proj = Projector(feats, degree=sweep.backend.degree, ridge=sweep.backend.ridge)
        self.size = sweep.M

    def lift_now(self, v):
        return v

    def lift_next(self, v):
        return v

    def project(self, v):
        return self.proj.project(v)


class _TreeLevel:
    """Level ``l`` of the tree; edges ``2j`` / ``2j+1`` go down / up from node ``j``."""

    def __init__(self, sweep, l):
        self.l = l
        self.size = l + 1
        self.x = sweep.tree_state(l)
        h = sweep.tree.step
        self.dw = np.tile([-h, h], l + 1)[:, None, None]
        self.child = (np.arange(l + 1)[:, None] + np.array([0, 1])).reshape(-1)

    def lift_now(self, v):
        return np.repeat(v, 2, axis=0)

    def lift_next(self, v):
        return v[self.child]

    def project(self, v):
        return 0.5 * (v[0::2] + v[1::2])


class Sweep:
    """Read-only view of the inputs handed to observers."""

    def __init__(self, problem, svie_paths, ensemble, backend):
        self.problem = problem
        self.backend = backend
        self.kind = backend.kind
        if backend.kind == "lsmc":
            if ensemble is None or svie_paths is None:
                raise InvalidArgumentError("the LSMC backend needs an ensemble and forward paths")
            if svie_paths.values.shape[:2] != (ensemble.M, ensemble.N + 1):
                raise InvalidArgumentError("forward paths do not match the ensemble")
            self.partition = ensemble.partition
            self.ensemble = ensemble
            self.M = ensemble.M
            self.W = ensemble.brownian()
            self.dW = ensemble.increments
            self.x = svie_paths.values
            self.feature_fn = self._feature_fn(backend.features, problem)
        elif backend.kind == "tree":
            if not backend.forward.markovian:
                raise InvalidArgumentError(
                    "the tree backend needs a forward problem that is a function of (t, W(t))")
            self.partition = backend.partition
            self.ensemble = None
            self.tree = BinaryTree(backend.partition)
        else:
            raise InvalidArgumentError(f"unknown backend {backend!r}")
        self.t = self.partition.nodes
        self.N = self.partition.N
        self.delta = self.partition.delta

    @staticmethod
    def _feature_fn(spec, problem):
        if callable(spec):
            return spec
        if spec == "problem" and problem.feature_map is not None:
            return problem.feature_map
        if spec in ("problem", "raw"):
            return lambda t, w, x: default_features(t, w, x).values
        raise InvalidArgumentError(f"unknown feature choice {spec!r}")

    def tree_state(self, l):
        w = self.tree.values(l)[:, None]
        d = self.backend.forward.dim_x
        return np.broadcast_to(np.asarray(self.backend.forward.walk_state(self.t[l], w),
                                          dtype=np.float64), (l + 1, d))

    def level(self, l):
        return _LsmcLevel(self, l) if self.kind == "lsmc" else _TreeLevel(self, l)

    def driver(self, l):
        """Driver values at ``t_l`` and their probability weights (None = equal)."""
        if self.kind == "lsmc":
            return self.W[:, l], None
        return self.tree.values(l), self.tree.probabilities(l)

    def state(self, l):
        return self.x[:, l] if self.kind == "lsmc" else self.tree_state(l)


# ---------------------------------------------------------------------------
# Picard iteration
# ---------------------------------------------------------------------------

@dataclass
class PicardStats:
    """Iteration counts per ``(l, first k of chunk, columns)``."""

    records: list = field(default_factory=list)

    def add(self, l, k0, columns, iterations):
        self.records.append((l, k0, columns, iterations))

    @property
    def average(self):
        cols = sum(r[2] for r in self.records)
        if not cols:
            return 0.0
        return sum(r[2] * r[3] for r in self.records) / cols

    @property
    def maximum(self):
        return max((r[3] for r in self.records), default=0)


def picard_step(update, z0, tol=1e-10, max_iter=50, k=None, l=None):
    """Solve ``z = update(z)`` by fixed-point iteration.

    ``z`` is ``(P, C, n)``: ``C`` independent columns solved jointly. A column
    has converged when its ensemble-L2 change is at most ``tol`` times its
    ensemble-L2 norm.

    Returns
    -------
    (z, iterations)
        ``iterations`` is the number of map evaluations after the first one.

    Raises
    ------
    PicardDivergenceError
        The absolute change grew on three consecutive iterations, or a value
        became non-finite.
    PicardConvergenceError
        ``max_iter`` evaluations without convergence.
    """
    if not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    if max_iter < 1:
        raise InvalidArgumentError("max_iter must be >= 1")
    z = np.asarray(z0, dtype=np.float64)
    last = np.inf
    growth = 0
    for it in range(1, max_iter + 1):
        z_new = np.asarray(update(z), dtype=np.float64)
        if not np.all(np.isfinite(z_new)):
            raise PicardDivergenceError(
                f"Picard iterate became non-finite (k={k}, l={l}, iteration {it})",
                k=k, l=l, residual=np.inf, iterations=it)
        diff = np.sqrt(np.sum((z_new - z) ** 2, axis=(0, 2)))
        size = np.sqrt(np.sum(z_new ** 2, axis=(0, 2)))
        rel = diff / np.where(size > 0, size, 1.0)
        z = z_new
        worst = float(np.max(rel)) if rel.size else 0.0
        if worst <= tol:
            return z, it - 1
        # a geometric blow-up keeps the relative change flat, so watch the absolute one
        step = float(np.max(diff))
        growth = growth + 1 if step > last else 0
        last = step
        if growth >= 3:
            raise PicardDivergenceError(
                f"Picard change grew on 3 consecutive iterations (k={k}, l={l}, "
                f"relative change {worst:.3g})", k=k, l=l, residual=worst, iterations=it)
    raise PicardConvergenceError(
        f"Picard iteration did not converge in {max_iter} steps (k={k}, l={l}, "
        f"relative change {worst:.3g})", k=k, l=l, residual=worst, iterations=max_iter)


# ---------------------------------------------------------------------------
# solution container
# ---------------------------------------------------------------------------

@dataclass
class BsvieSolution:
    """Output of :func:`solve_backward`.

    ``y_diag[k]`` holds ``Y^k(t_k)`` per path (LSMC) or per tree node at level
    ``k``, shape ``(P_k, n)``. ``y_field[l]`` / ``z_field[l]`` hold
    ``Y^k(t_l)`` / ``Z^k(t_l)`` for ``k = 0..l`` as ``(P_l, l+1, n)`` when
    fields were stored. ``tracked_z[i, k, l]`` is ``Z^k(t_l)`` on tracked path
    ``tracked_paths[i]`` (NaN for ``k > l``).
    """

    partition: object
    backend: str
    y_diag: list
    y_field: Optional[list] = None
    z_field: Optional[list] = None
    tracked_paths: tuple = ()
    tracked_z: Optional[np.ndarray] = None
    picard_stats: PicardStats = field(default_factory=PicardStats)

    @property
    def y_at_0(self):
        return self.y_diag[0]


def z_on_grid(sol, k, l):
    """``Z^k(t_l)`` per path or node; stands for ``Z^k(tau(s))`` on ``[t_l, t_{l+1})``."""
    N = sol.partition.N
    if not 0 <= k <= l <= N - 1:
        raise InvalidArgumentError(f"need 0 <= k <= l <= {N - 1}, got k={k}, l={l}")
    if sol.z_field is None:
        raise StorageError("the Z field was not stored; rerun with store_fields=True "
                           "or attach an observer")
    return sol.z_field[l][:, k]


# ---------------------------------------------------------------------------
# the sweep
# ---------------------------------------------------------------------------

def _finite(arr, name, l):
    if not np.all(np.isfinite(arr)):
        raise ProblemDefinitionError(f"{name} produced a non-finite value at step {l}",
                                     function=name, location=(l,))
    return arr


def solve_backward(problem, svie_paths, ensemble, backend, observers=(),
                   store_fields=False, track_paths=(), picard_tol=1e-10,
                   picard_max_iter=50, require_proven_rate=False):
    """Run the backward sweep.

    Parameters
    ----------
    problem : BsvieProblem
    svie_paths, ensemble : SviePaths, PathEnsemble
        Forward solution and driver (LSMC backend). Ignored by the tree.
    backend : LsmcBackend or TreeBackend
    observers : sequence
        Objects with ``start(sweep)``, ``step(l, ks, y, z)`` and ``finish()``.
        ``step`` receives ``Y^k(t_l)`` and ``Z^k(t_l)`` for ``k in ks`` as
        ``(P_l, len(ks), n)`` arrays.
    store_fields : bool
        Keep the full ``Y``/``Z`` triangles (only for ``N <= 64``).
    track_paths : sequence of int
        LSMC path indices whose Z triangle is kept.
    require_proven_rate : bool
        Refuse generators depending on both ``y`` and ``z``.
    """
    if require_proven_rate and not problem.has_rate_guarantee:
        raise InvalidArgumentError(
            "the proven rate covers generators depending on y or on z, not both")
    sweep = Sweep(problem, svie_paths, ensemble, backend)
    N, n, dt, t = sweep.N, problem.dim_y, sweep.delta, sweep.t
    if store_fields and N > FIELD_CAP:
        raise StorageError(f"full fields are kept only for N <= {FIELD_CAP}, got N={N}")
    track = np.asarray(track_paths, dtype=np.int64)
    if track.size and sweep.kind != "lsmc":
        raise InvalidArgumentError("path tracking applies to the LSMC backend only")
    if track.size and (track.min() < 0 or track.max() >= sweep.M):
        raise InvalidArgumentError("tracked path index out of range")

    for ob in observers:
        ob.start(sweep)

    top = sweep.level(N) if sweep.kind == "tree" else None
    xN = top.x if top is not None else sweep.x[:, N]
    tk_all = t.reshape(1, -1, 1)
    y_next = _finite(np.broadcast_to(
        np.asarray(problem.g(tk_all, xN[:, None, :]), dtype=np.float64),
        (xN.shape[0], N + 1, n)).copy(), "g", N)

    y_diag = [None] * (N + 1)
    y_diag[N] = y_next[:, N].copy()
    for ob in observers:
        ob.step(N, np.array([N]), y_next[:, N:N + 1], None)
    y_field = [None] * (N + 1) if store_fields else None
    z_field = [None] * N if store_fields else None
    if store_fields:
        y_field[N] = y_next.copy()
    tracked_z = np.full((track.size, N, N, n), np.nan) if track.size else None
    stats = PicardStats()
    z_prev = None

    for l in range(N - 1, -1, -1):
        lev = sweep.level(l)
        P = lev.size
        y_lift = lev.lift_next(y_next)                     # (E, l+2, n)
        y_diag_next = y_lift[:, l:l + 1, :]                 # Y^l(t_{l+1})
        x_e = lev.lift_now(lev.x)[:, None, :]
        dw = lev.dw
        y_now = np.empty((P, l + 1, n))
        z_now = np.empty((P, l + 1, n))
        z_warm = lev.project(lev.lift_next(z_prev)) if (problem.depends_on_z and z_prev is not None) else None

        for k0 in range(0, l + 1, K_CHUNK):
            ks = np.arange(k0, min(l + 1, k0 + K_CHUNK))
            tk = t[ks].reshape(1, -1, 1)
            yk = y_lift[:, ks, :]

            def target(zc, yk=yk, tk=tk):
                fv = problem.f(tk, t[l], x_e, y_diag_next, lev.lift_now(zc))
                fv = _finite(np.broadcast_to(np.asarray(fv, dtype=np.float64), yk.shape), "f", l)
                return yk + fv * dt

            def z_of(v):
                return lev.project(dw / dt * (v - lev.lift_now(lev.project(v))))

            if problem.depends_on_z:
                # warm start from Z^k(t_{l+1}) projected onto F_l; zero at l = N-1
                z0 = z_warm[:, ks] if z_warm is not None else np.zeros((P, len(ks), n))
                zc, its = picard_step(lambda z: z_of(target(z)), z0, tol=picard_tol,
                                      max_iter=picard_max_iter, k=int(ks[0]), l=l)
                stats.add(l, int(ks[0]), len(ks), its)
                v = target(zc)
            else:
                v = target(np.zeros((P, len(ks), n)))
                zc = z_of(v)
            yc = lev.project(v)
            y_now[:, ks] = yc
            z_now[:, ks] = zc
            for ob in observers:
                ob.step(l, ks, yc, zc)

        if tracked_z is not None:
            tracked_z[:, :l + 1, l] = z_now[track]
        if store_fields:
            y_field[l] = y_now.copy()
            z_field[l] = z_now.copy()
        y_diag[l] = y_now[:, l].copy()
        y_next = y_now
        z_prev = z_now if problem.depends_on_z else None

    for ob in observers:
        ob.finish()
    return BsvieSolution(
        partition=sweep.partition, backend=sweep.kind, y_diag=y_diag,
        y_field=y_field, z_field=z_field, tracked_paths=tuple(int(i) for i in track),
        tracked_z=tracked_z, picard_stats=stats)
