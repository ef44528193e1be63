"""Error functionals, convergence-rate studies and regularity spot-checks.

The backward error functional is::

    max_k E|Y(t_k) - Y^k(t_k)|^2  +  sum_k Delta sum_{l >= k} E int_{t_l}^{t_{l+1}} |Z(t_k, s) - Z^k(t_l)|^2 ds

The inner cell integral is estimated either by a Brownian-bridge quadrature
(one uniform time ``s`` per path and cell, with ``W(s)`` drawn from the bridge
between the cell's endpoints; unbiased for the integral) or by the left
endpoint ``s = t_l``. The bridge version sees the ``O(Delta)`` variation of
``Z(t, .)`` inside a cell, which the left rule misses.
"""
import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .bsvie import LsmcBackend, TreeBackend, solve_backward
from .errors import (InconclusiveStudyError, InvalidArgumentError, MissingOracleError,
                     StorageError)
from .grid import make_uniform
from .paths import coarsen, sample
from .svie import solve_forward

BRIDGE_TAG = 0xB41D6E
STUDY_COLUMNS = ["N", "delta", "y_error", "y_stderr", "z_error", "z_stderr", "total",
                 "picard_avg_iters", "wall_time_s"]


@dataclass
class ErrorReport:
    N: int
    M: int
    seed: Optional[int]
    y_error: float
    y_stderr: float
    z_error: float
    z_stderr: float
    worst_k: int = 0
    y_by_k: np.ndarray = field(default=None, repr=False)
    picard_avg_iters: float = 0.0
    wall_time_s: Optional[float] = None

    @property
    def total(self):
        return self.y_error + self.z_error

    @property
    def total_stderr(self):
        return float(np.hypot(self.y_stderr, self.z_stderr))


@dataclass
class RateFit:
    points: list
    slope: float
    intercept: float
    r_squared: float
    degenerate: bool = False


def _mean_and_stderr(values, weights):
    if weights is not None:
        return float(weights @ values), 0.0
    m = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return m, se


class ErrorAccumulator:
    """Observer for :func:`solve_backward` that accumulates the error functional.

    Parameters
    ----------
    oracle : ClosedFormOracle
    quadrature : {"bridge", "left"}
        Cell rule for the Z integral. The tree backend always uses ``"left"``
        with exact node probabilities.
    """

    def __init__(self, oracle, quadrature="bridge"):
        if oracle is None:
            raise MissingOracleError("error metrics need a closed-form oracle")
        if quadrature not in ("bridge", "left"):
            raise InvalidArgumentError(f"unknown quadrature {quadrature!r}")
        self.oracle = oracle
        self.quadrature = quadrature

    def start(self, sweep):
        self.sweep = sweep
        self.tree = sweep.kind == "tree"
        self.rule = "left" if self.tree else self.quadrature
        N = sweep.N
        self.y_mean = np.zeros(N + 1)
        self.y_se = np.zeros(N + 1)
        self.z_path = 0.0 if self.tree else np.zeros(sweep.M)
        self._cell = None

    def _cell_points(self, l):
        if self._cell is not None and self._cell[0] == l:
            return self._cell[1:]
        sw = self.sweep
        w_l, weights = sw.driver(l)
        if self.rule == "left":
            s, ws = sw.t[l], w_l[:, None, None]
        else:
            ss = np.random.SeedSequence([sw.ensemble.seed, BRIDGE_TAG, sw.N, l])
            rng = np.random.Generator(np.random.PCG64(ss))
            u = rng.random(sw.M)
            g = rng.standard_normal(sw.M)
            dw = sw.ensemble.increments[:, l]
            s = (sw.t[l] + u * sw.delta)[:, None, None]
            ws = (w_l + u * dw + np.sqrt(u * (1 - u) * sw.delta) * g)[:, None, None]
        self._cell = (l, s, ws, weights)
        return s, ws, weights

    def step(self, l, ks, y, z):
        sw = self.sweep
        ks = np.asarray(ks)
        hit = np.nonzero(ks == l)[0]
        if hit.size:
            w_l, weights = sw.driver(l)
            yt = np.asarray(self.oracle.y_true(sw.t[l], w_l[:, None]), dtype=np.float64)
            err = np.sum((np.broadcast_to(yt, y[:, hit[0]].shape) - y[:, hit[0]]) ** 2, axis=-1)
            self.y_mean[l], self.y_se[l] = _mean_and_stderr(err, weights)
        if z is None:
            return
        s, ws, weights = self._cell_points(l)
        tk = sw.t[ks].reshape(1, -1, 1)
        zt = np.broadcast_to(np.asarray(self.oracle.z_true(tk, s, ws), dtype=np.float64), z.shape)
        e = np.sum((zt - z) ** 2, axis=(1, 2)) * sw.delta * sw.delta
        if self.tree:
            self.z_path += float(weights @ e)
        else:
            self.z_path += e

    def finish(self):
        pass

    def report(self, seed=None):
        sw = self.sweep
        k = int(np.argmax(self.y_mean))
        z_err, z_se = _mean_and_stderr(np.atleast_1d(self.z_path),
                                       np.ones(1) if self.tree else None)
        return ErrorReport(N=sw.N, M=0 if self.tree else sw.M, seed=seed,
                           y_error=float(self.y_mean[k]), y_stderr=float(self.y_se[k]),
                           z_error=z_err, z_stderr=z_se, worst_k=k, y_by_k=self.y_mean.copy())


class _Replay:
    """Minimal sweep view rebuilt from a finished solution."""

    def __init__(self, sol, ensemble):
        self.kind = sol.backend
        self.partition = sol.partition
        self.N = sol.partition.N
        self.delta = sol.partition.delta
        self.t = sol.partition.nodes
        if self.kind == "tree":
            from .condexp import BinaryTree
            self._tree = BinaryTree(sol.partition)
        else:
            if ensemble is None:
                raise InvalidArgumentError("the ensemble is needed to score an LSMC solution")
            self.ensemble = ensemble
            self.M = ensemble.M
            self._W = ensemble.brownian()

    def driver(self, l):
        if self.kind == "tree":
            return self._tree.values(l), self._tree.probabilities(l)
        return self._W[:, l], None


def bsvie_error(sol, oracle, ensemble=None, quadrature="bridge"):
    """Score a solution with stored fields against the closed-form oracle."""
    if oracle is None:
        raise MissingOracleError("error metrics need a closed-form oracle")
    if sol.z_field is None:
        raise StorageError("bsvie_error needs stored fields; use an ErrorAccumulator "
                           "observer for large N")
    acc = ErrorAccumulator(oracle, quadrature)
    acc.start(_Replay(sol, ensemble))
    N = sol.partition.N
    acc.step(N, [N], sol.y_diag[N][:, None], None)
    for l in range(N - 1, -1, -1):
        acc.step(l, np.arange(l + 1), sol.y_field[l], sol.z_field[l])
    return acc.report(seed=None if ensemble is None else ensemble.seed)


def svie_error(coarse, reference):
    """``max_i E|x_ref(t_i) - x(t_i)|^2`` over the coarse nodes."""
    pc, pr = coarse.partition, reference.partition
    if pc.T != pr.T or pr.N % pc.N:
        raise InvalidArgumentError(f"reference grid N={pr.N} does not refine N={pc.N}")
    if coarse.M != reference.M:
        raise InvalidArgumentError(f"path counts differ: {coarse.M} vs {reference.M}")
    factor = pr.N // pc.N
    diff = reference.values[:, ::factor] - coarse.values
    return float(np.max(np.mean(np.sum(diff ** 2, axis=-1), axis=0)))


def fit_rate(Ns, deltas, errors):
    """Least-squares line through ``(log delta, log error)``."""
    points = [(int(n), float(e)) for n, e in zip(Ns, errors)]
    errors = np.asarray(errors, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    if len(points) < 3 or np.any(errors <= 0) or not np.all(np.isfinite(errors)):
        return RateFit(points, float("nan"), float("nan"), float("nan"), degenerate=True)
    x, y = np.log(deltas), np.log(errors)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(points, float(slope), float(intercept), r2)


@dataclass
class StudyResult:
    reports: list
    fits: dict
    excluded: list
    refinement: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)


def _check_n_list(N_list):
    N_list = [int(n) for n in N_list]
    if len(N_list) < 3:
        raise InvalidArgumentError("a rate fit needs at least three grid sizes")
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise InvalidArgumentError("N_list must be strictly increasing")
    top = N_list[-1]
    if any(top % n for n in N_list):
        raise InvalidArgumentError(f"every N must divide max(N_list) = {top}")
    return N_list


def _run_one(svie, bsvie, oracle, master, N, backend, quadrature, timing, picard_tol):
    t0 = time.perf_counter()
    if backend.kind == "tree":
        p = make_uniform(backend.partition.T, N)
        backend = TreeBackend(backend.forward, p)
        ens = paths = None
    else:
        ens = coarsen(master, master.N // N)
        paths = solve_forward(svie, ens)
    acc = ErrorAccumulator(oracle, quadrature)
    sol = solve_backward(bsvie, paths, ens, backend, observers=[acc], picard_tol=picard_tol)
    rep = acc.report(seed=None if master is None else master.seed)
    rep.picard_avg_iters = sol.picard_stats.average
    if timing:
        rep.wall_time_s = time.perf_counter() - t0
    return rep


def convergence_study(svie, bsvie, oracle, N_list, M, seed=0, backend=None,
                      workers=1, antithetic=False, quadrature="bridge",
                      refine_degree=None, timing=False, picard_tol=1e-10):
    """Error versus mesh on one master ensemble coarsened to every ``N``.

    Points whose standard error exceeds 20% of the total error are left out
    of the fits and listed in ``excluded``.

    Raises
    ------
    InconclusiveStudyError
        Some point's standard error exceeds half its total error, or fewer
        than three points survive the exclusion rule.
    """
    N_list = _check_n_list(N_list)
    backend = backend or LsmcBackend()
    T = bsvie.T
    master = None
    if backend.kind == "lsmc":
        master = sample(make_uniform(T, N_list[-1]), M, seed=seed, antithetic=antithetic,
                        workers=workers)

    def run(N, be=backend):
        return _run_one(svie, bsvie, oracle, master, N, be, quadrature, timing, picard_tol)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run, N_list))
    else:
        reports = [run(N) for N in N_list]

    refinement = {}
    if refine_degree is not None and backend.kind == "lsmc":
        alt = LsmcBackend(degree=refine_degree, ridge=backend.ridge, features=backend.features)
        for N, rep in zip(N_list, [run(N, alt) for N in N_list]):
            refinement[N] = rep.total

    excluded = []
    for rep in reports:
        if rep.total > 0:
            if rep.total_stderr > 0.5 * rep.total:
                raise InconclusiveStudyError(
                    f"at N={rep.N} the standard error {rep.total_stderr:.3g} exceeds half the "
                    f"error {rep.total:.3g}; increase M")
            if rep.total_stderr > 0.2 * rep.total:
                excluded.append(rep.N)
    kept = [r for r in reports if r.N not in excluded]
    if len(kept) < 3:
        raise InconclusiveStudyError(
            f"only {len(kept)} grid sizes have standard error below 20% of the error; increase M")
    Ns = [r.N for r in kept]
    deltas = [T / r.N for r in kept]
    fits = {
        "y": fit_rate(Ns, deltas, [r.y_error for r in kept]),
        "z": fit_rate(Ns, deltas, [r.z_error for r in kept]),
        "total": fit_rate(Ns, deltas, [r.total for r in kept]),
    }
    cfg = {"T": float(T), "N_list": N_list, "M": None if M is None else int(M), "seed": int(seed), "backend": backend.kind,
           "quadrature": quadrature, "antithetic": bool(antithetic)}
    if backend.kind == "lsmc":
        cfg.update(degree=backend.degree, ridge=backend.ridge,
                   features=backend.features if isinstance(backend.features, str) else "custom")
    return StudyResult(reports, fits, excluded, refinement, cfg)


@dataclass
class SvieStudyResult:
    N_list: list
    N_ref: int
    errors: list
    fit: RateFit


def svie_convergence_study(problem, N_list, N_ref, M, seed=0, T=1.0, method="auto", workers=1):
    """Self-convergence of the forward scheme against a fine reference grid."""
    N_list = _check_n_list(N_list)
    if N_ref % N_list[-1]:
        raise InvalidArgumentError(f"N_ref={N_ref} must be a multiple of every N")
    master = sample(make_uniform(T, N_ref), M, seed=seed, workers=workers)
    ref = solve_forward(problem, master, method=method)

    def run(N):
        return svie_error(solve_forward(problem, coarsen(master, N_ref // N), method=method), ref)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            errors = list(pool.map(run, N_list))
    else:
        errors = [run(N) for N in N_list]
    fit = fit_rate(N_list, [T / n for n in N_list], errors)
    return SvieStudyResult(N_list, N_ref, errors, fit)


@dataclass
class RegularityReport:
    lags: list
    increments: list
    mean_square: list
    slope: float
    intercept: float
    r_squared: float
    threshold: float = 0.8

    @property
    def ok(self):
        return bool(self.slope >= self.threshold)


def regularity_check(values, partition, lags, threshold=0.8):
    """Fit ``log E|v(t_i + h) - v(t_i)|^2`` against ``log h`` over the given lags.

    ``values`` are per-path node values ``(M, N+1)`` or ``(M, N+1, d)``; the
    mean square is averaged over paths and all start nodes.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 2:
        v = v[:, :, None]
    N = partition.N
    if v.shape[1] != N + 1:
        raise InvalidArgumentError(f"values have {v.shape[1]} nodes, partition has {N + 1}")
    lags = sorted({int(h) for h in lags if 1 <= int(h) <= N})
    if len(lags) < 2:
        raise InvalidArgumentError("need at least two lags between 1 and N")
    ms = [float(np.mean(np.sum((v[:, h:] - v[:, :-h]) ** 2, axis=-1))) for h in lags]
    hs = [h * partition.delta for h in lags]
    fit = fit_rate(lags, hs, ms)
    return RegularityReport(lags, hs, ms, fit.slope, fit.intercept, fit.r_squared, threshold)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def write_study_csv(result, path):
    """One row per ``N`` in the study schema; ``wall_time_s`` empty unless timed."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(STUDY_COLUMNS)
        T = result.config.get("T", 1.0)
        for r in result.reports:
            delta = T / r.N
            wr.writerow([r.N, _fmt(delta), _fmt(r.y_error), _fmt(r.y_stderr), _fmt(r.z_error),
                         _fmt(r.z_stderr), _fmt(r.total), _fmt(r.picard_avg_iters),
                         "" if r.wall_time_s is None else f"{r.wall_time_s:.3f}"])


def study_summary(result):
    fits = {k: asdict(v) for k, v in result.fits.items()}
    return {"config": result.config, "fits": fits, "excluded": result.excluded,
            "refinement_total_error": {str(k): v for k, v in result.refinement.items()}}


def write_summary_json(result, path):
    with open(path, "w") as fh:
        json.dump(study_summary(result), fh, indent=2, sort_keys=True)
        fh.write("\n")
