"""Forward Euler scheme for stochastic Volterra integral equations.

The discrete solution is::

    x(t_0)     = phi(0, 0)
    x(t_{i+1}) = phi(t_{i+1}, W(t_{i+1}))
                 + sum_{k<=i} [ b(t_{i+1}, t_k, x(t_k)) dt + sigma(t_{i+1}, t_k, x(t_k)) dW_k ]

Because the kernels depend on the outer time ``t_{i+1}`` the whole history is
re-summed at every step (O(N^2) per path). Problems that declare kernels free
of the outer time, or attach an exact separable factorization, take an O(N)
path with running sums instead.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidArgumentError, ProblemDefinitionError
from .grid import pi_index


@dataclass(frozen=True)
class SviePaths:
    partition: object
    values: np.ndarray = field(repr=False)  # (M, N+1, d)
    problem_tag: str = ""
    method: str = ""

    @property
    def M(self):
        return self.values.shape[0]


def _state(arr, M, d, name, step):
    out = np.broadcast_to(np.asarray(arr, dtype=np.float64), (M, d))
    if not np.all(np.isfinite(out)):
        m = int(np.argwhere(~np.isfinite(out))[0, 0])
        raise ProblemDefinitionError(
            f"{name} produced a non-finite value at path {m}, step {step}",
            function=name, location=(m, step))
    return out


def _kernel_sum(fun, t, s, x, weights, name, step):
    """``sum_k fun(t, s_k, x_k) * weights_k`` over the history axis."""
    vals = np.asarray(fun(t, s, x), dtype=np.float64)
    vals = np.broadcast_to(vals, x.shape)
    if not np.all(np.isfinite(vals)):
        m = int(np.argwhere(~np.isfinite(vals))[0, 0])
        raise ProblemDefinitionError(
            f"{name} produced a non-finite value at path {m}, step {step}",
            function=name, location=(m, step))
    return np.add.reduce(vals * weights, axis=1, dtype=np.longdouble)


def _solve_resum(problem, t, dt, w, dW, M, d):
    N = len(t) - 1
    x = np.empty((M, N + 1, d))
    x[:, 0] = _state(problem.phi(0.0, np.zeros((M, 1))), M, d, "phi", 0)
    for i in range(N):
        hist = x[:, :i + 1]
        s = t[:i + 1].reshape(1, -1, 1)
        acc = _kernel_sum(problem.b, t[i + 1], s, hist, dt, "b", i + 1)
        acc += _kernel_sum(problem.sigma, t[i + 1], s, hist, dW[:, :i + 1, None], "sigma", i + 1)
        phi = _state(problem.phi(t[i + 1], w[:, i + 1:i + 2]), M, d, "phi", i + 1)
        x[:, i + 1] = (phi + acc).astype(np.float64)
    return x


def _solve_incremental(problem, t, dt, w, dW, M, d):
    N = len(t) - 1
    x = np.empty((M, N + 1, d))
    x[:, 0] = _state(problem.phi(0.0, np.zeros((M, 1))), M, d, "phi", 0)
    run = np.zeros((M, d))
    for i in range(N):
        # outer time is ignored by declaration; pass t_{i+1} anyway
        bk = _state(problem.b(t[i + 1], t[i], x[:, i]), M, d, "b", i + 1)
        sk = _state(problem.sigma(t[i + 1], t[i], x[:, i]), M, d, "sigma", i + 1)
        run = run + (bk * dt + sk * dW[:, i:i + 1])
        phi = _state(problem.phi(t[i + 1], w[:, i + 1:i + 2]), M, d, "phi", i + 1)
        x[:, i + 1] = phi + run
    return x


def _solve_separable(problem, t, dt, w, dW, M, d):
    N = len(t) - 1
    terms = problem.separable
    x = np.empty((M, N + 1, d))
    x[:, 0] = _state(problem.phi(0.0, np.zeros((M, 1))), M, d, "phi", 0)
    sums = [np.zeros((M, d)) for _ in terms]
    for i in range(N):
        xi = x[:, i]
        acc = _state(problem.phi(t[i + 1], w[:, i + 1:i + 2]), M, d, "phi", i + 1).copy()
        for r, term in enumerate(terms):
            inc = np.zeros((M, d))
            if term.drift is not None:
                inc += _state(term.drift(t[i], xi), M, d, "b", i + 1) * dt
            if term.diffusion is not None:
                inc += _state(term.diffusion(t[i], xi), M, d, "sigma", i + 1) * dW[:, i:i + 1]
            sums[r] += inc
            acc += float(term.outer(t[i + 1])) * sums[r]
        x[:, i + 1] = acc
    return x


_METHODS = {
    "resum": _solve_resum,
    "incremental": _solve_incremental,
    "separable": _solve_separable,
}


def solve_forward(problem, ensemble, method="auto"):
    """Run the forward Euler scheme on every path of ``ensemble``.

    Parameters
    ----------
    problem : SvieProblem
    ensemble : PathEnsemble
    method : {"auto", "resum", "incremental", "separable"}
        ``auto`` picks ``incremental`` for outer-time-free kernels,
        ``separable`` when a factorization is attached, else ``resum``.

    Returns
    -------
    SviePaths
        ``values`` has shape ``(M, N+1, d)``.
    """
    p = ensemble.partition
    if p.delta > 1:
        raise InvalidArgumentError("mesh must not exceed 1")
    if method == "auto":
        if problem.outer_time_free:
            method = "incremental"
        elif problem.separable:
            method = "separable"
        else:
            method = "resum"
    if method not in _METHODS:
        raise InvalidArgumentError(f"unknown method {method!r}")
    if method == "incremental" and not problem.outer_time_free:
        raise InvalidArgumentError("incremental recursion needs outer_time_free kernels")
    if method == "separable" and not problem.separable:
        raise InvalidArgumentError("problem has no separable factorization")
    w = ensemble.brownian()
    x = _METHODS[method](problem, p.nodes, p.delta, w, ensemble.increments,
                         ensemble.M, problem.dim_x)
    x.setflags(write=False)
    return SviePaths(p, x, problem_tag=problem.name, method=method)


def evaluate_offgrid(problem, paths, ensemble, t):
    """Frozen-argument interpolant of the discrete solution at time ``t``.

    Full cells contribute ``b(t, t_k, x_k) dt + sigma(t, t_k, x_k) dW_k``; the
    partial cell ``[t_i, t)`` uses the linear interpolant of ``W``. On grid
    nodes this reproduces ``paths.values``.

    Returns an ``(M, d)`` array.
    """
    p = ensemble.partition
    if not 0 <= t <= p.T:
        raise DomainError(f"time {t} outside [0, {p.T}]")
    i = pi_index(p, t)
    w = ensemble.brownian()
    dW = ensemble.increments
    M, d = paths.M, problem.dim_x
    t_i = p.nodes[i]
    frac = (t - t_i) / p.delta
    w_t = w[:, i] + frac * dW[:, i]
    out = _state(problem.phi(t, w_t[:, None]), M, d, "phi", i).astype(np.longdouble)
    if i > 0:
        hist = paths.values[:, :i]
        s = p.nodes[:i].reshape(1, -1, 1)
        out += _kernel_sum(problem.b, t, s, hist, p.delta, "b", i)
        out += _kernel_sum(problem.sigma, t, s, hist, dW[:, :i, None], "sigma", i)
    xi = paths.values[:, i]
    out += _state(problem.b(t, t_i, xi), M, d, "b", i) * (t - t_i)
    out += _state(problem.sigma(t, t_i, xi), M, d, "sigma", i) * (w_t - w[:, i])[:, None]
    return out.astype(np.float64)


def node_statistics(paths, quantiles=(0.05, 0.5, 0.95)):
    """Per-node ensemble mean, variance and quantiles, one row per ``(t_i, dim)``."""
    v = paths.values
    mean = v.mean(axis=0)
    var = v.var(axis=0, ddof=1) if paths.M > 1 else np.zeros_like(mean)
    qs = np.quantile(v, quantiles, axis=0)
    rows = []
    for i, t in enumerate(paths.partition.nodes):
        for j in range(v.shape[2]):
            rows.append([float(t), j, float(mean[i, j]), float(var[i, j])]
                        + [float(q[i, j]) for q in qs])
    return rows


def write_statistics_csv(paths, path, quantiles=(0.05, 0.5, 0.95)):
    header = ["t", "dim", "mean", "variance"] + [f"q{q:g}" for q in quantiles]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in node_statistics(paths, quantiles):
            wr.writerow([repr(v) if isinstance(v, float) else v for v in row])
