"""Problem definitions for the forward (SVIE) and backward (BSVIE) equations.

Coefficient callables work on numpy arrays and must broadcast. State
arguments (``x``, ``y``, ``z``) carry the vector dimension on their last axis;
time arguments arrive either as Python floats or as arrays shaped to broadcast
against the state (a trailing axis of length 1). For example the generator of
the built-in example is simply ``lambda t, s, x, y, z: 0.5 * t * np.sin(x)``.

Forward problem::

    x(t) = phi(t, W(t)) + int_0^t b(t, s, x(s)) ds + int_0^t sigma(t, s, x(s)) dW(s)

Backward problem::

    Y(t) = g(t, x(T)) + int_t^T f(t, s, x(s), Y(s), Z(t, s)) ds - int_t^T Z(t, s) dW(s)
"""
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, ProblemDefinitionError


@dataclass(frozen=True)
class SeparableTerm:
    """One term ``a(t) * beta(s, x)`` (drift) / ``a(t) * gamma(s, x)`` (diffusion).

    A kernel written as a finite sum of such terms lets the forward solver
    carry running sums instead of re-summing the whole history at every step.
    ``drift`` or ``diffusion`` may be None for a zero contribution.
    """

    outer: Callable
    drift: Optional[Callable] = None
    diffusion: Optional[Callable] = None


@dataclass(frozen=True)
class SvieProblem:
    """Forward stochastic Volterra integral equation.

    Attributes
    ----------
    dim_x : int
        State dimension ``d``.
    phi : callable ``(t, w) -> (..., d)``
        Free term, a deterministic function of time and the Brownian value.
    b, sigma : callable ``(t, s, x) -> (..., d)``
        Drift and diffusion kernels.
    lipschitz_L : float
        Declared Lipschitz/Hoelder constant. Metadata only.
    outer_time_free : bool
        Declares that ``b`` and ``sigma`` ignore their first argument, which
        enables the incremental O(N) recursion.
    separable : sequence of SeparableTerm, optional
        Exact factorization of both kernels (must reproduce ``b``/``sigma``).
    walk_state : callable ``(t, w) -> (..., d)``, optional
        If the solution is a function of ``(t, W(t))`` alone, this map. Its
        presence marks the problem as Markovian in the driver, which is what
        the exact binary-tree backend needs.
    """

    dim_x: int
    phi: Callable
    b: Callable
    sigma: Callable
    lipschitz_L: float = 1.0
    outer_time_free: bool = False
    separable: Optional[Sequence[SeparableTerm]] = None
    walk_state: Optional[Callable] = None
    name: str = "svie"

    @property
    def markovian(self):
        return self.walk_state is not None


@dataclass(frozen=True)
class BsvieProblem:
    """Backward stochastic Volterra integral equation.

    ``depends_on_y``/``depends_on_z`` are declared by the user. They decide
    whether the Picard loop runs and which convergence guarantee applies, not
    whether the scheme is evaluated correctly.

    ``feature_map`` optionally replaces the default regression features
    ``(W(t_l), x(t_l))`` with ``feature_map(t, w, x) -> (P, q)``.
    """

    dim_y: int
    f: Callable
    g: Callable
    depends_on_y: bool = False
    depends_on_z: bool = False
    lipschitz_L: float = 1.0
    T: float = 1.0
    feature_map: Optional[Callable] = None
    name: str = "bsvie"

    @property
    def has_rate_guarantee(self):
        # the O(|pi|) bound is proven for f(t,s,x,y) or f(t,s,x,z), not both
        return not (self.depends_on_y and self.depends_on_z)


@dataclass(frozen=True)
class ClosedFormOracle:
    """Exact solution ``Y(t) = y_true(t, W(t))``, ``Z(t, s) = z_true(t, s, W(s))``."""

    y_true: Callable
    z_true: Callable


# ---------------------------------------------------------------------------
# built-in problems
# ---------------------------------------------------------------------------

def _section5_features(t, w, x):
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    return np.column_stack([np.sin(w), np.cos(w)])


def example_section5():
    """Unit-horizon scalar example with a closed-form solution.

    The forward state is Brownian motion itself (``phi = 0, b = 0, sigma = 1``)
    and the backward equation is::

        Y(t) = t sin W(1) + int_t^1 (t/2) sin W(s) ds - int_t^1 Z(t, s) dW(s)

    whose solution is ``Y(t) = t sin W(t)``, ``Z(t, s) = t cos W(s)``.

    The regression features are ``(sin W, cos W)``, the harmonics the
    coefficients are built from; see ``BsvieProblem.feature_map``.

    Returns
    -------
    (SvieProblem, BsvieProblem, ClosedFormOracle)
    """
    svie = SvieProblem(
        dim_x=1,
        phi=lambda t, w: np.zeros_like(np.asarray(w, dtype=np.float64)),
        b=lambda t, s, x: np.zeros_like(x),
        sigma=lambda t, s, x: np.ones_like(x),
        lipschitz_L=1.0,
        outer_time_free=True,
        walk_state=lambda t, w: np.asarray(w, dtype=np.float64),
        name="section5",
    )
    bsvie = BsvieProblem(
        dim_y=1,
        f=lambda t, s, x, y, z: 0.5 * t * np.sin(x),
        g=lambda t, x: t * np.sin(x),
        depends_on_y=False,
        depends_on_z=False,
        lipschitz_L=1.0,
        T=1.0,
        feature_map=_section5_features,
        name="section5",
    )
    oracle = ClosedFormOracle(
        y_true=lambda t, w: t * np.sin(w),
        z_true=lambda t, s, w: t * np.cos(w),
    )
    return svie, bsvie, oracle


def example_svie_benchmark():
    """Scalar forward problem with genuine two-time kernels, no closed form.

    ::

        phi(t)        = 1
        b(t, s, x)    = 0.5 sin(t + s) tanh(x)
        sigma(t, s, x) = 0.3 cos(t - s) tanh(x) + 0.1

    Both kernels are smooth in ``(t, s)`` and Lipschitz in ``x`` with constant
    below 1. Expanding ``sin(t+s)`` and ``cos(t-s)`` gives an exact
    three-term separable form, which is attached so long horizons stay cheap.
    """

    def b(t, s, x):
        return 0.5 * np.sin(t + s) * np.tanh(x)

    def sigma(t, s, x):
        return 0.3 * np.cos(t - s) * np.tanh(x) + 0.1

    terms = (
        SeparableTerm(
            outer=np.sin,
            drift=lambda s, x: 0.5 * np.cos(s) * np.tanh(x),
            diffusion=lambda s, x: 0.3 * np.sin(s) * np.tanh(x),
        ),
        SeparableTerm(
            outer=np.cos,
            drift=lambda s, x: 0.5 * np.sin(s) * np.tanh(x),
            diffusion=lambda s, x: 0.3 * np.cos(s) * np.tanh(x),
        ),
        SeparableTerm(
            outer=lambda t: np.ones_like(np.asarray(t, dtype=np.float64)),
            drift=None,
            diffusion=lambda s, x: np.full_like(x, 0.1),
        ),
    )
    return SvieProblem(
        dim_x=1,
        phi=lambda t, w: np.ones_like(np.asarray(w, dtype=np.float64)),
        b=b,
        sigma=sigma,
        lipschitz_L=1.0,
        separable=terms,
        name="svie-bench",
    )


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    """Largest finite-difference quotient seen per (function, argument)."""

    max_quotients: dict = field(default_factory=dict)
    declared_L: float = 1.0
    flagged: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.flagged


def _check_finite(values, name, where):
    values = np.asarray(values, dtype=np.float64)
    bad = ~np.isfinite(values)
    if np.any(bad):
        i = int(np.argwhere(bad.reshape(len(values), -1).any(axis=1))[0, 0])
        raise ProblemDefinitionError(
            f"{name} returned a non-finite value at {where(i)}",
            function=name,
            location=where(i),
        )
    return values


def _quotient(fun, args, arg_pos, h, name):
    base = list(args)
    bumped = list(args)
    bumped[arg_pos] = args[arg_pos] + h
    f0 = _check_finite(np.broadcast_to(fun(*base), args[arg_pos].shape), name,
                       lambda i: tuple(np.ravel(a[i]) if np.ndim(a) else a for a in base))
    f1 = _check_finite(np.broadcast_to(fun(*bumped), args[arg_pos].shape), name,
                       lambda i: tuple(np.ravel(a[i]) if np.ndim(a) else a for a in bumped))
    return float(np.max(np.abs(f1 - f0)) / h) if f0.size else 0.0


def validate_problem(p, sample_count=1000, seed=0, T=1.0, x_scale=5.0, h=1e-6):
    """Probe a problem's Lipschitz behaviour on random points.

    Draws ``sample_count`` points ``(t, s, x, y, z)`` with ``0 <= t <= s <= T``
    and state entries uniform in ``[-x_scale, x_scale]``, estimates the
    Lipschitz quotient of each coefficient in each state argument by a
    forward difference, and flags any quotient that exceeds the declared
    ``lipschitz_L`` by more than 10%.

    Raises ProblemDefinitionError if a coefficient returns non-finite values.
    """
    if sample_count < 2:
        raise InvalidArgumentError("sample_count must be >= 2")
    rng = np.random.default_rng(seed)
    n = int(sample_count)
    a = rng.uniform(0, T, size=(n, 1))
    c = rng.uniform(0, T, size=(n, 1))
    t, s = np.minimum(a, c), np.maximum(a, c)
    report = ValidationReport(declared_L=float(p.lipschitz_L))

    if isinstance(p, SvieProblem):
        d = p.dim_x
        x = rng.uniform(-x_scale, x_scale, size=(n, d))
        w = rng.uniform(-x_scale, x_scale, size=(n, 1))
        # kernels are integrated for s <= t, so probe with (outer=s, inner=t)
        for name, fun in (("b", p.b), ("sigma", p.sigma)):
            report.max_quotients[(name, "x")] = _quotient(
                lambda xx, fun=fun: fun(s, t, xx), (x,), 0, h, name)
        _check_finite(np.broadcast_to(p.phi(t, w), (n, d)), "phi",
                      lambda i: (float(t[i, 0]), float(w[i, 0])))
    elif isinstance(p, BsvieProblem):
        nd = p.dim_y
        x = rng.uniform(-x_scale, x_scale, size=(n, 1))
        y = rng.uniform(-x_scale, x_scale, size=(n, nd))
        z = rng.uniform(-x_scale, x_scale, size=(n, nd))
        shape = (n, nd)

        def f_of(xx, yy, zz):
            return np.broadcast_to(p.f(t, s, xx, yy, zz), shape)

        report.max_quotients[("f", "x")] = _quotient(f_of, (x, y, z), 0, h, "f")
        report.max_quotients[("f", "y")] = _quotient(f_of, (x, y, z), 1, h, "f")
        report.max_quotients[("f", "z")] = _quotient(f_of, (x, y, z), 2, h, "f")
        report.max_quotients[("g", "x")] = _quotient(
            lambda xx: np.broadcast_to(p.g(t, xx), shape), (x,), 0, h, "g")
    else:
        raise InvalidArgumentError(f"not a problem: {type(p).__name__}")

    limit = 1.1 * report.declared_L
    report.flagged = sorted(k for k, v in report.max_quotients.items() if v > limit)
    return report


def bsvie_residual(problem, oracle, partition, w, x, k):
    """Per-path residual of the integral equation at ``t_k`` on a fine grid.

    Plugs the oracle into the backward equation, replacing the Lebesgue
    integral by a left Riemann sum and the stochastic integral by an Ito sum.
    The residual vanishes in L^2 as the grid refines.

    ``w`` and ``x`` are ``(P, N+1)`` and ``(P, N+1, d)`` node values.
    """
    t = partition.nodes
    dt = partition.delta
    tk = t[k]
    wk = w[:, k:k + 1]
    y_t = np.asarray(oracle.y_true(tk, wk), dtype=np.float64).reshape(len(w), -1)
    g_T = np.asarray(problem.g(tk, x[:, -1]), dtype=np.float64).reshape(len(w), -1)
    s = t[k:-1][None, :, None]
    ws = w[:, k:-1, None]
    xs = x[:, k:-1]
    ys = np.asarray(oracle.y_true(s, ws), dtype=np.float64)
    zs = np.asarray(oracle.z_true(tk, s, ws), dtype=np.float64)
    fs = np.broadcast_to(problem.f(tk, s, xs, ys, zs), zs.shape)
    dw = np.diff(w[:, k:], axis=1)[:, :, None]
    lebesgue = fs.sum(axis=1) * dt
    ito = (zs * dw).sum(axis=1)
    return y_t - g_T - lebesgue + ito
