"""Conditional-expectation estimators over a path ensemble.

Two backends:

* least-squares Monte Carlo: ridge-regularized regression of a per-path
  quantity on a total-degree polynomial basis in standardized state features;
* an exact recombining binary tree, where the driver moves by +-sqrt(Delta)
  with probability 1/2 and ``E(. | node)`` is the average of the two children.
"""
import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConditioningError, InvalidArgumentError,
                     UnderdeterminedRegressionError)

COND_LIMIT = 1e12


# ---------------------------------------------------------------------------
# features and basis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateFeatures:
    """Per-path feature matrix ``(M, q)`` observed at time ``t``."""

    t: float
    values: np.ndarray = field(repr=False)

    @property
    def q(self):
        return self.values.shape[1]


def default_features(t, w, x):
    """``(W(t), x(t))`` stacked column-wise; ``x`` may be ``(M,)`` or ``(M, d)``."""
    w = np.asarray(w, dtype=np.float64).reshape(len(w), -1)
    x = np.asarray(x, dtype=np.float64).reshape(len(w), -1)
    return StateFeatures(float(t), np.hstack([w, x]))


def total_degree_exponents(q, degree):
    """Exponent tuples of all monomials of total degree 1..degree in ``q`` variables."""
    out = []
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(q), deg):
            e = [0] * q
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    if not out:
        return np.zeros((0, q), dtype=np.int64)
    return np.array(out, dtype=np.int64)


def _monomials(z, exponents):
    if exponents.shape[0] == 0:
        return np.empty((z.shape[0], 0))
    cols = np.empty((z.shape[0], exponents.shape[0]))
    for a, e in enumerate(exponents):
        c = np.ones(z.shape[0])
        for i, p in enumerate(e):
            if p:
                c = c * z[:, i] ** p
        cols[:, a] = c
    return cols


@dataclass(frozen=True)
class FeatureTransform:
    """Column selection plus per-column standardization learned on training data."""

    q_in: int
    keep: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.q_in:
            raise InvalidArgumentError(
                f"expected {self.q_in} feature columns, got shape {values.shape}")
        return (values[:, self.keep] - self.mean) / self.scale


def learn_transform(values):
    """Drop constant and duplicated columns, then standardize the rest."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise InvalidArgumentError("features contain non-finite values")
    keep = []
    for j in range(values.shape[1]):
        col = values[:, j]
        if np.all(col == col[0]):
            continue
        if any(np.array_equal(col, values[:, i]) for i in keep):
            continue
        keep.append(j)
    keep = np.array(keep, dtype=np.int64)
    kept = values[:, keep]
    mean = kept.mean(axis=0)
    scale = kept.std(axis=0)
    scale[scale == 0] = 1.0
    return FeatureTransform(values.shape[1], keep, mean, scale)


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegressionDiagnostics:
    cond: float
    residual_rms: np.ndarray
    basis_size: int
    M: int


@dataclass(frozen=True)
class CondExpEstimator:
    """Fitted ``xi -> c_0 + sum_a c_a (B_a(xi) - mean_a)``.

    ``coef`` is ``(basis_size - 1, K)`` for ``K`` regressands fitted at once;
    ``intercept`` is ``(K,)``.
    """

    transform: FeatureTransform
    exponents: np.ndarray
    col_mean: np.ndarray
    intercept: np.ndarray
    coef: np.ndarray
    ridge: float
    degree: int
    diagnostics: RegressionDiagnostics
    fitted: np.ndarray = field(repr=False, default=None)

    @property
    def basis_size(self):
        return 1 + self.exponents.shape[0]


class Projector:
    """Ridge least-squares projection onto a fixed design, for many right-hand sides.

    Minimizes ``(1/M) |v - c_0 - B_c c|^2 + ridge |c|^2`` per column of ``v``,
    where ``B_c`` are the centered monomials. The intercept is unpenalized.
    Solved by QR of ``[B_c; sqrt(M ridge) I]``.

    Each column is shifted by its first entry before projecting, so a constant
    column is reproduced exactly.
    """

    def __init__(self, features, degree=3, ridge=1e-8):
        values = features.values if isinstance(features, StateFeatures) else features
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if ridge < 0 or not np.isfinite(ridge):
            raise InvalidArgumentError(f"ridge must be a nonnegative real, got {ridge!r}")
        if int(degree) != degree or degree < 0:
            raise InvalidArgumentError(f"degree must be a nonnegative integer, got {degree!r}")
        self.degree = int(degree)
        self.ridge = float(ridge)
        self.M = values.shape[0]
        self.transform = learn_transform(values)
        q = len(self.transform.keep)
        self.exponents = total_degree_exponents(q, self.degree)
        p = self.exponents.shape[0]
        if self.M < 2 * (p + 1):
            raise UnderdeterminedRegressionError(
                f"{self.M} paths for a basis of size {p + 1}; need at least {2 * (p + 1)}")
        B = _monomials(self.transform.apply(values), self.exponents)
        self.col_mean = B.mean(axis=0)
        B -= self.col_mean
        if p == 0:
            self._Q = np.empty((self.M, 0))
            self._R = np.empty((0, 0))
            self.cond = 1.0
            return
        if self.ridge > 0:
            A = np.vstack([B, np.sqrt(self.M * self.ridge) * np.eye(p)])
        else:
            A = B
        Q, R = np.linalg.qr(A)
        sv = np.linalg.svd(R, compute_uv=False)
        self.cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
        if self.ridge == 0 and self.cond > COND_LIMIT:
            raise ConditioningError(
                f"design condition number {self.cond:.3g} exceeds {COND_LIMIT:g}; "
                "use ridge > 0")
        self._Q = np.ascontiguousarray(Q[:self.M])
        self._R = R

    @property
    def basis_size(self):
        return 1 + self.exponents.shape[0]

    def _shifted(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.M:
            raise InvalidArgumentError(f"regressand has {v.shape[0]} rows, design has {self.M}")
        v0 = v[:1]
        return v - v0, v0

    def project(self, v):
        """Fitted values for every column of ``v`` (``(M,)`` or ``(M, ...)``)."""
        shape = np.shape(v)
        v2 = np.asarray(v, dtype=np.float64).reshape(shape[0], -1)
        vs, v0 = self._shifted(v2)
        out = vs.mean(axis=0) + v0
        if self._Q.shape[1]:
            out = out + self._Q @ (self._Q.T @ vs)
        else:
            out = np.broadcast_to(out, vs.shape).copy()
        return out.reshape(shape)

    def coefficients(self, v):
        """``(intercept, coef)`` of the fit, in the centered-monomial basis."""
        v2 = np.asarray(v, dtype=np.float64).reshape(self.M, -1)
        vs, v0 = self._shifted(v2)
        intercept = vs.mean(axis=0) + v0[0]
        if self._Q.shape[1]:
            coef = np.linalg.solve(self._R, self._Q.T @ vs)
        else:
            coef = np.empty((0, v2.shape[1]))
        return intercept, coef


def fit(regressand, features, ridge=1e-8, degree=3):
    """Fit a least-squares estimate of ``E(regressand | features)``.

    Parameters
    ----------
    regressand : array ``(M,)`` or ``(M, K)``
    features : StateFeatures or array ``(M, q)``
    ridge : float
        Penalty on the non-intercept coefficients of the mean-squared objective,
        in standardized units.
    degree : int
        Total degree of the polynomial basis.

    Returns
    -------
    CondExpEstimator

    Raises
    ------
    UnderdeterminedRegressionError
        Fewer than twice as many paths as basis functions.
    ConditioningError
        ``ridge == 0`` and the design is (numerically) rank deficient.
    """
    proj = Projector(features, degree=degree, ridge=ridge)
    y = np.asarray(regressand, dtype=np.float64)
    squeeze = y.ndim == 1
    y2 = y.reshape(proj.M, -1)
    fitted = proj.project(y2)
    intercept, coef = proj.coefficients(y2)
    rms = np.sqrt(np.mean((y2 - fitted) ** 2, axis=0))
    diag = RegressionDiagnostics(cond=proj.cond, residual_rms=rms,
                                 basis_size=proj.basis_size, M=proj.M)
    return CondExpEstimator(
        transform=proj.transform, exponents=proj.exponents, col_mean=proj.col_mean,
        intercept=intercept, coef=coef, ridge=proj.ridge, degree=proj.degree,
        diagnostics=diag, fitted=fitted[:, 0] if squeeze else fitted)


def design_matrix(est, features):
    """Centered basis ``[1, B - mean]`` of a fitted estimator at new features."""
    values = features.values if isinstance(features, StateFeatures) else features
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    B = _monomials(est.transform.apply(values), est.exponents) - est.col_mean
    return np.hstack([np.ones((B.shape[0], 1)), B])


def evaluate(est, features):
    """Evaluate a fitted estimator on (possibly new) features."""
    B = design_matrix(est, features)
    out = B[:, 1:] @ est.coef + est.intercept
    return out[:, 0] if out.shape[1] == 1 else out


def write_diagnostics_csv(rows, path):
    """Write ``(k, l, basis_size, cond, residual_rms)`` records."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["k", "l", "basis_size", "cond", "residual_rms"])
        for r in rows:
            wr.writerow([r[0], r[1], r[2], repr(float(r[3])), repr(float(r[4]))])


# ---------------------------------------------------------------------------
# binary tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinaryTree:
    """Recombining walk on a partition: node ``j`` of level ``l`` sits at ``(2j - l) sqrt(Delta)``."""

    partition: object

    @property
    def step(self):
        return np.sqrt(self.partition.delta)

    def values(self, level):
        if not 0 <= level <= self.partition.N:
            raise InvalidArgumentError(f"level {level} outside 0..{self.partition.N}")
        return (2.0 * np.arange(level + 1) - level) * self.step

    def probabilities(self, level):
        """Binomial(level, 1/2) weights of the level's nodes."""
        from math import comb
        return np.array([comb(level, j) for j in range(level + 1)], dtype=np.float64) / 2.0 ** level


def tree_expectation(tree, level, payoff):
    """``E(payoff | node)`` one level back: ``(payoff[j] + payoff[j+1]) / 2``.

    ``payoff`` has ``level + 2`` entries along its first axis.
    """
    payoff = np.asarray(payoff, dtype=np.float64)
    if not 0 <= level < tree.partition.N:
        raise InvalidArgumentError(f"level {level} outside 0..{tree.partition.N - 1}")
    if payoff.shape[0] != level + 2:
        raise InvalidArgumentError(
            f"payoff at level {level + 1} needs {level + 2} entries, got {payoff.shape[0]}")
    return 0.5 * (payoff[:-1] + payoff[1:])
