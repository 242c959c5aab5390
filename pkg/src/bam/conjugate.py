"""Conjugate beliefs with closed-form updates, evidences and KL divergences.

Three model families are supported:

* ``BetaBelief`` over the success probability of Binomial draws,
* ``GaussianBelief`` over the mean of Gaussian data with known noise variance,
* ``RegressionBelief`` over a weight matrix ``M`` of a multi-output linear
  regression ``y = M phi + eps`` with known noise variance. Rows of ``M`` are
  independent and share a single precision matrix.

Observations are summarised by additive sufficient statistics, which is the
unit stored in a memory buffer. Statistics may carry real-valued counts so that
tempered likelihoods (power priors, exponential forgetting) stay exact.

All beliefs and statistics are immutable; ``update`` returns a new belief.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
from scipy import linalg
from scipy.special import betaln, digamma, gammaln

_LOG_2PI = math.log(2.0 * math.pi)


class NumericalError(ArithmeticError):
    """Raised when a factorisation or a log-space computation breaks down."""


def _check_weight(w: float) -> float:
    w = float(w)
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"weight must lie in [0, 1], got {w}")
    return w


# ---------------------------------------------------------------------------
# Sufficient statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BinomialStats:
    """Counts of Binomial draws.

    ``log_base`` accumulates the log binomial coefficients of the individual
    draws. It does not depend on the parameter, so it never changes which
    prior wins a comparison, but it keeps evidences exact.
    """

    successes: float = 0.0
    trials: float = 0.0
    log_base: float = 0.0

    family = "binomial"
    fields = ("successes", "trials", "log_base")

    def __post_init__(self):
        if self.trials < 0 or self.successes < 0:
            raise ValueError("counts must be non-negative")
        if self.successes > self.trials * (1 + 1e-12):
            raise ValueError(
                f"successes ({self.successes}) exceed trials ({self.trials})"
            )

    def __add__(self, other: BinomialStats) -> BinomialStats:
        _same_family(self, other)
        return BinomialStats(
            self.successes + other.successes,
            self.trials + other.trials,
            self.log_base + other.log_base,
        )

    def scale(self, w: float) -> BinomialStats:
        w = _check_weight(w)
        return BinomialStats(w * self.successes, w * self.trials, w * self.log_base)

    def zeros_like(self) -> BinomialStats:
        return BinomialStats()

    def to_vector(self) -> np.ndarray:
        return np.array([self.successes, self.trials, self.log_base])


@dataclass(frozen=True)
class GaussianStats:
    """Count, sum and sum of squares of scalar observations."""

    n: float = 0.0
    sum_y: float = 0.0
    sum_sq: float = 0.0

    family = "gaussian"
    fields = ("n", "sum_y", "sum_sq")

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"n must be non-negative, got {self.n}")

    def __add__(self, other: GaussianStats) -> GaussianStats:
        _same_family(self, other)
        return GaussianStats(
            self.n + other.n, self.sum_y + other.sum_y, self.sum_sq + other.sum_sq
        )

    def scale(self, w: float) -> GaussianStats:
        w = _check_weight(w)
        return GaussianStats(w * self.n, w * self.sum_y, w * self.sum_sq)

    def zeros_like(self) -> GaussianStats:
        return GaussianStats()

    def to_vector(self) -> np.ndarray:
        return np.array([self.n, self.sum_y, self.sum_sq])


@dataclass(frozen=True, eq=False)
class RegressionStats:
    """Design statistics of a regression batch ``(Phi, Y)``.

    ``gram`` is ``Phi.T @ Phi``, ``cross`` is ``Phi.T @ Y`` and ``sq_norm`` holds
    the column-wise squared norms of ``Y``.
    """

    n: float
    gram: np.ndarray
    cross: np.ndarray
    sq_norm: np.ndarray

    family = "regression"

    def __post_init__(self):
        gram = np.asarray(self.gram, dtype=float)
        cross = np.asarray(self.cross, dtype=float)
        sq_norm = np.asarray(self.sq_norm, dtype=float).reshape(-1)
        if self.n < 0:
            raise ValueError(f"n must be non-negative, got {self.n}")
        if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
            raise ValueError(f"gram must be square, got shape {gram.shape}")
        if cross.ndim != 2 or cross.shape[0] != gram.shape[0]:
            raise ValueError(
                f"cross must be d_feat x d_out with d_feat={gram.shape[0]}, "
                f"got shape {cross.shape}"
            )
        if sq_norm.shape != (cross.shape[1],):
            raise ValueError("sq_norm must have one entry per output")
        for name, value in (("gram", gram), ("cross", cross), ("sq_norm", sq_norm)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def d_feat(self) -> int:
        return self.gram.shape[0]

    @property
    def d_out(self) -> int:
        return self.cross.shape[1]

    @classmethod
    def zeros(cls, d_feat: int, d_out: int) -> RegressionStats:
        return cls(0.0, np.zeros((d_feat, d_feat)), np.zeros((d_feat, d_out)), np.zeros(d_out))

    def __add__(self, other: RegressionStats) -> RegressionStats:
        _same_family(self, other)
        if self.gram.shape != other.gram.shape or self.cross.shape != other.cross.shape:
            raise ValueError(
                f"dimension mismatch: {self.cross.shape} vs {other.cross.shape}"
            )
        return RegressionStats(
            self.n + other.n,
            self.gram + other.gram,
            self.cross + other.cross,
            self.sq_norm + other.sq_norm,
        )

    def scale(self, w: float) -> RegressionStats:
        w = _check_weight(w)
        return RegressionStats(w * self.n, w * self.gram, w * self.cross, w * self.sq_norm)

    def zeros_like(self) -> RegressionStats:
        return RegressionStats.zeros(self.d_feat, self.d_out)

    def __eq__(self, other):
        if not isinstance(other, RegressionStats):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.gram, other.gram)
            and np.array_equal(self.cross, other.cross)
            and np.array_equal(self.sq_norm, other.sq_norm)
        )

    __hash__ = None


SufficientStats = Union[BinomialStats, GaussianStats, RegressionStats]


def _same_family(a, b):
    if type(a) is not type(b):
        raise ValueError(f"family mismatch: {a.family} vs {getattr(b, 'family', type(b).__name__)}")


def binomial_stats(successes, trials) -> BinomialStats:
    """Summarise one or more Binomial draws ``successes[i] ~ Bin(trials[i], p)``."""
    k = np.atleast_1d(np.asarray(successes, dtype=float))
    n = np.broadcast_to(np.asarray(trials, dtype=float), k.shape)
    if np.any(k < 0) or np.any(k > n):
        raise ValueError("each draw needs 0 <= successes <= trials")
    if np.any(k != np.round(k)) or np.any(n != np.round(n)):
        raise ValueError("raw Binomial draws must be integer counts")
    log_base = np.sum(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))
    return BinomialStats(float(k.sum()), float(n.sum()), float(log_base))


def gaussian_stats(y) -> GaussianStats:
    y = np.asarray(y, dtype=float).reshape(-1)
    return GaussianStats(float(y.size), float(y.sum()), float(y @ y))


def regression_stats(phi, y) -> RegressionStats:
    """Summarise rows ``(phi_i, y_i)``; ``phi`` is n x d_feat, ``y`` is n x d_out."""
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if phi.ndim != 2:
        raise ValueError(f"phi must be 2-D, got shape {phi.shape}")
    if phi.shape[0] != y.shape[0]:
        raise ValueError(
            f"row count mismatch: phi has {phi.shape[0]} rows, y has {y.shape[0]}"
        )
    return RegressionStats(float(phi.shape[0]), phi.T @ phi, phi.T @ y, np.sum(y * y, axis=0))


def stats_from_batch(family: str, *batch) -> SufficientStats:
    """Dispatch to the family-specific summariser."""
    builders = {
        "binomial": binomial_stats,
        "gaussian": gaussian_stats,
        "regression": regression_stats,
    }
    try:
        return builders[family](*batch)
    except KeyError:
        raise ValueError(f"unknown family {family!r}") from None


def merge(a: SufficientStats, b: SufficientStats) -> SufficientStats:
    return a + b


def scale(stats: SufficientStats, w: float) -> SufficientStats:
    return stats.scale(w)


# ---------------------------------------------------------------------------
# Beliefs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BetaBelief:
    alpha: float = 1.0
    beta: float = 1.0

    family = "binomial"
    stats_type = BinomialStats

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"Beta parameters must be positive, got ({self.alpha}, {self.beta})")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    def variance(self) -> float:
        s = self.alpha + self.beta
        return self.alpha * self.beta / (s * s * (s + 1.0))

    def update(self, stats: BinomialStats) -> BetaBelief:
        _check_stats(self, stats)
        return BetaBelief(
            self.alpha + stats.successes, self.beta + stats.trials - stats.successes
        )

    def log_marginal(self, stats: BinomialStats) -> float:
        _check_stats(self, stats)
        post = self.update(stats)
        value = stats.log_base + betaln(post.alpha, post.beta) - betaln(self.alpha, self.beta)
        return _finite(value)

    def kl(self, base: BetaBelief) -> float:
        _check_belief(self, base)
        a, b, a0, b0 = self.alpha, self.beta, base.alpha, base.beta
        value = (
            betaln(a0, b0)
            - betaln(a, b)
            + (a - a0) * digamma(a)
            + (b - b0) * digamma(b)
            + (a0 - a + b0 - b) * digamma(a + b)
        )
        return max(float(value), 0.0)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.beta(self.alpha, self.beta, size=size)

    @classmethod
    def _candidate_scores(cls, base, acc, cands, target, lam):
        k = acc[0] + cands[:, 0]
        n = acc[1] + cands[:, 1]
        a = base.alpha + k
        b = base.beta + n - k
        lm = (
            target.log_base
            + betaln(a + target.successes, b + target.trials - target.successes)
            - betaln(a, b)
        )
        if lam == 0:
            return lm
        a0, b0 = base.alpha, base.beta
        kl = (
            betaln(a0, b0)
            - betaln(a, b)
            + (a - a0) * digamma(a)
            + (b - b0) * digamma(b)
            + (a0 - a + b0 - b) * digamma(a + b)
        )
        return lm - lam * np.sqrt(2.0 * np.maximum(kl, 0.0))


@dataclass(frozen=True)
class GaussianBelief:
    """Normal belief ``N(mean, variance)`` over the mean of ``N(theta, noise_variance)`` data."""

    mean: float = 0.0
    variance: float = 1.0
    noise_variance: float = 1.0

    family = "gaussian"
    stats_type = GaussianStats

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")
        if not self.noise_variance > 0:
            raise ValueError(f"noise_variance must be positive, got {self.noise_variance}")

    # `variance` is a field; keep the callable protocol shared with other beliefs
    def var(self) -> float:
        return self.variance

    def update(self, stats: GaussianStats) -> GaussianBelief:
        _check_stats(self, stats)
        precision = 1.0 / self.variance + stats.n / self.noise_variance
        mean = (self.mean / self.variance + stats.sum_y / self.noise_variance) / precision
        return GaussianBelief(mean, 1.0 / precision, self.noise_variance)

    def log_marginal(self, stats: GaussianStats) -> float:
        _check_stats(self, stats)
        post = self.update(stats)
        s2 = self.noise_variance
        quad = (
            stats.sum_sq / s2
            + self.mean**2 / self.variance
            - post.mean**2 / post.variance
        )
        value = -0.5 * stats.n * (_LOG_2PI + math.log(s2)) + 0.5 * math.log(
            post.variance / self.variance
        ) - 0.5 * quad
        return _finite(value)

    def predictive_logpdf(self, y: float) -> float:
        v = self.variance + self.noise_variance
        return -0.5 * (_LOG_2PI + math.log(v) + (y - self.mean) ** 2 / v)

    def kl(self, base: GaussianBelief) -> float:
        _check_belief(self, base)
        r = self.variance / base.variance
        value = 0.5 * (r + (self.mean - base.mean) ** 2 / base.variance - 1.0 - math.log(r))
        return max(value, 0.0)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.normal(self.mean, math.sqrt(self.variance), size=size)

    @classmethod
    def _candidate_scores(cls, base, acc, cands, target, lam):
        s2 = base.noise_variance
        n = acc[0] + cands[:, 0]
        s = acc[1] + cands[:, 1]
        prec = 1.0 / base.variance + n / s2
        mean = (base.mean / base.variance + s / s2) / prec
        prec_t = prec + target.n / s2
        mean_t = (mean * prec + target.sum_y / s2) / prec_t
        quad = target.sum_sq / s2 + mean**2 * prec - mean_t**2 * prec_t
        lm = -0.5 * target.n * (_LOG_2PI + math.log(s2)) + 0.5 * np.log(prec / prec_t) - 0.5 * quad
        if lam == 0:
            return lm
        r = 1.0 / (prec * base.variance)
        kl = 0.5 * (r + (mean - base.mean) ** 2 / base.variance - 1.0 - np.log(r))
        return lm - lam * np.sqrt(2.0 * np.maximum(kl, 0.0))


@dataclass(frozen=True, eq=False)
class RegressionBelief:
    """Matrix-normal belief over ``M`` (d_out x d_feat) with independent rows.

    Every row has covariance ``inv(precision)``; observations are
    ``y = M phi + eps`` with ``eps ~ N(0, noise_variance I)``.
    """

    mean: np.ndarray
    precision: np.ndarray
    noise_variance: float

    family = "regression"
    stats_type = RegressionStats

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float, ndmin=2)
        precision = np.array(self.precision, dtype=float)
        if precision.ndim != 2 or precision.shape[0] != precision.shape[1]:
            raise ValueError(f"precision must be square, got {precision.shape}")
        if mean.shape[1] != precision.shape[0]:
            raise ValueError(
                f"mean has {mean.shape[1]} features but precision is {precision.shape}"
            )
        if not self.noise_variance > 0:
            raise ValueError("noise_variance must be positive")
        mean.setflags(write=False)
        precision.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", precision)

    @classmethod
    def isotropic(cls, d_out: int, d_feat: int, prior_precision: float, noise_variance: float):
        return cls(np.zeros((d_out, d_feat)), prior_precision * np.eye(d_feat), noise_variance)

    @property
    def d_out(self) -> int:
        return self.mean.shape[0]

    @property
    def d_feat(self) -> int:
        return self.mean.shape[1]

    @cached_property
    def chol(self) -> np.ndarray:
        """Lower Cholesky factor of the row precision."""
        return _cholesky(self.precision)

    @cached_property
    def logdet_precision(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    @cached_property
    def covariance(self) -> np.ndarray:
        return linalg.cho_solve((self.chol, True), np.eye(self.d_feat))

    def variance(self) -> float:
        """Trace of the covariance shared by every row of ``M``."""
        return float(np.trace(self.covariance))

    def update(self, stats: RegressionStats) -> RegressionBelief:
        _check_stats(self, stats)
        precision = self.precision + stats.gram / self.noise_variance
        rhs = self.precision @ self.mean.T + stats.cross / self.noise_variance
        chol = _cholesky(precision)
        out = RegressionBelief(linalg.cho_solve((chol, True), rhs).T, precision, self.noise_variance)
        out.__dict__["chol"] = chol
        return out

    def log_marginal(self, stats: RegressionStats) -> float:
        _check_stats(self, stats)
        post = self.update(stats)
        s2 = self.noise_variance
        m0, m1 = self.mean, post.mean
        quad = (
            stats.sq_norm.sum() / s2
            + np.einsum("ij,jk,ik->", m0, self.precision, m0)
            - np.einsum("ij,jk,ik->", m1, post.precision, m1)
        )
        value = (
            -0.5 * self.d_out * stats.n * (_LOG_2PI + math.log(s2))
            + 0.5 * self.d_out * (self.logdet_precision - post.logdet_precision)
            - 0.5 * quad
        )
        return _finite(value)

    def kl(self, base: RegressionBelief) -> float:
        _check_belief(self, base)
        d = self.d_feat
        trace_term = float(np.sum(base.precision * self.covariance))
        diff = self.mean - base.mean
        maha = float(np.einsum("ij,jk,ik->", diff, base.precision, diff))
        value = 0.5 * (
            self.d_out * (trace_term - d + self.logdet_precision - base.logdet_precision) + maha
        )
        return max(value, 0.0)

    def sample(self, rng: np.random.Generator, size=None):
        """Draw weight matrices; ``size`` adds a leading axis of independent draws."""
        count = 1 if size is None else int(size)
        z = rng.standard_normal((count, self.d_out, self.d_feat))
        # rows ~ N(m, P^-1): solve L^T x = z
        x = linalg.solve_triangular(self.chol, z.reshape(-1, self.d_feat).T, lower=True, trans="T")
        draws = self.mean + x.T.reshape(count, self.d_out, self.d_feat)
        return draws[0] if size is None else draws

    def predict(self, phi) -> np.ndarray:
        return np.asarray(phi) @ self.mean.T


Belief = Union[BetaBelief, GaussianBelief, RegressionBelief]


def _check_stats(belief, stats):
    if not isinstance(stats, belief.stats_type):
        raise ValueError(
            f"family mismatch: {belief.family} belief cannot use "
            f"{getattr(stats, 'family', type(stats).__name__)} statistics"
        )
    if isinstance(stats, RegressionStats) and (
        stats.d_feat != belief.d_feat or stats.d_out != belief.d_out
    ):
        raise ValueError(
            f"dimension mismatch: belief is {belief.d_out}x{belief.d_feat}, "
            f"statistics are {stats.d_out}x{stats.d_feat}"
        )


def _check_belief(a, b):
    if type(a) is not type(b):
        raise ValueError(f"family mismatch: {a.family} vs {getattr(b, 'family', type(b).__name__)}")
    if isinstance(a, RegressionBelief) and a.mean.shape != b.mean.shape:
        raise ValueError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")


def _cholesky(precision: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(precision, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalError("precision is not positive definite") from exc


def _finite(value) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise NumericalError(f"non-finite log evidence ({value})")
    return value


# Functional aliases -------------------------------------------------------


def posterior(prior: Belief, stats: SufficientStats) -> Belief:
    return prior.update(stats)


def log_marginal(prior: Belief, stats: SufficientStats) -> float:
    return prior.log_marginal(stats)


def kl_to_base(belief: Belief, base: Belief) -> float:
    return belief.kl(base)


def sample(belief: Belief, rng: np.random.Generator, size=None):
    return belief.sample(rng, size)


def variance(belief: Belief) -> float:
    if isinstance(belief, GaussianBelief):
        return belief.variance
    return belief.variance()


def point_mean(belief: Belief):
    return belief.mean


def candidate_scores(base: Belief, acc, cands: np.ndarray, target, lam: float) -> np.ndarray:
    """Vectorised selection scores for scalar families.

    Row ``i`` of ``cands`` holds the statistics vector of one candidate batch;
    ``acc`` the vector of the already-selected union. Each entry equals
    ``log_marginal(posterior(base, acc + cand_i), target) - lam*sqrt(2 KL)``.
    """
    return type(base)._candidate_scores(base, acc, cands, target, lam)


def supports_vector_scores(belief) -> bool:
    return hasattr(type(belief), "_candidate_scores")
