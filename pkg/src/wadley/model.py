"""Probability model for binomial counts with unobserved sizes.

Counts y_i are modelled as Poisson with mean lambda * p(alpha + x_i'beta),
where lambda follows a discrete mixing distribution G on (0, inf) and the
random intercept alpha follows a discrete mixing distribution H on the real
line. Everything here is a pure function of its inputs; all density work is
done in log space.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

WEIGHT_FLOOR = 1e-12


class ModelError(Exception):
    """Base class for model-level failures."""


class DegenerateLikelihoodError(ModelError):
    """Every mixture component underflowed for at least one observation."""


class DegenerateComponentError(ModelError):
    """A mixture component has lost all posterior responsibility."""


def logistic(t):
    """Inverse logit, exp(t)/(1+exp(t)), overflow-safe for any finite t."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    et = np.exp(t[~pos])
    out[~pos] = et / (1.0 + et)
    if out.ndim == 0:
        return float(out)
    return out


def log_logistic(t):
    """log of the inverse logit, computed as -log(1 + exp(-t))."""
    t = np.asarray(t, dtype=float)
    out = -np.logaddexp(0.0, -t)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class Dataset:
    """Count responses with covariate rows.

    y : (r,) nonnegative integer counts
    x : (r, p) real covariate matrix (no intercept column unless supplied)
    labels : optional per-row strings used only for reporting
    """

    y: np.ndarray
    x: np.ndarray
    labels: tuple = None

    def __post_init__(self):
        y = np.asarray(self.y)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if y.ndim != 1 or y.size < 1:
            raise ValueError("y must be a nonempty vector")
        if np.any(y < 0) or not np.allclose(y, np.round(y)):
            raise ValueError("y must contain nonnegative integers")
        if x.shape[0] != y.size:
            raise ValueError("x and y row counts differ")
        if x.shape[1] < 1:
            raise ValueError("x needs at least one column")
        if not np.all(np.isfinite(x)):
            raise ValueError("x has missing or non-finite entries")
        object.__setattr__(self, "y", y.astype(np.int64))
        object.__setattr__(self, "x", x)
        if self.labels is not None:
            labels = tuple(str(v) for v in self.labels)
            if len(labels) != y.size:
                raise ValueError("labels length must match y")
            object.__setattr__(self, "labels", labels)

    @property
    def r(self):
        return self.y.size

    @property
    def n_covariates(self):
        return self.x.shape[1]


@dataclass(frozen=True)
class MixingDistribution:
    """Discrete distribution: weighted support points, stored ascending.

    domain="positive" restricts support to (0, inf); "unrestricted" allows
    any real support. Equal support points are merged by summing weights.
    """

    support: np.ndarray
    weights: np.ndarray
    domain: str = "unrestricted"

    def __post_init__(self):
        support = np.asarray(self.support, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if support.size != weights.size or support.size == 0:
            raise ValueError("support and weights must be nonempty and equal-length")
        if self.domain not in ("positive", "unrestricted"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-10:
            raise ValueError("weights must sum to 1")
        if not np.all(np.isfinite(support)):
            raise ValueError("support points must be finite")
        if self.domain == "positive" and np.any(support <= 0):
            raise ValueError("positive-domain support points must be > 0")
        order = np.argsort(support)
        support, weights = support[order], weights[order]
        # merge coincident support points
        if support.size > 1 and np.any(np.diff(support) == 0):
            uniq, inv = np.unique(support, return_inverse=True)
            merged = np.zeros_like(uniq)
            np.add.at(merged, inv, weights)
            support, weights = uniq, merged
        support.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    @property
    def n_support(self):
        return self.support.size

    def drop_small_weights(self, floor=WEIGHT_FLOOR):
        """Zero out weights below the floor, renormalize, drop the points."""
        keep = self.weights >= floor
        if keep.all():
            return self
        if not keep.any():
            raise DegenerateComponentError("all mixing weights fell below the floor")
        w = self.weights[keep]
        return MixingDistribution(self.support[keep], w / w.sum(), self.domain)


@dataclass(frozen=True)
class ModelParams:
    """Full parameter vector: coefficients plus both mixing distributions."""

    beta: np.ndarray
    g: MixingDistribution  # sizes, positive support
    h: MixingDistribution  # random intercepts, unrestricted support

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).ravel()
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta must be finite")
        if self.g.domain != "positive":
            raise ValueError("g must have positive domain")
        beta.flags.writeable = False
        object.__setattr__(self, "beta", beta)

    @property
    def k1(self):
        return self.g.n_support

    @property
    def k2(self):
        return self.h.n_support

    def flatten(self):
        """Canonical flat vector (beta, lambda, rho, alpha, pi) for norms."""
        return np.concatenate(
            [self.beta, self.g.support, self.g.weights, self.h.support, self.h.weights]
        )


def component_log_density(y, x, beta, lam, alpha):
    """Log Poisson density of y at mean lam * p(alpha + x'beta)."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    y = int(y)
    if y < 0:
        raise ValueError("y must be nonnegative")
    eta = float(np.dot(np.atleast_1d(x), np.atleast_1d(beta)))
    log_mu = np.log(lam) + log_logistic(alpha + eta)
    mu = np.exp(log_mu)
    ylogmu = 0.0 if y == 0 else y * log_mu
    return -mu + ylogmu - float(gammaln(y + 1))


def component_log_density_table(data, params):
    """All component log densities as an (r, K1, K2) array.

    Entry (i, j, m) is log f(y_i; x_i, beta, lambda_j, alpha_m).
    """
    y = data.y
    eta = data.x @ params.beta  # (r,)
    t = eta[:, None] + params.h.support[None, :]  # (r, K2)
    logp = -np.logaddexp(0.0, -t)
    log_lam = np.log(params.g.support)
    log_mu = log_lam[None, :, None] + logp[:, None, :]  # (r, K1, K2)
    mu = np.exp(log_mu)
    ylogmu = np.where(y[:, None, None] == 0, 0.0, y[:, None, None] * log_mu)
    return -mu + ylogmu - gammaln(y + 1.0)[:, None, None]


def observation_log_likelihoods(data, params):
    """Per-observation log mixture densities, length r, via log-sum-exp."""
    logf = component_log_density_table(data, params)
    logw = np.log(params.g.weights)[None, :, None] + np.log(params.h.weights)[None, None, :]
    ll_i = logsumexp((logf + logw).reshape(data.r, -1), axis=1)
    if np.any(np.isneginf(ll_i)):
        bad = int(np.flatnonzero(np.isneginf(ll_i))[0])
        raise DegenerateLikelihoodError(
            f"all mixture components underflowed for observation {bad}"
        )
    return ll_i


def mixture_log_likelihood(data, params):
    """Observed-data log likelihood of the discrete double mixture."""
    return float(observation_log_likelihoods(data, params).sum())


def fitted_values(data, params):
    """Model mean of each y_i: sum_jm rho_j pi_m lambda_j p(alpha_m + x_i'beta)."""
    eta = data.x @ params.beta
    p = logistic(eta[:, None] + params.h.support[None, :])  # (r, K2)
    lam_mean = float(np.dot(params.g.weights, params.g.support))
    return lam_mean * (p @ params.h.weights)
