"""Bootstrap standard errors and percentile confidence intervals for the
regression coefficients, by resampling from the fitted model (parametric)
or from the observed rows (nonparametric)."""

from dataclasses import dataclass, replace

import numpy as np
from joblib import Parallel, delayed

from .ecm import FitConfig, fit
from .model import Dataset, logistic


@dataclass(frozen=True)
class BootstrapResult:
    """Replicate coefficient draws with per-coordinate se and 95% CI."""

    replicates: np.ndarray  # (B - failures, p)
    se: np.ndarray
    ci: np.ndarray  # (p, 2) percentile interval, 2.5% / 97.5%
    B: int
    failures: int
    scheme: str
    unreliable: bool = False  # more than B/4 replicates failed


def _replicate_rng(seed, index):
    """Independent stream for replicate `index` derived from the master seed."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & (2**64 - 1), int(index)])
    )


def parametric_resample(data, fit_result, seed, index=0):
    """Draw a new response vector from the fitted model, one (lambda, alpha)
    pair per row, keeping the covariates fixed."""
    rng = _replicate_rng(seed, index)
    p = fit_result.params
    lam = rng.choice(p.g.support, size=data.r, p=p.g.weights)
    alpha = rng.choice(p.h.support, size=data.r, p=p.h.weights)
    mu = lam * logistic(alpha + data.x @ p.beta)
    y_star = rng.poisson(mu)
    return Dataset(y_star, data.x, data.labels)


def nonparametric_resample(data, seed, index=0):
    """Resample (y_i, x_i) rows i.i.d. with replacement."""
    rng = _replicate_rng(seed, index)
    idx = rng.integers(0, data.r, size=data.r)
    labels = None if data.labels is None else tuple(data.labels[i] for i in idx)
    return Dataset(data.y[idx], data.x[idx], labels)


def _one_replicate(data, fit_result, scheme, config, seed, index):
    if scheme == "parametric":
        resample = parametric_resample(data, fit_result, seed, index)
    else:
        resample = nonparametric_resample(data, seed, index)
    try:
        res = fit(resample, fit_result.k1, fit_result.k2,
                  replace(config, init_params=fit_result.params))
    except Exception:
        return None
    if not np.all(np.isfinite(res.params.beta)):
        return None
    return res.params.beta


def bootstrap_ci(data, fit_result, scheme, B, config=None, seed=20240101, threads=1):
    """Refit B resamples at the original (K1, K2), warm-started at the
    original fit, and summarize the coefficient draws."""
    if scheme not in ("parametric", "nonparametric"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if B < 2:
        raise ValueError("B must be >= 2")
    config = config or FitConfig()
    if threads > 1:
        rows = Parallel(n_jobs=threads)(
            delayed(_one_replicate)(data, fit_result, scheme, config, seed, b)
            for b in range(B)
        )
    else:
        rows = [_one_replicate(data, fit_result, scheme, config, seed, b)
                for b in range(B)]
    good = [r for r in rows if r is not None]
    failures = B - len(good)
    replicates = np.asarray(good, dtype=float)
    if replicates.size == 0:
        raise RuntimeError("every bootstrap replicate failed to fit")
    se = replicates.std(axis=0, ddof=1)
    lo = np.percentile(replicates, 2.5, axis=0)
    hi = np.percentile(replicates, 97.5, axis=0)
    return BootstrapResult(
        replicates=replicates,
        se=se,
        ci=np.column_stack([lo, hi]),
        B=B,
        failures=failures,
        scheme=scheme,
        unreliable=failures > B / 4,
    )
