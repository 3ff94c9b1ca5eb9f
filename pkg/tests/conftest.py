"""Shared fixtures and oracle helpers for the test suite."""

import math

import mpmath
import numpy as np
import pytest

from wadley.model import Dataset, MixingDistribution, ModelParams

# acceptance verdict lines, echoed after the run (pytest's fd-level
# capture swallows writes made while tests execute)
_VERDICTS = []


def record_verdict(line):
    _VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)


def random_dataset(rng, r=5, p=2, y_max=30):
    """Small random dataset for oracle comparisons."""
    y = rng.integers(0, y_max + 1, size=r)
    x = rng.normal(0.0, 1.0, size=(r, p))
    return Dataset(y=y, x=x)


def random_params(rng, p=2, k1=2, k2=2, lam_scale=20.0):
    """Random valid parameters with strictly increasing support points."""
    beta = rng.normal(0.0, 0.5, size=p)
    lam = np.sort(rng.uniform(1.0, lam_scale, size=k1))
    lam += np.arange(k1) * 1e-3  # keep strictly increasing
    alpha = np.sort(rng.normal(0.0, 1.0, size=k2))
    alpha += np.arange(k2) * 1e-3
    rho = rng.dirichlet(np.ones(k1))
    pi = rng.dirichlet(np.ones(k2))
    g = MixingDistribution(lam, rho, "positive")
    h = MixingDistribution(alpha, pi, "unrestricted")
    return ModelParams(beta, g, h)


def brute_force_loglik(data, params):
    """Plain-arithmetic mixture log-likelihood in extended precision."""
    mpmath.mp.dps = 60
    total = mpmath.mpf(0)
    for i in range(data.r):
        acc = mpmath.mpf(0)
        for j in range(params.g.n_support):
            for m in range(params.h.n_support):
                lam = mpmath.mpf(float(params.g.support[j]))
                w = mpmath.mpf(float(params.g.weights[j])) * mpmath.mpf(
                    float(params.h.weights[m]))
                t = float(params.h.support[m] + data.x[i] @ params.beta)
                prob = mpmath.mpf(1) / (1 + mpmath.e ** mpmath.mpf(-t))
                mu = lam * prob
                y = int(data.y[i])
                dens = mpmath.e ** (-mu) * mu ** y / mpmath.factorial(y)
                acc += w * dens
        total += mpmath.log(acc)
    return float(total)


def brute_force_estep(data, params):
    """Extended-precision responsibilities by direct normalization."""
    mpmath.mp.dps = 60
    k1, k2 = params.g.n_support, params.h.n_support
    out = np.empty((data.r, k1, k2))
    for i in range(data.r):
        dens = [[None] * k2 for _ in range(k1)]
        tot = mpmath.mpf(0)
        for j in range(k1):
            for m in range(k2):
                lam = mpmath.mpf(float(params.g.support[j]))
                w = mpmath.mpf(float(params.g.weights[j])) * mpmath.mpf(
                    float(params.h.weights[m]))
                t = float(params.h.support[m] + data.x[i] @ params.beta)
                prob = mpmath.mpf(1) / (1 + mpmath.e ** mpmath.mpf(-t))
                mu = lam * prob
                y = int(data.y[i])
                d = w * mpmath.e ** (-mu) * mu ** y / mpmath.factorial(y)
                dens[j][m] = d
                tot += d
        for j in range(k1):
            for m in range(k2):
                out[i, j, m] = float(dens[j][m] / tot)
    return out


def golden_section_max(f, lo, hi, tol=1e-10):
    """1-D golden-section maximizer used as an optimizer oracle."""
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2


@pytest.fixture(scope="session")
def mbovis():
    from wadley.dataio import load_dataset, mbovis_path

    data, names = load_dataset(mbovis_path(), factor="dose", reference="control")
    return data, names
