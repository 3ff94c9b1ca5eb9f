"""ECM fitter: E-step responsibilities and five sequential CM-steps.

Each iteration runs one E-step followed by conditional maximizations over
the G weights, H weights, G support, H support and the regression
coefficients, in that fixed order. The weight updates and the G-support
update are closed form; the H-support and coefficient updates go through a
bounded quasi-Newton inner optimizer with analytic gradients.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .model import (
    WEIGHT_FLOOR,
    Dataset,
    DegenerateComponentError,
    DegenerateLikelihoodError,
    MixingDistribution,
    ModelParams,
    component_log_density_table,
    logistic,
    mixture_log_likelihood,
)

ALPHA_BOUND = 50.0  # box for the intercept support; contains the all-zero-y runaway


class OptimizerFailure(Exception):
    """Inner optimizer could not produce a finite ascent point."""


@dataclass(frozen=True)
class FitConfig:
    """Convergence and initialization knobs for a single ECM run."""

    max_iterations: int = 2000
    loglik_tolerance: float = 1e-8
    param_tolerance: float = 1e-7
    inner_budget: int = 60
    seed: int = 20240101
    init_params: ModelParams = None  # warm start; None means data-driven init

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.loglik_tolerance <= 0 or self.param_tolerance <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class PosteriorWeights:
    """E-step responsibilities e[i, j, m], each row summing to 1 over (j, m)."""

    e: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.e, dtype=float)
        if e.ndim != 3:
            raise ValueError("responsibilities must have shape (r, K1, K2)")
        if np.any(e < -1e-12) or np.any(e > 1 + 1e-12):
            raise ValueError("responsibilities must lie in [0, 1]")
        row = e.reshape(e.shape[0], -1).sum(axis=1)
        if np.max(np.abs(row - 1.0)) > 1e-10:
            raise ValueError("responsibilities must sum to 1 per observation")
        object.__setattr__(self, "e", e)


@dataclass(frozen=True)
class FitResult:
    """Converged parameters plus diagnostics of the ECM run."""

    params: ModelParams
    loglik: float
    bic: float
    n_iterations: int
    converged: bool
    reason: str  # "tolerance" | "max_iterations" | "degenerate"
    trace: np.ndarray
    ridge_flagged: bool = False  # flat likelihood while parameters still moved
    k1: int = 0
    k2: int = 0


def e_step(data, params):
    """Posterior component responsibilities under the current parameters."""
    logf = component_log_density_table(data, params)
    logw = np.log(params.g.weights)[None, :, None] + np.log(params.h.weights)[None, None, :]
    lw = logf + logw
    norm = logsumexp(lw.reshape(data.r, -1), axis=1)
    if np.any(np.isneginf(norm)):
        bad = int(np.flatnonzero(np.isneginf(norm))[0])
        raise DegenerateLikelihoodError(
            f"E-step denominator underflowed for observation {bad}"
        )
    return PosteriorWeights(np.exp(lw - norm[:, None, None]))


def cm_step_rho(e):
    """Closed-form update of the G weights: mean responsibility over (i, m)."""
    return e.e.sum(axis=2).mean(axis=0)


def cm_step_pi(e):
    """Closed-form update of the H weights: mean responsibility over (i, j)."""
    return e.e.sum(axis=1).mean(axis=0)


def cm_step_lambda(data, e, alpha_prev, beta_prev):
    """Closed-form update of the G support given previous alpha and beta."""
    p = logistic((data.x @ beta_prev)[:, None] + np.asarray(alpha_prev)[None, :])
    num = np.einsum("ijm,i->j", e.e, data.y.astype(float))
    den = np.einsum("ijm,im->j", e.e, p)
    if np.any(den < 1e-300):
        bad = int(np.flatnonzero(den < 1e-300)[0])
        raise DegenerateComponentError(
            f"size component {bad} has lost all responsibility"
        )
    return num / den


def inner_optimize(value_and_grad, start, budget=60, box=None):
    """Maximize a smooth function; never return a point worse than start.

    Runs bounded L-BFGS-B on the negated objective with analytic gradient,
    falling back to Nelder-Mead if the gradient path fails, and finally to
    the start point itself.
    """
    start = np.atleast_1d(np.asarray(start, dtype=float))
    f0, _ = value_and_grad(start)
    if not np.isfinite(f0):
        raise OptimizerFailure("objective not finite at the start point")

    def neg(z):
        v, g = value_and_grad(z)
        if not np.isfinite(v):
            return np.inf, np.zeros_like(z)
        return -v, -g

    bounds = None
    if box is not None:
        lo, hi = box
        bounds = [(lo, hi)] * start.size
    res = minimize(neg, start, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": budget})
    best_x, best_f = start, f0
    if np.all(np.isfinite(res.x)):
        fx, _ = value_and_grad(res.x)
        if np.isfinite(fx) and fx > best_f:
            best_x, best_f = res.x, fx
    if not res.success and best_f <= f0:
        res2 = minimize(lambda z: neg(z)[0], start, method="Nelder-Mead",
                        options={"maxiter": 4 * budget, "xatol": 1e-8, "fatol": 1e-12})
        fx, _ = value_and_grad(res2.x)
        if np.isfinite(fx) and fx > best_f and np.all(np.isfinite(res2.x)):
            best_x = res2.x
            if box is not None:
                best_x = np.clip(best_x, box[0], box[1])
    return best_x


def _alpha_slice(data, e, lam, beta, m):
    """Value-and-gradient of the m-th intercept slice of the T3 block."""
    y = data.y.astype(float)
    eta = data.x @ beta
    a = e.e[:, :, m].sum(axis=1)  # (r,)
    b = e.e[:, :, m] @ lam  # (r,)

    def value_and_grad(alpha):
        t = alpha[0] + eta
        logp = -np.logaddexp(0.0, -t)
        p = np.exp(logp)
        val = np.dot(a * y, logp) - np.dot(b, p)
        grad = np.dot(a * y, 1.0 - p) - np.dot(b, p * (1.0 - p))
        return val, np.array([grad])

    return value_and_grad


def _newton_alpha(data, e, lam, beta, m, start):
    """Safeguarded 1-D Newton ascent on the intercept slice; returns None
    when Newton cannot make progress (caller falls back to quasi-Newton)."""
    y = data.y.astype(float)
    eta = data.x @ beta
    a = e.e[:, :, m].sum(axis=1)
    b = e.e[:, :, m] @ lam
    ay = a * y

    def value(alpha):
        logp = -np.logaddexp(0.0, -(alpha + eta))
        return np.dot(ay, logp) - np.dot(b, np.exp(logp))

    alpha = float(start)
    f = value(alpha)
    for _ in range(40):
        p = np.exp(-np.logaddexp(0.0, -(alpha + eta)))
        q = p * (1.0 - p)
        grad = np.dot(ay, 1.0 - p) - np.dot(b, q)
        if abs(grad) < 1e-10:
            return alpha, f
        hess = -np.dot(ay, q) - np.dot(b, q * (1.0 - 2.0 * p))
        step = -grad / hess if hess < 0 else np.sign(grad)
        # damped ascent: halve the step until the objective improves
        for _ in range(50):
            cand = float(np.clip(alpha + step, -ALPHA_BOUND, ALPHA_BOUND))
            fc = value(cand)
            if fc >= f:
                break
            step *= 0.5
        else:
            return alpha, f
        if abs(cand - alpha) < 1e-13 * max(1.0, abs(alpha)):
            return cand, fc
        alpha, f = cand, fc
    return alpha, f


def cm_step_alpha(data, e, lambda_new, alpha_prev, beta_prev, budget=60):
    """Update each H support point by maximizing its slice of the T3 block."""
    out = np.empty_like(np.asarray(alpha_prev, dtype=float))
    for m in range(out.size):
        vg = _alpha_slice(data, e, lambda_new, beta_prev, m)
        f0, g0 = vg([alpha_prev[m]])
        res = _newton_alpha(data, e, lambda_new, beta_prev, m, alpha_prev[m])
        if res is not None and res[1] >= f0:
            _, gc = vg([res[0]])
            if abs(gc[0]) < 1e-6 or res[1] > f0:
                out[m] = res[0]
                continue
        out[m] = inner_optimize(vg, [alpha_prev[m]], budget=budget,
                                box=(-ALPHA_BOUND, ALPHA_BOUND))[0]
    return out


def _beta_objective(data, e, lam, alpha):
    """Value-and-gradient of the T3 block as a function of the coefficients."""
    y = data.y.astype(float)
    a = e.e.sum(axis=1)  # (r, K2)
    b = np.einsum("ijm,j->im", e.e, lam)  # (r, K2)
    ay = a * y[:, None]

    def value_and_grad(beta):
        t = (data.x @ beta)[:, None] + np.asarray(alpha)[None, :]
        logp = -np.logaddexp(0.0, -t)
        p = np.exp(logp)
        val = np.sum(ay * logp) - np.sum(b * p)
        gi = (ay * (1.0 - p) - b * p * (1.0 - p)).sum(axis=1)
        return val, data.x.T @ gi

    return value_and_grad


def _newton_beta(data, e, lam, alpha, start):
    """Safeguarded Newton ascent on the coefficient block of T3."""
    y = data.y.astype(float)
    a = e.e.sum(axis=1)
    b = np.einsum("ijm,j->im", e.e, lam)
    ay = a * y[:, None]
    alpha = np.asarray(alpha, dtype=float)

    def value(beta):
        t = (data.x @ beta)[:, None] + alpha[None, :]
        logp = -np.logaddexp(0.0, -t)
        return np.sum(ay * logp) - np.sum(b * np.exp(logp))

    beta = np.asarray(start, dtype=float).copy()
    f = value(beta)
    for _ in range(40):
        t = (data.x @ beta)[:, None] + alpha[None, :]
        p = np.exp(-np.logaddexp(0.0, -t))
        q = p * (1.0 - p)
        gi = (ay * (1.0 - p) - b * q).sum(axis=1)
        grad = data.x.T @ gi
        gnorm = np.max(np.abs(grad))
        if gnorm < 1e-9:
            return beta, f
        wi = (ay * q + b * q * (1.0 - 2.0 * p)).sum(axis=1)
        hess = -(data.x.T * wi) @ data.x
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            return None
        if np.dot(step, grad) <= 0:
            step = grad / max(gnorm, 1.0)
        for _ in range(50):
            cand = beta + step
            fc = value(cand)
            if np.isfinite(fc) and fc >= f:
                break
            step = 0.5 * step
        else:
            return beta, f
        moved = np.max(np.abs(cand - beta))
        beta, f = cand, fc
        if moved < 1e-12 * max(1.0, np.max(np.abs(beta))):
            return beta, f
    return beta, f


def cm_step_beta(data, e, lambda_new, alpha_new, beta_prev, budget=60):
    """Update the regression coefficients by maximizing the T3 block."""
    vg = _beta_objective(data, e, lambda_new, alpha_new)
    f0, _ = vg(np.asarray(beta_prev, dtype=float))
    res = _newton_beta(data, e, lambda_new, alpha_new, beta_prev)
    if res is not None and res[1] >= f0:
        _, gc = vg(res[0])
        if np.max(np.abs(gc)) < 1e-6 or res[1] > f0:
            return res[0]
    return inner_optimize(vg, beta_prev, budget=budget)


def t3_value(data, e, lam, alpha, beta):
    """The full T3 block (support/coefficient part of the expected complete
    log likelihood), used by the oracle tests."""
    y = data.y.astype(float)
    t = (np.asarray(data.x) @ np.asarray(beta))[:, None] + np.asarray(alpha)[None, :]
    logp = -np.logaddexp(0.0, -t)
    p = np.exp(logp)
    loglam = np.log(np.asarray(lam, dtype=float))
    val = np.einsum("ijm,i,j->", e.e, y, loglam)
    val += np.einsum("ijm,im->", e.e, y[:, None] * logp)
    val -= np.einsum("ijm,j,im->", e.e, np.asarray(lam, dtype=float), p)
    return float(val)


def poisson_irls(y, x, max_iter=25):
    """Log-link Poisson regression by IRLS; returns the coefficient vector,
    or zeros if the iteration fails to stay finite."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    p = x.shape[1]
    # canonical GLM start: working response from mu = y + 0.5
    mu = y + 0.5
    eta = np.log(mu)
    beta = np.zeros(p)
    for _ in range(max_iter):
        z = eta + (y - mu) / mu
        w = mu
        try:
            xtwx = x.T @ (w[:, None] * x)
            beta_new = np.linalg.solve(xtwx + 1e-10 * np.eye(p),
                                       x.T @ (w * z))
        except np.linalg.LinAlgError:
            return np.zeros(p)
        if not np.all(np.isfinite(beta_new)):
            return np.zeros(p)
        done = np.max(np.abs(beta_new - beta)) < 1e-10
        beta = beta_new
        eta = np.clip(x @ beta, -30, 30)
        mu = np.exp(eta)
        if done:
            break
    return beta


def initialize(data, k1, k2, seed, slope_scale=1.0, intercept_spread=1.5):
    """Data-driven starting point: Poisson-regression coefficients (times
    `slope_scale`), size support at quantiles of y / p-hat, intercept
    support spread over +/- `intercept_spread`, uniform weights, seeded
    +/-5% jitter on support points."""
    if k1 < 1 or k2 < 1:
        raise ValueError("k1 and k2 must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), k1, k2]))
    # the Poisson regression carries an internal intercept so its slopes land
    # on a dose-effect scale; the intercept itself is absorbed by the size
    # and intercept mixing blocks and is discarded here
    x_aug = np.column_stack([np.ones(data.r), data.x])
    beta0 = poisson_irls(data.y, x_aug)[1:] * slope_scale
    if k2 == 1:
        alpha0 = np.array([0.0])
    else:
        alpha0 = np.linspace(-intercept_spread, intercept_spread, k2)
    alpha0 = alpha0 + 0.05 * rng.uniform(-1, 1, size=k2)
    p_hat = logistic(data.x @ beta0 + np.median(alpha0))
    # quantiles of y / p-hat estimate the size scale, but only rows where
    # the start gives a non-negligible success probability are informative
    keep = p_hat > 0.1 * p_hat.max()
    ratios = (data.y / np.clip(p_hat, 1e-8, None))[keep]
    qs = (np.arange(1, k1 + 1)) / (k1 + 1.0)
    lam0 = np.quantile(ratios, qs)
    lam0 = np.clip(lam0, 1e-3, None)
    lam0 = lam0 * (1.0 + 0.05 * rng.uniform(-1, 1, size=k1))
    lam0 = np.maximum(lam0, 1e-3)
    # tie-break: strictly increasing support is required downstream
    lam0 = _separate(np.sort(lam0), 1e-6)
    alpha0 = _separate(np.sort(alpha0), 1e-6)
    g = MixingDistribution(lam0, np.full(k1, 1.0 / k1), "positive")
    h = MixingDistribution(alpha0, np.full(k2, 1.0 / k2), "unrestricted")
    return ModelParams(beta0, g, h)


SLOPE_SCALES = (1.0, 2.0, 4.0, 8.0)
INTERCEPT_SPREADS = (1.5, 3.0)


def fit_multistart(data, k1, k2, config=None, pilot_iterations=150):
    """Fit from a grid of data-driven starts and keep the best fit.

    The marginal Poisson regression underestimates the slope when the
    intercept mixing is wide, so the start grid scales the initial slope
    and intercept spread; each start gets a short pilot run and the best
    pilot by log-likelihood is continued to the full iteration budget."""
    config = config or FitConfig()
    best = None
    for scale in SLOPE_SCALES:
        for spread in INTERCEPT_SPREADS if k2 > 1 else (1.5,):
            try:
                start = initialize(data, k1, k2, config.seed,
                                   slope_scale=scale, intercept_spread=spread)
                pilot = fit(data, k1, k2,
                            replace(config, init_params=start,
                                    max_iterations=pilot_iterations))
            except Exception:
                continue
            if pilot.k1 != k1 or pilot.k2 != k2:
                continue
            if best is None or pilot.loglik > best.loglik:
                best = pilot
    if best is None:
        # fall back to a single full run from the plain start
        return fit(data, k1, k2, config)
    return fit(data, k1, k2, replace(config, init_params=best.params))


def _separate(sorted_vals, gap):
    """Nudge sorted values so consecutive entries differ by at least gap."""
    out = sorted_vals.copy()
    for i in range(1, out.size):
        if out[i] - out[i - 1] < gap:
            out[i] = out[i - 1] + gap
    return out


def _apply_weight_floor(params):
    """Drop components whose weight fell below the floor; zero-size support
    points (lambda == 0) are handled by the caller before this point."""
    g = params.g.drop_small_weights()
    h = params.h.drop_small_weights()
    if g is params.g and h is params.h:
        return params
    return ModelParams(params.beta, g, h)


def fit(data, k1, k2, config=None):
    """Run the ECM iteration to convergence.

    Convergence requires both the log-likelihood ascent and the max-norm
    parameter change to fall below their tolerances. Components that lose
    all weight are dropped and the fit continues with reduced K.
    """
    config = config or FitConfig()
    if config.init_params is not None:
        params = config.init_params
    else:
        params = initialize(data, k1, k2, config.seed)
    params = _apply_weight_floor(params)

    trace = [mixture_log_likelihood(data, params)]
    converged = False
    reason = "max_iterations"
    ridge = False
    n_iter = 0
    for n_iter in range(1, config.max_iterations + 1):
        try:
            new_params = _ecm_sweep(data, params, config)
        except (DegenerateLikelihoodError, DegenerateComponentError):
            reason = "degenerate"
            break
        ll_new = mixture_log_likelihood(data, new_params)
        trace.append(ll_new)
        same_shape = (new_params.k1 == params.k1 and new_params.k2 == params.k2)
        dll = abs(ll_new - trace[-2])
        if same_shape:
            dtheta = np.max(np.abs(new_params.flatten() - params.flatten()))
        else:
            dtheta = np.inf
        params = new_params
        if dll < config.loglik_tolerance and dtheta < config.param_tolerance:
            converged = True
            reason = "tolerance"
            break
        if dll < config.loglik_tolerance and dtheta >= config.param_tolerance:
            ridge = True
        else:
            ridge = False

    ll = trace[-1]
    bic_val = -2.0 * ll + np.log(data.r) * (
        2 * (params.k1 + params.k2) - 2 + data.n_covariates
    )
    return FitResult(
        params=params,
        loglik=float(ll),
        bic=float(bic_val),
        n_iterations=n_iter,
        converged=converged,
        reason=reason,
        trace=np.asarray(trace),
        ridge_flagged=bool(ridge and not converged),
        k1=params.k1,
        k2=params.k2,
    )


def _ecm_sweep(data, params, config):
    """One E-step plus the five CM-steps; returns canonicalized parameters."""
    e = e_step(data, params)
    rho = cm_step_rho(e)
    pi = cm_step_pi(e)
    lam = cm_step_lambda(data, e, params.h.support, params.beta)
    # a component whose assigned counts are all zero drives lambda to 0,
    # which is outside the positive domain: drop it and restart the sweep
    if np.any(lam <= 0):
        keep = lam > 0
        if not keep.any():
            raise DegenerateComponentError("every size support point collapsed to 0")
        g = MixingDistribution(params.g.support[keep],
                               params.g.weights[keep] / params.g.weights[keep].sum(),
                               "positive")
        return _ecm_sweep(data, ModelParams(params.beta, g, params.h), config)
    alpha = cm_step_alpha(data, e, lam, params.h.support, params.beta,
                          budget=config.inner_budget)
    beta = cm_step_beta(data, e, lam, alpha, params.beta,
                        budget=config.inner_budget)
    g = MixingDistribution(lam, rho, "positive")
    h = MixingDistribution(alpha, pi, "unrestricted")
    return _apply_weight_floor(ModelParams(beta, g, h))
