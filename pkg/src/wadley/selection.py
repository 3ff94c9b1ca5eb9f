"""Forward search over the numbers of support points, minimizing BIC."""

from dataclasses import dataclass, replace

import numpy as np

from .ecm import FitConfig, FitResult, fit
from .model import MixingDistribution, ModelParams


def bic(loglik, k1, k2, r, p_dim):
    """-2*loglik + log(r) * (2*(k1 + k2) - 2 + p_dim), natural log."""
    if r < 1 or k1 < 1 or k2 < 1:
        raise ValueError("r, k1, k2 must all be >= 1")
    return -2.0 * loglik + np.log(r) * (2 * (k1 + k2) - 2 + p_dim)


@dataclass(frozen=True)
class SelectionResult:
    """BIC grid over visited (K1, K2) cells plus the selected fit."""

    grid: dict  # (k1, k2) -> {"bic": float, "loglik": float, "fit": FitResult | None}
    selected: tuple
    selected_fit: FitResult


def _split_largest(mix):
    """Split the largest-weight support point +/-10% to warm-start K+1."""
    j = int(np.argmax(mix.weights))
    s, w = mix.support[j], mix.weights[j]
    spread = 0.1 * abs(s) if s != 0 else 0.1
    support = np.concatenate([np.delete(mix.support, j), [s - spread, s + spread]])
    weights = np.concatenate([np.delete(mix.weights, j), [w / 2, w / 2]])
    if mix.domain == "positive":
        support = np.maximum(support, 1e-6)
    # keep points distinct after clipping
    order = np.argsort(support)
    support, weights = support[order], weights[order]
    for i in range(1, support.size):
        if support[i] <= support[i - 1]:
            support[i] = support[i - 1] * (1 + 1e-6) + 1e-9
    return MixingDistribution(support, weights, mix.domain)


def _warm_start(fit_result, grow):
    """Parameters for the neighboring cell with one more support point in
    the `grow` dimension ("g" or "h")."""
    p = fit_result.params
    if grow == "g":
        return ModelParams(p.beta, _split_largest(p.g), p.h)
    return ModelParams(p.beta, p.g, _split_largest(p.h))


def _merge_closest(mix):
    """Merge the two closest support points into their weighted mean."""
    if mix.n_support < 2:
        raise ValueError("nothing to merge")
    gaps = np.diff(mix.support)
    j = int(np.argmin(gaps))
    w = mix.weights[j] + mix.weights[j + 1]
    merged = (mix.weights[j] * mix.support[j]
              + mix.weights[j + 1] * mix.support[j + 1]) / w
    support = np.concatenate([mix.support[:j], [merged], mix.support[j + 2:]])
    weights = np.concatenate([mix.weights[:j], [w], mix.weights[j + 2:]])
    return MixingDistribution(support, weights, mix.domain)


def _merge_start(fit_result, shrink):
    """Parameters for the neighboring cell with one fewer support point in
    the `shrink` dimension ("g" or "h")."""
    p = fit_result.params
    if shrink == "g":
        return ModelParams(p.beta, _merge_closest(p.g), p.h)
    return ModelParams(p.beta, p.g, _merge_closest(p.h))


def _fit_cell(data, k1, k2, config, warm_params):
    """Fit a grid cell from the data-driven start and, when available, the
    warm start split from a neighbor; keep whichever gives higher loglik."""
    best = None
    starts = [None]
    if warm_params is not None:
        starts.append(warm_params)
    for init in starts:
        try:
            res = fit(data, k1, k2, replace(config, init_params=init))
        except Exception:
            continue
        # a cell only counts if no component was dropped below the target K
        if res.k1 != k1 or res.k2 != k2:
            continue
        if best is None or res.loglik > best.loglik:
            best = res
    return best


def forward_search(data, config=None, k_max=6):
    """Grow K2 for each K1 while BIC keeps decreasing; stop growing K1 once
    its best BIC has worsened for two consecutive values. Returns the
    minimum-BIC cell among all visited ones, ties broken by smaller
    K1 + K2 then smaller K1."""
    config = config or FitConfig()
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    grid = {}
    fits = {}

    def visit(k1, k2):
        if (k1, k2) in grid:
            return grid[(k1, k2)]["bic"]
        warm = None
        # prefer the smaller neighbor with the better BIC as warm start
        candidates = []
        if (k1 - 1, k2) in fits and fits[(k1 - 1, k2)] is not None:
            candidates.append((grid[(k1 - 1, k2)]["bic"], fits[(k1 - 1, k2)], "g"))
        if (k1, k2 - 1) in fits and fits[(k1, k2 - 1)] is not None:
            candidates.append((grid[(k1, k2 - 1)]["bic"], fits[(k1, k2 - 1)], "h"))
        if candidates:
            candidates.sort(key=lambda c: c[0])
            warm = _warm_start(candidates[0][1], candidates[0][2])
        res = _fit_cell(data, k1, k2, config, warm)
        fits[(k1, k2)] = res
        if res is None:
            grid[(k1, k2)] = {"bic": float("inf"), "loglik": float("-inf"), "fit": None}
        else:
            grid[(k1, k2)] = {"bic": res.bic, "loglik": res.loglik, "fit": res}
        return grid[(k1, k2)]["bic"]

    row_best = []
    for k1 in range(1, k_max + 1):
        prev = visit(k1, 1)
        best_in_row = prev
        for k2 in range(2, k_max + 1):
            cur = visit(k1, k2)
            best_in_row = min(best_in_row, cur)
            if cur >= prev:
                break
            prev = cur
        row_best.append(best_in_row)
        # stop after the row-best BIC has risen for two consecutive K1
        if len(row_best) >= 3 and row_best[-1] > row_best[-2] > row_best[-3]:
            break

    # refinement pass: revisit competitive cells warm-started from fitted
    # neighbors by merging a support point (and, for diagonal neighbors,
    # splitting one in the other dimension), which often escapes local
    # optima the plain split direction cannot reach
    cutoff = min(c["bic"] for c in grid.values() if c["fit"] is not None) + 10.0
    for k1, k2 in sorted(grid, key=lambda kk: (kk[0] + kk[1], kk)):
        if grid[(k1, k2)]["fit"] is not None and grid[(k1, k2)]["bic"] > cutoff:
            continue
        moves = (((k1 + 1, k2), "g", None),
                 ((k1, k2 + 1), "h", None),
                 ((k1 + 1, k2 - 1), "g", "h"),
                 ((k1 - 1, k2 + 1), "h", "g"))
        for src, shrink, grow in moves:
            neighbor = fits.get(src)
            if neighbor is None:
                continue
            try:
                warm = _merge_start(neighbor, shrink)
                if grow == "g":
                    warm = ModelParams(warm.beta, _split_largest(warm.g), warm.h)
                elif grow == "h":
                    warm = ModelParams(warm.beta, warm.g, _split_largest(warm.h))
                res = fit(data, k1, k2, replace(config, init_params=warm))
            except Exception:
                continue
            if res.k1 != k1 or res.k2 != k2:
                continue
            if res.loglik > grid[(k1, k2)]["loglik"]:
                fits[(k1, k2)] = res
                grid[(k1, k2)] = {"bic": res.bic, "loglik": res.loglik, "fit": res}
        cutoff = min(cutoff, grid[(k1, k2)]["bic"] + 10.0)

    # polish phase: the leading cells can sit on slow, nearly flat ascent
    # paths, so near-ties are resolved by continuing their ECM runs until
    # the BIC ranking stabilizes
    for _ in range(3):
        best = min(c["bic"] for c in grid.values() if c["fit"] is not None)
        improved = False
        for k1, k2 in sorted(grid):
            cell = grid[(k1, k2)]
            if cell["fit"] is None or cell["bic"] > best + 3.0:
                continue
            if cell["fit"].converged:
                continue
            try:
                res = fit(data, k1, k2,
                          replace(config, init_params=cell["fit"].params,
                                  max_iterations=5 * config.max_iterations))
            except Exception:
                continue
            if res.k1 == k1 and res.k2 == k2 and res.loglik > cell["loglik"]:
                if cell["bic"] - res.bic > 0.02:
                    improved = True
                fits[(k1, k2)] = res
                grid[(k1, k2)] = {"bic": res.bic, "loglik": res.loglik, "fit": res}
        if not improved:
            break

    visited = [(k1k2, cell) for k1k2, cell in grid.items() if cell["fit"] is not None]
    if not visited:
        raise RuntimeError("every grid cell failed to fit")
    selected = min(visited, key=lambda kv: (kv[1]["bic"], kv[0][0] + kv[0][1], kv[0][0]))
    return SelectionResult(grid=grid, selected=selected[0], selected_fit=selected[1]["fit"])
