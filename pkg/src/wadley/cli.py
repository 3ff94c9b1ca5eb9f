"""Command-line interface: fit, select, bootstrap and simulate subcommands
with JSON results and CSV/figure exports."""

import argparse
import datetime
import json
import sys

import numpy as np

from . import __version__
from .bootstrap import bootstrap_ci
from .dataio import InputError, load_dataset, mbovis_path
from .ecm import FitConfig, fit
from .model import ModelError
from .report import render_fitted_figure, write_fitted_csv, write_simulation_csv
from .selection import forward_search
from .simulation import run_design

DEFAULT_SEED = 20240101

EXIT_OK = 0
EXIT_MODEL_ERROR = 1
EXIT_INPUT_ERROR = 2


def _mixing_dict(mix):
    return {"support": [float(v) for v in mix.support],
            "weights": [float(v) for v in mix.weights]}


def _fit_dict(res, covariate_names):
    p = res.params
    return {
        "k1": res.k1,
        "k2": res.k2,
        "coefficients": {name: float(b) for name, b in zip(covariate_names, p.beta)},
        "g": _mixing_dict(p.g),
        "h": _mixing_dict(p.h),
        "loglik": res.loglik,
        "bic": res.bic,
        "convergence": {
            "converged": res.converged,
            "reason": res.reason,
            "n_iterations": res.n_iterations,
            "ridge_flagged": res.ridge_flagged,
        },
    }


def _write_result(out, payload, config, seed, command):
    payload = dict(payload)
    payload["command"] = command
    payload["seed"] = seed
    payload["fit_config"] = {
        "max_iterations": config.max_iterations,
        "loglik_tolerance": config.loglik_tolerance,
        "param_tolerance": config.param_tolerance,
    }
    payload["meta"] = {
        "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "version": __version__,
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _load(args):
    path = args.input
    if path == "mbovis":
        path = mbovis_path()
        if args.factor is None:
            args.factor, args.reference = "dose", "control"
    covariates = args.covariates.split(",") if args.covariates else None
    return load_dataset(path, response=args.response, covariates=covariates,
                        factor=args.factor, reference=args.reference)


def _config(args):
    return FitConfig(seed=args.seed)


def _add_data_args(p):
    p.add_argument("--input", required=True,
                   help="CSV path, or 'mbovis' for the bundled dataset")
    p.add_argument("--response", default="y")
    p.add_argument("--covariates", default=None,
                   help="comma-separated numeric covariate columns")
    p.add_argument("--factor", default=None,
                   help="categorical column expanded to dose indicators")
    p.add_argument("--reference", default=None,
                   help="reference (control) level for --factor")


def _add_common_args(p):
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", default=None, help="result JSON path (default stdout)")
    p.add_argument("--threads", type=int, default=1)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wadley",
        description="Semiparametric mixture regression for counts with unknown sizes",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_fit = sub.add_parser("fit", help="fit at fixed numbers of support points")
    _add_data_args(p_fit)
    _add_common_args(p_fit)
    p_fit.add_argument("--k1", type=int, default=1)
    p_fit.add_argument("--k2", type=int, default=1)
    p_fit.add_argument("--emit-fitted", default=None, metavar="CSV",
                       help="write per-row fitted values; a PNG figure is "
                            "rendered next to it")

    p_sel = sub.add_parser("select", help="BIC forward search over (K1, K2)")
    _add_data_args(p_sel)
    _add_common_args(p_sel)
    p_sel.add_argument("--k-max", type=int, default=6)

    p_boot = sub.add_parser("bootstrap", help="bootstrap se and CIs for the coefficients")
    _add_data_args(p_boot)
    _add_common_args(p_boot)
    p_boot.add_argument("--k1", type=int, default=1)
    p_boot.add_argument("--k2", type=int, default=1)
    p_boot.add_argument("--B", type=int, default=200)
    p_boot.add_argument("--scheme", choices=["parametric", "nonparametric"],
                        default="parametric")

    p_sim = sub.add_parser("simulate", help="run the 2^3 simulation design")
    _add_common_args(p_sim)
    p_sim.add_argument("--settings", default=None,
                       help="comma-separated setting ids 1-8 (default all)")
    p_sim.add_argument("--samples", type=int, default=200)
    p_sim.add_argument("--select-k", action="store_true",
                       help="run BIC selection per sample instead of fitting "
                            "at the generating support sizes")
    p_sim.add_argument("--out-csv", default=None, help="summary CSV path")
    return parser


def cmd_fit(args):
    data, names = _load(args)
    config = _config(args)
    res = fit(data, args.k1, args.k2, config)
    payload = _fit_dict(res, names)
    if args.emit_fitted:
        write_fitted_csv(args.emit_fitted, data, res.params)
        fig_path = str(args.emit_fitted).rsplit(".", 1)[0] + ".png"
        render_fitted_figure(fig_path, data, res.params)
        payload["fitted_csv"] = str(args.emit_fitted)
        payload["fitted_figure"] = fig_path
    _write_result(args.out, payload, config, args.seed, "fit")
    return EXIT_OK


def cmd_select(args):
    data, names = _load(args)
    config = _config(args)
    sel = forward_search(data, config, k_max=args.k_max)
    grid = {
        f"{k1},{k2}": {"bic": cell["bic"], "loglik": cell["loglik"]}
        for (k1, k2), cell in sorted(sel.grid.items())
        if cell["fit"] is not None
    }
    payload = {
        "selected": list(sel.selected),
        "grid": grid,
        "selected_fit": _fit_dict(sel.selected_fit, names),
    }
    _write_result(args.out, payload, config, args.seed, "select")
    return EXIT_OK


def cmd_bootstrap(args):
    data, names = _load(args)
    config = _config(args)
    base = fit(data, args.k1, args.k2, config)
    boot = bootstrap_ci(data, base, args.scheme, args.B, config,
                        seed=args.seed, threads=args.threads)
    payload = _fit_dict(base, names)
    payload["bootstrap"] = {
        "scheme": boot.scheme,
        "B": boot.B,
        "failures": boot.failures,
        "unreliable": boot.unreliable,
        "table": [
            {"coefficient": name,
             "mle": float(base.params.beta[i]),
             "se": float(boot.se[i]),
             "ci_low": float(boot.ci[i, 0]),
             "ci_high": float(boot.ci[i, 1])}
            for i, name in enumerate(names)
        ],
    }
    _write_result(args.out, payload, config, args.seed, "bootstrap")
    return EXIT_OK


def cmd_simulate(args):
    config = _config(args)
    settings = None
    if args.settings:
        settings = [int(s) for s in args.settings.split(",")]
    summaries = run_design(args.samples, config, master_seed=args.seed,
                           settings=settings, select_k=args.select_k,
                           threads=args.threads)
    if args.out_csv:
        write_simulation_csv(args.out_csv, summaries)
    payload = {
        "summaries": [
            {"setting": s.setting_id, "beta": s.beta, "G": s.g_name, "H": s.h_name,
             "bias": s.bias, "sd": s.sd, "mse": s.mse,
             "qi": list(s.qi), "n_fits": s.n_fits, "failures": s.failures,
             "flagged": s.flagged}
            for s in summaries
        ]
    }
    _write_result(args.out, payload, config, args.seed, "simulate")
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "select": cmd_select,
    "bootstrap": cmd_bootstrap,
    "simulate": cmd_simulate,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.subcommand](args)
    except (InputError, FileNotFoundError) as exc:
        json.dump({"error": "input", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_INPUT_ERROR
    except (ModelError, ValueError, RuntimeError) as exc:
        json.dump({"error": "model", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_MODEL_ERROR


if __name__ == "__main__":
    sys.exit(main())
