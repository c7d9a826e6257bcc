"""Command-line interface: run | rates | compare | greeks.

Configuration comes from a flat TOML file of typed keys; results are
written as CSV files with full-precision (17 significant digit) floats so
repeated runs with the same seed are byte-identical regardless of the
thread count.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python < 3.11
    import tomli as tomllib

from .driver import (DriverError, MlmcConfig, fit_rates, rate_study, run_mlmc,
                     run_standard_mc)
from .greeks import (GbmSensitivityModel, SmoothedGreekSampler,
                     SplitPathwiseSampler, VibratoSampler)
from .jumps import JumpError, JumpPathSampler
from .models import ModelError, make_model
from .payoffs import PayoffError, PayoffSpec
from .sampling import PathSampler

LEVELS_HEADER = ("eps", "level", "N", "mean_diff", "var_diff", "mean_fine",
                 "var_fine", "cost")
SUMMARY_HEADER = ("eps", "estimate", "std_error", "total_cost", "alpha",
                  "beta", "gamma")
COMPARE_HEADER = ("eps", "mlmc_estimate", "mlmc_cost", "mlmc_eps2_cost",
                  "mc_estimate", "mc_cost", "mc_eps2_cost")


class ConfigError(ValueError):
    """Missing, malformed or inconsistent configuration."""


def _fmt(value: float) -> str:
    return "%.17g" % float(value)


def load_config(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("config file %s does not exist" % path)
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config file %s is not valid TOML: %s" % (path, exc))


_MODEL_KEYS = {
    "gbm": ("alpha", "beta", "x0"),
    "merton": ("alpha", "beta", "x0", "lam", "mark_mu", "mark_sigma"),
    "heston": ("r", "kappa", "theta", "sigma", "rho", "s0", "v0"),
    "clark_cameron": ("x0",),
}

_FAMILY_ALIAS = {
    "european": "lipschitz_european",
    "lipschitz_european": "lipschitz_european",
    "asian": "asian",
    "lookback": "lookback",
    "digital": "digital",
    "barrier_down_out": "barrier_down_out",
    "barrier_up_out": "barrier_up_out",
    "barrier_down_in": "barrier_down_in",
    "barrier_up_in": "barrier_up_in",
}

_SCHEME_ALIAS = {"euler": "euler", "milstein": "milstein_smoothed",
                 "milstein_smoothed": "milstein_smoothed",
                 "antithetic": "antithetic"}


def _build(cfg: dict):
    """Model, payoff spec and sampler from a parsed config."""
    try:
        model_name = str(cfg.get("model", "gbm")).lower()
        if model_name not in _MODEL_KEYS:
            raise ConfigError("unknown model %r" % model_name)
        params = {k: cfg[k] for k in _MODEL_KEYS[model_name] if k in cfg}
        model = make_model(model_name, **params)

        family = _FAMILY_ALIAS.get(str(cfg.get("payoff", "european")).lower())
        if family is None:
            raise ConfigError("unknown payoff %r" % cfg.get("payoff"))
        scheme = _SCHEME_ALIAS.get(str(cfg.get("scheme", "milstein")).lower())
        if scheme is None:
            raise ConfigError("unknown scheme %r" % cfg.get("scheme"))
        horizon = float(cfg.get("horizon", 1.0))
        discount = 0.0
        if bool(cfg.get("discount", True)):
            discount = float(cfg.get("alpha", cfg.get("r", 0.0)))
        spec = PayoffSpec(
            family=family,
            strike=float(cfg["strike"]) if "strike" in cfg else None,
            barrier=float(cfg["barrier"]) if "barrier" in cfg else None,
            scheme_mode=scheme,
            component=int(cfg.get("component", 0)),
            discount_rate=discount,
        )

        estimator = str(cfg.get("estimator", "value")).lower()
        if estimator == "value":
            if model.jumps is not None:
                if scheme != "milstein_smoothed":
                    raise ConfigError("jump models use the milstein scheme")
                sampler = JumpPathSampler(model, spec, horizon=horizon)
            else:
                sampler = PathSampler(model, spec, horizon=horizon)
        elif estimator in ("delta", "vega"):
            if model_name != "gbm":
                raise ConfigError("greeks are implemented for the gbm model")
            gm = GbmSensitivityModel(alpha=float(cfg["alpha"]),
                                     beta=float(cfg["beta"]),
                                     x0=float(cfg.get("x0", 1.0)))
            method = str(cfg.get("method", "smoothed")).lower()
            kw = dict(family=family, strike=spec.strike, barrier=spec.barrier,
                      discount_rate=discount, horizon=horizon)
            if method == "smoothed":
                sampler = SmoothedGreekSampler(gm, estimator, **kw)
            elif method == "split":
                sampler = SplitPathwiseSampler(
                    gm, estimator, split_count=int(cfg.get("split_count", 10)),
                    **kw)
            elif method == "vibrato":
                sampler = VibratoSampler(
                    gm, estimator, split_count=int(cfg.get("split_count", 10)),
                    **kw)
            else:
                raise ConfigError("unknown greeks method %r" % method)
        else:
            raise ConfigError("unknown estimator %r" % estimator)
        return model, spec, sampler
    except (ModelError, PayoffError, JumpError, KeyError, TypeError,
            ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc))


def _eps_list(cfg: dict):
    eps = cfg.get("eps", [0.01])
    if isinstance(eps, (int, float)):
        eps = [eps]
    out = [float(e) for e in eps]
    if not out or any(e <= 0.0 for e in out):
        raise ConfigError("eps must be a positive number or list thereof")
    return out


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _level_rows(eps, stats):
    rows = []
    for s in stats:
        rows.append((_fmt(eps), s.level, s.n, _fmt(s.mean_diff),
                     _fmt(s.var_diff), _fmt(s.mean_fine), _fmt(s.var_fine),
                     _fmt(s.cost)))
    return rows


def cmd_run(cfg, out_dir: Path, seed: int, threads: int) -> int:
    _, _, sampler = _build(cfg)
    level_rows = []
    summary_rows = []
    for eps in _eps_list(cfg):
        mc = MlmcConfig(target_rms=eps, seed=seed,
                        initial_samples=int(cfg.get("initial_samples", 100)),
                        max_level=int(cfg.get("max_level", 14)),
                        threads=threads)
        result = run_mlmc(sampler, mc)
        level_rows.extend(_level_rows(eps, result.levels))
        r = result.rates
        summary_rows.append((
            _fmt(eps), _fmt(result.estimate), _fmt(result.std_error),
            _fmt(result.total_cost),
            _fmt(r.alpha if r else float("nan")),
            _fmt(r.beta if r else float("nan")),
            _fmt(r.gamma if r else float("nan"))))
        print("eps=%s estimate=%s std_error=%s cost=%s levels=%d"
              % (_fmt(eps), _fmt(result.estimate), _fmt(result.std_error),
                 _fmt(result.total_cost), len(result.levels)))
    _write_csv(out_dir / "levels.csv", LEVELS_HEADER, level_rows)
    _write_csv(out_dir / "summary.csv", SUMMARY_HEADER, summary_rows)
    return 0


def cmd_rates(cfg, out_dir: Path, seed: int, threads: int) -> int:
    _, _, sampler = _build(cfg)
    lo, hi = cfg.get("rates_levels", [2, 7])
    n = int(cfg.get("rates_samples", 200_000))
    stats = rate_study(sampler, levels=range(int(lo), int(hi) + 1), n=n,
                       seed=seed, threads=threads)
    fit = fit_rates(stats, min_level=int(lo))
    _write_csv(out_dir / "levels.csv", LEVELS_HEADER, _level_rows(0.0, stats))
    _write_csv(out_dir / "summary.csv", SUMMARY_HEADER,
               [(_fmt(0.0), _fmt(float("nan")), _fmt(float("nan")),
                 _fmt(sum(s.cost for s in stats)), _fmt(fit.alpha),
                 _fmt(fit.beta), _fmt(fit.gamma))])
    print("alpha=%s beta=%s gamma=%s" % (_fmt(fit.alpha), _fmt(fit.beta),
                                         _fmt(fit.gamma)))
    return 0


def cmd_compare(cfg, out_dir: Path, seed: int, threads: int) -> int:
    _, _, sampler = _build(cfg)
    rows = []
    for eps in _eps_list(cfg):
        mc = MlmcConfig(target_rms=eps, seed=seed,
                        max_level=int(cfg.get("max_level", 14)),
                        threads=threads)
        ml = run_mlmc(sampler, mc)
        sl = run_standard_mc(sampler, eps, seed=seed + 1, threads=threads)
        rows.append((_fmt(eps), _fmt(ml.estimate), _fmt(ml.total_cost),
                     _fmt(eps * eps * ml.total_cost), _fmt(sl.estimate),
                     _fmt(sl.total_cost), _fmt(eps * eps * sl.total_cost)))
        print("eps=%s mlmc_eps2_cost=%s mc_eps2_cost=%s"
              % (_fmt(eps), _fmt(eps * eps * ml.total_cost),
                 _fmt(eps * eps * sl.total_cost)))
    _write_csv(out_dir / "compare.csv", COMPARE_HEADER, rows)
    return 0


def cmd_greeks(cfg, out_dir: Path, seed: int, threads: int) -> int:
    if str(cfg.get("estimator", "")).lower() not in ("delta", "vega"):
        raise ConfigError("greeks command needs estimator = 'delta' or 'vega'")
    return cmd_run(cfg, out_dir, seed, threads)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mlmcfin",
        description="Multilevel Monte Carlo option pricing and Greeks.")
    parser.add_argument("command",
                        choices=("run", "rates", "compare", "greeks"))
    parser.add_argument("--config", required=True, help="TOML config file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed < 0 or args.threads < 1:
            raise ConfigError("seed must be >= 0 and threads >= 1")
        out_dir = Path(args.out)
        handler = {"run": cmd_run, "rates": cmd_rates, "compare": cmd_compare,
                   "greeks": cmd_greeks}[args.command]
        return handler(cfg, out_dir, args.seed, args.threads)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures
        print("runtime error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
