"""Four-panel convergence figure from MLMC level and summary CSV files.

The input files are the ``levels.csv`` / ``summary.csv`` written by the
``mlmcfin run`` command; only the documented column names are relied on.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LEVELS_COLUMNS = ("eps", "level", "N", "mean_diff", "var_diff", "mean_fine",
                  "var_fine", "cost")
SUMMARY_COLUMNS = ("eps", "estimate", "std_error", "total_cost", "alpha",
                   "beta", "gamma")


class PlotDataError(ValueError):
    """Missing file, missing column or unusable CSV contents."""


def load_csv(path, required: Sequence[str]) -> List[Dict[str, float]]:
    """Rows of a CSV file as float dicts, validated against ``required``."""
    p = Path(path)
    if not p.is_file():
        raise PlotDataError("input file %s does not exist" % path)
    with open(p, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or ()
        for column in required:
            if column not in header:
                raise PlotDataError("%s is missing required column %r"
                                    % (path, column))
        try:
            rows = [{k: float(row[k]) for k in required} for row in reader]
        except (TypeError, ValueError) as exc:
            raise PlotDataError("%s has a non-numeric field: %s"
                                % (path, exc))
    if not rows:
        raise PlotDataError("%s contains no data rows" % path)
    return rows


def fit_variance_slope(levels: Sequence[float],
                       var_diff: Sequence[float]) -> float:
    """Variance decay rate beta from per-level correction variances.

    Returns the negated least-squares slope of log2 variance against
    level, using the same filter as the estimator's own rate fit:
    level-zero rows and degenerate variances are excluded.
    """
    lev, logs = [], []
    for l, v in zip(levels, var_diff):
        if l >= 1 and v > 0.0:
            lev.append(float(l))
            logs.append(np.log2(v))
    if len(lev) < 3:
        raise PlotDataError("variance fit needs at least three levels with "
                            "positive correction variance")
    a = np.vstack([np.ones(len(lev)), lev]).T
    coef, _, _, _ = np.linalg.lstsq(a, np.array(logs), rcond=None)
    return float(-coef[1])


def _groups_by_eps(rows):
    groups: Dict[float, List[Dict[str, float]]] = {}
    for row in rows:
        groups.setdefault(row["eps"], []).append(row)
    for group in groups.values():
        group.sort(key=lambda r: r["level"])
    return dict(sorted(groups.items()))


def convergence_figure(level_rows, summary_rows):
    """Build the four-panel figure; returns (figure, fitted beta).

    The variance and mean panels show one line per accuracy target; the
    fitted slope annotation refers to the tightest (smallest eps) run.
    """
    groups = _groups_by_eps(level_rows)
    eps_values = list(groups)
    tight = groups[eps_values[0]]
    beta = fit_variance_slope([r["level"] for r in tight],
                              [r["var_diff"] for r in tight])

    fig, axes = plt.subplots(2, 2, figsize=(10, 8))
    ax_var, ax_mean, ax_n, ax_cost = axes.ravel()

    for eps, rows in groups.items():
        lev = [r["level"] for r in rows]
        label = "eps=%g" % eps
        with np.errstate(divide="ignore"):
            ax_var.plot(lev, np.log2([r["var_diff"] for r in rows]), "o-",
                        label=label)
            ax_mean.plot(lev, np.log2(np.abs([r["mean_diff"] for r in rows])),
                         "o-", label=label)
        ax_n.semilogy(lev, [r["N"] for r in rows], "o-", label=label)
    ax_var.set_xlabel("level $\\ell$")
    ax_var.set_ylabel("$\\log_2$ var$(P_\\ell - P_{\\ell-1})$")
    ax_var.set_title("correction variance, fitted $\\beta$ = %.3f" % beta)
    ax_var.legend()
    ax_mean.set_xlabel("level $\\ell$")
    ax_mean.set_ylabel("$\\log_2 |$mean$(P_\\ell - P_{\\ell-1})|$")
    ax_mean.set_title("correction mean")
    ax_mean.legend()
    ax_n.set_xlabel("level $\\ell$")
    ax_n.set_ylabel("$N_\\ell$")
    ax_n.set_title("samples per level")
    ax_n.legend()

    eps = [r["eps"] for r in summary_rows]
    eps2_cost = [r["eps"] ** 2 * r["total_cost"] for r in summary_rows]
    ax_cost.loglog(eps, eps2_cost, "o-")
    ax_cost.set_xlabel("accuracy target $\\varepsilon$")
    ax_cost.set_ylabel("$\\varepsilon^2 \\cdot$ cost")
    ax_cost.set_title("normalised total cost")

    fig.tight_layout()
    return fig, beta


def render(levels_path, summary_path, out_path) -> float:
    """Render the convergence figure to ``out_path``; returns fitted beta."""
    level_rows = load_csv(levels_path, LEVELS_COLUMNS)
    summary_rows = load_csv(summary_path, SUMMARY_COLUMNS)
    fig, beta = convergence_figure(level_rows, summary_rows)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return beta
