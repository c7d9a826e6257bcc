"""Convergence diagnostics figures for multilevel Monte Carlo CSV output."""

from .figure import (PlotDataError, convergence_figure, fit_variance_slope,
                     load_csv, render)

__all__ = ["PlotDataError", "convergence_figure", "fit_variance_slope",
           "load_csv", "render"]
