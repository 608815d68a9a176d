"""Treed distributed lag nonlinear models."""

from __future__ import annotations

import numpy as np

from . import _core
from ._core import ConfigError, DataError, SamplerError, TreedlnmError, config_keys, true_surface

__all__ = [
    "ConfigError",
    "DataError",
    "SamplerError",
    "TreedlnmError",
    "config_keys",
    "fit",
    "simulate",
    "true_surface",
    "run_fit",
    "run_simulate",
    "run_summarize",
]


def _options(options: dict) -> dict[str, str]:
    out = {}
    for key, value in options.items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        out[key] = str(value)
    return out


def fit(y, X, covariates=None, **options) -> dict:
    """Fits the model and returns draws (draw x grid x week), summaries and parameters.

    Keyword options are the CLI config keys, e.g. ``n_trees=20, sigma_x_mode="half_sd"``.
    """
    y = np.ascontiguousarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if covariates is None:
        covariates = np.zeros((X.shape[0], 0))
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        covariates = covariates[:, None]
    return _core.fit(y, X, covariates, _options(options))


def simulate(scenario: str, n: int, T: int = 37, amplitude: float = 1.0, snr: float = 1e-3, seed: int = 1) -> dict:
    """One simulated dataset: y, log exposures X, covariates (no intercept), signal f."""
    return _core.simulate(scenario, n, T, amplitude, snr, seed)


def run_fit(**options) -> None:
    """Runs the `fit` command (writes files into output_dir)."""
    _core.cmd_fit(_options(options))


def run_simulate(jobs: int = 1, **options) -> int:
    """Runs the `simulate` command; returns the number of successful replicates."""
    return _core.cmd_simulate(_options(options), jobs)


def run_summarize(**options) -> tuple[float, float, float]:
    """Runs the `summarize` command; returns the contrast (mean, lo, hi)."""
    return _core.cmd_summarize(_options(options))
