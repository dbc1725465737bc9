"""Held-out grid search over (T_ens, T_act)."""

from dataclasses import replace

import numpy as np

from mfuq.errors import EmptyHeldout
from mfuq.metrics import auroc, evaluate_in_domain
from mfuq.predictor import TemperatureConfig, integrate


def log_grid(lo=1e-3, hi=1e3, n=7):
    return np.logspace(np.log10(lo), np.log10(hi), n)


def grid_search(objective, t_ens_grid, t_act_grid, maximize=False):
    """Evaluate ``objective(t_ens, t_act)`` on the full grid.

    Returns ``(best TemperatureConfig, rows)`` with rows ``(t_ens, t_act, value)``.
    Exact ties go to the point closest to (1, 1) in log space.
    """
    rows = [(float(te), float(ta), float(objective(te, ta))) for te in t_ens_grid for ta in t_act_grid]
    if not rows:
        raise ValueError("empty temperature grid")
    sign = -1.0 if maximize else 1.0

    def key(row):
        value = sign * row[2]
        return (np.inf if np.isnan(value) else value, np.hypot(np.log(row[0]), np.log(row[1])))

    best = min(rows, key=key)
    return TemperatureConfig(best[0], best[1]), rows


def nll_objective(base, labels, cfg):
    """Held-out mean NLL as a function of the temperatures.

    ``base`` is the untempered GaussianActivation of the held-out inputs.
    """
    if len(labels) == 0:
        raise EmptyHeldout("held-out split is empty")

    def f(t_ens, t_act):
        c = replace(cfg, temps=TemperatureConfig(t_ens, t_act))
        return evaluate_in_domain(integrate(base.scaled(t_ens, t_act), c), labels).nll

    return f


def auroc_objective(base_in, base_out, cfg):
    if base_in.mu.shape[0] == 0 or base_out.mu.shape[0] == 0:
        raise EmptyHeldout("held-out in-domain and OOD sets must be non-empty")

    def f(t_ens, t_act):
        c = replace(cfg, temps=TemperatureConfig(t_ens, t_act))
        s_in = integrate(base_in.scaled(t_ens, t_act), c).max(axis=1)
        s_out = integrate(base_out.scaled(t_ens, t_act), c).max(axis=1)
        return auroc(s_in, s_out)

    return f
