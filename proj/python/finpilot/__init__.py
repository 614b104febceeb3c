"""Python bindings for the finpilot C++ core."""

import json

from ._finpilot import (
    FinpilotError,
    calibrate_cheat,
    env_step,
    generate_synthetic_closes,
    imagined_reward,
    metrics,
    parse_toml,
    r_squared,
    render_table,
    risk_objective,
    softmax_weights,
    transaction_cost,
)
from ._finpilot import run_experiment as _run_experiment


def run_experiment(config, sweep=False):
    """Run an experiment from a config dict (same schema as the TOML file) and return the results dict."""
    return json.loads(_run_experiment(json.dumps(config), sweep))


__all__ = [
    "FinpilotError",
    "calibrate_cheat",
    "env_step",
    "generate_synthetic_closes",
    "imagined_reward",
    "metrics",
    "parse_toml",
    "r_squared",
    "render_table",
    "risk_objective",
    "run_experiment",
    "softmax_weights",
    "transaction_cost",
]
