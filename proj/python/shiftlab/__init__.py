"""shiftlab: domain and semantic shift adaptation toolkit.

Thin pythonic layer over the compiled ``_core`` module. Configs and reports
cross the boundary as JSON so the results match the CLI byte for byte.
"""

import json as _json

from ._core import (
    UNKNOWN,
    format_report_json,
    gen_synthetic_text,
    gradcheck_ops,
    mda_normalize,
    miou,
    mix3,
    owr_metrics,
    param_overhead,
    parse_dataset,
    run_gradcheck,
    run_scenario_json,
    scenario_names,
    schedule,
    softmax,
    version,
)

__version__ = version()

__all__ = [
    "UNKNOWN",
    "__version__",
    "format_report_json",
    "gen_synthetic",
    "gen_synthetic_text",
    "gradcheck",
    "gradcheck_ops",
    "mda_normalize",
    "miou",
    "mix3",
    "owr_metrics",
    "param_overhead",
    "parse_dataset",
    "run_gradcheck",
    "run_scenario",
    "run_scenario_json",
    "scenario_names",
    "schedule",
    "softmax",
    "version",
]


def run_scenario(scenario, seed=0, params=None, dataset=None):
    """Run one experiment scenario and return the report as a dict."""
    config = {"scenario": scenario, "seed": seed, "params": dict(params or {})}
    if dataset is not None:
        config["dataset"] = dataset
    return _json.loads(run_scenario_json(_json.dumps(config)))


def gen_synthetic(spec=None, seed=0):
    """Generate a synthetic dataset; returns its text serialization."""
    return gen_synthetic_text(_json.dumps(dict(spec or {})), seed)


def gradcheck(op, trials=100, tolerance=1e-6, seed=1234):
    """Compare one op's analytic gradients against central differences."""
    return run_gradcheck(op, trials, tolerance, seed)
