"""Python access to the mean-field lab.

    >>> import meanfield_lab as ml
    >>> files, summary = ml.run("krr-check", io__out_dir="out/krr", seed=2)
    >>> summary["max_abs_err"]
"""

from ._core import (
    AnisotropicGaussians,
    ConfigError,
    DivergenceError,
    Estimator,
    IoError,
    TruncatedRelu,
    UnsupportedError,
    default_config,
    experiments,
    fit_loglog,
    force,
    fsum,
    init_sample,
    krr_solve,
    linearized_residual,
    risk,
    risk_residual,
    w2,
)
from ._core import run as _run

import json

__all__ = [
    "AnisotropicGaussians",
    "ConfigError",
    "DivergenceError",
    "Estimator",
    "IoError",
    "TruncatedRelu",
    "UnsupportedError",
    "default_config",
    "experiments",
    "fit_loglog",
    "force",
    "fsum",
    "init_sample",
    "krr_solve",
    "linearized_residual",
    "risk",
    "risk_residual",
    "run",
    "w2",
]


def run(experiment, config=None, **overrides):
    """Run one experiment. Keyword overrides use '__' for dots:
    run("run-sgd", dynamics__N=50, io__out_dir="out") sets dynamics.N and io.out_dir.
    Returns (written files, summary columns)."""
    flags = []
    for key, value in overrides.items():
        text = value if isinstance(value, str) else json.dumps(value)
        flags.append("--%s=%s" % (key.replace("__", "."), text))
    return _run(experiment, str(config) if config else "", flags)
