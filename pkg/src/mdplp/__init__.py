"""Finite approximations of infinite LPs for average-cost and discounted MDPs.

Two routes are provided: scenario programs with sampled constraints and
probabilistic certificates (``scenario``), and an entropy-smoothed fast
gradient scheme with deterministic posterior bounds (``smoothing``).
"""

__version__ = "0.1.0"

from .errors import ConfigError, MdpLpError, NumericalError  # noqa: E402
from .model import AverageCost, ControlModel, Discounted, QuadratureSpec  # noqa: E402

__all__ = ["AverageCost", "ConfigError", "ControlModel", "Discounted", "MdpLpError", "NumericalError", "QuadratureSpec", "__version__"]
