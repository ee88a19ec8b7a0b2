"""Location-based recommendation with edge-pair context propagation.

The package couples a light graph-convolution recommender with a second
graph whose nodes are interaction edges: two edges are linked when their
check-ins share a weekly time slot and their venues sit within a
similarity cutoff of each other.
"""
from .errors import ConfigError, InputDataError, NumericalError, SepGcnError

__all__ = [
    "ConfigError",
    "InputDataError",
    "NumericalError",
    "SepGcnError",
]

__version__ = "0.1.0"
