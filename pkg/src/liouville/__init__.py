"""Numerical Liouville quantum gravity: massive free field layers, chaos measures,
Liouville Brownian motion and Monte Carlo exponent checks."""

__version__ = "0.1.0"
