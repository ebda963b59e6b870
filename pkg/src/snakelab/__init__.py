"""Monte Carlo toolkit for the on/off Brownian snake and its particle systems."""

__version__ = "0.1.0"
