"""Forward-backward stochastic representations of Navier-Stokes and Burgers-type equations."""

__version__ = "0.1.0"
