"""Large-deviation toolkit for density-scaled jump processes whose rates may vanish at the boundary."""

__version__ = "0.1.0"
