"""rkhselect: RKHS-based impact point selection for scalar-on-function regression."""

__version__ = "0.1.0"
