from .process import DiffusionSpec, TimeChange, ve_spec, vp_spec
from .analytic import GaussianMixture, PointMixture

__all__ = ["DiffusionSpec", "TimeChange", "ve_spec", "vp_spec", "GaussianMixture", "PointMixture"]
