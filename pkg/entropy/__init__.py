from .tables import ErrorTable, estimate_error_table, exact_error_table, spectral_error_table
from .curves import EntropyCurve, entropy_rate, integrate_entropy, spectral_rescaled_entropy

__all__ = [
    "ErrorTable",
    "EntropyCurve",
    "estimate_error_table",
    "exact_error_table",
    "spectral_error_table",
    "entropy_rate",
    "integrate_entropy",
    "spectral_rescaled_entropy",
]
