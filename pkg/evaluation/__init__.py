from .kl import BinnedKL, binned_kl, kde_kl
from .experiment import KLEntry, KLReport, KLScore, evaluate_kl, kl_experiment

__all__ = ["BinnedKL", "KLEntry", "KLReport", "KLScore", "binned_kl", "kde_kl", "evaluate_kl", "kl_experiment"]
