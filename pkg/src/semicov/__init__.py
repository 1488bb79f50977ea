"""Operator-valued covariance matrices, their Gaussian random-matrix
ensembles, exact pair-partition moment engines, and convergence experiments.
"""

from . import covariance, covpoly, harness, models, moments, partitions, sampler
from .covariance import DiscreteCovariance, HermitianTuple
from .covpoly import CovPolynomial, apply_lambda, b_var, evaluate, format_poly, parse_poly, x_var
from .models import BaseTuple, FgfSpec, KernelSpec, PiecewiseLinear, band, discretize, fgf_kernels, gue
from .moments import bounds, crossing_gap, eta_pi_eval, gaussian_moment_exact, gue_trace_wick, semicircular_expectation, semicircular_trace
from .partitions import PairPartition, enumerate_noncrossing, enumerate_pair_partitions, is_noncrossing
from .sampler import SeedSpec, sample, sample_copies, sample_partition_family

__version__ = "0.1.0"
