"""Approximate multiplication of matrices with exponential decay."""

from .decay import DecayModel, band_distance, euclidean_distance
from .engine import Engine, MultiplyStats
from .errors import (ConfigError, InputError, ParseError, SizeError, SpammError, StateError,
                     UnsupportedFormatError)
from .generators import (ExperimentConfig, dense_reference_product, gen_banded_decay,
                         gen_random_blocksparse)
from .leaf import (GemmCounter, LeafMatrix, leaf_multiply, leaf_spamm, predict_product_nonzero,
                   predict_spamm_nonzero)
from .mmio import read_matrix_market, write_matrix_market
from .multiply import (Method, MultiplyRequest, hybrid, multiply, multiply_exact, run, spamm,
                       truncmul)
from .quadtree import (HierMatrix, build_from_coo, build_from_dense, get_element,
                       insignificant_sum_sq, norm_sq, truncate)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DecayModel", "Engine", "ExperimentConfig", "GemmCounter", "HierMatrix",
    "InputError", "LeafMatrix", "Method", "MultiplyRequest", "MultiplyStats", "ParseError",
    "SizeError", "SpammError", "StateError", "UnsupportedFormatError", "band_distance",
    "build_from_coo", "build_from_dense", "dense_reference_product", "euclidean_distance",
    "gen_banded_decay", "gen_random_blocksparse", "get_element", "hybrid",
    "insignificant_sum_sq", "leaf_multiply", "leaf_spamm", "multiply", "multiply_exact",
    "norm_sq", "predict_product_nonzero", "predict_spamm_nonzero", "read_matrix_market",
    "run", "spamm", "truncate", "truncmul", "write_matrix_market",
]
