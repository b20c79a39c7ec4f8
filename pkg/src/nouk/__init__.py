"""Non-autonomous Ornstein-Uhlenbeck evolution operators on finite truncations."""
from . import errors
from .functions import SourceTerm, TestFunction, abs_sin, constant, cosine, separable_product, tanh_linear
from .gaussian import GaussianState, cm_density, h_hat, sample
from .model import DirectionSpace, EvolutionModel, direction_space, dump_model, load_model, preset_model
from .propagator import covariance, lambda_operator, mean, transition
from .semigroup import EvalReport, apply, mixed_derivative, smoothing_derivative, transported_derivative

__version__ = "0.1.0"

__all__ = ["errors", "SourceTerm", "TestFunction", "abs_sin", "constant", "cosine", "separable_product",
           "tanh_linear", "GaussianState", "cm_density", "h_hat", "sample", "DirectionSpace", "EvolutionModel",
           "direction_space", "dump_model", "load_model", "preset_model", "covariance", "lambda_operator", "mean",
           "transition", "EvalReport", "apply", "mixed_derivative", "smoothing_derivative",
           "transported_derivative", "__version__"]
