"""Learning-rate selection for gradient descent from persistency of excitation."""
from . import attack, data, evtlip, harness, models, numcore, optim, poeverify
from .estimators import LipschitzEstimator, PGDTransformer, PoEClassifier
from .exceptions import *  # noqa: F401,F403

__version__ = "0.1.0"

__all__ = [
    "attack", "data", "evtlip", "harness", "models", "numcore", "optim", "poeverify",
    "LipschitzEstimator", "PGDTransformer", "PoEClassifier", "__version__",
]
