"""Learning-to-optimize with certified high-probability risk bounds.

Trains a distribution over update-rule hyperparameters on sampled problem
instances, keeps the probability of staying in a sublevel set inside a
prescribed band, and certifies the conditional risk of the resulting Gibbs
posterior with a computable high-probability bound.
"""

from .pac import PacCertificate, PacConfig, certify
from .pipeline import ExperimentConfig, run_pipeline
from .sublevel import SublevelSpec

__all__ = [
    "ExperimentConfig",
    "PacCertificate",
    "PacConfig",
    "SublevelSpec",
    "certify",
    "run_pipeline",
]

__version__ = "0.1.0"
