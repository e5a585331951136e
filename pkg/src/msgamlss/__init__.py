"""Markov-switching GAMLSS fitted by EM with component-wise boosting."""

from msgamlss.em import FitConfig, FittedModel, fit
from msgamlss.families import NegativeBinomial, Normal, get_family

__all__ = ["FitConfig", "FittedModel", "NegativeBinomial", "Normal", "fit", "get_family"]
__version__ = "0.1.0"
