"""Risk-sensitive adversarial imitation learning at desk scale."""

from .risk import RiskConfig, LossBatch, cvar_alpha, var_alpha, rho_lambda, scaled_rho_lambda
from .imitation import ImitationAlgo, train

__all__ = ["RiskConfig", "LossBatch", "cvar_alpha", "var_alpha", "rho_lambda", "scaled_rho_lambda",
           "ImitationAlgo", "train"]
__version__ = "0.1.0"
