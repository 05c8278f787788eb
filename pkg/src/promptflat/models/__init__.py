from .base import ScoringModel, grad_prompt_loss
from .logistic import LogisticBagConfig, LogisticModel, fit_logistic
from .transformer import TransformerConfig, TransformerModel
from .weights import (load_model, load_transformer, read_weight_file, save_model,
                      save_prefix, write_weight_file)

__all__ = [
    "ScoringModel", "grad_prompt_loss",
    "LogisticBagConfig", "LogisticModel", "fit_logistic",
    "TransformerConfig", "TransformerModel",
    "load_model", "load_transformer", "read_weight_file",
    "save_model", "save_prefix", "write_weight_file",
]
