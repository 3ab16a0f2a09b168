"""Siamese semantic/syntactic disentanglement on a small numpy autodiff core."""
from .errors import ConfigError, ContractError, NumericError, ParseError

__version__ = "0.1.0"

__all__ = ["ConfigError", "ContractError", "NumericError", "ParseError", "__version__"]
