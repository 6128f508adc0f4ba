"""Next-purchase recommender: skip-gram item embeddings feeding a stateless
two-layer LSTM that scores the full output item vocabulary."""

from ordrec.errors import DataError, DivergenceError, OrdrecError

__version__ = "0.1.0"

__all__ = ["DataError", "DivergenceError", "OrdrecError", "__version__"]
