from ._core import *  # noqa: F401,F403
from ._core import SoftcirError, Variant, EmbeddingMatrix, SplitMix64  # noqa: F401

__version__ = "0.1.0"
