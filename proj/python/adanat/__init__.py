"""Adaptive masked-token decoding policies on toy token worlds."""

from ._adanat import *  # noqa: F401,F403
from ._adanat import MASK, NULL_CLASS

__all__ = [name for name in dir() if not name.startswith("_")]
