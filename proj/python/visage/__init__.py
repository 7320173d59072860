"""Grounding-aware parallel masked decoding (C++ core)."""

from ._visage import *  # noqa: F401,F403
from ._visage import __doc__  # noqa: F401

__version__ = "0.1.0"
