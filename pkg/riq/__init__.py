"""Repeated quantum interaction models: reduced dynamics and their effective limits."""
from .constants import VERSION

__version__ = VERSION
