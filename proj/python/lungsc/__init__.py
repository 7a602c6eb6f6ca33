"""Lung sound classification pipeline: python surface over the native core."""

from lungsc._core import *  # noqa: F401,F403
from lungsc._core import __doc__  # noqa: F401
