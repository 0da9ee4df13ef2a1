"""Factorized gradient descent for matrix sensing with invariant monitors."""

from ._msense import *  # noqa: F401,F403
from ._msense import __version__  # noqa: F401
