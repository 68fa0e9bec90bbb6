"""Advantage actor-critic with a purpose Reasoner on a pixel side-scroller."""

from ._a2cr import *  # noqa: F401,F403
from ._a2cr import __doc__  # noqa: F401
