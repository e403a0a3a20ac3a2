"""Mean-field two-layer ReLU flows, their angle reduction and experiment drivers."""

from ._core import *  # noqa: F401,F403
from ._core import __version__  # noqa: F401
