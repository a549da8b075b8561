"""Python interface to the covmon epidemic monitoring library."""

from ._covmon import *  # noqa: F401,F403
from ._covmon import __version__  # noqa: F401
