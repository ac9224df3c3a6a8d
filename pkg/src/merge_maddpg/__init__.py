"""Multi-agent DDPG for cooperative on-ramp merging of connected automated vehicles."""

from ._backend import name as backend_name

__version__ = "0.1.0"
__all__ = ["backend_name", "__version__"]
