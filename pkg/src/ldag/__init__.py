"""ldag: language-driven attribute priors for few-shot segmentation, desk scale.

Deterministic toy encoders stand in for the frozen foundation models; the
LDAGTNSR interchange format plugs real exported features into the same
pipeline. See README for the CLI quickstart.
"""

__version__ = "0.1.0"

from .backend import NAME as backend_name
from .errors import LdagError

__all__ = ["LdagError", "__version__", "backend_name"]
