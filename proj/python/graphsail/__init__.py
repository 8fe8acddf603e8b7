"""GraphSAIL: incremental training for graph-convolutional recommenders.

The heavy lifting lives in the C++ extension; this package re-exports it.
"""

from graphsail._core import *  # noqa: F401,F403
from graphsail._core import __doc__  # noqa: F401

__version__ = "0.1.0"
