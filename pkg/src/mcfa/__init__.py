"""
mcfa - Multiple context fixing attachment

Sentence classification that treats machine translations of a sentence as
extra views: each view is encoded by a CNN, the views fix one another through
an attention-driven gate, and a softmax classifier reads the fixed vectors.
"""

__version__ = "0.1.0"

from mcfa.main import main


__all__ = ["__version__", "main"]
