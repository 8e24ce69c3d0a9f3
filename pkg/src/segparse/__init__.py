"""Joint Chinese word segmentation and dependency parsing via character-level
graph-based parsing: tree transforms, a numpy autodiff substrate, a BiLSTM +
biaffine scorer, constrained tree decoding, joint metrics, and a trainer.
"""

__version__ = "0.1.0"
