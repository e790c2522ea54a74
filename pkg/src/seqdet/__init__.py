"""seqdet: three-pass event detection for multichannel time-series.

Pass 1 scores every 1 s epoch of every channel with per-class GMM-HMMs over a
26-dimensional cepstral feature stream; pass 2 integrates spatial and temporal
context with PCA-reduced stacked denoising autoencoders; pass 3 smooths the
epoch label sequence with a bigram grammar.
"""
from .labels import EventLabel, collapse

__all__ = ["EventLabel", "collapse"]
__version__ = "0.1.0"
