"""Multiple-description coding of a Gaussian source by dithered noise-shaped quantization.

Submodules: ``theory`` (closed forms), ``dsp`` (resampling, filter design),
``codec`` (encoder/decoders, metrics, rate estimates), ``binning`` (random
binning stage) and ``harness``/``cli`` (configured experiments).
"""
from . import binning, codec, dsp, theory

__version__ = "0.1.0"
__all__ = ["binning", "codec", "dsp", "theory", "__version__"]
