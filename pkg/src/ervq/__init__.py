"""Residual vector quantization with online-clustering codebooks.

The main entry points:

* :func:`ervq.rvq.rvq_quantize`, :func:`ervq.rvq.decode`, :func:`ervq.rvq.train_step`
* :mod:`ervq.online_clustering` for usage tracking and codeword reinitialization
* :mod:`ervq.losses` for the balancing and inter-codebook SSIM terms
* :mod:`ervq.diagnostics` for utilization, perplexity and bitrate efficiency
* :mod:`ervq.trainer` for the toy codec and the collapse experiment
"""

from .errors import ErvqError, ErvqIOError, FormatError, InputError, NumericalError
from .losses import BalancingMode, LossBreakdown, LossWeights, SsimParams
from .numerics import Rng
from .online_clustering import AnchorPolicy, UsageTracker
from .rvq import InitMode, QuantizationResult, RvqStack, decode, rvq_quantize, train_step
from .vq import Codebook, QuantizeOutput, quantize

__version__ = "0.1.0"

__all__ = [
    "AnchorPolicy", "BalancingMode", "Codebook", "ErvqError", "ErvqIOError", "FormatError",
    "InitMode", "InputError", "LossBreakdown", "LossWeights", "NumericalError", "QuantizationResult",
    "QuantizeOutput", "Rng", "RvqStack", "SsimParams", "UsageTracker", "decode", "quantize",
    "rvq_quantize", "train_step",
]
