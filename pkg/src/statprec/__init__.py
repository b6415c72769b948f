"""Statistical precoder design for multi-user downlink MIMO.

Pipeline: synthetic clustered channels -> Gaussian mixture prior with
structured spectral covariances -> limited feedback from noisy pilots ->
graph neural network or WMMSE precoders -> paired evaluation harness.
"""

__version__ = "0.1.0"

from .backend import active_backend  # noqa: F401
