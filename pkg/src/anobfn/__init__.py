"""Pseudo-healthy image reconstruction and pixel-level anomaly scoring.

A denoiser is trained on healthy synthetic uptake images only.  At test time
an input is re-generated through a Bayesian flow whose prior and (optionally)
per-step updates are conditioned on that input; the signed difference between
the reconstruction and the input is the anomaly score map.
"""

__version__ = "0.1.0"
