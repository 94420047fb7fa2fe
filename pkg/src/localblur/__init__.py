"""Local motion deblurring data toolkit.

Simulated two-camera capture, RAW post-processing (colour correction,
photometric and geometric alignment, ISP), ground-truth blur masks,
synthetic local blur, blur-aware patch sampling, gate-block losses and
evaluation metrics.
"""

__version__ = "0.1.0"
