"""robust_gum: robust regression training with a Gaussian-uniform mixture.

A feedforward regressor is trained by SGD while an EM-fitted mixture of a
Gaussian (inliers) and a uniform (outliers) over the residuals supplies
per-sample weights, so corrupted targets stop steering the gradient.
Classic M-estimator baselines (Huber, Tukey biweight), synthetic corruption
generators, and a Wilcoxon-based evaluation harness are included.
"""

from robust_gum._kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
