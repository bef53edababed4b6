"""Driver fatigue and distraction detection engine.

A depthwise-separable CNN written from scratch on numpy (with optional compiled
kernels) for distraction classification, plus a landmark-geometry PERCLOS
estimator for fatigue.
"""

__version__ = "0.1.0"
