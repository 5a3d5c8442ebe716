"""Single-image atmospheric turbulence restoration.

The pipeline degrades clean images with a warp + blur + noise model,
trains a restoration network whose Monte-Carlo-dropout output variance
serves as a per-pixel distortion prior, and trains a second network that
consumes the degraded image together with that prior.
"""

__version__ = "0.1.0"
