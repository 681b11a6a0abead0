"""Two-stage conditional flow matching for action-conditioned articulated
point clouds: a latent flow generates shape-prior codes and a point flow
transports Gaussian noise to posed point sets under joint-angle control.
"""

__version__ = "0.1.0"
