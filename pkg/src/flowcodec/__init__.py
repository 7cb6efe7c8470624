"""flowcodec: a toy end-to-end learned video codec.

Flow-based motion estimation, GDN autoencoders for motion and residual,
learned filtering of both decoded signals, hyperprior entropy models backed
by a bit-exact range coder, and a rate-distortion training loop.
"""

__version__ = "0.1.0"
