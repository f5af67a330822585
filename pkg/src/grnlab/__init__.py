"""grnlab: generalized residual networks, deep cross-attention, and the
closed-form excess-risk engine that verifies them numerically."""

__version__ = "0.1.0"
