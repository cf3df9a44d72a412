"""Frequency-tuned universal adversarial perturbations in the block-DCT domain."""

__version__ = "0.1.0"
