"""Sketch-guided, progressively grown conditional GAN for ultrasound-like
phantom image synthesis, with procedural training data, evaluation metrics,
a CLI and an HTTP synthesis service."""

__version__ = "0.1.0"
