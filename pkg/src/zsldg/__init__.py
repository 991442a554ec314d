"""Zero-shot domain generalization via structured adversarial latent alignment."""

__version__ = "0.1.0"
