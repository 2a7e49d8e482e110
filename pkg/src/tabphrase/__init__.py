"""tabphrase: phrase-embedded tabular transformer with masked-cell and contrastive pre-training."""

__version__ = "0.1.0"
