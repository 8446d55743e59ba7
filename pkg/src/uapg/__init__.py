"""uapg: universal adversarial perturbations against no-reference quality
metrics, and an RD-curve stability rating of the metrics themselves."""

__version__ = "0.1.0"
