"""Block-parallel speculative decoding with a causal logit-correction head."""

__version__ = "0.1.0"
