"""rejgen: rejection learning and rejection-regularized decoding on an
exactly-labeled synthetic noisy-summarization corpus."""

__version__ = "0.1.0"
