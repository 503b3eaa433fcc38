"""Goal-conditioned decomposition of stage-light color distributions into per-light controls."""

__version__ = "0.1.0"
