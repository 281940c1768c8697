"""Tag-conditioned multi-action human motion synthesis."""

__version__ = "0.1.0"
