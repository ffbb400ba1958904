"""clops: closed-loop parallel connected-vehicle co-simulation toolkit."""

__version__ = "0.1.0"
