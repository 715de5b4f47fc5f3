"""Learning binary hash codes from multilevel label similarity, with Hamming retrieval and ranking metrics."""

__version__ = "0.1.0"
