"""Energy-based activity detection for pilot-hopping grant-free random access."""

__version__ = "0.1.0"
