"""Self-consistent tomography of prepare-and-measure data in the GPT framework."""
__version__ = "0.1.0"
