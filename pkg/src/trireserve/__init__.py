"""Neural sequence-to-sequence loss reserving with a chain-ladder baseline."""

__version__ = "0.1.0"
