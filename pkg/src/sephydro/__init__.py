"""Simple exclusion process on random environments."""
__version__ = "0.1.0"
