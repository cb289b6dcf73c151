"""Model-extraction warnings for decision trees served behind a prediction API."""

__version__ = "0.1.0"
