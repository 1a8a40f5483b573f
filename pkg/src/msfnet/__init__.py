"""Splicing localization with a multi-stream encoder-decoder fed by handcrafted forensic signals."""

__version__ = "0.1.0"
