"""Radar detection in 3.5 GHz spectrograms: synthesis, detectors, evaluation and survey statistics."""

__version__ = "0.1.0"
