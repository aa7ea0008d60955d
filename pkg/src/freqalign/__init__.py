"""Spectral forensics toolkit: frequency analysis of real and forged images,
two-step frequency alignment (spectral magnitude rescaling followed by a
learned calibration autoencoder), reference detectors and desk-scale
frequency-bias experiments."""

__version__ = "0.1.0"
