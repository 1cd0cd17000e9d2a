"""Photon-echo decoherence and spectral-diffusion modeling for Er-doped glass."""

__version__ = "0.1.0"
