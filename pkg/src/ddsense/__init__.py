"""Dynamical-decoupling quantum sensing simulator with pulse-phase randomisation.

Subpackages by concern:

- sequences: pulse units, plans, built-in DD families, randomisation transform
- dsl: the .ddseq text format for custom units
- modulation: modulation functions, Fourier amplitudes, Z-factor statistics
- dynamics: exact propagation under imperfect pulses, error accumulation
- spectroscopy: spectra, robustness maps, suppression reports
- cli: command-line front end (configs, CSV/JSON outputs, manifests)
"""

__version__ = "0.1.0"
