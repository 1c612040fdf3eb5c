"""Numerical laboratory for complex-geometrical-optics Maxwell analysis.

Submodules:
  grid       periodic spectral backbone (fields, FFT calculus, masks, I/O)
  media      admissible coefficient pairs and their log-derived fields
  operators  8x8 first-order operators, matrix potentials, identity checks
  cgo        complex-phase construction and Faddeev-type remainder solves
  pipeline   orthogonality pairing, Fourier recovery, diagnostics
  cli        batch experiment driver
"""

from . import grid, media, operators, cgo, pipeline

__version__ = "0.1.0"
