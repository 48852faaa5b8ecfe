"""Floquet band structures of a periodically perforated waveguide cell.

The package computes discrete Floquet eigenvalues of the Neumann
Laplacian on a rectangular periodicity cell perforated by a vertical
column of small holes, and checks them against the closed-form limit
spectrum: convergence of dispersion curves at rate O(epsilon), quasimode
residuals, the boundary-layer cell problem on a punctured strip, and
multiplicity windows at band crossings.
"""

__version__ = "0.1.0"

from . import dispersion  # noqa: F401
