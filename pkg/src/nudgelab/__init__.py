"""Nudgelab: nudging data assimilation for the 2D periodic Navier-Stokes
equations with meshfree interpolant operators.
"""

from nudgelab.__version__ import __version__
