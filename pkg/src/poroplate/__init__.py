"""Homogenization and dimension reduction of thin periodic poroelastic plates.

The toolkit covers the full chain: the eps-scale coupled elasticity/Biot
problem on the thin plate, the periodicity-cell corrector problems and
homogenized plate coefficients, the macroscopic Biot-Kirchhoff-Love system,
and the unfolding-based verification that the micro solution approaches the
two-scale limit.
"""

__version__ = "0.1.0"

from . import cell, fem, geometry, material, micro, twoscale  # noqa: F401
