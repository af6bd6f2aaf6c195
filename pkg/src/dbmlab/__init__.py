"""Lattice growth laboratory for DLA and the dielectric-breakdown model on Z^2 and Z^3."""

__version__ = "0.1.0"

import warnings as _warnings

# numba probes for a newer TBB than some systems ship; the fallback layer is fine
_warnings.filterwarnings("ignore", message=".*TBB threading layer.*")
