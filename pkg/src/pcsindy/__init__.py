"""Physically consistent sparse identification of inverter-based microgrid dynamics.

The package covers the whole identification loop: a reduced-order plant
(droop-controlled grid-forming units, PLL-synchronised grid-following units,
quasi-static lossless network), PMU emulation, analytical and polynomial
candidate libraries, sequentially thresholded least squares and one-step
ahead Euler prediction.
"""

from pcsindy.der_models import (
    GflParams,
    GflState,
    GfmParams,
    GfmState,
    SystemConstants,
    analytical_xi_gfl,
    analytical_xi_gfm,
    assemble_xi,
    gfl_derivative,
    gfm_derivative,
)

__version__ = "0.1.0"

__all__ = [
    "GflParams",
    "GflState",
    "GfmParams",
    "GfmState",
    "SystemConstants",
    "analytical_xi_gfl",
    "analytical_xi_gfm",
    "assemble_xi",
    "gfl_derivative",
    "gfm_derivative",
    "__version__",
]
