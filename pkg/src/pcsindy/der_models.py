"""Converter-level dynamics of grid-forming (droop) and grid-following (PLL) units.

Angles are measured relative to the synchronous frame rotating at ``omega0``;
angular frequencies are in rad/s throughout. The analytical coefficient
blocks express each right-hand side as a linear combination of measurable
candidate functions, which is the structure the identification has to
recover.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

GFM_LIBRARY = ("omega", "omega0", "p", "ps")
GFM_TARGETS = ("theta_dot", "omega_dot")
GFM_STATES = ("theta", "omega")

GFL_LIBRARY = ("omega", "omega0", "omega_dot", "vq", "vq_int")
GFL_TARGETS = ("theta_dot", "omega_dot", "omega_ddot")
GFL_STATES = ("theta", "omega", "omega_dot")


@dataclass(frozen=True)
class SystemConstants:
    f0: float = 60.0

    def __post_init__(self):
        if not self.f0 > 0:
            raise ValueError(f"f0 must be positive, got {self.f0}")

    @property
    def omega0(self) -> float:
        return 2.0 * math.pi * self.f0


@dataclass(frozen=True)
class GfmParams:
    """Droop controller of a grid-forming converter.

    ``omega_c`` is the cut-off of the first-order power filter (rad/s) and
    ``k_dp`` the droop slope in rad/s per p.u. of active power.
    """

    omega_c: float
    k_dp: float
    p_set: float
    bus_id: int

    kind = "gfm"

    def __post_init__(self):
        if not self.omega_c > 0:
            raise ValueError(f"omega_c must be positive, got {self.omega_c}")
        if not self.k_dp > 0:
            raise ValueError(f"k_dp must be positive, got {self.k_dp}")

    @property
    def name(self) -> str:
        return f"gfm{self.bus_id}"


@dataclass(frozen=True)
class GflParams:
    """PLL of a grid-following converter: PI gains and second-order output filter."""

    k_p: float
    k_i: float
    omega_c: float
    zeta: float
    bus_id: int

    kind = "gfl"

    def __post_init__(self):
        if not self.k_p >= 0:
            raise ValueError(f"k_p must be non-negative, got {self.k_p}")
        if not self.k_i > 0:
            raise ValueError(f"k_i must be positive, got {self.k_i}")
        if not self.omega_c > 0:
            raise ValueError(f"omega_c must be positive, got {self.omega_c}")
        if not self.zeta > 0:
            raise ValueError(f"zeta must be positive, got {self.zeta}")

    @property
    def name(self) -> str:
        return f"gfl{self.bus_id}"


DerParams = Union[GfmParams, GflParams]


@dataclass(frozen=True)
class GfmState:
    theta: float
    omega: float


@dataclass(frozen=True)
class GflState:
    theta: float
    omega: float
    omega_dot: float
    vq_int: float


def gfm_derivative(state: GfmState, p: float, params: GfmParams,
                   consts: SystemConstants, p_set: float | None = None) -> tuple[float, float]:
    """Return ``(theta_dot, omega_dot)`` of the low-pass filtered droop law.

    ``p_set`` overrides ``params.p_set`` so callers can add an excitation
    signal on top of the nominal setpoint.
    """
    ps = params.p_set if p_set is None else p_set
    wc, kdp, w0 = params.omega_c, params.k_dp, consts.omega0
    theta_dot = state.omega - w0
    omega_dot = -wc * state.omega - wc * kdp * p + wc * w0 + wc * kdp * ps
    return theta_dot, omega_dot


def gfl_derivative(state: GflState, vq: float, params: GflParams,
                   consts: SystemConstants) -> tuple[float, float, float, float]:
    """Return ``(theta_dot, omega_dot, omega_ddot, vq_int_dot)`` of the PLL."""
    kp, ki, wc, zeta = params.k_p, params.k_i, params.omega_c, params.zeta
    omega_pi = kp * vq + ki * state.vq_int
    theta_dot = omega_pi - consts.omega0
    omega_ddot = -2.0 * zeta * wc * state.omega_dot - wc**2 * state.omega + wc**2 * omega_pi
    return theta_dot, state.omega_dot, omega_ddot, vq


def gfm_library_row(state: GfmState, p: float, p_set: float, consts: SystemConstants) -> np.ndarray:
    return np.array([state.omega, consts.omega0, p, p_set])


def gfl_library_row(state: GflState, vq: float, consts: SystemConstants) -> np.ndarray:
    return np.array([state.omega, consts.omega0, state.omega_dot, vq, state.vq_int])


def analytical_xi_gfm(params: GfmParams) -> np.ndarray:
    """Coefficient block over ``[omega, omega0, p, ps]`` for targets ``[theta_dot, omega_dot]``."""
    wc, kdp = params.omega_c, params.k_dp
    return np.array([
        [1.0, -wc],
        [-1.0, wc],
        [0.0, -wc * kdp],
        [0.0, wc * kdp],
    ])


def analytical_xi_gfl(params: GflParams) -> np.ndarray:
    """Coefficient block over ``[omega, omega0, omega_dot, vq, vq_int]``.

    Columns correspond to the targets ``[theta_dot, omega_dot, omega_ddot]``.
    """
    kp, ki, wc, zeta = params.k_p, params.k_i, params.omega_c, params.zeta
    wc2 = wc * wc
    return np.array([
        [0.0, 0.0, -wc2],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, -2.0 * zeta * wc],
        [kp, 0.0, wc2 * kp],
        [ki, 0.0, wc2 * ki],
    ])


def analytical_block(params: DerParams) -> np.ndarray:
    if isinstance(params, GfmParams):
        return analytical_xi_gfm(params)
    return analytical_xi_gfl(params)


def assemble_xi(blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Stack per-DER blocks along the diagonal; everything else is exactly zero."""
    if len(blocks) == 0:
        raise ValueError("no DERs")
    n_rows = sum(b.shape[0] for b in blocks)
    n_cols = sum(b.shape[1] for b in blocks)
    xi = np.zeros((n_rows, n_cols))
    r = c = 0
    for b in blocks:
        xi[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return xi


def order_ders(ders: Sequence[DerParams]) -> list[DerParams]:
    """Sort DERs by bus id, the layout convention for libraries and reports."""
    ids = [d.bus_id for d in ders]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate DER bus ids: {ids}")
    return sorted(ders, key=lambda d: d.bus_id)


def library_labels(der: DerParams) -> list[str]:
    cols = GFM_LIBRARY if der.kind == "gfm" else GFL_LIBRARY
    return [f"{der.name}.{c}" for c in cols]


def target_labels(der: DerParams) -> list[str]:
    cols = GFM_TARGETS if der.kind == "gfm" else GFL_TARGETS
    return [f"{der.name}.{c}" for c in cols]


def state_labels(der: DerParams) -> list[str]:
    cols = GFM_STATES if der.kind == "gfm" else GFL_STATES
    return [f"{der.name}.{c}" for c in cols]
