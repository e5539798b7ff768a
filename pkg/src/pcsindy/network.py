"""Quasi-static lossless network that closes the DER equations algebraically.

Grid-forming buses (and the grid interface while connected) have their
voltage angle imposed; every other bus angle follows from active-power
balance over purely susceptive lines,

    P_i = sum_j V_i V_j B_ij sin(theta_i - theta_j).

The PLL q-axis voltage uses the convention ``vq = V sin(theta_bus - theta_pll)``:
a positive value means the bus leads the PLL and speeds it up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping

import numpy as np
from numba import njit

ATTACHMENTS = ("gfm", "gfl", "load-only", "grid-interface")
EVENT_KINDS = ("load-step", "pv-step", "grid-connect", "grid-disconnect", "line-switch")


class ConfigError(ValueError):
    """Inconsistent network or event definition."""


class PowerFlowError(RuntimeError):
    """Newton iteration on the power balance did not converge."""


@dataclass(frozen=True)
class BusSpec:
    id: int
    voltage_mag: float = 1.0
    attachment: str = "load-only"

    def __post_init__(self):
        if not self.voltage_mag > 0:
            raise ConfigError(f"bus {self.id}: voltage_mag must be positive")
        if self.attachment not in ATTACHMENTS:
            raise ConfigError(f"bus {self.id}: unknown attachment {self.attachment!r}")


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: int
    to_bus: int
    susceptance: float
    in_service: bool = True

    def __post_init__(self):
        if not self.susceptance > 0:
            raise ConfigError(f"line {self.id}: susceptance must be positive")
        if self.from_bus == self.to_bus:
            raise ConfigError(f"line {self.id}: from and to bus are identical")


@dataclass(frozen=True)
class InjectionProfile:
    """Net active-power injections in p.u. (generation positive, load negative).

    ``stochastic`` maps a bus to the standard deviation of its random load
    component; ``pv`` holds photovoltaic injections kept apart from the
    constant part so PV steps can be reported separately.
    """

    constant: Mapping[int, float] = field(default_factory=dict)
    stochastic: Mapping[int, float] = field(default_factory=dict)
    pv: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for bus, amp in self.stochastic.items():
            if amp < 0:
                raise ConfigError(f"stochastic amplitude at bus {bus} must be >= 0")


@dataclass(frozen=True)
class GridInterface:
    """Stiff AC grid behind the interface bus.

    With ``synchronize`` set the breaker closes phase-matched: the grid angle
    is aligned with the interface bus at the connection instant. Otherwise
    the configured ``angle_ref`` (valid at ``t_ref``) is used as is.
    ``omega`` defaults to the rated angular frequency.
    """

    bus_id: int
    connected: bool = False
    omega: float | None = None
    angle_ref: float = 0.0
    t_ref: float = 0.0
    synchronize: bool = True

    def angle(self, t: float, omega0: float) -> float:
        w = omega0 if self.omega is None else self.omega
        return self.angle_ref + (w - omega0) * (t - self.t_ref)

    def check_frequency(self, omega0: float):
        if self.omega is not None and not 0.95 * omega0 <= self.omega <= 1.05 * omega0:
            raise ConfigError(f"grid frequency {self.omega} rad/s outside [0.95, 1.05] x rated")


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    target: int | str | None = None
    magnitude: float = 0.0
    in_service: bool = True

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ConfigError(f"unknown event kind {self.kind!r}")

    def describe(self) -> str:
        if self.kind in ("load-step", "pv-step"):
            return f"{self.kind}@bus{self.target}{self.magnitude:+g}"
        if self.kind == "line-switch":
            return f"line-switch:{self.target}={'in' if self.in_service else 'out'}"
        return self.kind


@dataclass(frozen=True)
class Network:
    buses: tuple[BusSpec, ...]
    lines: tuple[Line, ...]
    injections: InjectionProfile = field(default_factory=InjectionProfile)
    grid: GridInterface | None = None

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate bus ids: {ids}")
        line_ids = [ln.id for ln in self.lines]
        if len(set(line_ids)) != len(line_ids):
            raise ConfigError(f"duplicate line ids: {line_ids}")
        known = set(ids)
        for ln in self.lines:
            if ln.from_bus not in known or ln.to_bus not in known:
                raise ConfigError(f"line {ln.id} references an unknown bus")
        inj = self.injections
        for name, mapping in (("constant", inj.constant), ("stochastic", inj.stochastic), ("pv", inj.pv)):
            for bus in mapping:
                if bus not in known:
                    raise ConfigError(f"injections.{name} references unknown bus {bus}")
        if self.grid is not None and self.grid.bus_id not in known:
            raise ConfigError(f"grid interface bus {self.grid.bus_id} unknown")

    @cached_property
    def index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @cached_property
    def voltages(self) -> np.ndarray:
        return np.array([b.voltage_mag for b in self.buses])

    @cached_property
    def coupling(self) -> np.ndarray:
        """Matrix of ``V_i V_j B_ij`` over in-service lines (zero diagonal)."""
        n = len(self.buses)
        k = np.zeros((n, n))
        v = self.voltages
        for ln in self.lines:
            if not ln.in_service:
                continue
            i, j = self.index[ln.from_bus], self.index[ln.to_bus]
            k[i, j] += v[i] * v[j] * ln.susceptance
            k[j, i] += v[i] * v[j] * ln.susceptance
        return k

    def bus(self, bus_id: int) -> BusSpec:
        try:
            return self.buses[self.index[bus_id]]
        except KeyError:
            raise ConfigError(f"unknown bus {bus_id}") from None

    def line(self, line_id: str) -> Line:
        for ln in self.lines:
            if ln.id == str(line_id):
                return ln
        raise ConfigError(f"unknown line {line_id}")

    def base_injection(self) -> np.ndarray:
        """Deterministic net injection per bus (constant + PV)."""
        p = np.zeros(len(self.buses))
        for bus, val in self.injections.constant.items():
            p[self.index[bus]] += val
        for bus, val in self.injections.pv.items():
            p[self.index[bus]] += val
        return p

    def stochastic_amplitudes(self) -> np.ndarray:
        a = np.zeros(len(self.buses))
        for bus, val in self.injections.stochastic.items():
            a[self.index[bus]] = val
        return a


def active_power_injections(angles: np.ndarray, network: Network) -> np.ndarray:
    """Active power leaving each bus into the network for the given angles."""
    d = angles[:, None] - angles[None, :]
    return (network.coupling * np.sin(d)).sum(axis=1)


def _check_connected(network: Network, fixed: np.ndarray):
    k = network.coupling
    seen = set(np.flatnonzero(fixed).tolist())
    if not seen:
        raise ConfigError("no angle reference: at least one bus must have an imposed angle")
    stack = list(seen)
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(k[i]).tolist():
            if j not in seen:
                seen.add(j)
                stack.append(j)
    missing = [network.buses[i].id for i in range(len(network.buses)) if i not in seen]
    if missing:
        raise ConfigError(f"buses {missing} are not connected to any angle reference")


def solve_algebraic_angles(fixed_angles: Mapping[int, float], injections: np.ndarray,
                           network: Network, initial: np.ndarray | None = None,
                           tol: float = 1e-12, max_iter: int = 50) -> tuple[np.ndarray, int]:
    """Newton solve for the angles of every bus without an imposed angle.

    Parameters
    ----------
    fixed_angles : mapping
        Bus id to imposed angle (grid-forming buses, connected grid interface).
    injections : ndarray
        Specified net injection for every bus, in network bus order. Entries at
        fixed buses are ignored.
    initial : ndarray, optional
        Warm start for the free angles (typically the previous step's solution).

    Returns
    -------
    angles, iterations
    """
    n = len(network.buses)
    fixed = np.zeros(n, dtype=bool)
    theta = np.zeros(n) if initial is None else np.array(initial, dtype=float)
    for bus, ang in fixed_angles.items():
        k = network.index[bus]
        fixed[k] = True
        theta[k] = ang
    if not fixed.any():
        raise ConfigError("no angle reference: at least one bus must have an imposed angle")
    free = np.flatnonzero(~fixed)
    try:
        return newton_angles(theta, free, np.asarray(injections, dtype=float)[free],
                             network.coupling, tol=tol, max_iter=max_iter)
    except PowerFlowError:
        _check_connected(network, fixed)
        raise


@njit(cache=True)
def _newton_kernel(theta, free, target, kmat, tol, max_iter):
    n = theta.size
    m = free.size
    mismatch = np.empty(m)
    jac = np.empty((m, m))
    for it in range(max_iter + 1):
        worst = 0.0
        for a in range(m):
            i = free[a]
            acc = 0.0
            for j in range(n):
                if kmat[i, j] != 0.0:
                    acc += kmat[i, j] * math.sin(theta[i] - theta[j])
            mismatch[a] = acc - target[a]
            worst = max(worst, abs(mismatch[a]))
        if worst < tol:
            return it, 0
        if it == max_iter:
            return it, 1
        for a in range(m):
            i = free[a]
            diag = 0.0
            for j in range(n):
                if kmat[i, j] != 0.0:
                    diag += kmat[i, j] * math.cos(theta[i] - theta[j])
            for b in range(m):
                j = free[b]
                jac[a, b] = diag if a == b else -kmat[i, j] * math.cos(theta[i] - theta[j])
        if abs(np.linalg.det(jac)) < 1e-300:
            return it, 2
        step = np.linalg.solve(jac, mismatch)
        for a in range(m):
            theta[free[a]] -= step[a]
            if not math.isfinite(theta[free[a]]):
                return it, 1
    return max_iter, 1


def newton_angles(theta: np.ndarray, free: np.ndarray, target: np.ndarray, kmat: np.ndarray,
                  tol: float = 1e-12, max_iter: int = 50) -> tuple[np.ndarray, int]:
    """Core Newton loop; ``theta`` holds imposed angles and the warm start, updated in place."""
    if free.size == 0:
        return theta, 0
    it, status = _newton_kernel(theta, np.ascontiguousarray(free, dtype=np.int64),
                                np.ascontiguousarray(target, dtype=float), kmat, tol, max_iter)
    if status == 2:
        raise PowerFlowError("power flow diverged: singular Jacobian")
    if status == 1:
        raise PowerFlowError(f"power flow diverged after {max_iter} iterations")
    return theta, it


def vq_at_gfl(bus_angle, pll_angle, voltage_mag=1.0):
    """q-axis voltage seen by a PLL: ``V sin(theta_bus - theta_pll)``."""
    return voltage_mag * np.sin(np.subtract(bus_angle, pll_angle))


def vq_from_abc(va, vb, vc, phase):
    """Literal three-phase dq projection with ``phase = omega0 t + theta_pll``."""
    shift = 2.0 * math.pi / 3.0
    return (2.0 / 3.0) * (va * np.sin(phase) + vb * np.sin(phase - shift) + vc * np.sin(phase + shift))


def apply_event(network: Network, event: Event, sync_angle: float | None = None) -> Network:
    """Return a new network with ``event`` applied; the input is never mutated.

    ``sync_angle`` is the interface bus angle at the event time and is only
    used for a phase-matched grid connection.
    """
    inj = network.injections
    if event.kind in ("load-step", "pv-step"):
        bus = int(event.target)
        network.bus(bus)
        if event.kind == "load-step":
            constant = dict(inj.constant)
            constant[bus] = constant.get(bus, 0.0) - event.magnitude
            return replace(network, injections=replace(inj, constant=constant))
        pv = dict(inj.pv)
        pv[bus] = pv.get(bus, 0.0) + event.magnitude
        return replace(network, injections=replace(inj, pv=pv))
    if event.kind in ("grid-connect", "grid-disconnect"):
        if network.grid is None:
            raise ConfigError("network has no grid interface")
        if event.target is not None and int(event.target) != network.grid.bus_id:
            raise ConfigError(f"unknown grid interface at bus {event.target}")
        if event.kind == "grid-disconnect":
            if not network.grid.connected:
                return network
            return replace(network, grid=replace(network.grid, connected=False))
        if network.grid.connected:
            return network
        grid = network.grid
        if grid.synchronize:
            if sync_angle is None:
                raise ValueError("phase-matched grid connection needs the interface bus angle")
            grid = replace(grid, angle_ref=sync_angle, t_ref=event.time)
        return replace(network, grid=replace(grid, connected=True))
    # line-switch
    line = network.line(str(event.target))
    if line.in_service == event.in_service:
        return network
    lines = tuple(replace(ln, in_service=event.in_service) if ln.id == line.id else ln
                  for ln in network.lines)
    return replace(network, lines=lines)
