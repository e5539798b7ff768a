"""Time-domain simulation of the DER equations closed by the quasi-static network.

The ODE states (per DER, in bus order) are integrated with classical RK4.
At every stage the non-imposed bus angles are re-solved so that the power
``p`` seen by each droop controller and the PLL voltage ``vq`` are consistent
with the stage state. Inputs that jump (events, stochastic load refreshes,
the end of the excitation window) are breakpoints: the integration step is
split there so that no RK stage straddles a discontinuity.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numba import njit

from pcsindy.der_models import (
    DerParams,
    GfmParams,
    SystemConstants,
    order_ders,
)
from pcsindy.network import (
    ConfigError,
    Event,
    Network,
    PowerFlowError,
    _newton_kernel,
    active_power_injections,
    apply_event,
    newton_angles,
    solve_algebraic_angles,
)

_EPS = 1e-9


class SimulationError(RuntimeError):
    """A step failed; ``partial`` holds the trajectory up to the failure."""

    def __init__(self, message: str, time: float, partial: "Trajectory | None" = None):
        super().__init__(f"{message} (t = {time:.6f} s)")
        self.time = time
        self.partial = partial


@dataclass(frozen=True)
class ExcitationSpec:
    n_components: int = 10
    amplitude_bound: float = 0.01
    freq_range: tuple[float, float] = (0.1, 10.0)
    duration: float = 10.0
    seed: int = 0

    def validate(self, reporting_rate: float = 120.0):
        if self.n_components < 0:
            raise ConfigError("excitation.n_components must be >= 0")
        if not self.amplitude_bound > 0:
            raise ConfigError("excitation.amplitude_bound must be positive")
        lo, hi = self.freq_range
        if not (0 < lo <= hi < reporting_rate / 2):
            raise ConfigError(f"excitation.freq_range must lie in (0, {reporting_rate / 2}) Hz")
        if not self.duration > 0:
            raise ConfigError("excitation.duration must be positive")


@dataclass(frozen=True)
class Excitation:
    """Sum-of-sines signal, one row of components per grid-forming converter."""

    amplitudes: np.ndarray
    freqs: np.ndarray
    phases: np.ndarray
    bound: float
    duration: float

    @property
    def n_signals(self) -> int:
        return self.amplitudes.shape[0]

    def __call__(self, t: float) -> np.ndarray:
        if t < 0 or t > self.duration + _EPS or self.amplitudes.shape[1] == 0:
            return np.zeros(self.n_signals)
        u = (self.amplitudes * np.sin(2 * np.pi * self.freqs * t + self.phases)).sum(axis=1)
        return np.clip(u, -self.bound, self.bound)

    def sample(self, t: np.ndarray) -> np.ndarray:
        """Vectorised evaluation, shape ``(len(t), n_signals)``."""
        t = np.asarray(t, dtype=float)
        if self.amplitudes.shape[1] == 0:
            return np.zeros((t.size, self.n_signals))
        arg = 2 * np.pi * self.freqs[None] * t[:, None, None] + self.phases[None]
        u = (self.amplitudes[None] * np.sin(arg)).sum(axis=2)
        u = np.clip(u, -self.bound, self.bound)
        u[(t < 0) | (t > self.duration + _EPS)] = 0.0
        return u


def generate_excitation(spec: ExcitationSpec, n_signals: int = 1) -> Excitation:
    """Draw a seeded sum of sinusoids bounded by ``spec.amplitude_bound``.

    Frequencies are uniform over ``spec.freq_range``, phases uniform, raw
    amplitudes uniform on (0, 1]; the sum is then rescaled so that its peak
    over a dense grid equals the bound, and evaluation clips at the bound.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_components
    lo, hi = spec.freq_range
    freqs = rng.uniform(lo, hi, size=(n_signals, n))
    phases = rng.uniform(0.0, 2 * np.pi, size=(n_signals, n))
    amps = 1.0 - rng.uniform(0.0, 1.0, size=(n_signals, n))
    if n > 0:
        step = min(1e-3, 1.0 / (40.0 * hi))
        grid = np.arange(0.0, spec.duration + step / 2, step)
        raw = Excitation(amps, freqs, phases, np.inf, spec.duration).sample(grid)
        peak = np.abs(raw).max(axis=0)
        amps = amps * (spec.amplitude_bound / peak)[:, None]
    return Excitation(amps, freqs, phases, spec.amplitude_bound, spec.duration)


@dataclass(frozen=True)
class Scenario:
    duration: float
    sim_timestep: float = 1.0 / 1200.0
    events: tuple[Event, ...] = ()
    excitation: ExcitationSpec | None = None
    load_seed: int = 0
    load_refresh: float = 1.0 / 120.0
    load_correlation: float = 1.0
    name: str = "scenario"

    def __post_init__(self):
        if not self.sim_timestep > 0:
            raise ConfigError("scenario.sim_timestep must be positive")
        if not self.duration > 0:
            raise ConfigError("scenario.duration must be positive")
        times = [e.time for e in self.events]
        if any(t < 0 or t > self.duration + _EPS for t in times):
            raise ConfigError("scenario.events: timestamps must lie within [0, duration]")
        if times != sorted(times):
            raise ConfigError("scenario.events must be sorted by time")
        if not self.load_refresh > 0:
            raise ConfigError("scenario.load_refresh must be positive")
        if self.load_correlation < 0:
            raise ConfigError("scenario.load_correlation must be >= 0")


@dataclass(frozen=True)
class MicrogridSystem:
    ders: tuple[DerParams, ...]
    network: Network
    consts: SystemConstants = field(default_factory=SystemConstants)

    def __post_init__(self):
        ordered = tuple(order_ders(self.ders))
        object.__setattr__(self, "ders", ordered)
        for d in ordered:
            bus = self.network.bus(d.bus_id)
            if bus.attachment != d.kind:
                raise ConfigError(f"DER {d.name} sits on bus {bus.id} with attachment {bus.attachment!r}")
        if self.network.grid is not None:
            self.network.grid.check_frequency(self.consts.omega0)
        if not ordered:
            raise ConfigError("system has no DERs")

    @property
    def gfms(self) -> list[GfmParams]:
        return [d for d in self.ders if d.kind == "gfm"]

    @property
    def gfls(self):
        return [d for d in self.ders if d.kind == "gfl"]

    def state_names(self) -> list[str]:
        names = []
        for d in self.ders:
            if d.kind == "gfm":
                names += [f"{d.name}.theta", f"{d.name}.omega"]
            else:
                names += [f"{d.name}.theta", f"{d.name}.omega", f"{d.name}.omega_dot", f"{d.name}.vq_int"]
        return names


def initial_dispatch(system: MicrogridSystem) -> np.ndarray:
    """GFM output powers with all GFM angles at zero and base injections."""
    net = system.network
    fixed = {d.bus_id: 0.0 for d in system.gfms}
    inj = net.base_injection()
    angles, _ = solve_algebraic_angles(fixed, inj, net)
    p = active_power_injections(angles, net)
    return np.array([p[net.index[d.bus_id]] - inj[net.index[d.bus_id]] for d in system.gfms])


def balance_setpoints(system: MicrogridSystem) -> MicrogridSystem:
    """Return a copy whose GFM setpoints equal the initial dispatch (steady start)."""
    p0 = initial_dispatch(system)
    it = iter(p0)
    ders = tuple(replace(d, p_set=float(next(it))) if d.kind == "gfm" else d for d in system.ders)
    return replace(system, ders=ders)


def equilibrium_state(system: MicrogridSystem) -> np.ndarray:
    """Start with GFM angles at zero, droop-consistent frequencies and locked PLLs."""
    net, w0 = system.network, system.consts.omega0
    fixed = {d.bus_id: 0.0 for d in system.gfms}
    inj = net.base_injection()
    angles, _ = solve_algebraic_angles(fixed, inj, net)
    p = active_power_injections(angles, net)
    omegas = {}
    for d in system.gfms:
        k = net.index[d.bus_id]
        omegas[d.name] = w0 + d.k_dp * (d.p_set - (p[k] - inj[k]))
    w_sync = float(np.mean(list(omegas.values()))) if omegas else w0
    x = []
    for d in system.ders:
        if d.kind == "gfm":
            x += [0.0, omegas[d.name]]
        else:
            x += [angles[net.index[d.bus_id]], w_sync, 0.0, w_sync / d.k_i]
    return np.array(x)


@dataclass
class Trajectory:
    """Simulation record on the uniform ``sim_timestep`` grid.

    ``states`` and ``derivatives`` follow ``state_names``; ``inputs`` maps
    ``<der>.p``, ``<der>.ps`` (GFM) and ``<der>.vq`` (GFL) to arrays.
    """

    time: np.ndarray
    state_names: list[str]
    states: np.ndarray
    derivatives: np.ndarray
    inputs: dict[str, np.ndarray]
    bus_ids: list[int]
    bus_angles: np.ndarray
    markers: list[tuple[float, str]]
    ders: tuple[DerParams, ...]
    consts: SystemConstants
    pf_residual: np.ndarray
    pf_iterations: int = 0

    def state(self, name: str) -> np.ndarray:
        return self.states[:, self.state_names.index(name)]

    def derivative(self, name: str) -> np.ndarray:
        return self.derivatives[:, self.state_names.index(name)]

    def frequency(self, der_name: str) -> np.ndarray:
        return self.state(f"{der_name}.omega") / (2 * np.pi)

    def max_freq_deviation(self) -> float:
        cols = [k for k, n in enumerate(self.state_names) if n.endswith(".omega")]
        return float(np.max(np.abs(self.states[:, cols] / (2 * np.pi) - self.consts.f0)))

    def truncated(self, n: int) -> "Trajectory":
        return Trajectory(self.time[:n], self.state_names, self.states[:n], self.derivatives[:n],
                          {k: v[:n] for k, v in self.inputs.items()}, self.bus_ids, self.bus_angles[:n],
                          [m for m in self.markers if m[0] <= self.time[n - 1] + _EPS] if n else [],
                          self.ders, self.consts, self.pf_residual[:n], self.pf_iterations)

    def channels(self) -> dict[str, np.ndarray]:
        out = {"t": self.time}
        for k, name in enumerate(self.state_names):
            out[name] = self.states[:, k]
        out.update(self.inputs)
        for k, name in enumerate(self.state_names):
            out[name + ":dt"] = self.derivatives[:, k]
        for k, bus in enumerate(self.bus_ids):
            out[f"bus{bus}.angle"] = self.bus_angles[:, k]
        return out

    def to_csv(self, path):
        """One row per time point; the ``event`` column labels event instants."""
        ch = self.channels()
        labels = _marker_labels(self.time, self.markers)
        names = list(ch)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([names[0], "event"] + names[1:])
            cols = [ch[n] for n in names]
            for i in range(self.time.size):
                w.writerow([repr(float(cols[0][i])), labels[i]] + [repr(float(c[i])) for c in cols[1:]])


def _marker_labels(time: np.ndarray, markers: Sequence[tuple[float, str]]) -> list[str]:
    labels = [""] * time.size
    for t, text in markers:
        k = int(np.argmin(np.abs(time - t)))
        if abs(time[k] - t) < 0.5 * (time[1] - time[0] if time.size > 1 else 1.0):
            labels[k] = text if not labels[k] else labels[k] + ";" + text
    return labels


class _Plant:
    """Vectorised right-hand side with the network closure."""

    def __init__(self, system: MicrogridSystem, excitation: Excitation | None):
        self.system = system
        self.w0 = system.consts.omega0
        self.excitation = excitation
        ders = system.ders
        offs, k = [], 0
        for d in ders:
            offs.append(k)
            k += 2 if d.kind == "gfm" else 4
        self.n_x = k
        gfm = [(o, d) for o, d in zip(offs, ders) if d.kind == "gfm"]
        gfl = [(o, d) for o, d in zip(offs, ders) if d.kind == "gfl"]
        self.gfm_off = np.array([o for o, _ in gfm], dtype=int)
        self.gfl_off = np.array([o for o, _ in gfl], dtype=int)
        self.gfm_wc = np.array([d.omega_c for _, d in gfm])
        self.gfm_kdp = np.array([d.k_dp for _, d in gfm])
        self.gfm_pset = np.array([d.p_set for _, d in gfm])
        self.gfl_kp = np.array([d.k_p for _, d in gfl])
        self.gfl_ki = np.array([d.k_i for _, d in gfl])
        self.gfl_wc = np.array([d.omega_c for _, d in gfl])
        self.gfl_zeta = np.array([d.zeta for _, d in gfl])
        self.gfm_names = [d.name for _, d in gfm]
        self.gfl_names = [d.name for _, d in gfl]
        self.gfm_bus = [d.bus_id for _, d in gfm]
        self.gfl_bus = [d.bus_id for _, d in gfl]
        if excitation is not None and excitation.n_signals != len(gfm):
            raise ConfigError("excitation must provide one signal per GFM converter")
        self.set_network(system.network)

    def set_network(self, net: Network):
        self.net = net
        idx = net.index
        self.gfm_bidx = np.array([idx[b] for b in self.gfm_bus], dtype=int)
        self.gfl_bidx = np.array([idx[b] for b in self.gfl_bus], dtype=int)
        self.gfl_v = net.voltages[self.gfl_bidx]
        fixed = np.zeros(len(net.buses), dtype=bool)
        fixed[self.gfm_bidx] = True
        self.grid_idx = None
        if net.grid is not None and net.grid.connected:
            self.grid_idx = idx[net.grid.bus_id]
            fixed[self.grid_idx] = True
        self.fixed = fixed
        self.free = np.flatnonzero(~fixed).astype(np.int64)
        self.kmat = net.coupling
        self.base_inj = net.base_injection()
        self.stoch_amp = net.stochastic_amplitudes()

    def setpoints(self, t: float) -> np.ndarray:
        if self.excitation is None:
            return self.gfm_pset.copy()
        return self.gfm_pset + self.excitation(t)

    def evaluate(self, t: float, x: np.ndarray, inj: np.ndarray, angles: np.ndarray):
        """Return ``(dx, p_gfm, ps, vq, angles, iterations)``; ``angles`` is the warm start."""
        theta = angles.copy()
        if self.grid_idx is not None:
            theta[self.grid_idx] = self.net.grid.angle(t, self.w0)
        ps = self.setpoints(t)
        dx, p, vq, status = _rhs_kernel(
            x, theta, ps, inj, self.kmat, self.free, self.w0,
            self.gfm_off, self.gfm_bidx, self.gfm_wc, self.gfm_kdp,
            self.gfl_off, self.gfl_bidx, self.gfl_v, self.gfl_kp, self.gfl_ki, self.gfl_wc,
            self.gfl_zeta)
        if status[1]:
            raise PowerFlowError("power flow diverged: singular Jacobian" if status[1] == 2
                                 else "power flow diverged after 50 iterations")
        iters = int(status[0])
        return dx, p, ps, vq, theta, iters

    def residual(self, theta: np.ndarray, inj: np.ndarray) -> float:
        if self.free.size == 0:
            return 0.0
        p_bus = (self.kmat * np.sin(theta[:, None] - theta[None, :])).sum(axis=1)
        return float(np.max(np.abs(p_bus[self.free] - inj[self.free])))



@njit(cache=True)
def _rhs_kernel(x, theta, ps, inj, kmat, free, w0, gfm_off, gfm_bidx, gfm_wc, gfm_kdp,
                gfl_off, gfl_bidx, gfl_v, gfl_kp, gfl_ki, gfl_wc, gfl_zeta):
    for a in range(gfm_off.size):
        theta[gfm_bidx[a]] = x[gfm_off[a]]
    target = np.empty(free.size)
    for a in range(free.size):
        target[a] = inj[free[a]]
    status = np.zeros(2, dtype=np.int64)
    it, st = _newton_kernel(theta, free, target, kmat, 1e-12, 50)
    status[0] = it
    status[1] = st
    n = theta.size
    dx = np.empty_like(x)
    p = np.empty(gfm_off.size)
    for a in range(gfm_off.size):
        i = gfm_bidx[a]
        acc = 0.0
        for j in range(n):
            if kmat[i, j] != 0.0:
                acc += kmat[i, j] * math.sin(theta[i] - theta[j])
        p[a] = acc - inj[i]
        o = gfm_off[a]
        wc = gfm_wc[a]
        w = x[o + 1]
        dx[o] = w - w0
        dx[o + 1] = -wc * w - wc * gfm_kdp[a] * p[a] + wc * w0 + wc * gfm_kdp[a] * ps[a]
    vq = np.empty(gfl_off.size)
    for a in range(gfl_off.size):
        o = gfl_off[a]
        vq[a] = gfl_v[a] * math.sin(theta[gfl_bidx[a]] - x[o])
        w_pi = gfl_kp[a] * vq[a] + gfl_ki[a] * x[o + 3]
        wc2 = gfl_wc[a] ** 2
        dx[o] = w_pi - w0
        dx[o + 1] = x[o + 2]
        dx[o + 2] = -2.0 * gfl_zeta[a] * gfl_wc[a] * x[o + 2] - wc2 * x[o + 1] + wc2 * w_pi
        dx[o + 3] = vq[a]
    return dx, p, vq, status

class _Recorder:
    def __init__(self, n_steps, plant: _Plant, n_bus):
        self.k = 0
        n = n_steps + 1
        self.time = np.empty(n)
        self.states = np.empty((n, plant.n_x))
        self.derivs = np.empty((n, plant.n_x))
        self.p = np.empty((n, len(plant.gfm_names)))
        self.ps = np.empty((n, len(plant.gfm_names)))
        self.vq = np.empty((n, len(plant.gfl_names)))
        self.angles = np.empty((n, n_bus))
        self.residual = np.empty(n)

    def put(self, t, x, out, residual):
        dx, p, ps, vq, theta, _ = out
        k = self.k
        self.time[k] = t
        self.states[k] = x
        self.derivs[k] = dx
        self.p[k] = p
        self.ps[k] = ps
        self.vq[k] = vq
        self.angles[k] = theta
        self.residual[k] = residual
        self.k += 1


def step(plant: _Plant, t: float, x: np.ndarray, dt: float, inj: np.ndarray,
         angles: np.ndarray, k1=None):
    """One classical RK4 step with the algebraic angles re-solved at every stage.

    ``k1`` may carry a stage-one evaluation already available at ``(t, x)``.
    Returns the new state, the evaluation at the new point and the number of
    Newton iterations spent.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    iters = 0
    if k1 is None:
        k1 = plant.evaluate(t, x, inj, angles)
        iters += k1[5]
    d1 = k1[0]
    e2 = plant.evaluate(t + dt / 2, x + dt / 2 * d1, inj, k1[4])
    e3 = plant.evaluate(t + dt / 2, x + dt / 2 * e2[0], inj, e2[4])
    e4 = plant.evaluate(t + dt, x + dt * e3[0], inj, e3[4])
    x_new = x + dt / 6.0 * (d1 + 2 * e2[0] + 2 * e3[0] + e4[0])
    out = plant.evaluate(t + dt, x_new, inj, e4[4])
    iters += e2[5] + e3[5] + e4[5] + out[5]
    return x_new, out, iters


class _LoadProcess:
    """Piecewise-constant Gaussian load fluctuation, refreshed every ``period`` seconds.

    Successive levels follow a unit-variance AR(1) sequence with correlation
    time ``tau`` (white when ``tau == 0``), starting from zero so the run
    begins at the balanced operating point.
    """

    def __init__(self, duration, period, amplitudes, seed, tau=0.0):
        self.period = period
        n = int(math.floor(duration / period + _EPS)) + 2
        rng = np.random.default_rng(seed)
        xi = rng.standard_normal((n, amplitudes.size))
        if tau > 0:
            a = math.exp(-period / tau)
            b = math.sqrt(1.0 - a * a)
            v = np.zeros_like(xi)
            for k in range(1, n):
                v[k] = a * v[k - 1] + b * xi[k]
            xi = v
        self.values = xi
        self.n = n

    def index(self, t_mid: float) -> int:
        return min(int(math.floor(t_mid / self.period)), self.n - 1)

    def breakpoints(self, duration):
        m = np.arange(1, int(math.floor(duration / self.period + _EPS)) + 1)
        return m * self.period


def simulate(scenario: Scenario, system: MicrogridSystem, x0: np.ndarray | None = None) -> Trajectory:
    """Integrate ``system`` over ``scenario`` and record it on the uniform step grid."""
    dt = scenario.sim_timestep
    n_steps = int(round(scenario.duration / dt))
    if abs(n_steps * dt - scenario.duration) > 1e-9 * max(1.0, scenario.duration):
        raise ConfigError("scenario.duration must be a multiple of sim_timestep")
    exc = None
    if scenario.excitation is not None:
        scenario.excitation.validate()
        exc = generate_excitation(scenario.excitation, len(system.gfms))
    plant = _Plant(system, exc)
    net = system.network
    loads = _LoadProcess(scenario.duration, scenario.load_refresh, net.stochastic_amplitudes(),
                         scenario.load_seed, scenario.load_correlation)

    # breakpoints: (time, events at that time)
    bp_times = set()
    for e in scenario.events:
        bp_times.add(round(e.time, 12))
    if plant.stoch_amp.any():
        bp_times.update(round(float(b), 12) for b in loads.breakpoints(scenario.duration))
    if exc is not None and exc.duration < scenario.duration:
        bp_times.add(round(exc.duration, 12))
    breakpoints = sorted(bp_times)
    events = list(scenario.events)

    x = equilibrium_state(system) if x0 is None else np.array(x0, dtype=float)
    if x.size != plant.n_x:
        raise ConfigError(f"initial state must have {plant.n_x} entries")
    rec = _Recorder(n_steps, plant, len(net.buses))
    markers: list[tuple[float, str]] = []
    total_iters = 0

    def injection(t_a, t_b):
        k = loads.index(0.5 * (t_a + t_b))
        return plant.base_inj + plant.stoch_amp * loads.values[k]

    def fire(t, x, angles):
        nonlocal events
        while events and events[0].time <= t + _EPS:
            ev = events.pop(0)
            sync = None
            cur = plant.net
            if ev.kind == "grid-connect" and cur.grid is not None:
                sync = float(angles[cur.index[cur.grid.bus_id]])
            plant.set_network(apply_event(cur, ev, sync_angle=sync))
            markers.append((ev.time, ev.describe()))

    def partial():
        return _finish(rec, plant, markers, total_iters, system, upto=rec.k)

    t = 0.0
    angles = np.zeros(len(net.buses))
    try:
        fire(t, x, angles)
        inj = injection(0.0, min(dt, scenario.duration))
        cur = plant.evaluate(t, x, inj, angles)
        angles = cur[4]
        rec.put(t, x, cur, plant.residual(angles, inj))
        bp_i = 0
        for k in range(n_steps):
            t0 = k * dt
            t1 = (k + 1) * dt
            t = t0
            while bp_i < len(breakpoints) and breakpoints[bp_i] <= t0 + _EPS:
                bp_i += 1
            while bp_i < len(breakpoints) and breakpoints[bp_i] < t1 - _EPS:
                tb = breakpoints[bp_i]
                inj = injection(t, tb)
                x, cur, it = step(plant, t, x, tb - t, inj, cur[4], cur)
                total_iters += it
                t = tb
                fire(t, x, cur[4])
                inj = injection(t, t1)
                cur = plant.evaluate(t, x, inj, cur[4])
                bp_i += 1
            inj = injection(t, t1)
            x, cur, it = step(plant, t, x, t1 - t, inj, cur[4], cur)
            total_iters += it
            angles = cur[4]
            if (events and events[0].time <= t1 + _EPS) or (
                    bp_i < len(breakpoints) and abs(breakpoints[bp_i] - t1) <= _EPS):
                fire(t1, x, angles)
                inj_next = injection(t1, min(t1 + dt, scenario.duration + dt))
                cur = plant.evaluate(t1, x, inj_next, angles)
                angles = cur[4]
                rec.put(t1, x, cur, plant.residual(angles, inj_next))
            else:
                rec.put(t1, x, cur, plant.residual(angles, inj))
    except PowerFlowError as exc_pf:
        raise SimulationError(str(exc_pf), t, partial()) from exc_pf
    return _finish(rec, plant, markers, total_iters, system)


def _finish(rec: _Recorder, plant: _Plant, markers, iters, system: MicrogridSystem, upto=None) -> Trajectory:
    n = rec.k if upto is None else upto
    inputs = {}
    for j, name in enumerate(plant.gfm_names):
        inputs[f"{name}.p"] = rec.p[:n, j].copy()
        inputs[f"{name}.ps"] = rec.ps[:n, j].copy()
    for j, name in enumerate(plant.gfl_names):
        inputs[f"{name}.vq"] = rec.vq[:n, j].copy()
    return Trajectory(
        time=rec.time[:n].copy(),
        state_names=system.state_names(),
        states=rec.states[:n].copy(),
        derivatives=rec.derivs[:n].copy(),
        inputs=inputs,
        bus_ids=[b.id for b in system.network.buses],
        bus_angles=rec.angles[:n].copy(),
        markers=list(markers),
        ders=system.ders,
        consts=system.consts,
        pf_residual=rec.residual[:n].copy(),
        pf_iterations=iters,
    )
