"""PMU emulation, derivative estimation and snapshot-matrix assembly.

Channel naming follows ``<der>.<quantity>`` where ``<der>`` is ``gfm<bus>`` or
``gfl<bus>``:

=================  ==========  =========================================
channel            unit        present for
=================  ==========  =========================================
``<der>.theta``    rad         all DERs
``<der>.f``        Hz          all DERs
``<der>.p``        p.u.        GFM
``<der>.ps``       p.u.        GFM (setpoint including excitation, exact)
``<der>.vq``       p.u.        GFL
``<der>.vq_int``   p.u. s      GFL (trapezoidal integral of measured vq)
=================  ==========  =========================================

Reported derivative channels ``<der>.theta_dot``, ``<der>.omega_dot`` and
``<der>.omega_ddot`` (rad/s, rad/s^2, rad/s^3) are optional.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np
from scipy.ndimage import uniform_filter1d

if TYPE_CHECKING:
    from pcsindy.sindy import LibrarySpec
    from pcsindy.simulator import Trajectory

DERIVATIVE_METHODS = ("central-difference", "reported")
_DER_RE = re.compile(r"^(gfm|gfl)(\d+)$")


class SchemaError(ValueError):
    """PMU data does not match the expected channel layout."""


@dataclass(frozen=True)
class PmuConfig:
    """Reporting rate and per-channel Gaussian noise levels.

    Noise defaults sit inside the accuracy limits of the synchrophasor
    standard: 0.01 rad of angle error is 1 % TVE, 0.002 Hz is well inside the
    frequency-error limit. ``rocof_noise_std`` (Hz/s) only applies to
    reported derivative channels.
    """

    reporting_rate: float = 120.0
    freq_noise_std: float = 0.002
    angle_noise_std: float = 0.01
    power_noise_std: float = 0.005
    vq_noise_std: float = 0.005
    rocof_noise_std: float = 0.01
    seed: int = 0
    derivative_method: str = "central-difference"
    smoothing_window: int = 1
    trim: int = 0

    def __post_init__(self):
        if not self.reporting_rate > 0:
            raise ValueError("pmu.reporting_rate must be positive")
        for name in ("freq_noise_std", "angle_noise_std", "power_noise_std", "vq_noise_std",
                     "rocof_noise_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"pmu.{name} must be >= 0")
        if self.derivative_method not in DERIVATIVE_METHODS:
            raise ValueError(f"pmu.derivative_method must be one of {DERIVATIVE_METHODS}")
        if self.smoothing_window < 1:
            raise ValueError("pmu.smoothing_window must be >= 1")
        if self.trim < 0:
            raise ValueError("pmu.trim must be >= 0")

    @property
    def period(self) -> float:
        return 1.0 / self.reporting_rate

    def noiseless(self) -> "PmuConfig":
        from dataclasses import replace
        return replace(self, freq_noise_std=0.0, angle_noise_std=0.0, power_noise_std=0.0,
                       vq_noise_std=0.0, rocof_noise_std=0.0)


@dataclass(frozen=True)
class DerInfo:
    name: str
    kind: str
    bus_id: int


def roster_from_names(names: Sequence[str]) -> tuple[DerInfo, ...]:
    out = []
    for n in names:
        m = _DER_RE.match(n)
        if not m:
            raise SchemaError(f"cannot parse DER name {n!r}")
        out.append(DerInfo(n, m.group(1), int(m.group(2))))
    return tuple(sorted(out, key=lambda d: d.bus_id))


def required_channels(der: DerInfo) -> list[str]:
    base = ["theta", "f"] + (["p", "ps"] if der.kind == "gfm" else ["vq", "vq_int"])
    return [f"{der.name}.{c}" for c in base]


@dataclass
class PmuSeries:
    time: np.ndarray
    roster: tuple[DerInfo, ...]
    channels: dict[str, np.ndarray]
    f0: float = 60.0
    markers: list[tuple[float, str]] = field(default_factory=list)

    def __post_init__(self):
        n = self.time.size
        for der in self.roster:
            for ch in required_channels(der):
                if ch not in self.channels:
                    raise SchemaError(f"missing channel {ch}")
        for name, arr in self.channels.items():
            if arr.shape != (n,):
                raise SchemaError(f"channel {name} has length {arr.shape}, expected {n}")

    @property
    def omega0(self) -> float:
        return 2 * math.pi * self.f0

    @property
    def dt(self) -> float:
        return float(self.time[1] - self.time[0])

    def __len__(self):
        return self.time.size

    def omega(self, der: str) -> np.ndarray:
        return 2 * math.pi * self.channels[f"{der}.f"]

    def window(self, t_start: float, t_end: float) -> "PmuSeries":
        """Sub-series on ``[t_start, t_end]``; integrals are not reset."""
        eps = 1e-9
        sel = (self.time >= t_start - eps) & (self.time <= t_end + eps)
        return PmuSeries(self.time[sel], self.roster, {k: v[sel] for k, v in self.channels.items()},
                         self.f0, [m for m in self.markers if t_start - eps <= m[0] <= t_end + eps])

    def head(self, n: int) -> "PmuSeries":
        return PmuSeries(self.time[:n], self.roster, {k: v[:n] for k, v in self.channels.items()},
                         self.f0, [m for m in self.markers if m[0] <= self.time[n - 1] + 1e-9])

    def to_csv(self, path):
        names = ["t"] + sorted(self.channels, key=_channel_sort_key(self.roster))
        labels = _labels(self.time, self.markers)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "event"] + names[1:])
            cols = [self.time] + [self.channels[n] for n in names[1:]]
            for i in range(self.time.size):
                w.writerow([repr(float(cols[0][i])), labels[i]] + [repr(float(c[i])) for c in cols[1:]])

    @classmethod
    def from_csv(cls, path, f0: float = 60.0) -> "PmuSeries":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][:2] != ["t", "event"]:
            raise SchemaError(f"{path}: header must start with 't,event'")
        header = rows[0]
        body = rows[1:]
        if not body:
            raise SchemaError(f"{path}: no data rows")
        data = np.array([[float(v) for i, v in enumerate(r) if i != 1] for r in body])
        names = [h for i, h in enumerate(header) if i != 1]
        time = data[:, 0]
        channels = {}
        der_names = []
        for k, n in enumerate(names[1:], start=1):
            if "." not in n:
                raise SchemaError(f"{path}: bad channel name {n!r}")
            der = n.split(".", 1)[0]
            if der not in der_names:
                der_names.append(der)
            channels[n] = data[:, k]
        markers = []
        for r in body:
            if r[1]:
                for text in r[1].split(";"):
                    markers.append((float(r[0]), text))
        if time.size > 1 and not np.all(np.diff(time) > 0):
            raise SchemaError(f"{path}: timestamps must be strictly increasing")
        return cls(time, roster_from_names(der_names), channels, f0, markers)


def _channel_sort_key(roster):
    order = {d.name: k for k, d in enumerate(roster)}
    qty = ["theta", "f", "p", "ps", "vq", "vq_int", "theta_dot", "omega_dot", "omega_ddot"]

    def key(name):
        der, q = name.split(".", 1)
        return (order.get(der, len(order)), qty.index(q) if q in qty else len(qty), q)
    return key


def _labels(time, markers):
    labels = [""] * time.size
    if time.size == 0:
        return labels
    half = 0.5 * (time[1] - time[0]) if time.size > 1 else 1.0
    for t, text in markers:
        k = int(np.argmin(np.abs(time - t)))
        if abs(time[k] - t) < half:
            labels[k] = text if not labels[k] else labels[k] + ";" + text
    return labels


def _trapezoid_integral(x: np.ndarray, dt: float) -> np.ndarray:
    out = np.zeros_like(x)
    out[1:] = np.cumsum(0.5 * (x[1:] + x[:-1]) * dt)
    return out


def sample(trajectory: "Trajectory", config: PmuConfig = PmuConfig()) -> PmuSeries:
    """Decimate a trajectory to the reporting grid and add measurement noise.

    The reporting period must be an integer multiple of the simulation step,
    so every PMU timestamp is an exact trajectory timestamp. The measured
    ``vq_int`` starts from zero at the first report and accumulates the noisy
    ``vq`` with the trapezoidal rule.
    """
    t = trajectory.time
    if t.size < 2:
        raise ValueError("trajectory too short to sample")
    dt_sim = t[1] - t[0]
    ratio = config.period / dt_sim
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-6:
        raise ValueError(f"reporting period {config.period} s is not a multiple of the "
                         f"simulation step {dt_sim} s")
    if t[-1] - t[0] < config.period - 1e-12:
        raise ValueError("trajectory shorter than one reporting period")
    idx = np.arange(0, t.size, stride)
    time = t[idx]
    rng = np.random.default_rng(config.seed)
    two_pi = 2 * math.pi
    roster = tuple(DerInfo(d.name, d.kind, d.bus_id) for d in trajectory.ders)
    ch: dict[str, np.ndarray] = {}
    reported = config.derivative_method == "reported"

    def noisy(x, std):
        return x + std * rng.standard_normal(x.size) if std > 0 else x.copy()

    for d in roster:
        n = d.name
        ch[f"{n}.theta"] = noisy(trajectory.state(f"{n}.theta")[idx], config.angle_noise_std)
        ch[f"{n}.f"] = noisy(trajectory.state(f"{n}.omega")[idx] / two_pi, config.freq_noise_std)
        if d.kind == "gfm":
            ch[f"{n}.p"] = noisy(trajectory.inputs[f"{n}.p"][idx], config.power_noise_std)
            ch[f"{n}.ps"] = trajectory.inputs[f"{n}.ps"][idx].copy()
        else:
            vq = noisy(trajectory.inputs[f"{n}.vq"][idx], config.vq_noise_std)
            ch[f"{n}.vq"] = vq
            ch[f"{n}.vq_int"] = _trapezoid_integral(vq, config.period)
        if reported:
            ch[f"{n}.theta_dot"] = noisy(trajectory.derivative(f"{n}.theta")[idx],
                                         two_pi * config.freq_noise_std)
            ch[f"{n}.omega_dot"] = noisy(trajectory.derivative(f"{n}.omega")[idx],
                                         two_pi * config.rocof_noise_std)
    return PmuSeries(time, roster, ch, trajectory.consts.f0, list(trajectory.markers))


def _smooth(x: np.ndarray, window: int, causal: bool) -> np.ndarray:
    if window <= 1:
        return x
    if causal:
        c = np.cumsum(np.concatenate([[0.0], x]))
        out = np.empty_like(x)
        for k in range(x.size):
            lo = max(0, k - window + 1)
            out[k] = (c[k + 1] - c[lo]) / (k + 1 - lo)
        return out
    return uniform_filter1d(x, size=window, mode="nearest")


def differentiate(x: np.ndarray, dt: float, causal: bool = False) -> np.ndarray:
    """First derivative on a uniform grid.

    Non-causal: second-order central differences inside, second-order
    one-sided differences at both ends. Causal: second-order backward
    differences (first-order at the second sample, zero at the first), so a
    value never depends on later samples.
    """
    if x.size < 3:
        raise ValueError("at least 3 samples are needed to differentiate")
    if not causal:
        return np.gradient(x, dt, edge_order=2)
    d = np.empty_like(x)
    d[0] = 0.0
    d[1] = (x[1] - x[0]) / dt
    d[2:] = (3.0 * x[2:] - 4.0 * x[1:-1] + x[:-2]) / (2.0 * dt)
    return d


def estimate_derivatives(series: PmuSeries, method: str = "central-difference",
                         smoothing_window: int = 1, causal: bool = False) -> dict[str, np.ndarray]:
    """Derivative channels: ``theta_dot`` and ``omega_dot`` per DER, plus ``omega_ddot`` for GFL.

    ``omega_ddot`` applies the same differentiator twice. With ``method`` set
    to ``"reported"`` the series' own derivative channels are returned.
    """
    if len(series) < 3:
        raise ValueError("at least 3 samples are needed to estimate derivatives")
    out: dict[str, np.ndarray] = {}
    if method == "reported":
        dt = series.dt
        for d in series.roster:
            for k in ("theta_dot", "omega_dot"):
                name = f"{d.name}.{k}"
                if name not in series.channels:
                    raise SchemaError(f"reported derivative channel {name} missing")
                out[name] = series.channels[name]
            if d.kind == "gfl":
                name = f"{d.name}.omega_ddot"
                if name in series.channels:
                    out[name] = series.channels[name]
                else:
                    w_dot = _smooth(out[f"{d.name}.omega_dot"], smoothing_window, causal)
                    out[name] = differentiate(w_dot, dt, causal)
        return out
    if method != "central-difference":
        raise ValueError(f"unknown derivative method {method!r}")
    dt = series.dt
    for d in series.roster:
        theta = _smooth(series.channels[f"{d.name}.theta"], smoothing_window, causal)
        omega = _smooth(series.omega(d.name), smoothing_window, causal)
        out[f"{d.name}.theta_dot"] = differentiate(theta, dt, causal)
        w_dot = differentiate(omega, dt, causal)
        out[f"{d.name}.omega_dot"] = w_dot
        if d.kind == "gfl":
            out[f"{d.name}.omega_ddot"] = differentiate(w_dot, dt, causal)
    return out


def signals(series: PmuSeries, derivatives: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Variables the candidate libraries are evaluated on (rad/s for frequencies)."""
    out: dict[str, np.ndarray] = {"omega0": np.full(len(series), series.omega0)}
    for d in series.roster:
        n = d.name
        out[f"{n}.theta"] = series.channels[f"{n}.theta"]
        out[f"{n}.omega"] = series.omega(n)
        if d.kind == "gfm":
            out[f"{n}.p"] = series.channels[f"{n}.p"]
            out[f"{n}.ps"] = series.channels[f"{n}.ps"]
        else:
            out[f"{n}.omega_dot"] = derivatives[f"{n}.omega_dot"]
            out[f"{n}.vq"] = series.channels[f"{n}.vq"]
            out[f"{n}.vq_int"] = series.channels[f"{n}.vq_int"]
    return out


@dataclass(frozen=True)
class SnapshotMatrices:
    """Regression data: ``x_dot`` (M x N) and ``theta`` (M x P) with labels.

    ``allowed`` optionally restricts, per target column, which candidate
    columns may enter the fit (the per-DER blocks of the analytical library).
    """

    x_dot: np.ndarray
    theta: np.ndarray
    target_labels: tuple[str, ...]
    column_labels: tuple[str, ...]
    allowed: np.ndarray | None = None
    time: np.ndarray | None = None

    def __post_init__(self):
        m, n = self.x_dot.shape
        if self.theta.shape[0] != m:
            raise ValueError("x_dot and theta must have the same number of rows")
        if len(self.target_labels) != n or len(self.column_labels) != self.theta.shape[1]:
            raise ValueError("label counts do not match matrix shapes")
        if self.allowed is not None and self.allowed.shape != (self.theta.shape[1], n):
            raise ValueError("allowed mask must be P x N")


def build_matrices(series: PmuSeries, library: "LibrarySpec",
                   derivatives: Mapping[str, np.ndarray] | None = None,
                   config: PmuConfig | None = None) -> SnapshotMatrices:
    """Assemble ``x_dot`` and ``theta`` for ``library`` from a PMU series."""
    config = config or PmuConfig()
    lib_names = [d.name for d in library.roster]
    if lib_names != [d.name for d in series.roster]:
        raise SchemaError(f"library roster {lib_names} does not match series roster "
                          f"{[d.name for d in series.roster]}")
    if derivatives is None:
        derivatives = estimate_derivatives(series, config.derivative_method, config.smoothing_window)
    sig = signals(series, derivatives)
    theta = library.evaluate(sig)
    targets = library.target_labels()
    x_dot = np.column_stack([derivatives[t] for t in targets])
    time = series.time
    if config.trim:
        k = config.trim
        if 2 * k >= len(series):
            raise ValueError("trim removes every row")
        theta, x_dot, time = theta[k:-k], x_dot[k:-k], time[k:-k]
    if theta.shape[0] < theta.shape[1]:
        raise ValueError(f"library too rich for window: {theta.shape[1]} columns, {theta.shape[0]} rows")
    return SnapshotMatrices(x_dot, theta, tuple(targets), tuple(library.column_labels()),
                            library.allowed_mask(), time)


def matrices_from_trajectory(trajectory: "Trajectory", library: "LibrarySpec",
                             stride: int = 1) -> SnapshotMatrices:
    """Exact-data matrices: plant states and inputs, derivatives from the plant RHS."""
    idx = np.arange(0, trajectory.time.size, stride)
    w0 = trajectory.consts.omega0
    sig: dict[str, np.ndarray] = {"omega0": np.full(idx.size, w0)}
    deriv: dict[str, np.ndarray] = {}
    for d in trajectory.ders:
        n = d.name
        sig[f"{n}.theta"] = trajectory.state(f"{n}.theta")[idx]
        sig[f"{n}.omega"] = trajectory.state(f"{n}.omega")[idx]
        deriv[f"{n}.theta_dot"] = trajectory.derivative(f"{n}.theta")[idx]
        deriv[f"{n}.omega_dot"] = trajectory.derivative(f"{n}.omega")[idx]
        if d.kind == "gfm":
            sig[f"{n}.p"] = trajectory.inputs[f"{n}.p"][idx]
            sig[f"{n}.ps"] = trajectory.inputs[f"{n}.ps"][idx]
        else:
            sig[f"{n}.omega_dot"] = trajectory.state(f"{n}.omega_dot")[idx]
            sig[f"{n}.vq"] = trajectory.inputs[f"{n}.vq"][idx]
            sig[f"{n}.vq_int"] = trajectory.state(f"{n}.vq_int")[idx]
            deriv[f"{n}.omega_ddot"] = trajectory.derivative(f"{n}.omega_dot")[idx]
    theta = library.evaluate(sig)
    targets = library.target_labels()
    x_dot = np.column_stack([deriv[t] for t in targets])
    return SnapshotMatrices(x_dot, theta, tuple(targets), tuple(library.column_labels()),
                            library.allowed_mask(), trajectory.time[idx])
