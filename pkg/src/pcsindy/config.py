"""Run configuration: YAML loading, validation with field paths and seed derivation."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from pcsindy import scenarios
from pcsindy.der_models import GflParams, GfmParams, SystemConstants
from pcsindy.network import BusSpec, ConfigError, Event, GridInterface, InjectionProfile, Line, Network
from pcsindy.pmu import PmuConfig
from pcsindy.simulator import ExcitationSpec, MicrogridSystem, Scenario, balance_setpoints
from pcsindy.sindy import LIBRARY_KINDS, LibrarySpec, StlsqConfig

SCENARIO_NAMES = ("identification", "validation")


@dataclass(frozen=True)
class Seeds:
    master: int
    excitation: int
    load: int
    pmu: int

    @classmethod
    def derive(cls, master: int) -> "Seeds":
        """Per-module seeds spawned from one master seed."""
        children = np.random.SeedSequence(master).spawn(3)
        ex, ld, pm = (int(c.generate_state(1, dtype=np.uint32)[0]) for c in children)
        return cls(master, ex, ld, pm)


@dataclass(frozen=True)
class IntuitiveOptions:
    degree: int = 2
    sinusoids: bool = True
    include_vq_int: bool = False


@dataclass(frozen=True)
class ScenarioOptions:
    name: str = "validation"
    duration: float | None = None
    sim_timestep: float = 1.0 / 1200.0
    load_refresh: float = 1.0 / 120.0
    load_correlation: float = 1.0
    identification_window: tuple[float, float] = (0.0, scenarios.IDENTIFICATION_WINDOW)
    prediction_window: tuple[float, float] = (scenarios.IDENTIFICATION_WINDOW, scenarios.VALIDATION_END)
    excitation: ExcitationSpec = field(default_factory=ExcitationSpec)
    events: tuple[Event, ...] | None = None


@dataclass(frozen=True)
class RunConfig:
    system: MicrogridSystem
    scenario: ScenarioOptions = field(default_factory=ScenarioOptions)
    pmu: PmuConfig = field(default_factory=PmuConfig)
    libraries: tuple[str, ...] = LIBRARY_KINDS
    intuitive: IntuitiveOptions = field(default_factory=IntuitiveOptions)
    stlsq: StlsqConfig = field(default_factory=StlsqConfig)
    cap_hz: float = 1.0
    out: str = "out"
    seed: int = 0
    plots: bool = True
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False)

    @property
    def seeds(self) -> Seeds:
        return Seeds.derive(self.seed)

    def build_scenario(self) -> Scenario:
        opt = self.scenario
        seeds = self.seeds
        if opt.events is not None:
            events = opt.events
        else:
            events = scenarios.validation_events() if opt.name == "validation" else ()
        duration = opt.duration
        if duration is None:
            duration = scenarios.VALIDATION_END if opt.name == "validation" else scenarios.IDENTIFICATION_WINDOW
        excitation = replace(opt.excitation, seed=seeds.excitation)
        return Scenario(duration=duration, sim_timestep=opt.sim_timestep, events=tuple(events),
                        excitation=excitation, load_seed=seeds.load, load_refresh=opt.load_refresh,
                        load_correlation=opt.load_correlation,
                        name=opt.name)

    def pmu_config(self, no_noise: bool = False) -> PmuConfig:
        cfg = replace(self.pmu, seed=self.seeds.pmu)
        return cfg.noiseless() if no_noise else cfg

    def library(self, kind: str, roster) -> LibrarySpec:
        if kind == "analytical":
            return LibrarySpec.analytical(roster)
        o = self.intuitive
        return LibrarySpec.intuitive(roster, o.degree, o.sinusoids, o.include_vq_int)

    def digest(self) -> str:
        """Hash of the effective configuration (seed included)."""
        payload = json.dumps(_plain(self.raw) | {"seed": self.seed, "out": self.out},
                             sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()


def _plain(x):
    if isinstance(x, Mapping):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


# --- field-path validation helpers -----------------------------------------

def _mapping(data, path: str) -> Mapping:
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: expected a mapping")
    return data


def _check_keys(data: Mapping, path: str, allowed):
    for k in data:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}: unknown field")


def _number(v, path: str, positive: bool = False, nonneg: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(f"{path}: must be finite")
    if positive and not v > 0:
        raise ConfigError(f"{path}: must be positive")
    if nonneg and v < 0:
        raise ConfigError(f"{path}: must be >= 0")
    return v


def _integer(v, path: str, minimum: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}")
    return v


def _boolean(v, path: str) -> bool:
    if not isinstance(v, bool):
        raise ConfigError(f"{path}: expected true/false, got {v!r}")
    return v


def _pair(v, path: str) -> tuple[float, float]:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{path}: expected a [start, end] pair")
    a, b = _number(v[0], f"{path}[0]"), _number(v[1], f"{path}[1]")
    if not b > a:
        raise ConfigError(f"{path}: end must exceed start")
    return a, b


def _construct(cls, path: str, **kw):
    try:
        return cls(**kw)
    except (ConfigError, ValueError) as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(path) else f"{path}: {msg}") from None


# --- sections ---------------------------------------------------------------

def _parse_ders(items, path: str) -> tuple:
    if not isinstance(items, list) or not items:
        raise ConfigError(f"{path}: expected a non-empty list")
    out = []
    for k, item in enumerate(items):
        p = f"{path}[{k}]"
        item = _mapping(item, p)
        kind = item.get("kind")
        if kind == "gfm":
            _check_keys(item, p, ("kind", "bus", "omega_c", "k_dp", "p_set"))
            out.append(_construct(GfmParams, p, omega_c=_number(item.get("omega_c"), f"{p}.omega_c"),
                                  k_dp=_number(item.get("k_dp"), f"{p}.k_dp"),
                                  p_set=_number(item.get("p_set", 0.0), f"{p}.p_set"),
                                  bus_id=_integer(item.get("bus"), f"{p}.bus")))
        elif kind == "gfl":
            _check_keys(item, p, ("kind", "bus", "k_p", "k_i", "omega_c", "zeta"))
            out.append(_construct(GflParams, p, k_p=_number(item.get("k_p"), f"{p}.k_p"),
                                  k_i=_number(item.get("k_i"), f"{p}.k_i"),
                                  omega_c=_number(item.get("omega_c"), f"{p}.omega_c"),
                                  zeta=_number(item.get("zeta"), f"{p}.zeta"),
                                  bus_id=_integer(item.get("bus"), f"{p}.bus")))
        else:
            raise ConfigError(f"{p}.kind: expected 'gfm' or 'gfl', got {kind!r}")
    return tuple(out)


def _bus_map(data, path: str) -> dict[int, float]:
    data = _mapping(data, path)
    return {_integer(int(k) if isinstance(k, str) and k.isdigit() else k, f"{path}.{k}"):
            _number(v, f"{path}.{k}") for k, v in data.items()}


def _parse_network(data, path: str) -> Network:
    data = _mapping(data, path)
    _check_keys(data, path, ("buses", "lines", "injections", "grid"))
    buses = []
    for k, b in enumerate(data.get("buses") or []):
        p = f"{path}.buses[{k}]"
        b = _mapping(b, p)
        _check_keys(b, p, ("id", "voltage", "attachment"))
        buses.append(_construct(BusSpec, p, id=_integer(b.get("id"), f"{p}.id"),
                                voltage_mag=_number(b.get("voltage", 1.0), f"{p}.voltage"),
                                attachment=b.get("attachment", "load-only")))
    if not buses:
        raise ConfigError(f"{path}.buses: at least one bus is required")
    lines = []
    for k, ln in enumerate(data.get("lines") or []):
        p = f"{path}.lines[{k}]"
        ln = _mapping(ln, p)
        _check_keys(ln, p, ("id", "from", "to", "susceptance", "in_service"))
        lines.append(_construct(Line, p, id=str(ln.get("id", k)),
                                from_bus=_integer(ln.get("from"), f"{p}.from"),
                                to_bus=_integer(ln.get("to"), f"{p}.to"),
                                susceptance=_number(ln.get("susceptance"), f"{p}.susceptance"),
                                in_service=_boolean(ln.get("in_service", True), f"{p}.in_service")))
    inj = _mapping(data.get("injections"), f"{path}.injections")
    _check_keys(inj, f"{path}.injections", ("constant", "stochastic", "pv"))
    injections = _construct(InjectionProfile, f"{path}.injections",
                            constant=_bus_map(inj.get("constant"), f"{path}.injections.constant"),
                            stochastic=_bus_map(inj.get("stochastic"), f"{path}.injections.stochastic"),
                            pv=_bus_map(inj.get("pv"), f"{path}.injections.pv"))
    grid = None
    if data.get("grid") is not None:
        g = _mapping(data["grid"], f"{path}.grid")
        _check_keys(g, f"{path}.grid", ("bus", "connected", "frequency", "synchronize"))
        freq = g.get("frequency")
        grid = GridInterface(bus_id=_integer(g.get("bus"), f"{path}.grid.bus"),
                             connected=_boolean(g.get("connected", False), f"{path}.grid.connected"),
                             omega=None if freq is None else 2 * math.pi * _number(freq, f"{path}.grid.frequency"),
                             synchronize=_boolean(g.get("synchronize", True), f"{path}.grid.synchronize"))
    return _construct(Network, path, buses=tuple(buses), lines=tuple(lines), injections=injections, grid=grid)


def _parse_system(data, path: str = "system") -> MicrogridSystem:
    data = _mapping(data, path)
    _check_keys(data, path, ("f0", "ders", "network", "balance_setpoints"))
    consts = _construct(SystemConstants, f"{path}.f0", f0=_number(data.get("f0", 60.0), f"{path}.f0"))
    ders = (_parse_ders(data["ders"], f"{path}.ders") if "ders" in data
            else (scenarios.DEFAULT_GFM,) + scenarios.DEFAULT_GFLS)
    net = (_parse_network(data["network"], f"{path}.network") if "network" in data
           else scenarios.default_network())
    if net.grid is not None:
        try:
            net.grid.check_frequency(consts.omega0)
        except ConfigError as exc:
            raise ConfigError(f"{path}.network.grid.frequency: {exc}") from None
    system = _construct(MicrogridSystem, path, ders=ders, network=net, consts=consts)
    if _boolean(data.get("balance_setpoints", True), f"{path}.balance_setpoints"):
        system = balance_setpoints(system)
    return system


def _parse_events(items, path: str) -> tuple[Event, ...]:
    if not isinstance(items, list):
        raise ConfigError(f"{path}: expected a list")
    out = []
    for k, e in enumerate(items):
        p = f"{path}[{k}]"
        e = _mapping(e, p)
        _check_keys(e, p, ("time", "kind", "target", "magnitude", "in_service"))
        target = e.get("target")
        out.append(_construct(Event, p, time=_number(e.get("time"), f"{p}.time", nonneg=True),
                              kind=e.get("kind"), target=target,
                              magnitude=_number(e.get("magnitude", 0.0), f"{p}.magnitude"),
                              in_service=_boolean(e.get("in_service", True), f"{p}.in_service")))
    return tuple(sorted(out, key=lambda ev: ev.time))


def _parse_scenario(data, path: str = "scenario") -> ScenarioOptions:
    data = _mapping(data, path)
    _check_keys(data, path, ("name", "duration", "sim_timestep", "load_refresh", "load_correlation",
                             "identification_window",
                             "prediction_window", "excitation", "events"))
    name = data.get("name", "validation")
    if name not in SCENARIO_NAMES:
        raise ConfigError(f"{path}.name: expected one of {SCENARIO_NAMES}, got {name!r}")
    kw: dict[str, Any] = {"name": name}
    if data.get("duration") is not None:
        kw["duration"] = _number(data["duration"], f"{path}.duration", positive=True)
    for key in ("sim_timestep", "load_refresh"):
        if key in data:
            kw[key] = _number(data[key], f"{path}.{key}", positive=True)
    if "load_correlation" in data:
        kw["load_correlation"] = _number(data["load_correlation"], f"{path}.load_correlation", nonneg=True)
    for key in ("identification_window", "prediction_window"):
        if key in data:
            kw[key] = _pair(data[key], f"{path}.{key}")
    if "excitation" in data:
        ex = _mapping(data["excitation"], f"{path}.excitation")
        p = f"{path}.excitation"
        _check_keys(ex, p, ("n_components", "amplitude_bound", "freq_range", "duration"))
        spec = ExcitationSpec(
            n_components=_integer(ex.get("n_components", 10), f"{p}.n_components", 0),
            amplitude_bound=_number(ex.get("amplitude_bound", 0.01), f"{p}.amplitude_bound", positive=True),
            freq_range=_pair(ex.get("freq_range", [0.1, 10.0]), f"{p}.freq_range"),
            duration=_number(ex.get("duration", scenarios.IDENTIFICATION_WINDOW), f"{p}.duration", positive=True))
        kw["excitation"] = spec
    if "events" in data:
        kw["events"] = _parse_events(data["events"], f"{path}.events")
    return ScenarioOptions(**kw)


def _parse_dataclass(cls, data, path: str, skip=()):
    data = _mapping(data, path)
    names = {f for f in cls.__dataclass_fields__ if f not in skip}
    _check_keys(data, path, names)
    defaults = cls()
    kw = {}
    for k, v in data.items():
        ref = getattr(defaults, k)
        p = f"{path}.{k}"
        if isinstance(ref, bool):
            kw[k] = _boolean(v, p)
        elif isinstance(ref, int):
            kw[k] = _integer(v, p)
        elif isinstance(ref, float):
            kw[k] = _number(v, p)
        else:
            kw[k] = v
    return _construct(cls, path, **kw)


def config_from_dict(data: Mapping | None) -> RunConfig:
    data = _mapping(data, "config")
    _check_keys(data, "config", ("seed", "out", "system", "scenario", "pmu", "libraries", "intuitive",
                                 "stlsq", "prediction", "plots"))
    kw: dict[str, Any] = {"raw": data}
    kw["system"] = _parse_system(data.get("system"))
    kw["scenario"] = _parse_scenario(data.get("scenario"))
    kw["pmu"] = _parse_dataclass(PmuConfig, data.get("pmu"), "pmu", skip=("seed",))
    kw["stlsq"] = _parse_dataclass(StlsqConfig, data.get("stlsq"), "stlsq")
    kw["intuitive"] = _parse_dataclass(IntuitiveOptions, data.get("intuitive"), "intuitive")
    if kw["intuitive"].degree < 1:
        raise ConfigError("intuitive.degree: polynomial degree must be >= 1")
    if "libraries" in data:
        libs = data["libraries"]
        if not isinstance(libs, list) or not libs or any(x not in LIBRARY_KINDS for x in libs):
            raise ConfigError(f"libraries: expected a non-empty list drawn from {LIBRARY_KINDS}")
        kw["libraries"] = tuple(dict.fromkeys(libs))
    pred = _mapping(data.get("prediction"), "prediction")
    _check_keys(pred, "prediction", ("cap_hz",))
    if "cap_hz" in pred:
        kw["cap_hz"] = _number(pred["cap_hz"], "prediction.cap_hz", positive=True)
    if "seed" in data:
        kw["seed"] = _integer(data["seed"], "seed", 0)
    if "out" in data:
        if not isinstance(data["out"], str) or not data["out"]:
            raise ConfigError("out: expected a directory path")
        kw["out"] = data["out"]
    if "plots" in data:
        kw["plots"] = _boolean(data["plots"], "plots")
    cfg = RunConfig(**kw)
    _check_scenario(cfg)
    return cfg


def _check_scenario(cfg: RunConfig):
    try:
        scen = cfg.build_scenario()
        scen.excitation.validate(cfg.pmu.reporting_rate)
    except ConfigError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith("scenario") else f"scenario: {msg}") from None
    ratio = cfg.pmu.period / scen.sim_timestep
    if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
        raise ConfigError("scenario.sim_timestep: must divide the PMU reporting period exactly")
    lo, hi = cfg.scenario.identification_window
    if hi > scen.duration + 1e-9:
        raise ConfigError("scenario.identification_window: extends past the scenario duration")
    lo, hi = cfg.scenario.prediction_window
    if cfg.scenario.name == "validation" and hi > scen.duration + 1e-9:
        raise ConfigError("scenario.prediction_window: extends past the scenario duration")
    buses = {b.id for b in cfg.system.network.buses}
    for k, e in enumerate(scen.events):
        if e.kind in ("load-step", "pv-step") and int(e.target) not in buses:
            raise ConfigError(f"scenario.events[{k}].target: unknown bus {e.target}")
        if e.kind == "line-switch" and str(e.target) not in {ln.id for ln in cfg.system.network.lines}:
            raise ConfigError(f"scenario.events[{k}].target: unknown line {e.target}")
        if e.kind in ("grid-connect", "grid-disconnect") and cfg.system.network.grid is None:
            raise ConfigError(f"scenario.events[{k}]: network has no grid interface")


def load_config(path: str | Path | None) -> RunConfig:
    """Read a YAML run configuration; ``None`` gives the built-in defaults."""
    if path is None:
        return config_from_dict({})
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    return config_from_dict(data)


def default_config_dict() -> dict:
    """The built-in configuration spelled out, suitable for ``yaml.safe_dump``."""
    gfm = scenarios.DEFAULT_GFM
    ders = [{"kind": "gfm", "bus": gfm.bus_id, "omega_c": gfm.omega_c, "k_dp": gfm.k_dp, "p_set": 0.0}]
    for g in scenarios.DEFAULT_GFLS:
        ders.append({"kind": "gfl", "bus": g.bus_id, "k_p": g.k_p, "k_i": g.k_i, "omega_c": g.omega_c,
                     "zeta": g.zeta})
    net = scenarios.default_network()
    network = {
        "buses": [{"id": b.id, "voltage": b.voltage_mag, "attachment": b.attachment} for b in net.buses],
        "lines": [{"id": ln.id, "from": ln.from_bus, "to": ln.to_bus, "susceptance": ln.susceptance,
                   "in_service": ln.in_service} for ln in net.lines],
        "injections": {k: dict(getattr(net.injections, k)) for k in ("constant", "stochastic", "pv")},
        "grid": {"bus": net.grid.bus_id, "connected": net.grid.connected, "synchronize": True},
    }
    events = [{"time": e.time, "kind": e.kind, "target": e.target, "magnitude": e.magnitude,
               "in_service": e.in_service} for e in scenarios.validation_events()]
    pmu = {k: v for k, v in asdict(PmuConfig()).items() if k != "seed"}
    return {
        "seed": 0,
        "out": "out",
        "system": {"f0": 60.0, "balance_setpoints": True, "ders": ders, "network": network},
        "scenario": {"name": "validation", "duration": scenarios.VALIDATION_END,
                     "identification_window": [0.0, scenarios.IDENTIFICATION_WINDOW],
                     "prediction_window": [scenarios.IDENTIFICATION_WINDOW, scenarios.VALIDATION_END],
                     "excitation": {"n_components": 10, "amplitude_bound": 0.01, "freq_range": [0.1, 10.0],
                                    "duration": scenarios.IDENTIFICATION_WINDOW},
                     "events": events},
        "pmu": pmu,
        "libraries": list(LIBRARY_KINDS),
        "intuitive": asdict(IntuitiveOptions()),
        "stlsq": asdict(StlsqConfig()),
        "prediction": {"cap_hz": 1.0},
        "plots": True,
    }
