"""Command-line pipeline: simulate, identify, predict, pipeline, report.

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy
import yaml

from pcsindy import __version__
from pcsindy.config import RunConfig, default_config_dict, load_config
from pcsindy.der_models import analytical_block, assemble_xi
from pcsindy.network import ConfigError, PowerFlowError
from pcsindy.pmu import PmuSeries, SchemaError, build_matrices, sample
from pcsindy.predictor import OneStepResult, error_metrics, one_step_series, write_prediction_csv
from pcsindy.simulator import SimulationError, simulate
from pcsindy.sindy import IdentifiedModel, ThresholdError, compare_coefficients, stlsq
from pcsindy.svg import line_chart

log = logging.getLogger("pcsindy")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class Run:
    """Resolved configuration, output directory and the manifest being built."""

    def __init__(self, cfg: RunConfig, args):
        self.cfg = cfg
        self.args = args
        self.out = Path(args.out or cfg.out)
        self.no_noise = args.no_noise
        self.plots = cfg.plots and not args.no_plots
        lib = args.library or "both"
        self.libraries = cfg.libraries if lib == "both" else (lib,)
        self.manifest_path = self.out / "manifest.json"
        self.manifest = self._load_manifest()

    def _load_manifest(self) -> dict:
        seeds = self.cfg.seeds
        base = {
            "config_hash": self.cfg.digest(),
            "seeds": {"master": seeds.master, "excitation": seeds.excitation, "load": seeds.load,
                      "pmu": seeds.pmu},
            "no_noise": self.no_noise,
            "versions": {"pcsindy": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
            "artifacts": {},
            "timings": {},
        }
        if self.manifest_path.exists():
            try:
                old = json.loads(self.manifest_path.read_text())
            except ValueError:
                old = {}
            if old.get("config_hash") == base["config_hash"]:
                base["artifacts"] = old.get("artifacts", {})
                base["timings"] = old.get("timings", {})
        return base

    def path(self, name: str) -> Path:
        return self.out / name

    def record(self, path: Path):
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.manifest["artifacts"][path.name] = digest

    def timing(self, step: str, seconds: float):
        self.manifest["timings"][step] = round(seconds, 6)

    def save_manifest(self):
        self.manifest["artifacts"] = dict(sorted(self.manifest["artifacts"].items()))
        with open(self.manifest_path, "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def cmd_simulate(run: Run) -> PmuSeries:
    cfg = run.cfg
    scen = cfg.build_scenario()
    t0 = time.perf_counter()
    traj = simulate(scen, cfg.system)
    run.timing("simulate", time.perf_counter() - t0)
    run.out.mkdir(parents=True, exist_ok=True)
    traj.to_csv(run.path("trajectory.csv"))
    run.record(run.path("trajectory.csv"))
    series = sample(traj, cfg.pmu_config(run.no_noise))
    series.to_csv(run.path("pmu.csv"))
    run.record(run.path("pmu.csv"))
    lo, hi = cfg.scenario.identification_window
    if hi < series.time[-1] - 1e-9 or lo > series.time[0] + 1e-9:
        series.window(lo, hi).to_csv(run.path("pmu_identification.csv"))
        run.record(run.path("pmu_identification.csv"))
    log.info("simulated %s: %d PMU rows, max |f - f0| = %.4f Hz", scen.name, len(series),
             traj.max_freq_deviation())
    return series


def _read_pmu(run: Run, explicit: str | None, default: str) -> PmuSeries:
    path = Path(explicit) if explicit else run.path(default)
    if not explicit and not path.exists():
        path = run.path("pmu.csv")
    if not path.exists():
        raise ConfigError(f"PMU file {path} not found; run 'simulate' first or pass --pmu")
    return PmuSeries.from_csv(path, run.cfg.system.consts.f0)


def cmd_identify(run: Run, series: PmuSeries | None = None) -> dict[str, IdentifiedModel]:
    cfg = run.cfg
    if series is None:
        series = _read_pmu(run, run.args.pmu, "pmu_identification.csv")
    lo, hi = cfg.scenario.identification_window
    series = series.window(lo, hi)
    pmu_cfg = cfg.pmu_config(run.no_noise)
    run.out.mkdir(parents=True, exist_ok=True)
    xi_true = assemble_xi([analytical_block(d) for d in cfg.system.ders])
    models = {}
    for kind in run.libraries:
        lib = cfg.library(kind, series.roster)
        mats = build_matrices(series, lib, config=pmu_cfg)
        t0 = time.perf_counter()
        model = stlsq(mats, cfg.stlsq, lib)
        elapsed = time.perf_counter() - t0
        run.timing(f"identify.{kind}", elapsed)
        log.info("identified %s model (%d x %d) in %.3f s", kind, *mats.theta.shape, elapsed)
        model.save(run.path(f"model_{kind}.json"))
        run.record(run.path(f"model_{kind}.json"))
        if kind == "analytical" and xi_true.shape == model.xi_hat.shape:
            rep = compare_coefficients(xi_true, model.xi_hat, model.target_labels)
            rep.to_csv(run.path("report_analytical.csv"))
            run.path("report_analytical.txt").write_text(rep.to_text())
            run.record(run.path("report_analytical.csv"))
            run.record(run.path("report_analytical.txt"))
        models[kind] = model
    return models


def _metrics_rows(name: str, res: OneStepResult, windows) -> list[list]:
    rows = []
    ders = sorted({s.split(".")[0] for s in res.states}, key=lambda n: int(n[3:]))
    for der in ders:
        for lo, hi in windows:
            w = res.window(lo, hi)
            pred, meas = w.frequency(der)
            m = error_metrics(pred, meas, w.time, res.cap_hz)
            div = "" if m["divergence_time"] is None else repr(lo + m["divergence_time"])
            rows.append([name, der, repr(lo), repr(hi), repr(m["rmse"]), repr(m["max_abs"]), div])
    return rows


def cmd_predict(run: Run, series: PmuSeries | None = None,
                models: dict[str, IdentifiedModel] | None = None) -> dict[str, OneStepResult]:
    cfg = run.cfg
    if series is None:
        series = _read_pmu(run, run.args.pmu, "pmu.csv")
    if models is None:
        paths = run.args.model or [str(run.path(f"model_{k}.json")) for k in run.libraries]
        models = {}
        for p in paths:
            if not Path(p).exists():
                raise ConfigError(f"model file {p} not found; run 'identify' first or pass --model")
            m = IdentifiedModel.load(p)
            models[m.library.kind if m.library.kind not in models else Path(p).stem] = m
    lo, hi = cfg.scenario.prediction_window
    if series.time[-1] < hi - 1e-9 or series.time[0] > lo + 1e-9:
        raise ConfigError(f"scenario.prediction_window: PMU series covers [{series.time[0]:.4g}, "
                          f"{series.time[-1]:.4g}] s only")
    run.out.mkdir(parents=True, exist_ok=True)
    results = {}
    t0 = time.perf_counter()
    for name, model in models.items():
        results[name] = one_step_series(model, series, cfg.cap_hz).window(lo, hi)
    run.timing("predict", time.perf_counter() - t0)
    ders = [d.name for d in series.roster]
    write_prediction_csv(run.path("prediction.csv"), results, ders)
    run.record(run.path("prediction.csv"))
    windows = [(lo, hi)]
    events = [m[0] for m in series.markers if lo < m[0] < hi]
    if events:
        windows.append((min(events), hi))
    with open(run.path("metrics.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "der", "t_start", "t_end", "rmse_hz", "max_abs_hz", "divergence_t"])
        for name, res in results.items():
            w.writerows(_metrics_rows(name, res, windows))
    run.record(run.path("metrics.csv"))
    if run.plots:
        first = next(iter(results.values()))
        shown = [d.name for d in series.roster if d.kind == "gfm"][:1] + \
                [d.name for d in series.roster if d.kind == "gfl"][:1]
        for der in shown:
            meas = first.frequency(der)[1]
            curves = [("measured", first.time, meas)]
            curves += [(name, r.time, r.frequency(der)[0]) for name, r in results.items()]
            ylim = (float(meas.min()) - cfg.cap_hz, float(meas.max()) + cfg.cap_hz)
            line_chart(run.path(f"prediction_{der}.svg"), curves,
                       title=f"One-step frequency prediction, {der}", xlabel="t (s)",
                       ylabel="f (Hz)", ylim=ylim)
            run.record(run.path(f"prediction_{der}.svg"))
    for name, res in results.items():
        for der in ders[:2]:
            pred, meas = res.frequency(der)
            m = error_metrics(pred, meas, res.time, cfg.cap_hz)
            log.info("%s %s: rmse %.4g Hz, divergence %s", name, der, m["rmse"],
                     "none" if m["divergence_time"] is None else f"+{m['divergence_time']:.3f} s")
    return results


def cmd_pipeline(run: Run):
    series = cmd_simulate(run)
    models = cmd_identify(run, series)
    if run.cfg.scenario.name == "validation":
        cmd_predict(run, series, models)


def cmd_report(run: Run) -> str:
    """Summarise a run directory: coefficient table and prediction metrics."""
    cfg = run.cfg
    parts = []
    xi_true = assemble_xi([analytical_block(d) for d in cfg.system.ders])
    paths = run.args.model or [str(run.path(f"model_{k}.json")) for k in run.libraries]
    found = False
    for p in paths:
        if not Path(p).exists():
            continue
        found = True
        model = IdentifiedModel.load(p)
        parts.append(f"== {Path(p).name}: {model.library.kind} library, "
                     f"{int(model.support.sum())} nonzero coefficients ==")
        if model.library.kind == "analytical" and model.xi_hat.shape == xi_true.shape:
            parts.append(compare_coefficients(xi_true, model.xi_hat, model.target_labels).to_text())
    metrics = run.path("metrics.csv")
    if metrics.exists():
        found = True
        parts.append("== prediction metrics (Hz) ==")
        parts.append(metrics.read_text())
    if not found:
        raise ConfigError(f"nothing to report in {run.out}")
    text = "\n".join(parts)
    run.path("summary.txt").write_text(text)
    return text


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (built-in defaults if omitted)")
    common.add_argument("--seed", type=int, help="master seed overriding the configuration")
    common.add_argument("--out", help="output directory overriding the configuration")
    common.add_argument("--no-noise", action="store_true", help="noiseless PMU measurements")
    common.add_argument("--library", choices=("analytical", "intuitive", "both"), default=None)
    common.add_argument("--no-plots", action="store_true", help="write CSV only, no SVG")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pcsindy", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate the scenario and emulate PMUs")
    s = sub.add_parser("identify", parents=[common], help="fit models on a PMU CSV")
    s.add_argument("--pmu", help="PMU CSV (default: <out>/pmu_identification.csv)")
    s = sub.add_parser("predict", parents=[common], help="one-step prediction on a PMU CSV")
    s.add_argument("--pmu", help="PMU CSV (default: <out>/pmu.csv)")
    s.add_argument("--model", action="append", help="model JSON, repeatable")
    sub.add_parser("pipeline", parents=[common], help="simulate, identify and predict")
    s = sub.add_parser("report", parents=[common], help="summarise a run directory")
    s.add_argument("--model", action="append", help="model JSON, repeatable")
    s = sub.add_parser("init-config", help="print the built-in configuration as YAML")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "init-config":
        sys.stdout.write(yaml.safe_dump(default_config_dict(), sort_keys=False))
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    for name in ("pmu", "model"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed: must be >= 0")
            cfg = replace(cfg, seed=args.seed)
        if args.library not in (None, "both") and args.library not in cfg.libraries:
            cfg = replace(cfg, libraries=cfg.libraries + (args.library,))
        run = Run(cfg, args)
        if args.command == "simulate":
            cmd_simulate(run)
        elif args.command == "identify":
            cmd_identify(run)
        elif args.command == "predict":
            cmd_predict(run)
        elif args.command == "pipeline":
            cmd_pipeline(run)
        else:
            sys.stdout.write(cmd_report(run))
            return EXIT_OK
        run.save_manifest()
    except (ConfigError, SchemaError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (PowerFlowError, SimulationError, ThresholdError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
