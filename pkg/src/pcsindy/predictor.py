"""Identified-model evaluation, one-step-ahead Euler prediction and error metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from pcsindy.pmu import PmuSeries, _labels, estimate_derivatives, signals
from pcsindy.sindy import IdentifiedModel

DEFAULT_CAP_HZ = 1.0

_STATE_OF_TARGET = {"theta_dot": "theta", "omega_dot": "omega", "omega_ddot": "omega_dot"}


def state_of(target: str) -> str:
    """State label integrated by a target derivative (``gfl2.omega_ddot`` -> ``gfl2.omega_dot``)."""
    der, q = target.split(".", 1)
    try:
        return f"{der}.{_STATE_OF_TARGET[q]}"
    except KeyError:
        raise ValueError(f"unknown target {target!r}") from None


def model_states(model: IdentifiedModel) -> list[str]:
    return [state_of(t) for t in model.target_labels]


def evaluate_model(model: IdentifiedModel, row: Mapping[str, float | np.ndarray]) -> np.ndarray:
    """Predicted derivatives ``Theta(x, u) @ Xi`` for one row or a batch of rows.

    ``row`` maps library variables (``gfm1.omega``, ``gfl2.vq``, ``omega0`` ...)
    to scalars or equally long arrays. Returns shape ``(N,)`` for scalar input
    and ``(M, N)`` otherwise.
    """
    scalar = all(np.ndim(v) == 0 for v in row.values())
    theta = model.library.evaluate(row)
    out = theta @ model.xi_hat
    return out[0] if scalar else out


def predict_step(x: np.ndarray, x_dot_hat: np.ndarray, dt: float) -> np.ndarray:
    """Forward Euler: ``x + dt * x_dot_hat``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return np.asarray(x, dtype=float) + dt * np.asarray(x_dot_hat, dtype=float)


def measured_signals(series: PmuSeries, causal: bool = True, method: str = "central-difference",
                     smoothing_window: int = 1) -> dict[str, np.ndarray]:
    """Library variables plus derivative estimates; causal by default (no look-ahead)."""
    deriv = estimate_derivatives(series, method, smoothing_window, causal=causal)
    return signals(series, deriv)


@dataclass
class OneStepResult:
    """One-step-ahead predictions; row ``k`` predicts instant ``time[k]`` from ``time[k-1]``."""

    time: np.ndarray
    states: tuple[str, ...]
    predicted: np.ndarray
    measured: np.ndarray
    cap_hz: float = DEFAULT_CAP_HZ
    markers: list[tuple[float, str]] = field(default_factory=list)

    def column(self, state: str) -> int:
        return self.states.index(state)

    def frequency(self, der: str) -> tuple[np.ndarray, np.ndarray]:
        """``(predicted, measured)`` frequency of ``der`` in Hz."""
        j = self.column(f"{der}.omega")
        return self.predicted[:, j] / (2 * math.pi), self.measured[:, j] / (2 * math.pi)

    def frequency_error(self, der: str) -> np.ndarray:
        pred, meas = self.frequency(der)
        return pred - meas

    def diverged(self, der: str) -> np.ndarray:
        return ~(np.abs(self.frequency_error(der)) <= self.cap_hz)

    def window(self, t_start: float, t_end: float) -> "OneStepResult":
        sel = (self.time >= t_start - 1e-9) & (self.time <= t_end + 1e-9)
        return OneStepResult(self.time[sel], self.states, self.predicted[sel], self.measured[sel],
                             self.cap_hz, [m for m in self.markers if t_start <= m[0] <= t_end])


def one_step_series(model: IdentifiedModel, series: PmuSeries, cap_hz: float = DEFAULT_CAP_HZ,
                    method: str = "central-difference", smoothing_window: int = 1) -> OneStepResult:
    """Predict every report instant from the measurement one period earlier.

    Predictions are re-anchored on measured states at each step and use
    causal derivative estimates, so the prediction for ``t`` depends only on
    samples up to ``t - dt``.
    """
    sig = measured_signals(series, True, method, smoothing_window)
    states = model_states(model)
    missing = [s for s in states if s not in sig]
    if missing:
        raise KeyError(f"missing channel(s): {', '.join(missing)}")
    x = np.column_stack([sig[s] for s in states])
    with np.errstate(over="ignore", invalid="ignore"):
        x_dot = evaluate_model(model, sig)
        pred = predict_step(x[:-1], x_dot[:-1], series.dt)
    return OneStepResult(series.time[1:], tuple(states), pred, x[1:], cap_hz, list(series.markers))


@dataclass
class Rollout:
    time: np.ndarray
    states: tuple[str, ...]
    values: np.ndarray
    diverged_at: float | None = None


def rollout(model: IdentifiedModel, x0: Mapping[str, float], inputs: Mapping[str, np.ndarray],
            time: np.ndarray, horizon: int) -> Rollout:
    """Free-running Euler integration of the identified model.

    States are fed back from the prediction; every other library variable
    (``omega0``, ``p``, ``ps``, ``vq`` ...) is read from ``inputs`` at the
    current instant. Stops early, marking the time, if the state overflows.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    time = np.asarray(time, dtype=float)
    if time.size < horizon + 1:
        raise ValueError("inputs do not cover the horizon")
    states = model_states(model)
    x = np.array([float(x0[s]) for s in states])
    out = np.empty((horizon + 1, len(states)))
    out[0] = x
    diverged_at = None
    k_end = horizon
    for k in range(horizon):
        row = {name: np.asarray(v)[k] for name, v in inputs.items()}
        row.update(zip(states, x))
        with np.errstate(over="ignore", invalid="ignore"):
            x = predict_step(x, evaluate_model(model, row), time[k + 1] - time[k])
        out[k + 1] = x
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e12:
            diverged_at = float(time[k + 1])
            k_end = k + 1
            break
    return Rollout(time[:k_end + 1], tuple(states), out[:k_end + 1], diverged_at)


def error_metrics(predicted: np.ndarray, measured: np.ndarray, time: np.ndarray | None = None,
                  cap: float = DEFAULT_CAP_HZ) -> dict:
    """RMSE, max absolute error and first cap crossing (seconds from window start)."""
    predicted = np.asarray(predicted, dtype=float)
    measured = np.asarray(measured, dtype=float)
    if predicted.shape != measured.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {measured.shape}")
    err = predicted - measured
    with np.errstate(over="ignore", invalid="ignore"):
        rmse = float(np.sqrt(np.mean(err**2))) if err.size else 0.0
    max_abs = float(np.max(np.abs(err))) if err.size else 0.0
    bad = np.flatnonzero(~(np.abs(err) <= cap))
    div = None
    if bad.size:
        k = int(bad[0])
        div = float(time[k] - time[0]) if time is not None else float(k)
    return {"rmse": rmse if math.isfinite(rmse) else math.inf,
            "max_abs": max_abs if math.isfinite(max_abs) else math.inf,
            "divergence_time": div}


def write_prediction_csv(path, results: Mapping[str, OneStepResult], ders: Sequence[str]):
    """Measured and predicted frequencies (Hz) with errors, one block of columns per model."""
    names = list(results)
    first = results[names[0]]
    for r in results.values():
        if not np.array_equal(r.time, first.time):
            raise ValueError("prediction results are not aligned in time")
    header = ["t", "event"]
    cols = []
    for der in ders:
        header.append(f"{der}.f_measured")
        cols.append(first.frequency(der)[1])
        for name in names:
            pred = results[name].frequency(der)[0]
            header += [f"{der}.f_{name}", f"{der}.err_{name}", f"{der}.diverged_{name}"]
            cols += [pred, results[name].frequency_error(der), results[name].diverged(der)]
    labels = _labels(first.time, first.markers)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(first.time.size):
            row = [repr(float(first.time[i])), labels[i]]
            for c in cols:
                v = c[i]
                row.append(str(int(v)) if c.dtype == bool else repr(float(v)))
            w.writerow(row)
