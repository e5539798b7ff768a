"""Candidate libraries, sequentially thresholded least squares and recovery metrics."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from pcsindy.der_models import GFL_LIBRARY, GFL_TARGETS, GFM_LIBRARY, GFM_TARGETS
from pcsindy.pmu import DerInfo, SnapshotMatrices

LIBRARY_KINDS = ("analytical", "intuitive")


class ThresholdError(ValueError):
    """Every candidate of a target was eliminated."""


def _der_info(d) -> DerInfo:
    return d if isinstance(d, DerInfo) else DerInfo(d.name, d.kind, d.bus_id)


@dataclass(frozen=True)
class Term:
    kind: str  # "const", "poly", "sin", "cos"
    variables: tuple[str, ...] = ()

    @property
    def label(self) -> str:
        if self.kind == "const":
            return "1"
        if self.kind == "poly":
            return "*".join(self.variables)
        return f"{self.kind}({self.variables[0]})"

    def evaluate(self, sig: Mapping[str, np.ndarray], n: int) -> np.ndarray:
        if self.kind == "const":
            return np.ones(n)
        if self.kind == "poly":
            out = np.ones(n)
            for v in self.variables:
                out = out * sig[v]
            return out
        x = sig[self.variables[0]]
        return np.sin(x) if self.kind == "sin" else np.cos(x)


def intuitive_variables(roster: Sequence[DerInfo], include_vq_int: bool = False) -> tuple[list[str], list[str]]:
    """Return ``(states, variables)``: angle/frequency states, then omega0, then inputs."""
    states = []
    for d in roster:
        states += [f"{d.name}.theta", f"{d.name}.omega"]
    inputs = []
    for d in roster:
        if d.kind == "gfm":
            inputs += [f"{d.name}.p", f"{d.name}.ps"]
        else:
            inputs.append(f"{d.name}.vq")
            if include_vq_int:
                inputs.append(f"{d.name}.vq_int")
    return states, states + ["omega0"] + inputs


def intuitive_terms(roster: Sequence[DerInfo], degree: int = 2, sinusoids: bool = True,
                    include_vq_int: bool = False) -> list[Term]:
    """Column order: constant, monomials by increasing degree, then sin/cos of each state."""
    if degree < 1:
        raise ValueError("polynomial degree must be >= 1")
    states, variables = intuitive_variables(roster, include_vq_int)
    terms = [Term("const")]
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(variables, deg):
            terms.append(Term("poly", combo))
    if sinusoids:
        terms += [Term("sin", (s,)) for s in states]
        terms += [Term("cos", (s,)) for s in states]
    return terms


def build_intuitive_library(sig: Mapping[str, np.ndarray], roster: Sequence, degree: int = 2,
                            sinusoids: bool = True, include_vq_int: bool = False,
                            check_rows: bool = True) -> tuple[np.ndarray, list[str]]:
    """Evaluate the polynomial/sinusoid benchmark library on measured signals.

    ``sig`` maps variable names (``gfm1.theta``, ``gfl2.vq``, ``omega0`` ...) to
    equally long arrays or scalars.
    """
    roster = [_der_info(d) for d in roster]
    terms = intuitive_terms(roster, degree, sinusoids, include_vq_int)
    sig = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in sig.items()}
    n = max(v.size for v in sig.values())
    if check_rows and len(terms) > n:
        raise ValueError(f"library too rich for window: {len(terms)} columns, {n} rows")
    theta = np.column_stack([t.evaluate(sig, n) for t in terms])
    return theta, [t.label for t in terms]


@dataclass(frozen=True)
class LibrarySpec:
    kind: str
    roster: tuple[DerInfo, ...]
    degree: int = 2
    sinusoids: bool = True
    include_vq_int: bool = False

    def __post_init__(self):
        if self.kind not in LIBRARY_KINDS:
            raise ValueError(f"library kind must be one of {LIBRARY_KINDS}")
        if self.kind == "intuitive" and self.degree < 1:
            raise ValueError("polynomial degree must be >= 1")
        object.__setattr__(self, "roster", tuple(sorted((_der_info(d) for d in self.roster),
                                                         key=lambda d: d.bus_id)))
        if not self.roster:
            raise ValueError("library roster is empty")

    @classmethod
    def analytical(cls, roster) -> "LibrarySpec":
        return cls("analytical", tuple(roster))

    @classmethod
    def intuitive(cls, roster, degree: int = 2, sinusoids: bool = True,
                  include_vq_int: bool = False) -> "LibrarySpec":
        return cls("intuitive", tuple(roster), degree, sinusoids, include_vq_int)

    def target_labels(self) -> list[str]:
        out = []
        for d in self.roster:
            out += [f"{d.name}.{t}" for t in (GFM_TARGETS if d.kind == "gfm" else GFL_TARGETS)]
        return out

    def terms(self) -> list[Term]:
        if self.kind == "analytical":
            out = []
            for d in self.roster:
                for c in (GFM_LIBRARY if d.kind == "gfm" else GFL_LIBRARY):
                    out.append(Term("poly", ("omega0",) if c == "omega0" else (f"{d.name}.{c}",)))
            return out
        return intuitive_terms(self.roster, self.degree, self.sinusoids, self.include_vq_int)

    def column_labels(self) -> list[str]:
        if self.kind == "analytical":
            out = []
            for d in self.roster:
                out += [f"{d.name}.{c}" for c in (GFM_LIBRARY if d.kind == "gfm" else GFL_LIBRARY)]
            return out
        return [t.label for t in self.terms()]

    def evaluate(self, sig: Mapping[str, np.ndarray]) -> np.ndarray:
        sig = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in sig.items()}
        n = max(v.size for v in sig.values())
        missing = sorted({v for t in self.terms() for v in t.variables if v not in sig})
        if missing:
            raise KeyError(f"missing channel(s): {', '.join(missing)}")
        return np.column_stack([t.evaluate(sig, n) * np.ones(n) for t in self.terms()])

    def allowed_mask(self) -> np.ndarray | None:
        """Per-DER block mask for the analytical library, ``None`` (all columns) otherwise."""
        if self.kind != "analytical":
            return None
        widths = [len(GFM_LIBRARY if d.kind == "gfm" else GFL_LIBRARY) for d in self.roster]
        heights = [len(GFM_TARGETS if d.kind == "gfm" else GFL_TARGETS) for d in self.roster]
        mask = np.zeros((sum(widths), sum(heights)), dtype=bool)
        r = c = 0
        for w, h in zip(widths, heights):
            mask[r:r + w, c:c + h] = True
            r += w
            c += h
        return mask

    def to_dict(self) -> dict:
        return {"kind": self.kind, "degree": self.degree, "sinusoids": self.sinusoids,
                "include_vq_int": self.include_vq_int,
                "roster": [{"name": d.name, "kind": d.kind, "bus_id": d.bus_id} for d in self.roster]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LibrarySpec":
        roster = tuple(DerInfo(r["name"], r["kind"], int(r["bus_id"])) for r in d["roster"])
        return cls(d["kind"], roster, int(d.get("degree", 2)), bool(d.get("sinusoids", True)),
                   bool(d.get("include_vq_int", False)))


@dataclass(frozen=True)
class StlsqConfig:
    threshold: float = 0.05
    max_iters: int = 20
    normalize_columns: bool = True
    ridge: float = 0.0

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("stlsq.threshold must be >= 0")
        if self.max_iters < 1:
            raise ValueError("stlsq.max_iters must be >= 1")
        if self.ridge < 0:
            raise ValueError("stlsq.ridge must be >= 0")


@dataclass
class IdentifiedModel:
    xi_hat: np.ndarray
    library: LibrarySpec
    column_labels: tuple[str, ...]
    target_labels: tuple[str, ...]
    config: StlsqConfig = field(default_factory=StlsqConfig)
    residual_norms: np.ndarray | None = None
    iterations: np.ndarray | None = None

    @property
    def support(self) -> np.ndarray:
        return self.xi_hat != 0.0

    def coefficient(self, column: str, target: str) -> float:
        return float(self.xi_hat[self.column_labels.index(column), self.target_labels.index(target)])

    def to_dict(self) -> dict:
        coeffs = {}
        for j, tgt in enumerate(self.target_labels):
            nz = {self.column_labels[i]: float(self.xi_hat[i, j])
                  for i in np.flatnonzero(self.xi_hat[:, j])}
            coeffs[tgt] = nz
        out = {
            "library": self.library.to_dict(),
            "stlsq": asdict(self.config),
            "targets": list(self.target_labels),
            "columns": list(self.column_labels),
            "coefficients": coeffs,
        }
        if self.residual_norms is not None:
            out["diagnostics"] = {
                "residual_norms": {t: float(r) for t, r in zip(self.target_labels, self.residual_norms)},
                "iterations": {t: int(k) for t, k in zip(self.target_labels, self.iterations)},
            }
        return out

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d: Mapping) -> "IdentifiedModel":
        lib = LibrarySpec.from_dict(d["library"])
        cols = tuple(d["columns"])
        tgts = tuple(d["targets"])
        if list(cols) != lib.column_labels() or list(tgts) != lib.target_labels():
            raise ValueError("model file labels do not match its library specification")
        xi = np.zeros((len(cols), len(tgts)))
        for j, t in enumerate(tgts):
            for c, v in d["coefficients"].get(t, {}).items():
                xi[cols.index(c), j] = float(v)
        diag = d.get("diagnostics")
        res = it = None
        if diag:
            res = np.array([diag["residual_norms"][t] for t in tgts])
            it = np.array([diag["iterations"][t] for t in tgts])
        return cls(xi, lib, cols, tgts, StlsqConfig(**d.get("stlsq", {})), res, it)

    @classmethod
    def load(cls, path) -> "IdentifiedModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _lstsq(a: np.ndarray, b: np.ndarray, ridge: float) -> np.ndarray:
    """Minimum-norm least squares, optionally Tikhonov-augmented."""
    if ridge > 0:
        k = a.shape[1]
        a = np.vstack([a, math.sqrt(ridge) * np.eye(k)])
        b = np.concatenate([b, np.zeros(k)])
    return np.linalg.lstsq(a, b, rcond=None)[0]


def stlsq_column(theta: np.ndarray, y: np.ndarray, config: StlsqConfig,
                 allowed: np.ndarray | None = None, name: str = "target") -> tuple[np.ndarray, int]:
    """Fit one target; returns the coefficient vector and the number of LS solves.

    Thresholding acts on coefficients of unit-RMS columns when
    ``normalize_columns`` is set, i.e. on each candidate's RMS contribution
    to the target.
    """
    p = theta.shape[1]
    active = np.ones(p, dtype=bool) if allowed is None else allowed.copy()
    if not active.any():
        raise ThresholdError(f"no candidate columns for {name}")
    scale = np.ones(p)
    y_scale = 1.0
    if config.normalize_columns:
        rms = np.sqrt(np.mean(theta**2, axis=0))
        scale = np.where(rms > 0, rms, 1.0)
        y_rms = math.sqrt(float(np.mean(y**2)))
        y_scale = y_rms if y_rms > 0 else 1.0
    a = theta / scale
    y = y / y_scale
    xi_n = np.zeros(p)
    solves = 0
    for _ in range(config.max_iters):
        xi_n[:] = 0.0
        xi_n[active] = _lstsq(a[:, active], y, config.ridge)
        solves += 1
        keep = active & (np.abs(xi_n) >= config.threshold)
        if not keep.any():
            raise ThresholdError(f"threshold too aggressive: every candidate of {name} eliminated")
        if np.array_equal(keep, active):
            break
        active = keep
    else:
        xi_n[~active] = 0.0
    xi_n[~active] = 0.0
    return xi_n * y_scale / scale, solves


def stlsq(matrices: SnapshotMatrices, config: StlsqConfig = StlsqConfig(),
          library: LibrarySpec | None = None) -> IdentifiedModel:
    """Sequentially thresholded least squares, one independent fit per target column."""
    theta, x_dot = matrices.theta, matrices.x_dot
    if not np.all(np.isfinite(theta)) or not np.all(np.isfinite(x_dot)):
        raise ValueError("snapshot matrices contain non-finite values")
    p, n = theta.shape[1], x_dot.shape[1]
    xi = np.zeros((p, n))
    iters = np.zeros(n, dtype=int)
    res = np.zeros(n)
    for j in range(n):
        allowed = None if matrices.allowed is None else matrices.allowed[:, j]
        xi[:, j], iters[j] = stlsq_column(theta, x_dot[:, j], config, allowed, matrices.target_labels[j])
        res[j] = np.linalg.norm(x_dot[:, j] - theta @ xi[:, j])
    if library is None:
        library = _placeholder_library(matrices)
    return IdentifiedModel(xi, library, matrices.column_labels, matrices.target_labels, config, res, iters)


def _placeholder_library(matrices: SnapshotMatrices) -> LibrarySpec | None:
    names = []
    for t in matrices.target_labels:
        der = t.split(".", 1)[0]
        if der not in names:
            names.append(der)
    try:
        from pcsindy.pmu import roster_from_names
        roster = roster_from_names(names)
    except ValueError:
        return None
    for kind in LIBRARY_KINDS:
        spec = LibrarySpec(kind, roster)
        if tuple(spec.column_labels()) == matrices.column_labels:
            return spec
    return None


@dataclass
class FitReport:
    target_labels: tuple[str, ...]
    rho: np.ndarray
    ratio: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    def rows(self) -> list[dict]:
        return [{"target": t, "rho": float(r), "ratio": float(q), "precision": float(pr),
                 "recall": float(rc)}
                for t, r, q, pr, rc in zip(self.target_labels, self.rho, self.ratio,
                                           self.precision, self.recall)]

    def to_csv(self, path):
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["target", "rho", "ratio", "precision", "recall"])
            for r in self.rows():
                w.writerow([r["target"], repr(r["rho"]), repr(r["ratio"]), repr(r["precision"]),
                            repr(r["recall"])])

    def to_text(self) -> str:
        width = max(len(t) for t in self.target_labels)
        lines = [f"{'target':<{width}}  {'rho':>7}  {'ratio':>7}  {'prec':>5}  {'recall':>6}"]
        for r in self.rows():
            lines.append(f"{r['target']:<{width}}  {r['rho']:7.4f}  {r['ratio']:7.4f}  "
                         f"{r['precision']:5.2f}  {r['recall']:6.2f}")
        return "\n".join(lines) + "\n"


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.linalg.norm(a) * np.linalg.norm(b)
    if den == 0:
        return 0.0
    return float(np.clip(a @ b / den, -1.0, 1.0))


def compare_coefficients(xi_true: np.ndarray, xi_hat: np.ndarray,
                         target_labels: Sequence[str] | None = None) -> FitReport:
    """Per-target Pearson correlation, norm ratio and support precision/recall."""
    xi_true = np.asarray(xi_true, dtype=float)
    xi_hat = np.asarray(xi_hat, dtype=float)
    if xi_true.shape != xi_hat.shape:
        raise ValueError(f"layout mismatch: {xi_true.shape} vs {xi_hat.shape}")
    n = xi_true.shape[1]
    labels = tuple(target_labels) if target_labels is not None else tuple(f"x{j}" for j in range(n))
    rho = np.array([_pearson(xi_true[:, j], xi_hat[:, j]) for j in range(n)])
    norms = np.linalg.norm(xi_true, axis=0)
    ratio = np.where(norms > 0, np.linalg.norm(xi_hat, axis=0) / np.where(norms > 0, norms, 1.0), np.nan)
    s_true = xi_true != 0
    s_hat = xi_hat != 0
    hits = (s_true & s_hat).sum(axis=0)
    n_hat = s_hat.sum(axis=0)
    n_true = s_true.sum(axis=0)
    precision = np.where(n_hat > 0, hits / np.maximum(n_hat, 1), 1.0)
    recall = np.where(n_true > 0, hits / np.maximum(n_true, 1), 1.0)
    return FitReport(labels, rho, ratio, precision, recall)
