"""Gridded maps of the effective mechanical parameters over a control plane.

Two planes are supported: the feedback plane ``(phi, g_fb)`` at the device
detuning and coupling, and the no-feedback plane ``(Delta, G)`` with the loop
open.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _io
from .cavity import feedback_mu
from .mech import mech_fields
from .params import PhysicalParams
from .stability import RegimeClass, classify_fields

__all__ = [
    "FIELD_NAMES",
    "GridSpec",
    "PlaneField",
    "LandscapeMap",
    "default_grid",
    "map_feedback_plane",
    "map_nofeedback_plane",
    "map_plane",
]

FIELD_NAMES = ("T", "Delta_m", "Gamma_m", "n_m", "kappa_eff")

PLANES = {"feedback": ("phi", "g_fb"), "nofeedback": ("Delta", "G")}


@dataclass(frozen=True)
class GridSpec:
    x_name: str
    y_name: str
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int = 400
    ny: int = 400

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("a grid needs at least 2 samples per axis")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("grid bounds must be strictly ordered")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.ny)

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)

    @property
    def widths(self) -> tuple[float, float]:
        return self.x_max - self.x_min, self.y_max - self.y_min


class PlaneField:
    """Continuous evaluation of all fields at arbitrary control points.

    Parameters
    ----------
    p : PhysicalParams
    plane : {"feedback", "nofeedback"}
    margin : float
        Stability margin passed to the regime classifier.
    """

    def __init__(self, p: PhysicalParams, plane: str, margin: float = 0.0):
        if plane not in PLANES:
            raise ValueError(f"unknown plane {plane!r}")
        self.p = p
        self.plane = plane
        self.margin = margin

    def raw(self, x, y) -> dict:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.plane == "feedback":
            return mech_fields(self.p, feedback_mu(self.p, g_fb=y, phi=x))
        return mech_fields(self.p, np.zeros(np.broadcast_shapes(x.shape, y.shape)), Delta=x, G=y)

    def __call__(self, x, y, regime: bool = True) -> dict:
        f = self.raw(x, y)
        out = {k: f[k] for k in FIELD_NAMES}
        if regime:
            flat = {k: np.atleast_1d(v).ravel() for k, v in f.items()}
            out["regime"] = classify_fields(self.p, flat, self.margin).reshape(np.shape(f["T"]))
        return out


def default_grid(p: PhysicalParams, plane: str, nx: int = 400, ny: int = 400) -> GridSpec:
    """Default window: full phase circle up to ``|mu| = 2 kappa``, or a red-detuned (Delta, G) box."""
    if plane == "feedback":
        g_max = 2 * p.kappa / (2 * math.sqrt(p.eta_d * p.kappa1 * p.kappa2))
        return GridSpec("phi", "g_fb", 0.0, 2 * math.pi, 0.0, g_max, nx, ny)
    if plane == "nofeedback":
        return GridSpec("Delta", "G", 0.0, 3.0, 0.0, 0.3, nx, ny)
    raise ValueError(f"unknown plane {plane!r}")


@dataclass
class LandscapeMap:
    """Fields and regime labels sampled on a grid.

    Arrays have shape ``(ny, nx)`` and are indexed ``[j, i]`` with ``j``
    along y.  Missing values (excluded cells) are NaN.  ``source``, when
    present, evaluates the same fields continuously and is used by the
    isoline refinement.
    """

    spec: GridSpec
    fields: dict[str, np.ndarray]
    regime: np.ndarray
    source: Callable | None = None
    provenance: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.fields[name]

    def evaluate(self, x, y, regime: bool = False) -> dict:
        if self.source is None:
            raise ValueError("this map has no continuous field source")
        return self.source(x, y, regime=regime)

    @classmethod
    def from_source(cls, spec: GridSpec, source: Callable, provenance: dict | None = None):
        """Sample ``source(x, y, regime=True)`` on the grid.

        ``source`` returns a mapping with the field arrays and a ``regime``
        code array; fields of unstable and degenerate cells are blanked.
        """
        X, Y = np.meshgrid(spec.x, spec.y)
        out = source(X, Y, regime=True)
        regime = np.asarray(out["regime"], dtype=np.int8)
        excluded = regime >= RegimeClass.UNSTABLE
        fields = {}
        for k in FIELD_NAMES:
            a = np.array(out.get(k, np.full(X.shape, np.nan)), dtype=float)
            a[excluded] = np.nan
            fields[k] = a
        return cls(spec, fields, regime, source, dict(provenance or {}))

    @classmethod
    def from_function(cls, spec: GridSpec, fn: Callable, regime_fn: Callable | None = None):
        """Map of synthetic fields.

        ``fn(x, y)`` returns a dict with any of the field names; cells are
        labelled by ``regime_fn(x, y)`` (all valid by default).
        """

        def source(x, y, regime=True):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            shape = np.broadcast_shapes(x.shape, y.shape)
            out = {k: np.broadcast_to(np.asarray(v, dtype=float), shape)
                   for k, v in fn(x, y).items()}
            if regime:
                r = (np.zeros(shape, np.int8) if regime_fn is None
                     else np.asarray(regime_fn(x, y), np.int8))
                out["regime"] = np.broadcast_to(r, shape)
            return out

        return cls.from_source(spec, source, {"source": "synthetic"})

    def counts(self) -> dict[str, int]:
        return {r.label: int(np.sum(self.regime == r)) for r in RegimeClass}

    # -- export -------------------------------------------------------------

    def _prov(self) -> dict:
        prov = dict(self.provenance)
        prov["grid"] = asdict(self.spec)
        return prov

    def to_csv(self, path: str | Path) -> Path:
        lines = [_io.csv_header(self._prov())]
        lines.append(",".join(("x", "y") + FIELD_NAMES + ("regime",)) + "\n")
        x, y = self.spec.x, self.spec.y
        labels = [RegimeClass(c).label for c in range(4)]
        for j in range(self.spec.ny):
            for i in range(self.spec.nx):
                vals = [_io.fmt(float(self.fields[k][j, i])) for k in FIELD_NAMES]
                lines.append(",".join([_io.fmt(float(x[i])), _io.fmt(float(y[j]))] + vals
                                      + [labels[self.regime[j, i]]]) + "\n")
        return _io.atomic_write(path, "".join(lines))

    @classmethod
    def from_csv(cls, path: str | Path) -> "LandscapeMap":
        prov, lines = _io.read_csv_header(Path(path).read_text().splitlines())
        spec = GridSpec(**prov.pop("grid"))
        cols = lines[0].split(",")
        rows = [ln.split(",") for ln in lines[1:] if ln]
        if len(rows) != spec.nx * spec.ny:
            raise ValueError("row count does not match the grid")
        fields = {}
        for k in FIELD_NAMES:
            c = cols.index(k)
            fields[k] = np.array([_io.parse(r[c]) for r in rows]).reshape(spec.ny, spec.nx)
        c = cols.index("regime")
        regime = np.array([RegimeClass.from_label(r[c]) for r in rows], np.int8)
        return cls(spec, fields, regime.reshape(spec.ny, spec.nx), None, prov)

    def to_json(self, path: str | Path) -> Path:
        doc = {
            "provenance": self._prov(),
            "fields": {k: [_io.json_value(v) for v in self.fields[k].ravel()] for k in FIELD_NAMES},
            "regime": [RegimeClass(c).label for c in self.regime.ravel()],
        }
        return _io.atomic_write(path, _io.dumps(doc))

    @classmethod
    def from_json(cls, path: str | Path) -> "LandscapeMap":
        doc = json.loads(Path(path).read_text())
        prov = doc["provenance"]
        spec = GridSpec(**prov.pop("grid"))
        shape = (spec.ny, spec.nx)
        fields = {k: np.array([math.nan if v is None else v for v in doc["fields"][k]],
                              dtype=float).reshape(shape) for k in FIELD_NAMES}
        regime = np.array([RegimeClass.from_label(s) for s in doc["regime"]], np.int8)
        return cls(spec, fields, regime.reshape(shape), None, prov)


def map_plane(p: PhysicalParams, plane: str, spec: GridSpec | None = None,
              margin: float = 0.0, provenance: dict | None = None) -> LandscapeMap:
    spec = default_grid(p, plane) if spec is None else spec
    prov = _io.provenance(plane=plane, params=asdict(p), margin=margin, **(provenance or {}))
    return LandscapeMap.from_source(spec, PlaneField(p, plane, margin), prov)


def map_feedback_plane(p: PhysicalParams, spec: GridSpec | None = None,
                       margin: float = 0.0, **kw) -> LandscapeMap:
    """Fields over ``(phi, g_fb)``; ``spec`` defaults to :func:`default_grid`."""
    return map_plane(p, "feedback", spec, margin, **kw)


def map_nofeedback_plane(p: PhysicalParams, spec: GridSpec | None = None,
                         margin: float = 0.0, **kw) -> LandscapeMap:
    """Fields over ``(Delta, G)`` with the feedback loop open."""
    return map_plane(p, "nofeedback", spec, margin, **kw)
