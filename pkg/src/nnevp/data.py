"""Digitized stress-strain curves: parsing, shape-preserving interpolation
onto solver grids, dataset manifests and CSV output.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy.interpolate import PchipInterpolator

from .solver import Curve, LoadingProgram

MIN_POINTS = 4


class CurveFormatError(ValueError):
    pass


class InsufficientData(CurveFormatError):
    pass


@dataclass
class RawCurve:
    strain: np.ndarray
    stress: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.strain = np.asarray(self.strain, dtype=float)
        self.stress = np.asarray(self.stress, dtype=float)
        if self.strain.shape != self.stress.shape:
            raise CurveFormatError("strain and stress columns differ in length")

    def __len__(self):
        return len(self.strain)

    @property
    def grain_size(self) -> float | None:
        v = self.meta.get("grain_size_um")
        return None if v is None else float(v)

    @property
    def strain_rate(self) -> float | None:
        v = self.meta.get("strain_rate")
        return None if v is None else float(v)


def _clean(strain: np.ndarray, stress: np.ndarray):
    """Sort by strain and average the stresses of duplicate strains."""
    order = np.argsort(strain, kind="stable")
    s, t = strain[order], stress[order]
    uniq, inv = np.unique(s, return_inverse=True)
    sums = np.zeros(len(uniq))
    counts = np.zeros(len(uniq))
    np.add.at(sums, inv, t)
    np.add.at(counts, inv, 1.0)
    return uniq, sums / counts


def parse_curve_csv(path) -> RawCurve:
    """Read ``strain,stress_mpa`` rows, with optional ``# key: value`` lines."""
    meta = {}
    strain, stress = [], []
    ncols = 2
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                key, sep, val = text[1:].partition(":")
                if sep:
                    meta[key.strip()] = _meta_value(val.strip())
                continue
            parts = [p.strip() for p in text.split(",")]
            if parts[:2] == ["strain", "stress_mpa"]:
                # solver output carries extra columns; only the first two are read
                ncols = len(parts)
                continue
            if len(parts) != ncols:
                raise CurveFormatError(f"{path}: line {lineno}: expected {ncols} columns, got {len(parts)}")
            try:
                e, s = float(parts[0]), float(parts[1])
            except ValueError:
                raise CurveFormatError(f"{path}: line {lineno}: non-numeric value in {text!r}") from None
            if not (np.isfinite(e) and np.isfinite(s)):
                raise CurveFormatError(f"{path}: line {lineno}: non-finite value")
            strain.append(e)
            stress.append(s)
    e, s = _clean(np.array(strain), np.array(stress))
    if len(e) < MIN_POINTS:
        raise InsufficientData(f"{path}: {len(e)} distinct points, need at least {MIN_POINTS}")
    return RawCurve(e, s, meta)


def _meta_value(text: str):
    try:
        return float(text) if any(c in text for c in ".eE") else int(text)
    except ValueError:
        return text


def write_curve_csv(raw: RawCurve, path):
    with open(path, "w") as fh:
        for k, v in raw.meta.items():
            fh.write(f"# {k}: {v}\n")
        fh.write("strain,stress_mpa\n")
        for e, s in zip(raw.strain, raw.stress):
            fh.write(f"{float(e)!r},{float(s)!r}\n")


@dataclass
class Interpolant:
    """Monotone piecewise cubic Hermite interpolant with linear extension.

    Outside the data range the boundary value is continued with the boundary
    slope and the evaluation is flagged.
    """

    strain: np.ndarray
    stress: np.ndarray

    def __post_init__(self):
        if len(self.strain) < MIN_POINTS:
            raise InsufficientData(f"need at least {MIN_POINTS} points")
        if np.any(np.diff(self.strain) <= 0.0):
            raise CurveFormatError("strains must be strictly increasing")
        self._pchip = PchipInterpolator(self.strain, self.stress, extrapolate=False)
        self._dpchip = self._pchip.derivative()

    def __call__(self, x):
        return self.evaluate(x)[0]

    def evaluate(self, x):
        """Values and a boolean array marking extrapolated points."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo, hi = self.strain[0], self.strain[-1]
        below, above = x < lo, x > hi
        inside = ~(below | above)
        y = np.empty_like(x)
        y[inside] = self._pchip(x[inside])
        # exact data values at breakpoints
        idx = np.searchsorted(self.strain, x[inside])
        hit = idx < len(self.strain)
        hit[hit] &= self.strain[idx[hit]] == x[inside][hit]
        yi = y[inside]
        yi[hit] = self.stress[idx[hit]]
        y[inside] = yi
        if below.any():
            y[below] = self.stress[0] + float(self._dpchip(lo)) * (x[below] - lo)
        if above.any():
            y[above] = self.stress[-1] + float(self._dpchip(hi)) * (x[above] - hi)
        return y, below | above


def fit_interpolant(raw: RawCurve) -> Interpolant:
    return Interpolant(raw.strain, raw.stress)


def resample_to_grid(interp: Interpolant, program: LoadingProgram):
    """Target curve on the accepted-step grid of ``program``; also returns the
    extrapolation flags."""
    strains = program.strains()
    stress, flags = interp.evaluate(strains)
    return Curve(strains, stress, program.times()), flags


# ---------------------------------------------------------------- manifest
@dataclass
class ManifestEntry:
    path: str
    grain_size_um: float | None = None
    name: str = ""


def read_manifest(path) -> list:
    """YAML list of ``{file, grain_size_um, name}`` entries; paths are relative
    to the manifest."""
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or not isinstance(doc.get("curves"), list):
        raise CurveFormatError(f"{path}: manifest needs a 'curves' list")
    base = os.path.dirname(os.path.abspath(path))
    out = []
    for i, item in enumerate(doc["curves"]):
        if not isinstance(item, dict) or "file" not in item:
            raise CurveFormatError(f"{path}: entry {i} has no 'file'")
        unknown = set(item) - {"file", "grain_size_um", "name"}
        if unknown:
            raise CurveFormatError(f"{path}: entry {i}: unknown keys {sorted(unknown)}")
        g = item.get("grain_size_um")
        if g is not None and not float(g) > 0.0:
            raise CurveFormatError(f"{path}: entry {i}: grain size must be positive")
        out.append(ManifestEntry(os.path.join(base, item["file"]),
                                 None if g is None else float(g),
                                 str(item.get("name", os.path.basename(item["file"])))))
    if not out:
        raise CurveFormatError(f"{path}: empty manifest")
    return out


def write_manifest(entries, path):
    base = os.path.dirname(os.path.abspath(path))
    doc = {"curves": []}
    for e in entries:
        item = {"file": os.path.relpath(os.path.abspath(e.path), base), "name": e.name}
        if e.grain_size_um is not None:
            item["grain_size_um"] = float(e.grain_size_um)
        doc["curves"].append(item)
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
