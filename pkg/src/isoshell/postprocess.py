"""Compression-test curve analytics.

Machine-compliance-corrected modulus, normalized plateau stress over the
strain window [0.2, 0.4], energy-absorption efficiency with densification
onset, and specific energy absorption.  Integrals are trapezoidal; the
curves are sampled test data.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (InconsistentStiffness, InsufficientRange,
                     NonMonotoneSegmentWarning, SchemaError, ZeroStress)

PLATEAU_RANGE = (0.2, 0.4)


@dataclass
class CompressionCurve:
    """Sampled strain/stress pairs plus specimen metadata."""

    strain: np.ndarray
    stress: np.ndarray            # MPa
    height_mm: float = float("nan")
    area_mm2: float = float("nan")
    rho_bar: float = float("nan")
    direction: str = ""

    def __post_init__(self):
        self.strain = np.asarray(self.strain, dtype=float)
        self.stress = np.asarray(self.stress, dtype=float)
        if self.strain.shape != self.stress.shape or self.strain.ndim != 1:
            raise ValueError("strain/stress must be matching 1-D arrays")
        if len(self.strain) < 2:
            raise ValueError("curve needs at least two samples")
        if np.any(self.strain < 0):
            raise ValueError("strains must be non-negative")
        if not math.isnan(self.rho_bar) and not 0.0 < self.rho_bar < 1.0:
            raise ValueError("relative density must lie in (0, 1)")

    def sorted_unique(self):
        """Strains ascending, duplicate strains collapsed by stress average."""
        order = np.argsort(self.strain, kind="stable")
        e, s = self.strain[order], self.stress[order]
        uniq, inverse = np.unique(e, return_inverse=True)
        sums = np.zeros(len(uniq))
        counts = np.zeros(len(uniq))
        np.add.at(sums, inverse, s)
        np.add.at(counts, inverse, 1.0)
        return uniq, sums / counts


@dataclass
class SlopeEstimate:
    """Stress/strain slope from an unload-segment fit."""

    value: float                  # MPa
    window: tuple                 # strain interval used
    r2: float

    def __post_init__(self):
        if not 0.0 <= self.r2 <= 1.0 + 1e-12:
            raise ValueError("r^2 out of range")


def load_curve(path, height_mm=float("nan"), area_mm2=float("nan"),
               rho_bar=float("nan"), direction="") -> CompressionCurve:
    """Read a CSV with (strain, stress) or (displacement_mm, load_N) columns.

    Displacement/load tables are converted with strain = d/h and
    stress = P/A0.  Extra columns are ignored; duplicate strains are
    averaged; a decreasing strain run inside the loading segment only
    warns (unload branches are legitimate data).
    """
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file")
        rows = [row for row in reader if row and any(c.strip() for c in row)]
    cols = {name: i for i, name in enumerate(header)}

    def col(name):
        data = []
        for r in rows:
            try:
                data.append(float(r[cols[name]]))
            except (ValueError, IndexError) as exc:
                raise SchemaError(f"{path}: bad value in column {name!r}") from exc
        return np.asarray(data)

    if "strain" in cols and "stress" in cols:
        strain, stress = col("strain"), col("stress")
    elif "displacement_mm" in cols and "load_n" in cols:
        if math.isnan(height_mm) or math.isnan(area_mm2):
            raise SchemaError(
                f"{path}: displacement/load table needs height and area metadata")
        strain = col("displacement_mm") / height_mm
        stress = col("load_n") / area_mm2
    else:
        raise SchemaError(
            f"{path}: expected (strain, stress) or (displacement_mm, load_N) "
            f"columns, found {header}")

    if np.any(np.diff(strain) < 0):
        warnings.warn(f"{path}: strain decreases within the record",
                      NonMonotoneSegmentWarning, stacklevel=2)
    curve = CompressionCurve(strain, stress, height_mm=height_mm,
                             area_mm2=area_mm2, rho_bar=rho_bar,
                             direction=direction)
    curve.strain, curve.stress = curve.sorted_unique()
    return curve


def unload_slopes(x, y, min_points: int = 4, fit_fraction: float = 0.6):
    """Least-squares slopes of maximal decreasing-y runs (unload branches).

    Each run is fit over its middle ``fit_fraction``; returns a list of
    (slope, window, r2).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    drops = np.diff(y) < 0
    out = []
    i = 0
    n = len(x)
    while i < n - 1:
        if not drops[i]:
            i += 1
            continue
        j = i
        while j < n - 1 and drops[j]:
            j += 1
        seg = slice(i, j + 1)
        count = j + 1 - i
        if count >= min_points:
            trim = int(round(0.5 * (1.0 - fit_fraction) * count))
            lo, hi = i + trim, j + 1 - trim
            if hi - lo >= 2:
                xs, ys = x[lo:hi], y[lo:hi]
                A = np.vstack([xs, np.ones_like(xs)]).T
                coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
                pred = A @ coef
                ss_res = float(np.sum((ys - pred) ** 2))
                ss_tot = float(np.sum((ys - ys.mean()) ** 2))
                r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
                out.append((float(coef[0]), (float(xs.min()), float(xs.max())), r2))
        i = j
    return out


def combined_slope(curve: CompressionCurve, min_points: int = 4) -> SlopeEstimate:
    """Mean unload slope of a stress-strain record, as a SlopeEstimate."""
    segs = unload_slopes(curve.strain, curve.stress, min_points=min_points)
    if not segs:
        raise InsufficientRange("no unload segments found")
    slopes = [abs(s) for s, _, _ in segs]
    lo = min(w[0] for _, w, _ in segs)
    hi = max(w[1] for _, w, _ in segs)
    r2 = float(np.mean([r for _, _, r in segs]))
    return SlopeEstimate(value=float(np.mean(slopes)), window=(lo, hi), r2=r2)


def corrected_modulus(k_ms, k_m: float, height_mm: float, area_mm2: float) -> float:
    """Series-compliance-corrected Young's modulus, MPa.

    ``k_ms`` is the combined specimen+machine stress/strain slope (MPa,
    SlopeEstimate or float); ``k_m`` the machine load/displacement stiffness
    (N/mm; pass math.inf for a rigid machine).
    """
    slope = k_ms.value if hasattr(k_ms, "value") else float(k_ms)
    if slope <= 0:
        raise ValueError("combined slope must be positive")
    if math.isinf(k_m):
        return slope
    denom = height_mm * k_m - area_mm2 * slope
    if denom <= 0:
        raise InconsistentStiffness(
            f"machine stiffness {k_m} N/mm is at or below the series limit "
            f"{area_mm2 * slope / height_mm:.6g} N/mm implied by the slope")
    return height_mm * k_m * slope / denom


def _interp_sorted(e, s, at):
    return float(np.interp(at, e, s))


def plateau_stress(curve: CompressionCurve) -> float:
    """Average stress over strain [0.2, 0.4], normalized by relative density."""
    e, s = curve.sorted_unique()
    lo, hi = PLATEAU_RANGE
    if e[0] > lo + 1e-12 or e[-1] < hi - 1e-12:
        raise InsufficientRange(
            f"curve covers [{e[0]:.3f}, {e[-1]:.3f}], needs [{lo}, {hi}]")
    if math.isnan(curve.rho_bar):
        raise ValueError("plateau stress needs the relative density")
    inside = (e > lo) & (e < hi)
    xs = np.concatenate([[lo], e[inside], [hi]])
    ys = np.concatenate([[_interp_sorted(e, s, lo)], s[inside],
                         [_interp_sorted(e, s, hi)]])
    integral = float(np.trapezoid(ys, xs))
    return integral / (hi - lo) / curve.rho_bar


def efficiency_and_densification(curve: CompressionCurve):
    """Energy-absorption efficiency curve and densification strain.

    Efficiency at strain e is the absorbed energy integral up to e divided
    by the stress there; the densification strain is the first maximizer.
    Returns (strain grid, efficiency samples, densification strain).
    """
    e, s = curve.sorted_unique()
    if np.any(s[1:] <= 0):
        raise ZeroStress("stress must be positive beyond the first sample")
    absorbed = np.concatenate([[0.0], np.cumsum(
        0.5 * (s[1:] + s[:-1]) * np.diff(e))])
    eta = np.zeros_like(e)
    eta[1:] = absorbed[1:] / s[1:]
    eta[0] = 0.0
    best = int(np.argmax(eta))          # argmax takes the first maximum
    return e, eta, float(e[best])


def specific_energy_absorption(curve: CompressionCurve, eps_d: float) -> float:
    """Absorbed energy per relative density up to the densification strain."""
    e, s = curve.sorted_unique()
    if eps_d < e[0] - 1e-12 or eps_d > e[-1] + 1e-12:
        raise InsufficientRange(
            f"densification strain {eps_d} outside curve range")
    if math.isnan(curve.rho_bar):
        raise ValueError("specific energy absorption needs the relative density")
    inside = e < eps_d
    xs = np.concatenate([e[inside], [eps_d]])
    ys = np.concatenate([s[inside], [_interp_sorted(e, s, eps_d)]])
    return float(np.trapezoid(ys, xs)) / curve.rho_bar


@dataclass
class CurveReport:
    direction: str
    plateau_stress: float | None = None
    densification_strain: float | None = None
    sea: float | None = None
    modulus: float | None = None
    extras: dict = field(default_factory=dict)


def analyze_curve(curve: CompressionCurve, k_m: float | None = None) -> CurveReport:
    """Full single-curve report; modulus only when k_m is given."""
    report = CurveReport(direction=curve.direction)
    try:
        report.plateau_stress = plateau_stress(curve)
    except (InsufficientRange, ValueError):
        pass
    try:
        _, _, eps_d = efficiency_and_densification(curve)
        report.densification_strain = eps_d
        report.sea = specific_energy_absorption(curve, eps_d)
    except (ZeroStress, InsufficientRange, ValueError):
        pass
    if k_m is not None:
        slope = combined_slope(curve)
        report.modulus = corrected_modulus(slope, k_m, curve.height_mm,
                                           curve.area_mm2)
        report.extras["combined_slope_mpa"] = slope.value
        report.extras["fit_r2"] = slope.r2
    return report


def anisotropy_summary(reports) -> dict:
    """Max/min ratios of modulus, plateau stress and SEA across directions."""
    if len(reports) < 2:
        raise ValueError("need at least two directions")
    out = {}
    for name, attr in (("modulus", "modulus"),
                       ("plateau_stress", "plateau_stress"),
                       ("sea", "sea")):
        vals = [getattr(r, attr) for r in reports if getattr(r, attr) is not None]
        if len(vals) >= 2:
            out[f"{name}_ratio"] = max(vals) / min(vals)
    return out


def write_report(path, reports, summary=None):
    doc = {
        "curves": [
            {"direction": r.direction, "plateau_stress_mpa": r.plateau_stress,
             "densification_strain": r.densification_strain,
             "sea_mpa": r.sea, "modulus_mpa": r.modulus, **r.extras}
            for r in reports
        ],
        "anisotropy": summary or {},
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
    return doc
