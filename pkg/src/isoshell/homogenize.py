"""Strain-energy homogenization of the eighth cell into cubic elasticity.

Three displacement-controlled unit-strain cases (uniaxial, hydrostatic,
shear) give the constants via their total strain energies:

    c11 = 2 e_U / V,   c12 = (e_T / 3 - e_U) / V,   c44 = 2 e_S / V

with the hydrostatic case doubling as a cross-check of c11 + 2 c12 against
the uniaxial end-face stresses.  Derived moduli, the Zener index, direction
dependent stiffness and Hashin-Shtrikman upper bounds live here too.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConsistencyFailure, DegenerateConstants, UnstableTensor
from .geometry import CellSpec, TriMesh, relative_density
from .shellfea import LOAD_CASES, LoadCaseSolution, Material, ShellModel

CROSS_CHECK_RTOL = 1e-5
HILL_RTOL = 1e-5


@dataclass(frozen=True)
class ElasticConstants:
    """Cubic triple in MPa plus the analysis-box volume used to extract it."""

    c11: float
    c12: float
    c44: float
    V: float

    def stable(self) -> bool:
        return (self.c11 + 2 * self.c12 > 0 and self.c11 - self.c12 > 0
                and self.c44 > 0)


@dataclass
class ModuliReport:
    """Engineering moduli with normalizations by (relative density * E_s)."""

    zener: float
    poisson: float
    E: float
    G: float
    K: float
    E_norm: float
    G_norm: float
    K_norm: float
    rho_bar: float

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2)

    def csv_row(self):
        d = asdict(self)
        return list(d.keys()), [d[k] for k in d]

    @staticmethod
    def write_csv(path, reports, labels=None):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            header, _ = reports[0].csv_row()
            w.writerow((["label"] if labels else []) + header)
            for i, r in enumerate(reports):
                _, row = r.csv_row()
                w.writerow(([labels[i]] if labels else []) + row)


@dataclass
class HomogenizationResult:
    constants: ElasticConstants
    solutions: dict                      # kind -> LoadCaseSolution
    rho_bar: float
    cross_check_rel: float               # hydrostatic vs uniaxial c11+2c12
    hill_rel: float                      # worst end-face vs volume-average stress

    @property
    def zener(self) -> float:
        return zener(self.constants)


def constants_from_energies(e_u: float, e_t: float, e_s: float,
                            volume: float) -> ElasticConstants:
    return ElasticConstants(
        c11=2.0 * e_u / volume,
        c12=(e_t / 3.0 - e_u) / volume,
        c44=2.0 * e_s / volume,
        V=volume,
    )


def _hill_residual(sol: LoadCaseSolution, scale: float) -> float:
    """Worst relative gap between reaction-average and volume-average stress."""
    worst = 0.0
    for c in range(6):
        macro, micro = sol.sigma_macro[c], sol.sigma_micro_avg[c]
        if max(abs(macro), abs(micro)) < 1e-8 * scale:
            continue
        if sol.case.kind in ("U", "T") and c >= 3:
            continue      # shear reactions not prescribed in these cases
        if sol.case.kind == "S" and c != 4:
            continue
        worst = max(worst, abs(macro - micro) / max(abs(macro), abs(micro)))
    return worst


def run_homogenization(mesh: TriMesh, thickness, mat: Material,
                       spec: CellSpec | None = None,
                       model: ShellModel | None = None,
                       check_condition: bool = False) -> HomogenizationResult:
    """Solve the three unit-strain cases and extract the cubic constants.

    Raises ConsistencyFailure when the hydrostatic cross-check or the Hill
    stress agreement exceeds 1e-5 relative.
    """
    delta = np.asarray(getattr(thickness, "delta", thickness), dtype=float)
    if delta.ndim == 0:
        delta = np.full(mesh.n_triangles, float(delta))
    if spec is None:
        spec = CellSpec(size_mm=float(2.0 * (mesh.box_hi[0] - mesh.box_lo[0])),
                        domain="eighth")
    if model is None:
        model = ShellModel(mesh, mat, spec)
    sols = model.solve_cases(delta, [LOAD_CASES[k] for k in "UTS"],
                             check_condition=check_condition)
    volume = sols["U"].volume
    const = constants_from_energies(sols["U"].e_total, sols["T"].e_total,
                                    sols["S"].e_total, volume)

    trace_t = float(sols["T"].sigma_macro[0])
    trace_u = float(sols["U"].sigma_macro[:3].sum())
    denom = max(abs(trace_t), abs(trace_u), 1e-300)
    cross = abs(trace_t - trace_u) / denom
    if cross > CROSS_CHECK_RTOL:
        raise ConsistencyFailure(
            f"hydrostatic/uniaxial cross-check failed: c11+2c12 differs by "
            f"{cross:.3e} relative")

    hill = max(_hill_residual(s, abs(const.c11)) for s in sols.values())
    if hill > HILL_RTOL:
        raise ConsistencyFailure(
            f"end-face vs volume-average stress disagree by {hill:.3e} relative")

    rho = relative_density(mesh, delta, spec)
    return HomogenizationResult(constants=const, solutions=sols, rho_bar=rho,
                                cross_check_rel=cross, hill_rel=hill)


def zener(c: ElasticConstants) -> float:
    """Anisotropy index 2 c44 / (c11 - c12); 1 means elastic isotropy."""
    if abs(c.c11 - c.c12) < 1e-12 * abs(c.c11):
        raise DegenerateConstants("c11 == c12; Zener index undefined")
    return 2.0 * c.c44 / (c.c11 - c.c12)


def engineering_moduli(c: ElasticConstants, rho_bar: float,
                       mat: Material) -> ModuliReport:
    """Cube-axis Young's, shear and bulk moduli plus density normalizations."""
    if not c.stable():
        raise UnstableTensor(
            f"constants violate stability: c11={c.c11:.4g} c12={c.c12:.4g} "
            f"c44={c.c44:.4g}")
    K = (c.c11 + 2.0 * c.c12) / 3.0
    G = c.c44
    E = (c.c11 - c.c12) * (c.c11 + 2.0 * c.c12) / (c.c11 + c.c12)
    nu = c.c12 / (c.c11 + c.c12)
    norm = rho_bar * mat.E_s
    return ModuliReport(zener=zener(c), poisson=nu, E=E, G=G, K=K,
                        E_norm=E / norm, G_norm=G / norm, K_norm=K / norm,
                        rho_bar=rho_bar)


def compliances(c: ElasticConstants):
    """Cubic compliance triple (S11, S12, S44)."""
    if not c.stable():
        raise UnstableTensor("cannot invert an unstable tensor")
    det = (c.c11 - c.c12) * (c.c11 + 2.0 * c.c12)
    s11 = (c.c11 + c.c12) / det
    s12 = -c.c12 / det
    s44 = 1.0 / c.c44
    return s11, s12, s44


def directional_young(c: ElasticConstants, n) -> float:
    """Young's modulus along a unit direction from cubic compliance rotation."""
    n = np.asarray(n, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    s11, s12, s44 = compliances(c)
    gamma = (n[0] ** 2 * n[1] ** 2 + n[1] ** 2 * n[2] ** 2
             + n[2] ** 2 * n[0] ** 2)
    inv_e = s11 - 2.0 * (s11 - s12 - 0.5 * s44) * gamma
    return 1.0 / inv_e


def hs_upper_bounds(rho_bar: float, mat: Material):
    """Hashin-Shtrikman upper bounds (E, G, K) of a solid/void mix, in MPa.

    Exact two-phase forms, valid at any density; the Young's bound follows
    from the (K, G) pair.
    """
    if not 0.0 < rho_bar <= 1.0:
        raise ValueError("relative density must lie in (0, 1]")
    E, nu = mat.E_s, mat.nu_s
    Ks = E / (3.0 * (1.0 - 2.0 * nu))
    Gs = E / (2.0 * (1.0 + nu))
    K_hsu = 4.0 * Gs * Ks * rho_bar / (4.0 * Gs + 3.0 * Ks * (1.0 - rho_bar))
    if rho_bar == 1.0:
        G_hsu = Gs
    else:
        beta = 6.0 * (Ks + 2.0 * Gs) / (5.0 * Gs * (3.0 * Ks + 4.0 * Gs))
        G_hsu = Gs + (1.0 - rho_bar) / (-1.0 / Gs + beta * rho_bar)
    E_hsu = 9.0 * K_hsu * G_hsu / (3.0 * K_hsu + G_hsu) if K_hsu > 0 else 0.0
    return E_hsu, G_hsu, K_hsu
