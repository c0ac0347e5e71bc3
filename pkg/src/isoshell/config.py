"""Run configuration: JSON file plus command-line overrides.

Every command resolves its configuration fully and writes the result next
to its outputs, so a run can be reproduced from its output directory alone.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import (CellSpec, ImplicitSurface, mesh_fundamental_unit,
                       mirror_expand, preset_surface, surface_from_term_list,
                       tile)
from .optimize import OptimizerConfig, ThicknessField
from .shellfea import Material


@dataclass
class RunConfig:
    surface_preset: str | None = "iwp"
    surface_terms: list | None = None
    surface_name: str = "custom"
    cell_size_mm: float = 2.0
    tile_counts: tuple = (1, 1, 1)
    resolution: int = 48
    min_edge_fraction: float = 0.2
    youngs_mpa: float = 190000.0
    poisson: float = 0.3
    thickness_initial_mm: float | None = None     # default: cell/50
    thickness_min_mm: float | None = None         # default: cell/100
    thickness_max_mm: float | None = None         # default: cell/20
    tolerance: float = 0.01
    max_iters: int = 500
    move_fraction: float = 0.02
    checkpoint_every: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        if self.cell_size_mm <= 0:
            raise ValueError("cell size must be positive")
        if self.resolution < 8:
            raise ValueError("mesh resolution must be >= 8")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.thickness_initial_mm is None:
            self.thickness_initial_mm = self.cell_size_mm / 50.0
        if self.thickness_min_mm is None:
            self.thickness_min_mm = self.cell_size_mm / 100.0
        if self.thickness_max_mm is None:
            self.thickness_max_mm = self.cell_size_mm / 20.0
        if not (0 < self.thickness_min_mm <= self.thickness_max_mm):
            raise ValueError("thickness bounds out of order")
        if not (self.thickness_min_mm <= self.thickness_initial_mm
                <= self.thickness_max_mm):
            raise ValueError("initial thickness outside bounds")
        if self.surface_terms is None and not self.surface_preset:
            raise ValueError("config needs surface.preset or surface.terms")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as f:
            doc = json.load(f)
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        surface = doc.get("surface", {})
        cell = doc.get("cell", {})
        mesh = doc.get("mesh", {})
        mat = doc.get("material", {})
        th = doc.get("thickness", {})
        opt = doc.get("optimizer", {})
        return cls(
            surface_preset=surface.get("preset"),
            surface_terms=surface.get("terms"),
            surface_name=surface.get("name", surface.get("preset") or "custom"),
            cell_size_mm=float(cell.get("size_mm", 2.0)),
            tile_counts=tuple(cell.get("tile", (1, 1, 1))),
            resolution=int(mesh.get("resolution", 48)),
            min_edge_fraction=float(mesh.get("min_edge_fraction", 0.2)),
            youngs_mpa=float(mat.get("youngs_mpa", 190000.0)),
            poisson=float(mat.get("poisson", 0.3)),
            thickness_initial_mm=th.get("initial_mm"),
            thickness_min_mm=th.get("min_mm"),
            thickness_max_mm=th.get("max_mm"),
            tolerance=float(opt.get("tolerance", 0.01)),
            max_iters=int(opt.get("max_iters", 500)),
            move_fraction=float(opt.get("move_fraction", 0.02)),
            checkpoint_every=int(opt.get("checkpoint_every", 0)),
            output_dir=doc.get("output_dir", "out"),
        )

    def to_dict(self) -> dict:
        return {
            "surface": {"preset": self.surface_preset, "terms": self.surface_terms,
                        "name": self.surface_name},
            "cell": {"size_mm": self.cell_size_mm, "tile": list(self.tile_counts)},
            "mesh": {"resolution": self.resolution,
                     "min_edge_fraction": self.min_edge_fraction},
            "material": {"youngs_mpa": self.youngs_mpa, "poisson": self.poisson},
            "thickness": {"initial_mm": self.thickness_initial_mm,
                          "min_mm": self.thickness_min_mm,
                          "max_mm": self.thickness_max_mm},
            "optimizer": {"tolerance": self.tolerance, "max_iters": self.max_iters,
                          "move_fraction": self.move_fraction,
                          "checkpoint_every": self.checkpoint_every},
            "output_dir": self.output_dir,
        }

    def write_resolved(self, directory):
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, "resolved_config.json")
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return path

    # pipeline builders -----------------------------------------------------

    def surface(self) -> ImplicitSurface:
        if self.surface_terms is not None:
            return surface_from_term_list(self.surface_terms, self.cell_size_mm,
                                          name=self.surface_name)
        return preset_surface(self.surface_preset, self.cell_size_mm)

    def material(self) -> Material:
        return Material(E_s=self.youngs_mpa, nu_s=self.poisson)

    def cell_spec(self, domain="eighth") -> CellSpec:
        return CellSpec(size_mm=self.cell_size_mm, domain=domain,
                        tile=self.tile_counts)

    def fundamental_mesh(self):
        return mesh_fundamental_unit(self.surface(), self.cell_spec("fundamental"),
                                     self.resolution,
                                     min_edge_fraction=self.min_edge_fraction)

    def eighth_mesh(self):
        return mirror_expand(self.fundamental_mesh(), "eighth")

    def mesh_for_domain(self, domain: str):
        fund = self.fundamental_mesh()
        if domain == "fundamental":
            return fund
        eighth = mirror_expand(fund, "eighth")
        if domain == "eighth":
            return eighth
        unit = mirror_expand(eighth, "unit")
        if domain == "unit":
            return unit
        if domain == "tiled":
            return tile(unit, *self.tile_counts)
        raise ValueError(f"unknown domain {domain!r}")

    def initial_thickness(self, n_elements: int) -> ThicknessField:
        return ThicknessField.uniform(n_elements, self.thickness_initial_mm,
                                      self.thickness_min_mm, self.thickness_max_mm)

    def optimizer_config(self, checkpoint_path=None) -> OptimizerConfig:
        return OptimizerConfig(tolerance=self.tolerance, max_iters=self.max_iters,
                               move_fraction=self.move_fraction,
                               checkpoint_every=self.checkpoint_every,
                               checkpoint_path=checkpoint_path)


def save_thickness(path, t: ThicknessField, mesh=None):
    doc = {"delta_mm": t.delta.tolist(), "min_mm": t.delta_min,
           "max_mm": t.delta_max}
    if mesh is not None:
        doc["n_triangles"] = int(mesh.n_triangles)
    with open(path, "w") as f:
        json.dump(doc, f)


def load_thickness(path) -> ThicknessField:
    with open(path) as f:
        doc = json.load(f)
    return ThicknessField(np.asarray(doc["delta_mm"], dtype=float),
                          float(doc["min_mm"]), float(doc["max_mm"]))
