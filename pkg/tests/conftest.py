"""Shared fixtures: meshes and models are expensive, so build once per session."""

import numpy as np
import pytest

from isoshell.geometry import (CellSpec, mesh_fundamental_unit, mirror_expand,
                               preset_surface)
from isoshell.homogenize import run_homogenization
from isoshell.shellfea import Material, ShellModel

CELL = 2.0


@pytest.fixture(scope="session")
def material():
    return Material(E_s=190000.0, nu_s=0.3)


@pytest.fixture(scope="session")
def eighth_spec():
    return CellSpec(size_mm=CELL, domain="eighth")


def _eighth(preset, resolution):
    fund = mesh_fundamental_unit(preset_surface(preset, CELL),
                                 CellSpec(size_mm=CELL, domain="fundamental"),
                                 resolution)
    return mirror_expand(fund, "eighth")


@pytest.fixture(scope="session")
def iwp_fund_16():
    return mesh_fundamental_unit(preset_surface("iwp", CELL),
                                 CellSpec(size_mm=CELL, domain="fundamental"), 16)


@pytest.fixture(scope="session")
def iwp_eighth_16(iwp_fund_16):
    return mirror_expand(iwp_fund_16, "eighth")


@pytest.fixture(scope="session")
def iwp_eighth_24():
    return _eighth("iwp", 24)


@pytest.fixture(scope="session")
def iwp_eighth_32():
    return _eighth("iwp", 32)


@pytest.fixture(scope="session")
def iwp_eighth_48():
    return _eighth("iwp", 48)


@pytest.fixture(scope="session")
def n_eighth_32():
    return _eighth("n", 32)


@pytest.fixture(scope="session")
def n_eighth_48():
    return _eighth("n", 48)


@pytest.fixture(scope="session")
def frd_eighth_32():
    return _eighth("frd", 32)


@pytest.fixture(scope="session")
def frd_eighth_48():
    return _eighth("frd", 48)


@pytest.fixture(scope="session")
def iwp_model_16(iwp_eighth_16, material, eighth_spec):
    return ShellModel(iwp_eighth_16, material, eighth_spec)


@pytest.fixture(scope="session")
def iwp_model_48(iwp_eighth_48, material, eighth_spec):
    return ShellModel(iwp_eighth_48, material, eighth_spec)


@pytest.fixture(scope="session")
def iwp_uniform_result_16(iwp_eighth_16, iwp_model_16, material, eighth_spec):
    delta = np.full(iwp_eighth_16.n_triangles, CELL / 50.0)
    return run_homogenization(iwp_eighth_16, delta, material, eighth_spec,
                              model=iwp_model_16)


@pytest.fixture(scope="session")
def iwp_uniform_result_48(iwp_eighth_48, iwp_model_48, material, eighth_spec):
    delta = np.full(iwp_eighth_48.n_triangles, CELL / 50.0)
    return run_homogenization(iwp_eighth_48, delta, material, eighth_spec,
                              model=iwp_model_48)
