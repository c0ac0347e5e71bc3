"""Kirchhoff-Love facet-shell finite elements on the eighth-cell domain.

Element: flat 3-node shell = constant-strain membrane + discrete-Kirchhoff
bending triangle, with a small drilling stabilization tied to the in-plane
spin so rigid-body modes stay exactly at zero energy.  Six DOFs per node
(ux, uy, uz, tx, ty, tz), units mm / N / MPa / mJ.

Membrane stiffness scales linearly with thickness, bending with thickness
cubed; the drilling term scales linearly and its energy is booked with the
membrane split so thickness derivatives of all parts stay closed-form.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (ConstraintConflict, DegenerateElement,
                     IllConditionedWarning, SingularSystem, UntaggedBoundary)
from .geometry import CellSpec, TriMesh

DOFS_PER_NODE = 6
DRILL_FACTOR = 1e-6          # drilling stiffness = factor * E * A * delta
CONDITION_LIMIT = 1e14

# Voigt component order used throughout: 11, 22, 33, 23, 12, 13
VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 1), (0, 2))


@dataclass(frozen=True)
class Material:
    """Isotropic constituent: Young's modulus in MPa, Poisson's ratio."""

    E_s: float
    nu_s: float

    def __post_init__(self):
        if self.E_s <= 0:
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.nu_s < 0.5:
            raise ValueError("Poisson's ratio must lie in (-1, 0.5)")


@dataclass(frozen=True)
class LoadCase:
    """Unit macroscopic strain case: U (uniaxial), T (hydrostatic), S (shear).

    The shear case realizes the gamma_12 component (one-sided ansatz
    u_y = gamma * x); under cubic symmetry any shear pair gives the same
    modulus, and the strain vector carries its unit entry in the 12 slot.
    """

    kind: str
    strain: tuple

    def __post_init__(self):
        if self.kind not in ("U", "T", "S"):
            raise ValueError(f"unknown load case {self.kind!r}")


LOAD_CASES = {
    "U": LoadCase("U", (1.0, 0.0, 0.0, 0.0, 0.0, 0.0)),
    "T": LoadCase("T", (1.0, 1.0, 1.0, 0.0, 0.0, 0.0)),
    "S": LoadCase("S", (0.0, 0.0, 0.0, 0.0, 1.0, 0.0)),
}


@dataclass
class ConstraintSet:
    """Per-DOF prescriptions: boolean mask plus prescribed values."""

    mask: np.ndarray          # (ndof,) bool
    values: np.ndarray        # (ndof,) float, meaningful where mask
    case: LoadCase | None = None

    @property
    def n_prescribed(self) -> int:
        return int(self.mask.sum())

    def prescribe(self, dofs, value):
        """Set DOFs to a value, refusing conflicting re-prescription."""
        dofs = np.asarray(dofs, dtype=int)
        taken = self.mask[dofs]
        if np.any(taken):
            old = self.values[dofs[taken]]
            if np.any(np.abs(old - value) > 1e-12 * max(1.0, abs(value))):
                raise ConstraintConflict(
                    f"DOF prescribed twice with different values "
                    f"({old[np.abs(old - value).argmax()]} vs {value})")
        self.mask[dofs] = True
        self.values[dofs] = value


@dataclass
class LoadCaseSolution:
    """Solved unit-strain case with energy splits and stress summaries.

    e_membrane bundles the in-plane and drilling-stabilization energies
    (both scale linearly in thickness); e_bending scales cubically.
    sigma_macro holds the end-face reaction averages; sigma_micro_avg the
    work-consistent volume average of the microscopic stress.
    """

    case: LoadCase
    displacements: np.ndarray        # (n_nodes, 6)
    reaction_dofs: np.ndarray        # (n_presc,) global DOF ids
    reactions: np.ndarray            # (n_presc,)
    e_membrane: np.ndarray           # (n_elements,) mJ
    e_bending: np.ndarray            # (n_elements,) mJ
    sigma_macro: np.ndarray          # (6,) MPa
    sigma_micro_avg: np.ndarray      # (6,) MPa
    volume: float                    # analysis-box volume mm^3
    face_area: float                 # end-face area mm^2

    @property
    def e_total(self) -> float:
        return float(self.e_membrane.sum() + self.e_bending.sum())

    @property
    def prescribed_work(self) -> float:
        u = self.displacements.reshape(-1)[self.reaction_dofs]
        return float(0.5 * np.dot(self.reactions, u))


def _plane_dirichlet(kind: str, axis: int, L: float):
    """(translation fixes, rotation fixes) for one tagged plane.

    symmetry about plane with normal e_k: u_k = value, tangential rotations 0.
    anti-symmetry: tangential displacements 0, normal rotation 0.
    Returns list of (dof_component, value); rotation components offset by 3.
    """
    tang = [a for a in range(3) if a != axis]
    if kind == "sym":
        return [(axis, 0.0)], [(t, 0.0) for t in tang]
    if kind == "anti":
        return [(t, 0.0) for t in tang], [(axis, 0.0)]
    raise ValueError(kind)


def build_constraints(mesh: TriMesh, case: LoadCase, spec: CellSpec) -> ConstraintSet:
    """DOF table for one load case on a tagged eighth-cell mesh.

    Mid-planes x=0, y=0, z=0 carry symmetry conditions (anti-symmetry on the
    two planes spanning the shear), end faces carry the simplified periodic
    conditions: prescribed normal (U, T) or ansatz tangential (S) motion.
    """
    boundary = mesh.boundary_edges()
    if len(boundary):
        nodes = np.unique(boundary)
        box_mask = 0b111111
        if np.any((mesh.plane_tags[nodes] & box_mask) == 0):
            bad = nodes[(mesh.plane_tags[nodes] & box_mask) == 0]
            raise UntaggedBoundary(
                f"{len(bad)} boundary nodes lack a bounding-plane tag "
                f"(first: vertex {int(bad[0])})")

    L = spec.half
    ndof = mesh.n_vertices * DOFS_PER_NODE
    cs = ConstraintSet(mask=np.zeros(ndof, dtype=bool), values=np.zeros(ndof),
                       case=case)

    def apply(plane: str, trans, rots):
        nodes = mesh.vertices_on(plane)
        if len(nodes) == 0:
            return
        base = DOFS_PER_NODE * nodes
        for comp, val in trans:
            cs.prescribe(base + comp, val)
        for comp, val in rots:
            cs.prescribe(base + 3 + comp, val)

    if case.kind in ("U", "T"):
        for axis, plane in enumerate(("x0", "y0", "z0")):
            trans, rots = _plane_dirichlet("sym", axis, L)
            apply(plane, trans, rots)
        end_values = {
            "U": (case.strain[0] * L, 0.0, 0.0),
            "T": (case.strain[0] * L, case.strain[1] * L, case.strain[2] * L),
        }[case.kind]
        for axis, plane in enumerate(("x1", "y1", "z1")):
            _, rots = _plane_dirichlet("sym", axis, L)
            apply(plane, [(axis, end_values[axis])], rots)
    else:  # shear gamma_12: u_y = gamma * x
        gamma = case.strain[4]
        apply("x0", [(1, 0.0), (2, 0.0)], [(0, 0.0)])      # anti-symmetry
        apply("y0", [(0, 0.0), (2, 0.0)], [(1, 0.0)])      # anti-symmetry
        trans, rots = _plane_dirichlet("sym", 2, L)
        apply("z0", trans, rots)                            # symmetry
        apply("x1", [(1, gamma * L), (2, 0.0)], [])
        apply("y1", [(0, 0.0), (2, 0.0)], [])
        apply("z1", trans, rots)                            # symmetry-type

    if cs.n_prescribed == 0:
        raise SingularSystem("constraint set is empty; structure would float")
    return cs


# ---------------------------------------------------------------------------
# element kernels (batched over elements)

_GAUSS_MID = ((0.5, 0.0), (0.5, 0.5), (0.0, 0.5))   # exact for DKT stiffness

_LOCAL_M = (0, 1, 6, 7, 12, 13)
_LOCAL_B = (2, 3, 4, 8, 9, 10, 14, 15, 16)
_LOCAL_D = (0, 1, 6, 7, 12, 13, 5, 11, 17)


def _elastic_3x3(nu: float) -> np.ndarray:
    return np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]])


def _batch_frames(vertices, triangles, box_diag2):
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    nvec = np.cross(d1, d2)
    areas = 0.5 * np.linalg.norm(nvec, axis=1)
    if np.any(areas <= 1e-12 * box_diag2):
        raise DegenerateElement(
            f"{int(np.sum(areas <= 1e-12 * box_diag2))} degenerate triangles")
    e1 = d1 / np.linalg.norm(d1, axis=1, keepdims=True)
    n = nvec / (2.0 * areas)[:, None]
    e2 = np.cross(n, e1)
    R = np.stack([e1, e2, n], axis=1)                    # rows: local axes
    xy = np.zeros((len(p), 3, 2))
    xy[:, 1, 0] = np.linalg.norm(d1, axis=1)
    xy[:, 2, 0] = np.einsum("ij,ij->i", d2, e1)
    xy[:, 2, 1] = np.einsum("ij,ij->i", d2, e2)
    return R, xy, areas


def _membrane_unit(xy, areas, mat: Material):
    """Membrane stiffness at unit thickness, (ne, 6, 6), DOFs u1 v1 u2 v2 u3 v3."""
    x, y = xy[..., 0], xy[..., 1]
    y23 = y[:, 1] - y[:, 2]
    y31 = y[:, 2] - y[:, 0]
    y12 = y[:, 0] - y[:, 1]
    x32 = x[:, 2] - x[:, 1]
    x13 = x[:, 0] - x[:, 2]
    x21 = x[:, 1] - x[:, 0]
    ne = len(x)
    B = np.zeros((ne, 3, 6))
    B[:, 0, 0], B[:, 0, 2], B[:, 0, 4] = y23, y31, y12
    B[:, 1, 1], B[:, 1, 3], B[:, 1, 5] = x32, x13, x21
    B[:, 2, 0], B[:, 2, 2], B[:, 2, 4] = x32, x13, x21
    B[:, 2, 1], B[:, 2, 3], B[:, 2, 5] = y23, y31, y12
    B /= (2.0 * areas)[:, None, None]
    D = (mat.E_s / (1.0 - mat.nu_s ** 2)) * _elastic_3x3(mat.nu_s)
    return np.einsum("eai,ab,ebj,e->eij", B, D, B, areas)


def _membrane_strain_op(xy, areas):
    """(ne, 3, 6) operator mapping membrane DOFs to in-plane strain."""
    x, y = xy[..., 0], xy[..., 1]
    ne = len(x)
    B = np.zeros((ne, 3, 6))
    B[:, 0, 0], B[:, 0, 2], B[:, 0, 4] = y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]
    B[:, 1, 1], B[:, 1, 3], B[:, 1, 5] = x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]
    B[:, 2, 0], B[:, 2, 2], B[:, 2, 4] = x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]
    B[:, 2, 1], B[:, 2, 3], B[:, 2, 5] = y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]
    return B / (2.0 * areas)[:, None, None]


def _dkt_B(xy, areas, xi, eta):
    """Curvature-displacement matrix of the discrete-Kirchhoff triangle.

    DOFs per node: (w, tx, ty) with tx = dw/dy and ty = -dw/dx for pure
    bending.  The entries are linear in (xi, eta), so midside quadrature
    integrates the stiffness exactly.
    """
    x, y = xy[..., 0], xy[..., 1]
    # side k: 4 -> (2,3), 5 -> (3,1), 6 -> (1,2) in 1-based node labels
    xij = np.stack([x[:, 1] - x[:, 2], x[:, 2] - x[:, 0], x[:, 0] - x[:, 1]], axis=1)
    yij = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    l2 = xij ** 2 + yij ** 2
    P = -6.0 * xij / l2
    q = 3.0 * xij * yij / l2
    t = -6.0 * yij / l2
    r = 3.0 * yij ** 2 / l2
    P4, P5, P6 = P[:, 0], P[:, 1], P[:, 2]
    q4, q5, q6 = q[:, 0], q[:, 1], q[:, 2]
    t4, t5, t6 = t[:, 0], t[:, 1], t[:, 2]
    r4, r5, r6 = r[:, 0], r[:, 1], r[:, 2]
    ne = len(x)
    one = np.ones(ne)

    Hx_xi = np.stack([
        P6 * (1 - 2 * xi) + (P5 - P6) * eta,
        q6 * (1 - 2 * xi) - (q5 + q6) * eta,
        -4 * one + 6 * (xi + eta) + r6 * (1 - 2 * xi) - eta * (r5 + r6),
        -P6 * (1 - 2 * xi) + eta * (P4 + P6),
        q6 * (1 - 2 * xi) - eta * (q6 - q4),
        -2 * one + 6 * xi + r6 * (1 - 2 * xi) + eta * (r4 - r6),
        -eta * (P5 + P4),
        eta * (q4 - q5),
        -eta * (r5 - r4),
    ], axis=1)
    Hy_xi = np.stack([
        t6 * (1 - 2 * xi) + eta * (t5 - t6),
        1 * one + r6 * (1 - 2 * xi) - eta * (r5 + r6),
        -q6 * (1 - 2 * xi) + eta * (q5 + q6),
        -t6 * (1 - 2 * xi) + eta * (t4 + t6),
        -1 * one + r6 * (1 - 2 * xi) + eta * (r4 - r6),
        -q6 * (1 - 2 * xi) - eta * (q4 - q6),
        -eta * (t4 + t5),
        eta * (r4 - r5),
        -eta * (q4 - q5),
    ], axis=1)
    Hx_eta = np.stack([
        -P5 * (1 - 2 * eta) - xi * (P6 - P5),
        q5 * (1 - 2 * eta) - xi * (q5 + q6),
        -4 * one + 6 * (xi + eta) + r5 * (1 - 2 * eta) - xi * (r5 + r6),
        xi * (P4 + P6),
        xi * (q4 - q6),
        -xi * (r6 - r4),
        P5 * (1 - 2 * eta) - xi * (P4 + P5),
        q5 * (1 - 2 * eta) + xi * (q4 - q5),
        -2 * one + 6 * eta + r5 * (1 - 2 * eta) + xi * (r4 - r5),
    ], axis=1)
    Hy_eta = np.stack([
        -t5 * (1 - 2 * eta) - xi * (t6 - t5),
        1 * one + r5 * (1 - 2 * eta) - xi * (r5 + r6),
        -q5 * (1 - 2 * eta) + xi * (q5 + q6),
        xi * (t4 + t6),
        xi * (r4 - r6),
        -xi * (q4 - q6),
        t5 * (1 - 2 * eta) - xi * (t4 + t5),
        -1 * one + r5 * (1 - 2 * eta) + xi * (r4 - r5),
        -q5 * (1 - 2 * eta) - xi * (q4 - q5),
    ], axis=1)

    y31 = (y[:, 2] - y[:, 0])[:, None]
    y12 = (y[:, 0] - y[:, 1])[:, None]
    x31 = (x[:, 2] - x[:, 0])[:, None]
    x12 = (x[:, 0] - x[:, 1])[:, None]
    inv2A = (1.0 / (2.0 * areas))[:, None]
    row1 = inv2A * (y31 * Hx_xi + y12 * Hx_eta)
    row2 = inv2A * (-x31 * Hy_xi - x12 * Hy_eta)
    row3 = inv2A * (-x31 * Hx_xi - x12 * Hx_eta + y31 * Hy_xi + y12 * Hy_eta)
    return np.stack([row1, row2, row3], axis=1)    # (ne, 3, 9)


def _bending_unit(xy, areas, mat: Material):
    """Bending stiffness at unit thickness, (ne, 9, 9), DOFs (w, tx, ty) per node."""
    D = (mat.E_s / (12.0 * (1.0 - mat.nu_s ** 2))) * _elastic_3x3(mat.nu_s)
    K = np.zeros((len(areas), 9, 9))
    for xi, eta in _GAUSS_MID:
        B = _dkt_B(xy, areas, xi, eta)
        K += np.einsum("eai,ab,ebj->eij", B, D, B)
    return K * (2.0 * areas / 6.0)[:, None, None]


def _drill_unit(xy, areas, mat: Material):
    """Drilling stabilization at unit thickness over DOFs (membrane 6, tz 3).

    Penalizes the gap between nodal normal rotation and the element in-plane
    spin, so rigid rotations stay at zero energy.
    """
    x, y = xy[..., 0], xy[..., 1]
    ne = len(x)
    # in-plane spin of the constant-strain field: w = g . (u1 v1 ... v3)
    g = np.zeros((ne, 9))
    g[:, 0] = -(x[:, 2] - x[:, 1])
    g[:, 1] = y[:, 1] - y[:, 2]
    g[:, 2] = -(x[:, 0] - x[:, 2])
    g[:, 3] = y[:, 2] - y[:, 0]
    g[:, 4] = -(x[:, 1] - x[:, 0])
    g[:, 5] = y[:, 0] - y[:, 1]
    g /= (4.0 * areas)[:, None]
    K = np.zeros((ne, 9, 9))
    for i in range(3):
        s = -g.copy()
        s[:, 6 + i] += 1.0         # tz_i minus element spin
        K += np.einsum("ei,ej->eij", s, s)
    return K * (DRILL_FACTOR * mat.E_s * areas)[:, None, None]


def element_stiffness(triangle, delta: float, mat: Material):
    """Local stiffness blocks of one facet-shell element at thickness delta.

    Returns (K_m, K_b): the 6x6 membrane block over in-plane DOFs
    (u1, v1, u2, v2, u3, v3) and the 9x9 bending block over (w, tx, ty) per
    node, in the element frame.  K_m scales linearly in delta, K_b cubically.
    """
    tri = np.asarray(triangle, dtype=float).reshape(3, 3)
    if delta <= 0:
        raise ValueError("thickness must be positive")
    diag2 = float(np.sum((tri.max(axis=0) - tri.min(axis=0)) ** 2))
    _, xy, areas = _batch_frames(tri, np.array([[0, 1, 2]]), max(diag2, 1e-30))
    km = _membrane_unit(xy, areas, mat)[0] * delta
    kb = _bending_unit(xy, areas, mat)[0] * delta ** 3
    return km, kb


class ShellModel:
    """Precomputed element operators for one mesh; assembles and solves.

    Holding the model fixed while varying the thickness field keeps
    re-assembly to a scaled scatter of cached per-element matrices.
    """

    def __init__(self, mesh: TriMesh, material: Material, spec: CellSpec):
        self.mesh = mesh
        self.material = material
        self.spec = spec
        diag2 = float(np.sum((mesh.box_hi - mesh.box_lo) ** 2))
        self.R, self.xy, self.areas = _batch_frames(mesh.vertices, mesh.triangles,
                                                    diag2)
        ne = mesh.n_triangles
        km = _membrane_unit(self.xy, self.areas, material)
        kb = _bending_unit(self.xy, self.areas, material)
        kd = _drill_unit(self.xy, self.areas, material)

        kl_m = np.zeros((ne, 18, 18))
        kl_m[np.ix_(range(ne), _LOCAL_M, _LOCAL_M)] += km
        kl_m[np.ix_(range(ne), _LOCAL_D, _LOCAL_D)] += kd
        kl_b = np.zeros((ne, 18, 18))
        kl_b[np.ix_(range(ne), _LOCAL_B, _LOCAL_B)] += kb

        T = np.zeros((ne, 18, 18))
        for node in range(3):
            for blk in range(2):
                s = 6 * node + 3 * blk
                T[:, s:s + 3, s:s + 3] = self.R
        self.Kg_m = np.einsum("eji,ejk,ekl->eil", T, kl_m, T)
        self.Kg_b = np.einsum("eji,ejk,ekl->eil", T, kl_b, T)

        dof = (DOFS_PER_NODE * mesh.triangles[:, :, None]
               + np.arange(DOFS_PER_NODE)[None, None, :])
        self.dofmap = dof.reshape(ne, 18).astype(np.int64)
        self.rows = np.repeat(self.dofmap, 18, axis=1).ravel()
        self.cols = np.tile(self.dofmap, (1, 18)).ravel()
        self.ndof = mesh.n_vertices * DOFS_PER_NODE
        self._constraints = {}

    def constraints(self, case: LoadCase) -> ConstraintSet:
        if case.kind not in self._constraints:
            self._constraints[case.kind] = build_constraints(self.mesh, case,
                                                             self.spec)
        return self._constraints[case.kind]

    def assemble(self, delta) -> sp.csr_matrix:
        """Global stiffness for a per-element thickness field."""
        delta = np.asarray(delta, dtype=float)
        data = (delta[:, None, None] * self.Kg_m
                + (delta ** 3)[:, None, None] * self.Kg_b)
        K = sp.coo_matrix((data.ravel(), (self.rows, self.cols)),
                          shape=(self.ndof, self.ndof))
        return K.tocsr()

    def solve_cases(self, delta, cases, check_condition=False):
        """Solve several load cases on one assembly, sharing factorizations.

        Cases with identical constraint patterns (U and T) reuse one
        factorization.  Returns {kind: LoadCaseSolution}.
        """
        delta = np.asarray(delta, dtype=float)
        K = self.assemble(delta)
        groups = {}
        for case in cases:
            cs = self.constraints(case)
            groups.setdefault(cs.mask.tobytes(), []).append((case, cs))

        results = {}
        max_workers = int(os.environ.get("ISOSHELL_THREADS", "1") or "1")

        def run_group(items):
            _, cs0 = items[0]
            free = ~cs0.mask
            Kff = K[free][:, free].tocsc()
            Kfp = K[free][:, cs0.mask].tocsr()
            try:
                factor = spla.splu(Kff)
            except RuntimeError as exc:
                raise SingularSystem(str(exc)) from exc
            if check_condition:
                self._warn_if_ill_conditioned(Kff, factor)
            out = []
            for case, cs in items:
                up = cs.values[cs.mask]
                uf = factor.solve(-(Kfp @ up))
                if not np.all(np.isfinite(uf)):
                    raise SingularSystem(
                        f"solver produced non-finite displacements (case {case.kind})")
                u = np.zeros(self.ndof)
                u[cs.mask] = up
                u[free] = uf
                out.append((case, cs, u))
            return out

        solved = []
        if max_workers > 1 and len(groups) > 1:
            with ThreadPoolExecutor(max_workers=min(max_workers, len(groups))) as ex:
                for chunk in ex.map(run_group, groups.values()):
                    solved.extend(chunk)
        else:
            for items in groups.values():
                solved.extend(run_group(items))

        for case, cs, u in solved:
            results[case.kind] = self._package(case, cs, u, K, delta)
        return results

    def _warn_if_ill_conditioned(self, Kff, factor):
        try:
            norm_a = spla.onenormest(Kff)
            op = spla.LinearOperator(Kff.shape, matvec=factor.solve,
                                     rmatvec=factor.solve)   # K is symmetric
            norm_inv = spla.onenormest(op)
        except Exception:
            return
        if norm_a * norm_inv > CONDITION_LIMIT:
            warnings.warn(
                f"reduced system condition estimate {norm_a * norm_inv:.2e} "
                f"exceeds {CONDITION_LIMIT:.0e}", IllConditionedWarning,
                stacklevel=3)

    def element_energies(self, u, delta):
        """Per-element (membrane+drilling, bending) energies for displacements u."""
        ue = u[self.dofmap]
        em = 0.5 * delta * np.einsum("ei,eij,ej->e", ue, self.Kg_m, ue)
        eb = 0.5 * delta ** 3 * np.einsum("ei,eij,ej->e", ue, self.Kg_b, ue)
        # blocks are PSD, so negatives can only be quadrature roundoff; bound
        # it per element by the magnitude of the terms that cancelled
        scale = np.abs(ue)
        ref_m = 0.5 * delta * np.einsum("ei,eij,ej->e", scale,
                                        np.abs(self.Kg_m), scale)
        ref_b = 0.5 * delta ** 3 * np.einsum("ei,eij,ej->e", scale,
                                             np.abs(self.Kg_b), scale)
        if np.any(em < -1e-10 * ref_m) or np.any(eb < -1e-10 * ref_b):
            raise AssertionError("element energy significantly negative")
        return np.maximum(em, 0.0), np.maximum(eb, 0.0)

    def _package(self, case, cs, u, K, delta) -> LoadCaseSolution:
        f = K @ u
        presc_idx = np.flatnonzero(cs.mask)
        reactions = f[presc_idx]
        em, eb = self.element_energies(u, delta)
        L = self.spec.half
        area = L * L
        volume = L ** 3
        sigma_macro = self._sigma_from_reactions(case, presc_idx, reactions, area)
        sigma_micro = self._sigma_virtual_work(K, u, volume)
        return LoadCaseSolution(
            case=case,
            displacements=u.reshape(-1, DOFS_PER_NODE),
            reaction_dofs=presc_idx,
            reactions=reactions,
            e_membrane=em,
            e_bending=eb,
            sigma_macro=sigma_macro,
            sigma_micro_avg=sigma_micro,
            volume=volume,
            face_area=area,
        )

    def _sigma_from_reactions(self, case, presc_idx, reactions, area):
        """End-face reaction sums in the applied-displacement directions."""
        r_full = np.zeros(self.ndof)
        r_full[presc_idx] = reactions

        def face_sum(plane, comp):
            nodes = self.mesh.vertices_on(plane)
            return r_full[DOFS_PER_NODE * nodes + comp].sum()

        sigma = np.zeros(6)
        if case.kind in ("U", "T"):
            sigma[0] = face_sum("x1", 0) / area
            sigma[1] = face_sum("y1", 1) / area
            sigma[2] = face_sum("z1", 2) / area
        else:
            sigma[4] = face_sum("x1", 1) / area
        return sigma

    def _sigma_virtual_work(self, K, u, volume):
        """Work-consistent discrete volume average of the microscopic stress.

        Component (a, b) is u . K v / V with v the interpolant of the linear
        map x -> sym(e_a x_b) carrying zero nodal rotations; by the discrete
        work identity this equals the boundary reaction average exactly.
        """
        coords = self.mesh.vertices
        nv = len(coords)
        sigma = np.zeros(6)
        for c, (a, b) in enumerate(VOIGT_PAIRS):
            v = np.zeros((nv, DOFS_PER_NODE))
            if a == b:
                v[:, a] = coords[:, b]
            else:
                v[:, a] = 0.5 * coords[:, b]
                v[:, b] = 0.5 * coords[:, a]
            sigma[c] = float(u @ (K @ v.reshape(-1))) / volume
        return sigma


def assemble_and_solve(mesh: TriMesh, thickness, mat: Material,
                       constraints: ConstraintSet, spec: CellSpec | None = None,
                       check_condition: bool = True) -> LoadCaseSolution:
    """One-shot assembly and solve for one load case's constraint set."""
    delta = np.asarray(getattr(thickness, "delta", thickness), dtype=float)
    if delta.ndim == 0:
        delta = np.full(mesh.n_triangles, float(delta))
    if len(delta) != mesh.n_triangles:
        raise ValueError("thickness field length does not match element count")
    if spec is None:
        spec = CellSpec(size_mm=float(2.0 * mesh.box_hi[0]), domain="eighth")
    model = ShellModel(mesh, mat, spec)
    case = constraints.case if constraints.case is not None else LOAD_CASES["U"]
    model._constraints[case.kind] = constraints
    return model.solve_cases(delta, [case], check_condition=check_condition)[case.kind]


def macroscopic_stress(solution: LoadCaseSolution, mesh: TriMesh,
                       spec: CellSpec) -> np.ndarray:
    """End-face reaction average stress, recomputed from stored reactions."""
    r_full = np.zeros(mesh.n_vertices * DOFS_PER_NODE)
    r_full[solution.reaction_dofs] = solution.reactions
    area = spec.half ** 2

    def face_sum(plane, comp):
        nodes = mesh.vertices_on(plane)
        return r_full[DOFS_PER_NODE * nodes + comp].sum()

    sigma = np.zeros(6)
    if solution.case.kind in ("U", "T"):
        sigma[0] = face_sum("x1", 0) / area
        sigma[1] = face_sum("y1", 1) / area
        sigma[2] = face_sum("z1", 2) / area
    else:
        sigma[4] = face_sum("x1", 1) / area
    return sigma
