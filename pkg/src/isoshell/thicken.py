"""Variable-thickness solid construction from a mid-surface and export.

Nodes move half the nodal thickness along +/- the vertex normal to form the
top and bottom skins; each boundary loop is closed with a quad strip of
lateral wall triangles.  Offset vertices of boundary nodes are projected
back onto their tagged planes so tiled cells keep mating exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import (IsolatedVertex, NotWatertight, OpenBoundary,
                     SelfIntersection)
from .geometry import PLANE_BITS, TriMesh
from .stl_io import save_stl

_BOX_PLANES = (("x0", 0, "lo"), ("y0", 1, "lo"), ("z0", 2, "lo"),
               ("x1", 0, "hi"), ("y1", 1, "hi"), ("z1", 2, "hi"))


@dataclass
class SolidMesh:
    """Closed, outward-oriented triangle mesh with per-face provenance."""

    vertices: np.ndarray
    triangles: np.ndarray
    provenance: np.ndarray     # (nt,) of {"top", "bottom", "lateral"}

    def signed_volume(self) -> float:
        p = self.vertices[self.triangles]
        return float(np.einsum("ij,ij->i", p[:, 0],
                               np.cross(p[:, 1], p[:, 2])).sum() / 6.0)

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(
            np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def edge_degrees(self):
        t = self.triangles
        edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]),
                        axis=1)
        return np.unique(edges, axis=0, return_counts=True)

    def is_watertight(self) -> bool:
        _, counts = self.edge_degrees()
        return bool(np.all(counts == 2))

    def validate(self):
        _, counts = self.edge_degrees()
        if np.any(counts != 2):
            raise NotWatertight(
                f"{int(np.sum(counts != 2))} edges have degree != 2")
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        _, c = np.unique(directed, axis=0, return_counts=True)
        if np.any(c > 1):
            raise NotWatertight("inconsistent orientation")
        if self.signed_volume() <= 0:
            raise NotWatertight("signed volume not positive")


def nodal_thickness(mesh: TriMesh, thickness) -> np.ndarray:
    """Per-vertex thickness: arithmetic mean over incident elements."""
    t = np.asarray(getattr(thickness, "delta", thickness), dtype=float)
    if t.ndim == 0:
        t = np.full(mesh.n_triangles, float(t))
    if len(t) != mesh.n_triangles:
        raise ValueError("thickness field length does not match element count")
    sums = np.zeros(mesh.n_vertices)
    counts = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(sums, mesh.triangles[:, k], t)
        np.add.at(counts, mesh.triangles[:, k], 1.0)
    if np.any(counts == 0):
        raise IsolatedVertex(
            f"{int(np.sum(counts == 0))} vertices have no incident element")
    return sums / counts


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted average of incident facet normals, normalized."""
    p = mesh.corner_coords()
    face_n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])   # 2*area*normal
    out = np.zeros((mesh.n_vertices, 3))
    for k in range(3):
        np.add.at(out, mesh.triangles[:, k], face_n)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise IsolatedVertex("vertex with zero accumulated normal")
    return out / norms


def _boundary_loops_directed(mesh: TriMesh):
    """Boundary edges in triangle winding order (interior on the left)."""
    t = mesh.triangles
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    key = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True,
                                   return_counts=True)
    return directed[counts[inverse] == 1]


def offset_shell(mesh: TriMesh, nodal_t, check_self_intersections=True) -> SolidMesh:
    """Thicken a mid-surface into a closed solid.

    Top skin at +t/2 along vertex normals keeps the mid winding; bottom skin
    at -t/2 is flipped; boundary loops get lateral walls.  Boundary offset
    vertices are pulled back onto the planes their mid vertex is tagged on.
    """
    nodal_t = np.asarray(nodal_t, dtype=float)
    if np.any(nodal_t <= 0):
        raise ValueError("nodal thickness must be positive")
    boundary = _boundary_loops_directed(mesh)
    if len(boundary):
        box_mask = sum(PLANE_BITS[n] for n, _, _ in _BOX_PLANES)
        common = (mesh.plane_tags[boundary[:, 0]]
                  & mesh.plane_tags[boundary[:, 1]] & box_mask)
        if np.any(common == 0):
            raise OpenBoundary(
                f"{int(np.sum(common == 0))} boundary edges lie on no tagged plane")

    normals = vertex_normals(mesh)
    half = 0.5 * nodal_t[:, None] * normals
    top = mesh.vertices + half
    bottom = mesh.vertices - half

    # keep tagged boundary vertices exactly on their planes after offsetting
    for name, axis, side in _BOX_PLANES:
        ids = mesh.vertices_on(name)
        if len(ids) == 0:
            continue
        value = mesh.box_lo[axis] if side == "lo" else mesh.box_hi[axis]
        top[ids, axis] = value
        bottom[ids, axis] = value

    nv = mesh.n_vertices
    verts = np.concatenate([top, bottom])
    tris = [mesh.triangles, mesh.triangles[:, ::-1] + nv]
    prov = [np.full(mesh.n_triangles, "top"), np.full(mesh.n_triangles, "bottom")]
    if len(boundary):
        a, b = boundary[:, 0], boundary[:, 1]
        ta, tb, ba, bb = a, b, a + nv, b + nv
        wall = np.concatenate([np.stack([ta, bb, tb], axis=1),
                               np.stack([ta, ba, bb], axis=1)])
        tris.append(wall)
        prov.append(np.full(len(wall), "lateral"))
    solid = SolidMesh(vertices=verts,
                      triangles=np.concatenate(tris).astype(np.int64),
                      provenance=np.concatenate(prov))
    if solid.signed_volume() < 0:
        solid.triangles = solid.triangles[:, ::-1]
    solid.validate()
    if check_self_intersections:
        pairs = find_self_intersections(solid)
        if pairs:
            raise SelfIntersection(
                f"offset solid intersects itself ({len(pairs)} triangle pairs, "
                f"first {pairs[0]})", pairs=pairs)
    return solid


def find_self_intersections(solid: SolidMesh, eps_rel: float = 1e-9,
                            max_pairs: int = 50):
    """Non-adjacent triangle pairs that overlap, by broad + narrow phase.

    Broad phase pairs triangles whose circumspheres overlap; the narrow
    phase is the separating-interval test on the plane intersection line,
    with coplanar pairs handled by 2D axis separation.
    """
    V, T = solid.vertices, solid.triangles
    p = V[T]
    centroids = p.mean(axis=1)
    radii = np.linalg.norm(p - centroids[:, None, :], axis=2).max(axis=1)
    tree = cKDTree(centroids)
    rmax = radii.max()
    scale = float(np.linalg.norm(V.max(axis=0) - V.min(axis=0)))
    eps = eps_rel * scale
    cand = tree.query_pairs(2.0 * rmax, output_type="ndarray")
    if len(cand) == 0:
        return []
    close = (np.linalg.norm(centroids[cand[:, 0]] - centroids[cand[:, 1]], axis=1)
             <= radii[cand[:, 0]] + radii[cand[:, 1]])
    cand = cand[close]
    # drop pairs sharing a vertex
    shared = np.zeros(len(cand), dtype=bool)
    for i in range(3):
        for j in range(3):
            shared |= T[cand[:, 0], i] == T[cand[:, 1], j]
    cand = cand[~shared]
    if len(cand) == 0:
        return []
    hits = _tri_tri_overlap(p[cand[:, 0]], p[cand[:, 1]], eps)
    out = [tuple(map(int, pair)) for pair in cand[hits][:max_pairs]]
    return out


def _tri_tri_overlap(A, B, eps):
    """Vectorized triangle-triangle overlap (interval test on both planes)."""
    n = len(A)
    nB = np.cross(B[:, 1] - B[:, 0], B[:, 2] - B[:, 0])
    dA = np.einsum("nj,nij->ni", nB, A - B[:, 0:1, :])
    nA = np.cross(A[:, 1] - A[:, 0], A[:, 2] - A[:, 0])
    dB = np.einsum("nj,nij->ni", nA, B - A[:, 0:1, :])
    # scale-aware tolerance on the signed plane distances
    tolA = eps * np.linalg.norm(nB, axis=1, keepdims=True)
    tolB = eps * np.linalg.norm(nA, axis=1, keepdims=True)
    sepA = np.all(dA > tolA, axis=1) | np.all(dA < -tolA, axis=1)
    sepB = np.all(dB > tolB, axis=1) | np.all(dB < -tolB, axis=1)
    live = ~(sepA | sepB)
    coplanar = np.all(np.abs(dA) <= tolA, axis=1) & live
    out = np.zeros(n, dtype=bool)

    cross_idx = np.flatnonzero(live & ~coplanar)
    if len(cross_idx):
        out[cross_idx] = _interval_test(A[cross_idx], B[cross_idx],
                                        dA[cross_idx], dB[cross_idx],
                                        nA[cross_idx], nB[cross_idx])
    cop_idx = np.flatnonzero(coplanar)
    if len(cop_idx):
        out[cop_idx] = _coplanar_test(A[cop_idx], B[cop_idx], nA[cop_idx], eps)
    return out


def _line_interval(P, d, axis_dir, eps):
    """Parametric interval of one triangle on the plane-intersection line."""
    t = np.einsum("nij,nj->ni", P, axis_dir)
    n = len(P)
    lo = np.full(n, np.inf)
    hi = np.full(n, -np.inf)
    for i in range(3):
        for j in range(i + 1, 3):
            di, dj = d[:, i], d[:, j]
            cross = (di > eps) != (dj > eps)
            denom = di - dj
            ok = cross & (np.abs(denom) > 1e-300)
            w = np.where(ok, di / np.where(ok, denom, 1.0), 0.0)
            pt = t[:, i] + w * (t[:, j] - t[:, i])
            lo = np.where(ok, np.minimum(lo, pt), lo)
            hi = np.where(ok, np.maximum(hi, pt), hi)
        on = np.abs(d[:, i]) <= eps
        lo = np.where(on, np.minimum(lo, t[:, i]), lo)
        hi = np.where(on, np.maximum(hi, t[:, i]), hi)
    return lo, hi


def _interval_test(A, B, dA, dB, nA, nB, margin_rel: float = 1e-9):
    d = np.cross(nA, nB)
    norm = np.linalg.norm(d, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    d = d / norm
    scale = np.maximum(np.abs(dA).max(axis=1), np.abs(dB).max(axis=1))
    epsd = 1e-12 * scale
    loA, hiA = _line_interval(A, dA, d, epsd)
    loB, hiB = _line_interval(B, dB, d, epsd)
    span = np.maximum(hiA - loA, hiB - loB)
    margin = margin_rel * np.maximum(span, 1e-300)
    return (np.minimum(hiA, hiB) - np.maximum(loA, loB)) > margin


def _coplanar_test(A, B, nA, eps):
    """2D separating-axis test after dropping the dominant normal axis."""
    drop = np.argmax(np.abs(nA), axis=1)
    keep = np.stack([(drop + 1) % 3, (drop + 2) % 3], axis=1)
    idx = np.arange(len(A))[:, None, None]
    A2 = A[idx, np.arange(3)[None, :, None], keep[:, None, :]]
    B2 = B[idx, np.arange(3)[None, :, None], keep[:, None, :]]
    separated = np.zeros(len(A), dtype=bool)
    for tri1, tri2 in ((A2, B2), (B2, A2)):
        for k in range(3):
            edge = tri1[:, (k + 1) % 3] - tri1[:, k]
            axis = np.stack([-edge[:, 1], edge[:, 0]], axis=1)
            norm = np.linalg.norm(axis, axis=1, keepdims=True)
            norm[norm == 0] = 1.0
            axis = axis / norm
            p1 = np.einsum("nij,nj->ni", tri1, axis)
            p2 = np.einsum("nij,nj->ni", tri2, axis)
            separated |= (p1.max(axis=1) <= p2.min(axis=1) + eps) \
                | (p2.max(axis=1) <= p1.min(axis=1) + eps)
    return ~separated


def export_solid(solid: SolidMesh, path, format: str = "binary",
                 metrics_path=None, thickness=None):
    """Write the solid as STL; optionally a metrics sidecar (JSON)."""
    solid.validate()
    save_stl(solid, path, format=format)
    if metrics_path:
        doc = {
            "signed_volume_mm3": solid.signed_volume(),
            "n_triangles": int(len(solid.triangles)),
            "bbox_mm": [solid.vertices.min(axis=0).tolist(),
                        solid.vertices.max(axis=0).tolist()],
        }
        if thickness is not None:
            t = np.asarray(getattr(thickness, "delta", thickness), dtype=float)
            doc["thickness_mm"] = {"min": float(t.min()), "max": float(t.max()),
                                   "mean": float(t.mean())}
        with open(metrics_path, "w") as f:
            json.dump(doc, f, indent=2)
