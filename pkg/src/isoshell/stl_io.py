"""STL interchange plus a JSON sidecar for data STL cannot carry.

Binary STL: 80-byte header, uint32 triangle count, then 50-byte little-endian
records (normal 3f, three vertices 3f each, uint16 attribute).  Loading welds
the triangle soup back into an indexed mesh.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import MalformedFile
from .geometry import (PLANE_BITS, CellSpec, DomainMap, TriMesh,
                       _drop_unused_vertices, weld_vertices)

_RECORD = struct.Struct("<12fH")
_HEADER_TEXT = b"isoshell mid-surface mesh"


def save_stl(mesh, path, format: str = "binary"):
    """Write the mesh as binary (default) or ascii STL."""
    verts = np.asarray(mesh.vertices, dtype=np.float32)
    tris = np.asarray(mesh.triangles)
    p = verts[tris]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]).astype(np.float64)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    n = (n / norm).astype(np.float32)

    if format == "binary":
        with open(path, "wb") as f:
            f.write(_HEADER_TEXT.ljust(80, b"\0"))
            f.write(struct.pack("<I", len(tris)))
            rec = np.zeros((len(tris), 50), dtype=np.uint8)
            payload = np.concatenate(
                [n.reshape(-1, 3), p.reshape(len(tris), 9)], axis=1
            ).astype("<f4")
            rec[:, :48] = payload.view(np.uint8).reshape(len(tris), 48)
            f.write(rec.tobytes())
    elif format == "ascii":
        with open(path, "w") as f:
            f.write("solid isoshell\n")
            for ni, pi in zip(n, p):
                f.write(f"facet normal {ni[0]:.9e} {ni[1]:.9e} {ni[2]:.9e}\n")
                f.write(" outer loop\n")
                for v in pi:
                    f.write(f"  vertex {v[0]:.9e} {v[1]:.9e} {v[2]:.9e}\n")
                f.write(" endloop\nendfacet\n")
            f.write("endsolid isoshell\n")
    else:
        raise ValueError(f"unknown STL format {format!r}")


def load_stl(path, weld_tol: float = 1e-9) -> TriMesh:
    """Read binary or ascii STL and weld into an indexed TriMesh.

    Plane tags / domain map are not in the file; load the sidecar to restore
    them, or rely on TriMesh retagging against the recovered bounding box.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 15:
        raise MalformedFile("file too short for STL", offset=len(blob))
    is_ascii = blob.lstrip()[:5] == b"solid" and b"facet" in blob[:4096]
    if is_ascii:
        pts = _parse_ascii(blob, path)
    else:
        pts = _parse_binary(blob)
    tris = np.arange(len(pts)).reshape(-1, 3)
    v, t, _ = weld_vertices(pts, tris, tol=weld_tol)
    v, t = _drop_unused_vertices(v, t)
    lo, hi = v.min(axis=0), v.max(axis=0)
    return TriMesh(vertices=v, triangles=t, box_lo=lo, box_hi=hi, domain="tiled")


def _parse_binary(blob):
    if len(blob) < 84:
        raise MalformedFile("binary STL shorter than header", offset=len(blob))
    (count,) = struct.unpack_from("<I", blob, 80)
    expected = 84 + 50 * count
    if len(blob) < expected:
        raise MalformedFile(
            f"binary STL truncated: {count} triangles declared", offset=len(blob))
    raw = np.frombuffer(blob, dtype=np.uint8, count=50 * count, offset=84)
    payload = raw.reshape(count, 50)[:, :48].copy().view("<f4").reshape(count, 12)
    return payload[:, 3:].astype(np.float64).reshape(-1, 3)


def _parse_ascii(blob, path):
    pts = []
    for lineno, line in enumerate(blob.decode("ascii", errors="replace").splitlines()):
        parts = line.split()
        if parts[:1] == ["vertex"]:
            if len(parts) != 4:
                raise MalformedFile(f"bad vertex line {lineno + 1} in {path}")
            try:
                pts.append([float(x) for x in parts[1:]])
            except ValueError:
                raise MalformedFile(f"bad vertex line {lineno + 1} in {path}")
    if not pts or len(pts) % 3:
        raise MalformedFile(f"ascii STL vertex count {len(pts)} not a multiple of 3")
    return np.asarray(pts)


def sidecar_path(stl_path) -> str:
    return str(stl_path) + ".meta.json"


def save_sidecar(mesh, spec: CellSpec, path):
    """Write plane tags, domain map and cell spec next to the STL.

    Vertex ids are stored in STL load order (first occurrence in the triangle
    stream), which is what load_stl reconstructs, so tags survive the round
    trip even though welding renumbers vertices.
    """
    soup = mesh.triangles.ravel()
    present, first_idx = np.unique(soup, return_index=True)
    order = np.argsort(first_idx)                 # old ids by first appearance
    new_id = np.full(mesh.n_vertices, -1, dtype=np.int64)
    new_id[present[order]] = np.arange(len(present))
    tags = {}
    for name in PLANE_BITS:
        ids = mesh.vertices_on(name)
        ids = new_id[ids]
        ids = ids[ids >= 0]
        if len(ids):
            tags[name] = np.sort(ids).tolist()
    doc = {
        "cell": {"size_mm": spec.size_mm, "domain": spec.domain,
                 "tile": list(spec.tile)},
        "box": {"lo": mesh.box_lo.tolist(), "hi": mesh.box_hi.tolist()},
        "plane_tags": tags,
        "domain_map": None,
    }
    if mesh.domain_map is not None:
        doc["domain_map"] = {
            "source": mesh.domain_map.source.tolist(),
            "copy": mesh.domain_map.copy.tolist(),
            "n_source": mesh.domain_map.n_source,
            "n_copies": mesh.domain_map.n_copies,
        }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_sidecar(mesh: TriMesh, path) -> CellSpec:
    """Apply sidecar metadata to a freshly loaded mesh; returns the cell spec."""
    with open(path) as f:
        doc = json.load(f)
    mesh.box_lo = np.asarray(doc["box"]["lo"], dtype=float)
    mesh.box_hi = np.asarray(doc["box"]["hi"], dtype=float)
    tags = np.zeros(mesh.n_vertices, dtype=np.uint16)
    for name, ids in doc["plane_tags"].items():
        tags[np.asarray(ids, dtype=int)] |= PLANE_BITS[name]
    mesh.plane_tags = tags
    dm = doc.get("domain_map")
    if dm:
        mesh.domain_map = DomainMap(
            source=np.asarray(dm["source"], dtype=np.int64),
            copy=np.asarray(dm["copy"], dtype=np.int64),
            n_source=int(dm["n_source"]), n_copies=int(dm["n_copies"]))
    cell = doc["cell"]
    mesh.domain = cell["domain"]
    return CellSpec(size_mm=float(cell["size_mm"]), domain=cell["domain"],
                    tile=tuple(cell["tile"]))
