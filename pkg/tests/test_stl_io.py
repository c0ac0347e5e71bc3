import numpy as np
import pytest

from isoshell.errors import MalformedFile
from isoshell.geometry import CellSpec, TriMesh
from isoshell.stl_io import (load_sidecar, load_stl, save_sidecar, save_stl,
                             sidecar_path)


@pytest.fixture
def two_triangles():
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0],
                      [0.0, 1.0, 0.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    return TriMesh(vertices=verts, triangles=tris, box_lo=np.zeros(3),
                   box_hi=np.array([1.0, 1.0, 1.0]))


@pytest.mark.parametrize("fmt", ["binary", "ascii"])
def test_round_trip_two_triangles(tmp_path, two_triangles, fmt):
    path = tmp_path / "two.stl"
    save_stl(two_triangles, path, format=fmt)
    back = load_stl(path)
    assert back.n_triangles == 2
    assert back.n_vertices == 4
    # connectivity identical up to the soup ordering; compare edge sets
    def edge_set(m):
        e = np.sort(np.concatenate([m.triangles[:, [0, 1]],
                                    m.triangles[:, [1, 2]],
                                    m.triangles[:, [2, 0]]]), axis=1)
        return {tuple(map(tuple, np.sort(m.vertices[edge], axis=0).round(6)))
                for edge in e}
    assert edge_set(back) == edge_set(two_triangles)
    # coordinates exact at float32 precision
    lookup = {tuple(v) for v in
              two_triangles.vertices.astype(np.float32).astype(float).round(12)}
    for v in back.vertices:
        assert tuple(np.round(v, 12)) in lookup


def test_truncated_binary_raises(tmp_path, two_triangles):
    path = tmp_path / "two.stl"
    save_stl(two_triangles, path, format="binary")
    blob = path.read_bytes()
    bad = tmp_path / "bad.stl"
    bad.write_bytes(blob[:100])
    with pytest.raises(MalformedFile) as err:
        load_stl(bad)
    assert err.value.offset is not None


def test_header_too_short(tmp_path):
    bad = tmp_path / "tiny.stl"
    bad.write_bytes(b"0123456789")
    with pytest.raises(MalformedFile):
        load_stl(bad)


def test_bad_ascii_vertex(tmp_path):
    bad = tmp_path / "bad.stl"
    bad.write_text("solid x\nfacet normal 0 0 1\nouter loop\n"
                   "vertex 0 0 zero\nvertex 1 0 0\nvertex 0 1 0\n"
                   "endloop\nendfacet\nendsolid x\n")
    with pytest.raises(MalformedFile):
        load_stl(bad)


def test_unit_cube_area(tmp_path):
    d = 2.0
    corners = np.array([[x, y, z] for x in (0, d) for y in (0, d) for z in (0, d)])
    faces = []
    for axis in range(3):
        for side in (0, 1):
            ids = [i for i, c in enumerate(corners) if c[axis] == side * d]
            a, b, cc, dd = ids
            faces += [[a, b, cc], [b, dd, cc]]
    mesh = TriMesh(vertices=corners, triangles=np.array(faces),
                   box_lo=np.zeros(3), box_hi=np.full(3, d))
    path = tmp_path / "cube.stl"
    save_stl(mesh, path)
    back = load_stl(path)
    assert back.n_triangles == 12
    assert back.area() == pytest.approx(6 * d * d, rel=1e-6)


def test_sidecar_round_trip(tmp_path, iwp_eighth_16):
    path = tmp_path / "eighth.stl"
    spec = CellSpec(2.0, "eighth")
    save_stl(iwp_eighth_16, path)
    save_sidecar(iwp_eighth_16, spec, sidecar_path(path))
    back = load_stl(path)
    spec2 = load_sidecar(back, sidecar_path(path))
    assert spec2.size_mm == spec.size_mm
    assert back.domain == "eighth"
    assert back.domain_map is not None
    assert np.array_equal(back.domain_map.source, iwp_eighth_16.domain_map.source)
    assert np.array_equal(back.domain_map.copy, iwp_eighth_16.domain_map.copy)
    for plane in ("x0", "y0", "z0", "x1", "y1", "z1"):
        orig = iwp_eighth_16.vertices_on(plane)
        got = back.vertices_on(plane)
        assert len(orig) == len(got)
        # tagged vertices sit on the plane in the loaded float32 geometry
        axis = "xyz".index(plane[0])
        target = 0.0 if plane[1] == "0" else 1.0
        if len(got):
            assert np.max(np.abs(back.vertices[got, axis] - target)) < 1e-6
