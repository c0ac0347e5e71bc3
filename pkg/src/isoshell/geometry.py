"""Triangulated mid-surface generation for cubic-symmetric shell lattices.

An implicit trigonometric field defines the lattice mid-surface as its zero
level set. One fundamental unit (the quadrirectangular tetrahedron
0 <= x <= y <= z <= D/2) is meshed by marching cubes plus half-space
clipping; reflections expand it to the eighth cell and the unit cell, and
translations tile unit cells into specimen arrays. All lengths are mm.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptySurface, NonManifold, WeldFailure

# Bounding-plane tag bits. x0..z1 are the analysis-box faces; xy/yz are the
# oblique faces of the fundamental tetrahedron (only set on fundamental meshes).
PLANE_BITS = {"x0": 1, "y0": 2, "z0": 4, "x1": 8, "y1": 16, "z1": 32,
              "xy": 64, "yz": 128}
BOX_BITS = ("x0", "y0", "z0", "x1", "y1", "z1")

WELD_TOL = 1e-9          # absolute vertex weld radius, mm
DEGENERATE_REL_AREA = 1e-12  # area floor relative to bbox diagonal squared


@dataclass(frozen=True)
class CellSpec:
    """Analysis-domain description: cell edge length and domain kind."""

    size_mm: float
    domain: str = "eighth"            # fundamental | eighth | unit | tiled
    tile: tuple[int, int, int] = (1, 1, 1)

    def __post_init__(self):
        if self.size_mm <= 0:
            raise ValueError("cell size must be positive")
        if self.domain not in ("fundamental", "eighth", "unit", "tiled"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if any(n < 1 for n in self.tile):
            raise ValueError("tile counts must be >= 1")

    @property
    def half(self) -> float:
        return 0.5 * self.size_mm


@dataclass(frozen=True)
class ImplicitSurface:
    """Trigonometric level-set field with full cubic symmetry.

    ``terms`` is a list of (coefficient, factors) where each factor is
    (axis, multiple, kind) and kind is "cos" or "sin"; a term evaluates to
    coefficient * prod_k trig(multiple * 2*pi/period * p[axis]).  The field
    must be invariant under all 48 cubic symmetry operations; this is
    verified on random samples at construction.
    """

    terms: tuple
    period: float
    name: str = "custom"

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("period must be positive")
        if not self.terms:
            raise ValueError("surface needs at least one term")
        self._check_cubic_symmetry()

    def evaluate(self, points) -> np.ndarray:
        """Field value at one point (3,) or many points (n, 3)."""
        p = np.asarray(points, dtype=float)
        scalar = p.ndim == 1
        p = np.atleast_2d(p)
        ang = (2.0 * np.pi / self.period) * p
        out = np.zeros(p.shape[0])
        for coef, factors in self.terms:
            term = np.full(p.shape[0], float(coef))
            for axis, mult, kind in factors:
                f = np.cos if kind == "cos" else np.sin
                term *= f(mult * ang[:, axis])
            out += term
        return out[0] if scalar else out

    def _check_cubic_symmetry(self, n_samples: int = 64, tol: float = 1e-12):
        rng = np.random.default_rng(71)
        pts = rng.uniform(-self.period, self.period, size=(n_samples, 3))
        ref = self.evaluate(pts)
        scale = max(1.0, float(np.max(np.abs(ref))))
        for op in cubic_symmetry_ops():
            img = self.evaluate(pts @ op.T)
            if np.max(np.abs(img - ref)) > tol * scale:
                raise ValueError(
                    f"surface {self.name!r} is not invariant under the 48 "
                    "cubic symmetry operations")


def cubic_symmetry_ops() -> list[np.ndarray]:
    """All 48 signed permutation matrices of the cubic point group."""
    ops = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            m = np.zeros((3, 3))
            for row, col in enumerate(perm):
                m[row, col] = signs[row]
            ops.append(m)
    return ops


def _c(axis, mult=1):
    return (axis, mult, "cos")


_PRESET_TERMS = {
    # 2(cX cY + cY cZ + cZ cX) - (c2X + c2Y + c2Z)
    "iwp": (
        (2.0, (_c(0), _c(1))), (2.0, (_c(1), _c(2))), (2.0, (_c(2), _c(0))),
        (-1.0, (_c(0, 2),)), (-1.0, (_c(1, 2),)), (-1.0, (_c(2, 2),)),
    ),
    # 4 cX cY cZ - (c2X c2Y + c2Y c2Z + c2Z c2X)
    "frd": (
        (4.0, (_c(0), _c(1), _c(2))),
        (-1.0, (_c(0, 2), _c(1, 2))), (-1.0, (_c(1, 2), _c(2, 2))),
        (-1.0, (_c(2, 2), _c(0, 2))),
    ),
    # 3(cX + cY + cZ) + 4 cX cY cZ
    "n": (
        (3.0, (_c(0),)), (3.0, (_c(1),)), (3.0, (_c(2),)),
        (4.0, (_c(0), _c(1), _c(2))),
    ),
}
_PRESET_ALIASES = {"neovius": "n"}


def preset_surface(name: str, period: float) -> ImplicitSurface:
    """Shipped nodal-surface presets: iwp, frd, n (alias neovius)."""
    key = _PRESET_ALIASES.get(name.lower(), name.lower())
    if key not in _PRESET_TERMS:
        known = sorted(set(_PRESET_TERMS) | set(_PRESET_ALIASES))
        raise KeyError(f"unknown preset {name!r}; known presets: {known}")
    return ImplicitSurface(terms=_PRESET_TERMS[key], period=period, name=key)


def surface_from_term_list(terms, period: float, name="custom") -> ImplicitSurface:
    """Build a surface from plain-data terms: [[coef, [[axis, mult, kind], ...]], ...]."""
    parsed = []
    for coef, factors in terms:
        parsed.append((float(coef),
                       tuple((int(a), int(m), str(k)) for a, m, k in factors)))
    return ImplicitSurface(terms=tuple(parsed), period=float(period), name=name)


@dataclass
class DomainMap:
    """Per-triangle provenance: fundamental source element and copy index (1-based)."""

    source: np.ndarray   # (nt,) int
    copy: np.ndarray     # (nt,) int, 1..n_copies
    n_source: int
    n_copies: int

    def classes(self):
        """Yield (source_id, triangle_indices) with one index per copy."""
        order = np.lexsort((self.copy, self.source))
        src_sorted = self.source[order]
        bounds = np.flatnonzero(np.diff(src_sorted)) + 1
        for group in np.split(order, bounds):
            yield int(self.source[group[0]]), group


@dataclass
class TriMesh:
    """Indexed triangle mesh with bounding-plane tags.

    ``plane_tags`` is a per-vertex bitmask over PLANE_BITS relative to
    ``box_lo``/``box_hi``.  ``domain_map`` is set on eighth-cell meshes built
    by mirror expansion and drives symmetry averaging downstream.
    """

    vertices: np.ndarray          # (nv, 3) float64
    triangles: np.ndarray         # (nt, 3) int64
    box_lo: np.ndarray
    box_hi: np.ndarray
    domain: str = "eighth"
    plane_tags: np.ndarray = field(default=None)  # (nv,) uint16
    domain_map: DomainMap | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.box_lo = np.asarray(self.box_lo, dtype=float)
        self.box_hi = np.asarray(self.box_hi, dtype=float)
        if self.plane_tags is None:
            self.plane_tags = tag_planes(self.vertices, self.box_lo, self.box_hi,
                                         diagonal=(self.domain == "fundamental"))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corner_coords(self):
        """(nt, 3, 3) vertex coordinates per triangle."""
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        p = self.corner_coords()
        return 0.5 * np.linalg.norm(
            np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def normals(self) -> np.ndarray:
        p = self.corner_coords()
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def area(self) -> float:
        return float(self.areas().sum())

    def box_volume(self) -> float:
        return float(np.prod(self.box_hi - self.box_lo))

    def edge_counts(self):
        """Sorted unique edges and their incidence counts."""
        t = self.triangles
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        return np.unique(edges, axis=0, return_counts=True)

    def boundary_edges(self) -> np.ndarray:
        edges, counts = self.edge_counts()
        return edges[counts == 1]

    def vertices_on(self, plane: str) -> np.ndarray:
        return np.flatnonzero(self.plane_tags & PLANE_BITS[plane])

    def validate(self):
        """Raise NonManifold on bad connectivity or untagged boundary edges."""
        if self.n_triangles == 0:
            raise NonManifold("mesh has no triangles")
        edges, counts = self.edge_counts()
        if np.any(counts > 2):
            raise NonManifold(
                f"{int(np.sum(counts > 2))} edges shared by more than 2 triangles")
        boundary = edges[counts == 1]
        if len(boundary):
            common = self.plane_tags[boundary[:, 0]] & self.plane_tags[boundary[:, 1]]
            if np.any(common == 0):
                bad = boundary[common == 0]
                raise NonManifold(
                    f"{len(bad)} boundary edges lie on no tagged plane "
                    f"(first: vertices {bad[0].tolist()})")
        diag2 = float(np.sum((self.box_hi - self.box_lo) ** 2))
        if np.any(self.areas() <= DEGENERATE_REL_AREA * diag2):
            raise NonManifold("degenerate triangles present")
        # orientability: each interior edge must be traversed once per direction
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        _, dir_counts = np.unique(directed, axis=0, return_counts=True)
        if np.any(dir_counts > 1):
            raise NonManifold("inconsistent triangle orientation")


def tag_planes(vertices, box_lo, box_hi, diagonal=False, tol=WELD_TOL):
    """Bitmask of bounding-plane incidences per vertex."""
    v = np.asarray(vertices)
    tags = np.zeros(len(v), dtype=np.uint16)
    for axis, (bit0, bit1) in enumerate((("x0", "x1"), ("y0", "y1"), ("z0", "z1"))):
        tags |= np.where(np.abs(v[:, axis] - box_lo[axis]) < tol,
                         PLANE_BITS[bit0], 0).astype(np.uint16)
        tags |= np.where(np.abs(v[:, axis] - box_hi[axis]) < tol,
                         PLANE_BITS[bit1], 0).astype(np.uint16)
    if diagonal:
        tags |= np.where(np.abs(v[:, 1] - v[:, 0]) < tol,
                         PLANE_BITS["xy"], 0).astype(np.uint16)
        tags |= np.where(np.abs(v[:, 2] - v[:, 1]) < tol,
                         PLANE_BITS["yz"], 0).astype(np.uint16)
    return tags


def weld_vertices(vertices, triangles, tol=WELD_TOL):
    """Merge vertices closer than ``tol``; drop degenerate triangles.

    Returns (vertices, triangles, old_to_new). Representative vertex of each
    cluster is the lowest-index member, so output is deterministic.
    """
    v = np.asarray(vertices, dtype=float) + 0.0   # normalizes -0.0 to +0.0
    n = len(v)
    parent = np.arange(n)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    if n:
        tree = cKDTree(v)
        for i, j in tree.query_pairs(tol, output_type="ndarray"):
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(n)])
    keep = np.unique(roots)
    remap = np.zeros(n, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    old_to_new = remap[roots]

    tris = old_to_new[np.asarray(triangles, dtype=np.int64)]
    ok = ((tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2])
          & (tris[:, 2] != tris[:, 0]))
    return v[keep], tris[ok], old_to_new


def collapse_short_edges(vertices, triangles, min_length, box_lo, box_hi,
                         max_passes: int = 10):
    """Collapse edges shorter than ``min_length`` (mesh hygiene pass).

    Marching cubes emits edges arbitrarily shorter than a cell; those sliver
    triangles later fold over during thickness offsetting.  Endpoints are
    merged at their midpoint when they carry identical plane tags, otherwise
    onto the endpoint whose tag set is a superset (keeping boundary vertices
    on their planes).  Edges between incomparably-tagged vertices stay.
    """
    v = np.asarray(vertices, dtype=float).copy()
    t = np.asarray(triangles, dtype=np.int64).copy()
    for _ in range(max_passes):
        tags = tag_planes(v, box_lo, box_hi, diagonal=True)
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        edges = np.unique(np.sort(edges, axis=1), axis=0)
        lengths = np.linalg.norm(v[edges[:, 0]] - v[edges[:, 1]], axis=1)
        short = edges[lengths < min_length]
        if len(short) == 0:
            break
        neighbors = [set() for _ in range(len(v))]
        for ea, eb in edges:
            neighbors[ea].add(int(eb))
            neighbors[eb].add(int(ea))
        apexes = {}
        for tri in t:
            for k in range(3):
                a, b, c = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
                key = (a, b) if a < b else (b, a)
                apexes.setdefault(key, set()).add(int(c))
        order = np.argsort(lengths[lengths < min_length], kind="stable")
        touched = np.zeros(len(v), dtype=bool)
        remap = np.arange(len(v))
        for a, b in short[order]:
            if touched[a] or touched[b]:
                continue
            # link condition: the common neighbors must be exactly the apex
            # vertices of the incident triangles, else the collapse pinches
            # the manifold
            key = (a, b) if a < b else (b, a)
            apex = apexes.get(key, set())
            if neighbors[a] & neighbors[b] != apex:
                continue
            ta, tb = int(tags[a]), int(tags[b])
            if ta == tb:
                target, gone = a, b
            elif ta & tb == tb:      # a's tags cover b's
                target, gone = a, b
            elif ta & tb == ta:
                target, gone = b, a
            else:
                continue
            # an interior edge with both ends on one plane would gain extra
            # triangles when mirror copies weld there; never create one
            def post_degree(x):
                d = 0
                for u in (a, b):
                    ek = (u, x) if u < x else (x, u)
                    d += len(apexes.get(ek, ()))
                return d - (2 if x in apex else 0)

            bad = False
            for x in (neighbors[a] | neighbors[b]) - {a, b}:
                if (int(tags[target]) & int(tags[x])) and post_degree(x) >= 2:
                    bad = True
                    break
            if bad:
                continue
            if ta == tb:
                v[target] = 0.5 * (v[a] + v[b])
            remap[gone] = target
            # freeze the whole 1-ring: two collapses in one pass must not
            # both feed triangles into the same surviving edge
            touched[a] = touched[b] = True
            for x in neighbors[a] | neighbors[b]:
                touched[x] = True
        if np.all(remap == np.arange(len(v))):
            break
        t = remap[t]
        ok = ((t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 2] != t[:, 0]))
        t = t[ok]
    return v, t


def _drop_unused_vertices(vertices, triangles):
    used = np.unique(triangles)
    remap = np.full(len(vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return vertices[used], remap[triangles]


def _drop_degenerate(vertices, triangles, box_lo, box_hi):
    p = vertices[triangles]
    areas = 0.5 * np.linalg.norm(
        np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    diag2 = float(np.sum((np.asarray(box_hi) - np.asarray(box_lo)) ** 2))
    return triangles[areas > DEGENERATE_REL_AREA * diag2]


def evaluate_implicit(surface, point):
    """Field value of the implicit surface at a point; zero marks the mid-surface."""
    return surface.evaluate(point)


def _clip_indexed(verts, faces, i_lo, i_hi):
    """Clip an indexed mesh against the half-space p[i_lo] <= p[i_hi].

    Edge intersections are computed once per undirected edge and shared by
    both incident triangles, so clipping never opens cracks.  New vertices
    are placed exactly on the plane (both coordinates set to their mean).
    """
    d = verts[:, i_hi] - verts[:, i_lo]
    new_pts = []
    cache = {}
    nv = len(verts)

    def crossing(a, b):
        key = (a, b) if a < b else (b, a)
        idx = cache.get(key)
        if idx is None:
            i, j = key
            t = d[i] / (d[i] - d[j])
            p = verts[i] + t * (verts[j] - verts[i])
            mid = 0.5 * (p[i_lo] + p[i_hi])
            p[i_lo] = p[i_hi] = mid
            idx = nv + len(new_pts)
            new_pts.append(p)
            cache[key] = idx
        return idx

    out = []
    for tri in faces:
        poly = []
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            if d[a] >= 0:
                poly.append(a)
            if (d[a] > 0 and d[b] < 0) or (d[a] < 0 and d[b] > 0):
                poly.append(crossing(a, b))
        for k in range(1, len(poly) - 1):   # fan keeps winding
            out.append((poly[0], poly[k], poly[k + 1]))

    if new_pts:
        verts = np.concatenate([verts, np.asarray(new_pts)])
    faces = np.asarray(out, dtype=np.int64).reshape(-1, 3)
    return verts, faces


def mesh_fundamental_unit(surface, spec: CellSpec, grid_resolution: int,
                          min_edge_fraction: float = 0.2) -> TriMesh:
    """Triangulate the zero level set inside the fundamental tetrahedron.

    Marching cubes runs on a regular grid over [0, D/2]^3; the result is
    clipped against x <= y and y <= z, snapped onto the clip and box planes,
    welded, and cleaned of edges shorter than ``min_edge_fraction`` of a
    grid cell.  Boundary vertices end up exactly on their planes.
    """
    if grid_resolution < 8:
        raise ValueError("grid_resolution must be >= 8 (mesh would be under-resolved)")
    from skimage.measure import marching_cubes

    L = spec.half
    h = L / grid_resolution
    axis = np.linspace(0.0, L, grid_resolution + 1)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    values = surface.evaluate(grid.reshape(-1, 3)).reshape(grid.shape[:3])

    # sign change inside the tetrahedron (sampled check before any meshing)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    in_tet = (gx <= gy + 1e-12) & (gy <= gz + 1e-12)
    tet_vals = values[in_tet]
    if tet_vals.min() > 0 or tet_vals.max() < 0:
        raise EmptySurface(
            f"surface {surface.name!r} has no zero crossing in the fundamental unit")

    if values.min() > 0 or values.max() < 0:
        raise EmptySurface(f"surface {surface.name!r} has no zero crossing in the box")
    # Keep samples off the exact level: zeros break the marching-cubes case
    # tables, and near-zero corners spawn near-degenerate crossings.  The
    # induced surface shift (clamp / |grad f|) is negligible; the short-edge
    # collapse below removes the remaining sliver triangles.
    scale = float(np.max(np.abs(values)))
    clamp = 1e-6 * scale
    small = np.abs(values) < clamp
    values[small] = np.where(values[small] >= 0, clamp, -clamp)
    verts, faces, _, _ = marching_cubes(values, level=0.0, spacing=(h, h, h),
                                        allow_degenerate=False)

    # orient all faces with the outward field gradient (consistent winding)
    centroids = verts[faces].mean(axis=1)
    eps = 1e-6 * L
    grad = np.stack([
        surface.evaluate(centroids + eps * np.eye(3)[k])
        - surface.evaluate(centroids - eps * np.eye(3)[k])
        for k in range(3)], axis=1)
    fn = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]],
                  verts[faces[:, 2]] - verts[faces[:, 0]])
    agree = np.einsum("ij,ij->i", fn, grad)
    if np.median(agree) < 0:
        faces = faces[:, ::-1]

    snap = 1e-7 * spec.size_mm
    _snap_planes(verts, L, snap)

    for lo, hi in ((0, 1), (1, 2)):       # x <= y, then y <= z
        verts, faces = _clip_indexed(verts, faces, lo, hi)
    if len(faces) == 0:
        raise EmptySurface(
            f"surface {surface.name!r} has no zero crossing in the fundamental unit")
    _snap_planes(verts, L, snap)

    box_lo = np.zeros(3)
    box_hi = np.full(3, L)
    v, t, _ = weld_vertices(verts, faces)
    v, t = collapse_short_edges(v, t, min_edge_fraction * h, box_lo, box_hi)
    t = _drop_degenerate(v, t, box_lo, box_hi)
    if len(t) == 0:
        raise EmptySurface("clipping left no triangles")
    v, t = _drop_unused_vertices(v, t)

    mesh = TriMesh(vertices=v, triangles=t, box_lo=box_lo, box_hi=box_hi,
                   domain="fundamental")
    mesh.validate()
    return mesh


def _snap_planes(verts, L, snap):
    """In-place snap onto box planes {0, L} and the two diagonal planes."""
    for axis in range(3):
        near0 = np.abs(verts[:, axis]) < snap
        nearL = np.abs(verts[:, axis] - L) < snap
        verts[near0, axis] = 0.0
        verts[nearL, axis] = L
    for lo, hi in ((0, 1), (1, 2)):
        near = np.abs(verts[:, hi] - verts[:, lo]) < snap
        mid = 0.5 * (verts[near, lo] + verts[near, hi])
        verts[near, lo] = mid
        verts[near, hi] = mid


_PERMS = ((0, 1, 2), (1, 0, 2), (0, 2, 1), (2, 1, 0), (1, 2, 0), (2, 0, 1))


def _perm_matrix(perm):
    m = np.zeros((3, 3))
    for row, col in enumerate(perm):
        m[row, col] = 1.0
    return m


def _perm_parity(perm):
    inversions = sum(1 for i in range(3) for j in range(i + 1, 3)
                     if perm[i] > perm[j])
    return -1.0 if inversions % 2 else 1.0


def mirror_about(mesh: TriMesh, plane: str) -> TriMesh:
    """Reflect across one plane and weld: 'xy', 'yz', 'x0', 'y0' or 'z0'.

    Used for single-step tests; pipeline expansion goes through mirror_expand.
    """
    v = mesh.vertices
    if plane == "xy":
        refl = v[:, [1, 0, 2]]
    elif plane == "yz":
        refl = v[:, [0, 2, 1]]
    elif plane in ("x0", "y0", "z0"):
        axis = "xyz".index(plane[0])
        refl = v.copy()
        refl[:, axis] = -refl[:, axis]
    else:
        raise ValueError(f"unknown mirror plane {plane!r}")
    flipped = mesh.triangles[:, ::-1] + len(v)
    all_v = np.concatenate([v, refl])
    all_t = np.concatenate([mesh.triangles, flipped])
    all_v, all_t, _ = weld_vertices(all_v, all_t)
    all_v, all_t = _drop_unused_vertices(all_v, all_t)
    lo = np.minimum(mesh.box_lo, refl.min(axis=0))
    hi = np.maximum(mesh.box_hi, refl.max(axis=0))
    return TriMesh(vertices=all_v, triangles=all_t, box_lo=lo, box_hi=hi,
                   domain=mesh.domain)


def mirror_expand(mesh: TriMesh, target: str) -> TriMesh:
    """Expand a fundamental unit to the eighth cell, or an eighth to the unit cell.

    Fundamental -> eighth applies the six coordinate permutations (three of
    them reflections, with flipped winding) and records the copy map.
    Eighth -> unit applies the eight sign maps about the cell mid-planes.
    """
    if target == "eighth":
        if mesh.domain != "fundamental":
            raise ValueError("eighth-cell expansion needs a fundamental mesh")
        nv, nt = mesh.n_vertices, mesh.n_triangles
        verts, tris = [], []
        for k, perm in enumerate(_PERMS):
            m = _perm_matrix(perm)
            pv = mesh.vertices @ m.T
            pt = mesh.triangles + k * nv
            if _perm_parity(perm) < 0:
                pt = pt[:, ::-1]
            verts.append(pv)
            tris.append(pt)
        all_v = np.concatenate(verts)
        all_t = np.concatenate(tris)
        source = np.tile(np.arange(nt), 6)
        copy = np.repeat(np.arange(1, 7), nt)

        all_v, all_t2, _ = weld_vertices(all_v, all_t)
        if len(all_t2) != 6 * nt:
            raise WeldFailure(
                f"expected {6 * nt} triangles after expansion, got {len(all_t2)}")
        all_v, all_t2 = _drop_unused_vertices(all_v, all_t2)
        out = TriMesh(vertices=all_v, triangles=all_t2,
                      box_lo=mesh.box_lo, box_hi=mesh.box_hi, domain="eighth",
                      domain_map=DomainMap(source=source, copy=copy,
                                           n_source=nt, n_copies=6))
        _check_weld(out)
        out.validate()
        return out

    if target == "unit":
        if mesh.domain != "eighth":
            raise ValueError("unit-cell expansion needs an eighth-cell mesh")
        nv, nt = mesh.n_vertices, mesh.n_triangles
        verts, tris = [], []
        for signs in itertools.product((1.0, -1.0), repeat=3):
            sv = mesh.vertices * np.asarray(signs)
            st = mesh.triangles + len(verts) * nv
            if np.prod(signs) < 0:
                st = st[:, ::-1]
            verts.append(sv)
            tris.append(st)
        all_v = np.concatenate(verts)
        all_t = np.concatenate(tris)
        all_v, all_t, _ = weld_vertices(all_v, all_t)
        if len(all_t) != 8 * nt:
            raise WeldFailure(
                f"expected {8 * nt} triangles after expansion, got {len(all_t)}")
        all_v, all_t = _drop_unused_vertices(all_v, all_t)
        L = mesh.box_hi[0]
        out = TriMesh(vertices=all_v, triangles=all_t,
                      box_lo=np.full(3, -L), box_hi=np.full(3, L), domain="unit")
        _check_weld(out)
        out.validate()
        return out

    raise ValueError(f"unknown expansion target {target!r}")


def _check_weld(mesh: TriMesh):
    """Boundary edges of an expanded mesh must all sit on box planes."""
    boundary = mesh.boundary_edges()
    if len(boundary) == 0:
        return
    box_mask = 0
    for name in BOX_BITS:
        box_mask |= PLANE_BITS[name]
    common = (mesh.plane_tags[boundary[:, 0]] & mesh.plane_tags[boundary[:, 1]]
              & box_mask)
    if np.any(common == 0):
        raise WeldFailure(
            f"{int(np.sum(common == 0))} mirror-plane boundary edges failed to weld")


def tile(mesh: TriMesh, nx: int, ny: int, nz: int) -> TriMesh:
    """Translate unit-cell copies into an nx x ny x nz array, welding shared faces."""
    if mesh.domain != "unit":
        raise ValueError("tiling needs a unit-cell mesh")
    if min(nx, ny, nz) < 1:
        raise ValueError("tile counts must be >= 1")
    if (nx, ny, nz) == (1, 1, 1):
        return mesh
    D = float(mesh.box_hi[0] - mesh.box_lo[0])
    verts, tris = [], []
    nv = mesh.n_vertices
    k = 0
    for i in range(nx):
        for j in range(ny):
            for l in range(nz):
                off = np.array([i * D, j * D, l * D])
                verts.append(mesh.vertices + off)
                tris.append(mesh.triangles + k * nv)
                k += 1
    all_v = np.concatenate(verts) + 0.0
    all_t = np.concatenate(tris)
    # shared-face vertices are bitwise identical: exact unique is enough
    view = np.ascontiguousarray(all_v).view([("x", float), ("y", float), ("z", float)])
    _, first, inverse = np.unique(view, return_index=True, return_inverse=True)
    order = np.argsort(first)            # keep original ordering deterministic
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    uniq_v = all_v[np.sort(first)]
    all_t = rank[inverse.ravel()][all_t]
    lo = mesh.box_lo.copy()
    hi = mesh.box_lo + np.array([nx, ny, nz]) * D
    out = TriMesh(vertices=uniq_v, triangles=all_t, box_lo=lo, box_hi=hi,
                  domain="tiled")
    out.validate()
    return out


def relative_density(mesh: TriMesh, thickness, spec: CellSpec | None = None) -> float:
    """Thin-shell volume fraction: sum(delta_i * A_i) / box volume."""
    t = np.asarray(getattr(thickness, "delta", thickness), dtype=float)
    areas = mesh.areas()
    if t.ndim == 0:
        t = np.full(len(areas), float(t))
    if len(t) != len(areas):
        raise ValueError("thickness field length does not match triangle count")
    return float(np.dot(t, areas) / mesh.box_volume())
