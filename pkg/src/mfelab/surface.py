"""Unit-area triangulated closed surfaces and their metric queries.

Three kinds of surface are supported:

* ``"sphere"``: icosahedral subdivision projected to a round sphere.  Distances
  are great-circle distances on the round sphere of area one.
* ``"torus"``: a regular grid on a flat rectangle of area one with opposite
  sides identified.  Distances use the quotient (minimum image) metric.
* ``"mesh"``: any closed triangle mesh read from disk.  Distances are shortest
  edge-path lengths, which overestimate the true geodesic distance by O(h).
"""
from __future__ import annotations

import json
import math
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from .errors import MeshError, ResourceLimitError

MAX_SPHERE_LEVEL = 8
UNIT_SPHERE_RADIUS = 1.0 / math.sqrt(4.0 * math.pi)


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class SurfaceMesh:
    """Closed triangulated surface rescaled to total area one.

    Parameters
    ----------
    vertices : (V, 3) array
        Embedding coordinates.  For the flat torus these are planar
        coordinates inside the fundamental rectangle, with ``z = 0``.
    faces : (F, 3) int array
        Vertex indices, consistently oriented.
    kind : {"sphere", "torus", "mesh"}
        Selects the distance oracle.
    period : (float, float), optional
        Side lengths of the fundamental rectangle (torus only).

    The instance is immutable: every array attribute is read-only and all
    queries are pure, so one mesh can be shared freely between threads.
    """

    def __init__(self, vertices, faces, kind="mesh", period=None, name=None, level=None, grid=None):
        if kind not in ("sphere", "torus", "mesh"):
            raise MeshError(f"unknown surface kind {kind!r}")
        if kind == "torus" and period is None:
            raise MeshError("torus mesh requires a period")
        vertices = np.asarray(vertices, dtype=float)
        faces = np.asarray(faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError("vertices must have shape (V, 3)")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshError("faces must have shape (F, 3)")
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise MeshError("face index out of range")
        self.vertices = _readonly(vertices)
        self.faces = _readonly(faces)
        self.kind = kind
        self.period = None if period is None else (float(period[0]), float(period[1]))
        self.name = name or kind
        self.level = level
        self.grid = grid
        self._check_manifold()
        if np.any(self.face_area <= 0.0):
            bad = int(np.argmin(self.face_area))
            raise MeshError(f"face {bad} has non-positive area {self.face_area[bad]:.3e}")

    # -- combinatorics -------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs, shape (E, 2)."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return _readonly(np.unique(e, axis=0))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    @property
    def genus_hint(self) -> int:
        return (2 - self.euler_characteristic) // 2

    def _check_manifold(self):
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        if np.any(counts != 2):
            raise MeshError(
                f"not a closed 2-manifold: {int(np.sum(counts != 2))} edges "
                "are not shared by exactly two faces"
            )

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric edge graph weighted by edge length."""
        i, j = self.edges.T
        w = self.edge_length
        V = self.n_vertices
        return sparse.csr_matrix(
            (np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
            shape=(V, V),
        )

    # -- geometry ------------------------------------------------------
    def _wrap(self, d):
        if self.period is None:
            return d
        d = d.copy()
        for axis, p in enumerate(self.period):
            d[..., axis] -= p * np.round(d[..., axis] / p)
        return d

    def face_edge_vectors(self):
        """Edge vectors (x1-x0, x2-x1, x0-x2) per face, unwrapped on the torus."""
        x = self.vertices
        f = self.faces
        e0 = self._wrap(x[f[:, 1]] - x[f[:, 0]])
        e1 = self._wrap(x[f[:, 2]] - x[f[:, 1]])
        e2 = self._wrap(x[f[:, 0]] - x[f[:, 2]])
        return e0, e1, e2

    @cached_property
    def face_area(self) -> np.ndarray:
        e0, _, e2 = self.face_edge_vectors()
        return _readonly(0.5 * np.linalg.norm(np.cross(e0, -e2), axis=1))

    @cached_property
    def vertex_area(self) -> np.ndarray:
        """Barycentric lumped areas: one third of each adjacent face."""
        a = np.zeros(self.n_vertices)
        for c in range(3):
            np.add.at(a, self.faces[:, c], self.face_area / 3.0)
        return _readonly(a)

    @property
    def total_area(self) -> float:
        return float(math.fsum(self.vertex_area))

    @cached_property
    def edge_length(self) -> np.ndarray:
        i, j = self.edges.T
        return _readonly(np.linalg.norm(self._wrap(self.vertices[j] - self.vertices[i]), axis=1))

    @property
    def mean_edge(self) -> float:
        return float(self.edge_length.mean())

    @property
    def max_edge(self) -> float:
        return float(self.edge_length.max())

    @cached_property
    def diameter(self) -> float:
        """Intrinsic diameter (exact for built-ins, double-sweep estimate otherwise)."""
        if self.kind == "sphere":
            return math.pi * UNIT_SPHERE_RADIUS
        if self.kind == "torus":
            return 0.5 * math.hypot(*self.period)
        d = distances_from(self, 0)
        far = int(np.argmax(d))
        return float(distances_from(self, far).max())

    @cached_property
    def _unit_directions(self):
        return self.vertices / np.linalg.norm(self.vertices, axis=1)[:, None]

    def summary(self) -> dict:
        return {
            "V": self.n_vertices,
            "E": self.n_edges,
            "F": self.n_faces,
            "chi": self.euler_characteristic,
            "total_area": self.total_area,
            "max_edge": self.max_edge,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)

    def __repr__(self):
        return (
            f"SurfaceMesh({self.name!r}, V={self.n_vertices}, F={self.n_faces}, "
            f"chi={self.euler_characteristic})"
        )


def _rescale_to_unit_area(vertices, faces, period=None):
    mesh = SurfaceMesh(vertices, faces, kind="torus" if period else "mesh", period=period)
    s = 1.0 / math.sqrt(float(mesh.face_area.sum()))
    return vertices * s, None if period is None else (period[0] * s, period[1] * s)


# -- builders ----------------------------------------------------------

_ICOSAHEDRON_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
)


def _icosahedron():
    p = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
            [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
            [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
        ],
        dtype=float,
    )
    return v / np.linalg.norm(v, axis=1)[:, None], _ICOSAHEDRON_FACES.copy()


def _subdivide(v, f):
    """Split every triangle into four, placing new vertices on the unit sphere."""
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    inv = inv.ravel()
    mid = v[uniq[:, 0]] + v[uniq[:, 1]]
    mid /= np.linalg.norm(mid, axis=1)[:, None]
    nF = len(f)
    m01 = len(v) + inv[:nF]
    m12 = len(v) + inv[nF : 2 * nF]
    m20 = len(v) + inv[2 * nF :]
    a, b, c = f.T
    nf = np.concatenate(
        [
            np.stack([a, m01, m20], axis=1),
            np.stack([b, m12, m01], axis=1),
            np.stack([c, m20, m12], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ]
    )
    return np.vstack([v, mid]), nf


def build_unit_volume_sphere(subdivision_level: int) -> SurfaceMesh:
    """Icosphere at the given subdivision level, rescaled to total area one."""
    level = int(subdivision_level)
    if level < 0:
        raise MeshError("subdivision level must be non-negative")
    if level > MAX_SPHERE_LEVEL:
        raise ResourceLimitError(
            f"subdivision level {level} exceeds the supported maximum {MAX_SPHERE_LEVEL} "
            f"({10 * 4 ** level + 2} vertices)"
        )
    v, f = _icosahedron()
    for _ in range(level):
        v, f = _subdivide(v, f)
    v, _ = _rescale_to_unit_area(v, f)
    return SurfaceMesh(v, f, kind="sphere", name=f"sphere-L{level}", level=level)


def build_flat_torus(n: int, m: int, aspect: float = 1.0) -> SurfaceMesh:
    """Regular ``n x m`` triangulated flat torus of area one.

    The fundamental rectangle has side ratio ``aspect`` (width / height); each
    grid cell is split along the same diagonal.
    """
    n, m = int(n), int(m)
    if n < 3 or m < 3:
        raise ValueError(f"torus grid needs n, m >= 3, got {n} x {m}")
    if not aspect > 0:
        raise ValueError("aspect must be positive")
    width, height = math.sqrt(aspect), 1.0 / math.sqrt(aspect)
    i, j = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    v = np.stack([i.ravel() * width / n, j.ravel() * height / m, np.zeros(n * m)], axis=1)

    def idx(a, b):
        return (a % n) * m + (b % m)

    i, j = i.ravel(), j.ravel()
    v00, v10, v01, v11 = idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1)
    f = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
    return SurfaceMesh(
        v, f, kind="torus", period=(width, height), name=f"torus-{n}x{m}", grid=(n, m)
    )


# -- distances ---------------------------------------------------------

def distances_from(mesh: SurfaceMesh, source: int) -> np.ndarray:
    """Distance from ``source`` to every vertex."""
    return pairwise_distances(mesh, [source], None)[0]


def pairwise_distances(mesh: SurfaceMesh, rows, cols=None) -> np.ndarray:
    """Distance matrix between vertex sets ``rows`` and ``cols`` (all vertices if None)."""
    rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
    cols = np.arange(mesh.n_vertices) if cols is None else np.atleast_1d(np.asarray(cols, dtype=np.int64))
    if mesh.kind == "sphere":
        u = mesh._unit_directions
        a, b = u[rows][:, None, :], u[cols][None, :, :]
        cross = np.linalg.norm(np.cross(a, b), axis=-1)
        dot = np.sum(a * b, axis=-1)
        return UNIT_SPHERE_RADIUS * np.arctan2(cross, dot)
    if mesh.kind == "torus":
        x = mesh.vertices[:, :2]
        d = x[rows][:, None, :] - x[cols][None, :, :]
        return np.linalg.norm(mesh._wrap(d), axis=-1)
    d = csgraph.dijkstra(mesh.adjacency, directed=False, indices=rows)
    return d[:, cols]


def geodesic_distance(mesh: SurfaceMesh, a: int, b: int) -> float:
    """Distance between two vertices.

    Exact for the built-in sphere and torus; for user meshes this is the
    shortest edge-path length, an upper bound on the polyhedral geodesic.
    """
    for v in (a, b):
        if not 0 <= int(v) < mesh.n_vertices:
            raise IndexError(f"vertex {v} out of range")
    if a == b:
        return 0.0
    return float(pairwise_distances(mesh, [a], [b])[0, 0])


def ball_incidence(mesh: SurfaceMesh, radius: float) -> sparse.csr_matrix:
    """Sparse 0/1 matrix with entry (i, j) set when d(i, j) <= radius."""
    V = mesh.n_vertices
    if mesh.kind == "sphere":
        theta = min(radius / UNIT_SPHERE_RADIUS, math.pi)
        tree = cKDTree(mesh._unit_directions)
        pairs = tree.query_pairs(2.0 * math.sin(theta / 2.0) * (1 + 1e-12), output_type="ndarray")
    elif mesh.kind == "torus":
        x = np.mod(mesh.vertices[:, :2], mesh.period)
        tree = cKDTree(x, boxsize=mesh.period)
        pairs = tree.query_pairs(radius * (1 + 1e-12), output_type="ndarray")
    else:
        d = csgraph.dijkstra(mesh.adjacency, directed=False, limit=radius * (1 + 1e-12))
        i, j = np.nonzero(np.isfinite(d))
        keep = i < j
        pairs = np.stack([i[keep], j[keep]], axis=1)
    i = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(V)])
    j = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(V)])
    return sparse.csr_matrix((np.ones(len(i)), (i, j)), shape=(V, V))


def farthest_point_sample(mesh: SurfaceMesh, count: int, start: int = 0) -> np.ndarray:
    """Greedy farthest-point vertex sample; ties go to the lowest index."""
    count = min(int(count), mesh.n_vertices)
    chosen = [int(start)]
    dmin = distances_from(mesh, start)
    while len(chosen) < count:
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, distances_from(mesh, nxt))
    return np.array(chosen, dtype=np.int64)


def refine(mesh: SurfaceMesh) -> SurfaceMesh:
    """Next finer built-in mesh (sphere: one more subdivision; torus: grid doubled)."""
    if mesh.kind == "sphere" and mesh.level is not None:
        return build_unit_volume_sphere(mesh.level + 1)
    if mesh.kind == "torus" and mesh.grid is not None:
        n, m = mesh.grid
        return build_flat_torus(2 * n, 2 * m, mesh.period[0] / mesh.period[1])
    raise MeshError("refinement is only available for built-in meshes")


# -- file IO -----------------------------------------------------------

def _strip(lines):
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def read_off(path) -> SurfaceMesh:
    lines = _strip(Path(path).read_text().splitlines())
    try:
        header = next(lines)
        if header.upper().startswith("OFF"):
            rest = header[3:].split()
            counts = rest if rest else next(lines).split()
        else:
            raise MeshError(f"{path}: missing OFF header")
        nv, nf = int(counts[0]), int(counts[1])
        v = np.array([[float(t) for t in next(lines).split()[:3]] for _ in range(nv)])
        faces = []
        for _ in range(nf):
            tok = next(lines).split()
            if int(tok[0]) != 3:
                raise MeshError(f"{path}: only triangle faces are supported")
            faces.append([int(t) for t in tok[1:4]])
    except (StopIteration, IndexError, ValueError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"{path}: malformed OFF file ({exc})") from exc
    return _user_mesh(v, np.array(faces), Path(path).name)


def read_obj(path) -> SurfaceMesh:
    v, faces = [], []
    try:
        for line in _strip(Path(path).read_text().splitlines()):
            tok = line.split()
            if tok[0] == "v":
                v.append([float(t) for t in tok[1:4]])
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) for t in tok[1:]]
                if len(idx) != 3:
                    raise MeshError(f"{path}: only triangle faces are supported")
                faces.append([i - 1 if i > 0 else len(v) + i for i in idx])
    except ValueError as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"{path}: malformed OBJ file ({exc})") from exc
    if not v or not faces:
        raise MeshError(f"{path}: no vertices or faces")
    return _user_mesh(np.array(v), np.array(faces), Path(path).name)


def _user_mesh(v, f, name):
    v = v - v.mean(axis=0)
    v, _ = _rescale_to_unit_area(v, f)
    return SurfaceMesh(v, f, kind="mesh", name=name)


def load_mesh(path) -> SurfaceMesh:
    suffix = Path(path).suffix.lower()
    if not Path(path).is_file():
        raise MeshError(f"{path}: no such file")
    if suffix == ".off":
        return read_off(path)
    if suffix == ".obj":
        return read_obj(path)
    raise MeshError(f"{path}: unsupported mesh format {suffix!r} (use .off or .obj)")


def write_off(mesh: SurfaceMesh, path):
    with open(path, "w") as fh:
        fh.write(f"OFF\n{mesh.n_vertices} {mesh.n_faces} {mesh.n_edges}\n")
        for x in mesh.vertices:
            fh.write(f"{float(x[0])!r} {float(x[1])!r} {float(x[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
