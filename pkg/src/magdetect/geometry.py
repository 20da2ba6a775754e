"""Closed triangulated surfaces, quadrature rules and measurement points.

Meshes are flat-panel triangulations with one collocation point (the
centroid) per triangle.  All arrays stored on the returned objects are made
read-only so that meshes can be shared freely between threads.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, GeometryError, ResourceError

__all__ = [
    "TriangleMesh",
    "QuadratureSet",
    "PointSet",
    "mesh_from_arrays",
    "make_icosphere",
    "make_ellipsoid",
    "transform_mesh",
    "check_closed",
    "quadrature_for",
    "sample_cap",
    "sphere_grid",
    "in_cap",
    "write_off",
]

# 20 * 4**8 triangles is already far beyond what dense operators can hold
MAX_SUBDIVISION = 8


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TriangleMesh:
    """Flat-panel triangulation of a closed surface.

    Attributes
    ----------
    vertices : (V, 3) array
    triangles : (F, 3) int array, counter-clockwise seen from outside
    normals : (F, 3) array of outward unit normals
    areas : (F,) array
    centroids : (F, 3) array of collocation points
    """

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray
    areas: np.ndarray
    centroids: np.ndarray
    name: str = ""

    @property
    def n_faces(self):
        return len(self.triangles)

    @property
    def corners(self):
        """(F, 3, 3) array of triangle corner coordinates."""
        return self.vertices[self.triangles]

    @property
    def total_area(self):
        return float(self.areas.sum())

    @property
    def size(self):
        """Typical panel diameter (square root of the mean area)."""
        return float(np.sqrt(self.areas.mean()))

    def bounding_sphere(self):
        """Return (center, radius) of a sphere enclosing all vertices."""
        c = self.vertices.mean(axis=0)
        return c, float(np.linalg.norm(self.vertices - c, axis=1).max())


@dataclass(frozen=True)
class QuadratureSet:
    """Nodes and positive weights for integration over a mesh."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int
    face_index: np.ndarray

    def integrate(self, values):
        """Integrate node values; trailing axes are kept."""
        return np.tensordot(self.weights, values, axes=(0, 0))


@dataclass(frozen=True)
class PointSet:
    """Evaluation or measurement points, optionally on a spherical cap.

    ``weights`` are equal-area (or exact quadrature) weights when the points
    sample a sphere, and ``None`` otherwise.
    """

    points: np.ndarray
    radius: float = None
    axis: np.ndarray = None
    half_angle: float = None
    weights: np.ndarray = None
    center: np.ndarray = field(default_factory=lambda: _frozen(np.zeros(3)))

    def __len__(self):
        return len(self.points)

    @property
    def full_sphere(self):
        return self.half_angle is not None and self.half_angle >= np.pi

    @property
    def directions(self):
        d = self.points - self.center
        return d / np.linalg.norm(d, axis=1, keepdims=True)


def mesh_from_arrays(vertices, triangles, name=""):
    """Build a mesh, computing normals, areas and centroids.

    Parameters
    ----------
    vertices : (V, 3) array_like
    triangles : (F, 3) array_like of int
        Counter-clockwise when seen from outside.
    """
    v = np.asarray(vertices, dtype=float)
    t = np.asarray(triangles, dtype=np.int64)
    if v.ndim != 2 or v.shape[1] != 3 or t.ndim != 2 or t.shape[1] != 3:
        raise ArgumentError("vertices must be (V, 3) and triangles (F, 3)")
    if t.size and (t.min() < 0 or t.max() >= len(v)):
        raise ArgumentError("triangle index out of range")
    p = v[t]
    cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    twice = np.linalg.norm(cr, axis=1)
    if np.any(twice <= 0):
        raise GeometryError("degenerate triangle with zero area")
    return TriangleMesh(
        vertices=_frozen(v),
        triangles=_frozen(t, np.int64),
        normals=_frozen(cr / twice[:, None]),
        areas=_frozen(0.5 * twice),
        centroids=_frozen(p.mean(axis=1)),
        name=name,
    )


def _icosahedron():
    g = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, g, 0], [1, g, 0], [-1, -g, 0], [1, -g, 0],
        [0, -1, g], [0, 1, g], [0, -1, -g], [0, 1, -g],
        [g, 0, -1], [g, 0, 1], [-g, 0, -1], [-g, 0, 1],
    ], dtype=float)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def _subdivide(v, f):
    """Split every triangle into four, projecting new vertices to the sphere."""
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    mid = v[uniq[:, 0]] + v[uniq[:, 1]]
    mid /= np.linalg.norm(mid, axis=1, keepdims=True)
    m = len(v) + inv.reshape(3, -1).T  # midpoints of edges 01, 12, 20
    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
    nf = np.concatenate([
        np.stack([a, m01, m20], 1),
        np.stack([b, m12, m01], 1),
        np.stack([c, m20, m12], 1),
        np.stack([m01, m12, m20], 1),
    ])
    return np.vstack([v, mid]), nf


def make_icosphere(subdivision_level, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Subdivided icosahedron with vertices on a sphere.

    Parameters
    ----------
    subdivision_level : int
        Number of 1-to-4 refinements; the mesh has ``20 * 4**level`` faces.
    radius : float
    center : 3-vector

    Returns
    -------
    TriangleMesh
    """
    level = int(subdivision_level)
    if level < 0 or radius <= 0:
        raise ArgumentError("subdivision_level must be >= 0 and radius > 0")
    if level > MAX_SUBDIVISION:
        raise ResourceError(f"subdivision level {level} exceeds memory budget")
    v, f = _icosahedron()
    for _ in range(level):
        v, f = _subdivide(v, f)
    center = np.asarray(center, dtype=float)
    return mesh_from_arrays(radius * v + center, f, name=f"icosphere{level}")


def make_ellipsoid(subdivision_level, semi_axes, center=(0.0, 0.0, 0.0)):
    """Icosphere stretched along the coordinate axes."""
    unit = make_icosphere(subdivision_level)
    return transform_mesh(unit, np.diag(np.asarray(semi_axes, float)), center)


def transform_mesh(mesh, matrix=None, shift=(0.0, 0.0, 0.0), scale=1.0):
    """Apply ``x -> scale * matrix @ x + shift`` to every vertex.

    Orientation is flipped back if ``matrix`` has a negative determinant.
    """
    a = np.eye(3) if matrix is None else np.asarray(matrix, dtype=float)
    v = scale * mesh.vertices @ a.T + np.asarray(shift, dtype=float)
    t = mesh.triangles if np.linalg.det(a) > 0 else mesh.triangles[:, ::-1]
    return mesh_from_arrays(v, t, name=mesh.name)


def check_closed(mesh, interior_point=None):
    """Verify closedness, orientation and sphere topology.

    Returns
    -------
    dict
        ``euler`` characteristic, ``manifold`` and ``outward`` flags.
    """
    t = mesh.triangles
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    fwd = {tuple(e) for e in directed.tolist()}
    manifold = len(fwd) == len(directed) and all(
        (b, a) in fwd for a, b in fwd)
    n_edges = len(directed) // 2
    euler = len(mesh.vertices) - n_edges + len(t)
    if interior_point is None:
        interior_point = mesh.vertices.mean(axis=0)
    outward = bool(np.all(np.einsum(
        "ij,ij->i", mesh.normals, mesh.centroids - interior_point) > 0))
    return {"euler": euler, "manifold": manifold, "outward": outward}


# symmetric triangle rules as (barycentric coordinates, weights summing to 1)
_A6, _B6 = 0.445948490915965, 0.091576213509771
_W6A, _W6B = 0.223381589678011, 0.109951743655322
_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    3: (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6],
                  [1 / 6, 1 / 6, 2 / 3]]), np.full(3, 1 / 3)),
    6: (np.array([[1 - 2 * _A6, _A6, _A6], [_A6, 1 - 2 * _A6, _A6],
                  [_A6, _A6, 1 - 2 * _A6], [1 - 2 * _B6, _B6, _B6],
                  [_B6, 1 - 2 * _B6, _B6], [_B6, _B6, 1 - 2 * _B6]]),
        np.array([_W6A] * 3 + [_W6B] * 3)),
}


def triangle_rule(order):
    """Barycentric nodes and unit-sum weights of a symmetric triangle rule."""
    if order not in _RULES:
        raise ArgumentError(f"quadrature order must be one of {sorted(_RULES)}")
    bary, w = _RULES[order]
    return bary, w / w.sum()


def quadrature_for(mesh, order=3):
    """Per-triangle quadrature over the flat panels of ``mesh``.

    Parameters
    ----------
    mesh : TriangleMesh
    order : {1, 3, 6}
        Points per triangle; exact for polynomials of degree 1, 2 and 4.

    Returns
    -------
    QuadratureSet
    """
    bary, w = triangle_rule(order)
    nodes = np.einsum("qk,fkj->fqj", bary, mesh.corners).reshape(-1, 3)
    weights = (mesh.areas[:, None] * w[None, :]).ravel()
    idx = np.repeat(np.arange(mesh.n_faces), len(w))
    return QuadratureSet(_frozen(nodes), _frozen(weights), order,
                         _frozen(idx, np.int64))


def _rotation_to(axis):
    """Rotation matrix taking +z to the unit vector ``axis``."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    z = np.array([0.0, 0.0, 1.0])
    c = float(a @ z)
    if c > 1 - 1e-15:
        return np.eye(3)
    if c < -1 + 1e-15:
        return np.diag([1.0, -1.0, -1.0])
    v = np.cross(z, a)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1 + c)


def sample_cap(radius, axis=(0.0, 0.0, 1.0), half_angle=np.pi, n=500,
               center=(0.0, 0.0, 0.0)):
    """Fibonacci-spiral points on a spherical cap.

    Parameters
    ----------
    radius : float
    axis : 3-vector
        Cap axis; normalized internally.
    half_angle : float
        Cap half-angle in radians; ``pi`` gives the full sphere.
    n : int
    center : 3-vector
        Sphere center.

    Returns
    -------
    PointSet
        Equal-area weights are attached.
    """
    if not 0 < half_angle <= np.pi or n < 1 or radius <= 0:
        raise ArgumentError("need 0 < half_angle <= pi, n >= 1, radius > 0")
    i = np.arange(n) + 0.5
    cos_a = np.cos(half_angle)
    ct = 1.0 - (1.0 - cos_a) * i / n
    st = np.sqrt(np.clip(1.0 - ct ** 2, 0.0, None))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * np.arange(n)
    d = np.stack([st * np.cos(phi), st * np.sin(phi), ct], axis=1)
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    d = d @ _rotation_to(axis).T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    center = np.asarray(center, dtype=float)
    w = np.full(n, 2 * np.pi * (1 - cos_a) * radius ** 2 / n)
    return PointSet(_frozen(radius * d + center), float(radius),
                    _frozen(axis), float(half_angle), _frozen(w),
                    _frozen(center))


def sphere_grid(radius, n_theta, center=(0.0, 0.0, 0.0)):
    """Gauss-Legendre by trapezoid product grid on a full sphere.

    Integrates spherical polynomials of degree below ``2 * n_theta`` exactly.
    """
    x, wx = np.polynomial.legendre.leggauss(int(n_theta))
    n_phi = 2 * int(n_theta)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    ct = np.repeat(x, n_phi)
    st = np.sqrt(1 - ct ** 2)
    ph = np.tile(phi, len(x))
    d = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=1)
    w = np.repeat(wx, n_phi) * (2 * np.pi / n_phi) * radius ** 2
    center = np.asarray(center, dtype=float)
    return PointSet(_frozen(radius * d + center), float(radius),
                    _frozen([0.0, 0.0, 1.0]), float(np.pi), _frozen(w),
                    _frozen(center))


def in_cap(points, axis, half_angle, center=(0.0, 0.0, 0.0), tol=1e-12):
    """Membership predicate for the cone of a cap."""
    d = np.atleast_2d(points) - np.asarray(center, dtype=float)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    a = np.asarray(axis, dtype=float)
    return d @ (a / np.linalg.norm(a)) >= np.cos(half_angle) - tol


def write_off(mesh, path):
    """Write ``mesh`` as an OFF text file."""
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(mesh.vertices)} {mesh.n_faces} 0\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
