"""Forward models for small permeable anomalies above a field-producing core.

Geometry: a spherical core of radius ``core_radius`` produces the
background field; anomalies sit in the shell between the core and the
sphere of radius ``shell_radius``; measurements are taken outside that
sphere.  All fields are static (leading order in frequency).

Conventions
-----------
The dipole field of moment p at z is ``-Hess Gamma_0(x - z) p``, i.e.
``(3 r^ (r^ . p) - p) / (4 pi r^3)``.  The core keeps its own output fixed,
so every perturbation field has zero tangential trace on the core surface.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import elliprd

from .errors import (ArgumentError, ContrastError, DomainError,
                     GeometryError)
from .geometry import (PointSet, TriangleMesh, make_ellipsoid,
                       make_icosphere, sphere_grid, transform_mesh)
from .potentials import (ScalarDensity, TangentialDensity, assemble_Kstar,
                         assemble_L, assemble_N, assemble_S, eval_field,
                         exterior_curl_system, factorize, field_matrix,
                         gamma_k)

__all__ = [
    "Anomaly",
    "Background",
    "AnomalyScene",
    "Discretization",
    "PolarizationTensor",
    "FieldSamples",
    "LeadingDensities",
    "varsigma",
    "dipole_tensor",
    "dipole_field",
    "background_H",
    "polarization_ball",
    "polarization_ellipsoid",
    "polarization_bem",
    "polarization_tensor",
    "anomaly_mesh",
    "core_model",
    "solve_leading_densities",
    "dipole_perturbation",
    "bem_oracle_perturbation",
    "omega_linear_difference",
]

FOUR_PI = 4.0 * np.pi
# below this distance from 1/2, varsigma is reported as the infinite-mu limit
LIMIT_TOL = 1e-9


def _vec(v):
    a = np.array(v, dtype=float).reshape(3)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Anomaly:
    """One inclusion ``D = delta * Omega + center``.

    ``shape`` is ``"ball"``, ``"ellipsoid"`` (unit-scale ``semi_axes``) or a
    unit-scale ``TriangleMesh`` centred at the origin.
    """

    center: np.ndarray
    delta: float
    mu: float
    sigma: float = 0.0
    shape: object = "ball"
    semi_axes: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        if not self.delta > 0:
            raise ArgumentError("anomaly scale delta must be positive")
        if not self.mu > 0:
            raise ContrastError("permeability must be positive")
        if self.sigma < 0:
            raise ArgumentError("conductivity must be non-negative")
        if self.shape == "ellipsoid":
            if self.semi_axes is None or min(self.semi_axes) <= 0:
                raise ArgumentError("ellipsoid needs positive semi_axes")
        elif self.shape != "ball" and not isinstance(self.shape, TriangleMesh):
            raise ArgumentError("shape must be 'ball', 'ellipsoid' or a mesh")

    @property
    def extent(self):
        """Radius of a ball about ``center`` containing the anomaly."""
        if self.shape == "ball":
            return self.delta
        if self.shape == "ellipsoid":
            return self.delta * max(self.semi_axes)
        return self.delta * float(np.linalg.norm(self.shape.vertices,
                                                 axis=1).max())


@dataclass(frozen=True)
class Background:
    """Background field: an internal dipole or a uniform field."""

    kind: str = "dipole"
    moment: np.ndarray = (0.0, 0.0, 1.0)
    position: np.ndarray = (0.0, 0.0, 0.0)
    field: np.ndarray = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("dipole", "uniform"):
            raise ArgumentError("background kind must be dipole or uniform")
        for name in ("moment", "position", "field"):
            object.__setattr__(self, name, _vec(getattr(self, name)))

    def evaluate(self, points):
        x = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "uniform":
            return np.broadcast_to(self.field, x.shape).copy()
        return dipole_field(x, self.position, self.moment)


@dataclass(frozen=True)
class AnomalyScene:
    """Core, shell and anomaly list; invariants are checked on creation."""

    core_radius: float
    shell_radius: float
    anomalies: tuple
    background: Background = field(default_factory=Background)
    mu0: float = 1.0
    center: np.ndarray = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "anomalies", tuple(self.anomalies))
        if not 0 < self.core_radius < self.shell_radius:
            raise GeometryError("need 0 < core_radius < shell_radius")
        if not self.mu0 > 0:
            raise ContrastError("mu0 must be positive")
        if self.background.kind == "dipole" and (
                np.linalg.norm(self.background.position - self.center)
                >= self.core_radius):
            raise GeometryError("background dipole must lie inside the core")
        for i, a in enumerate(self.anomalies):
            varsigma(a.mu, self.mu0)
            r = np.linalg.norm(a.center - self.center)
            if not (self.core_radius < r - a.extent
                    and r + a.extent < self.shell_radius):
                raise GeometryError(f"anomaly {i} is not inside the shell")
            for j in range(i):
                b = self.anomalies[j]
                sep = np.linalg.norm(a.center - b.center)
                if sep < 10 * max(a.delta, b.delta):
                    raise GeometryError(
                        f"anomalies {j} and {i} closer than 10 delta")

    def with_anomalies(self, anomalies):
        return AnomalyScene(self.core_radius, self.shell_radius,
                            tuple(anomalies), self.background, self.mu0,
                            self.center)

    def check_exterior(self, points):
        x = np.atleast_2d(points)
        if np.any(np.linalg.norm(x - self.center, axis=1)
                  <= self.shell_radius):
            raise DomainError("points must lie outside the shell")

    def check_far(self, points):
        """Every point at least 20 delta from every anomaly."""
        x = np.atleast_2d(points)
        for a in self.anomalies:
            if np.linalg.norm(x - a.center, axis=1).min() < 20 * a.delta:
                raise DomainError("point too close to an anomaly for the "
                                  "dipole approximation (need 20 delta)")


@dataclass(frozen=True)
class Discretization:
    """Mesh levels used by the boundary-element parts of the models."""

    core_level: int = 3
    anomaly_level: int = 3


@dataclass(frozen=True)
class PolarizationTensor:
    """3x3 polarization tensor; ``asymmetry`` is that of the raw discrete
    result before symmetrization (zero for closed forms)."""

    matrix: np.ndarray
    mu: float
    mu0: float
    shape: str
    asymmetry: float = 0.0


@dataclass(frozen=True)
class FieldSamples:
    """Field vectors at a point set; ``provenance`` names the model."""

    points: PointSet
    values: np.ndarray
    provenance: str

    def __post_init__(self):
        if len(self.points.points) != len(self.values):
            raise ArgumentError("points and values differ in length")


def varsigma(mu_l, mu0, with_flag=False):
    """(mu + mu0) / (2 (mu - mu0)); infinite mu gives the limit 1/2.

    With ``with_flag`` returns ``(value, at_limit)`` where ``at_limit``
    marks the perfectly permeable limit.
    """
    if not (mu_l > 0 and mu0 > 0):
        raise ContrastError("permeabilities must be positive")
    if mu_l == mu0:
        raise ContrastError("mu equals mu0: no contrast")
    s = 0.5 if np.isinf(mu_l) else (mu_l + mu0) / (2.0 * (mu_l - mu0))
    if with_flag:
        return s, bool(abs(s - 0.5) < LIMIT_TOL)
    return s


def dipole_tensor(points, z):
    """(P, 3, 3) stack of -Hess Gamma_0(x - z)."""
    r = np.atleast_2d(points) - np.asarray(z, dtype=float)
    R = np.linalg.norm(r, axis=1)
    if np.any(R == 0):
        raise DomainError("field point coincides with the dipole")
    rh = r / R[:, None]
    return ((3 * rh[:, :, None] * rh[:, None, :] - np.eye(3))
            / (FOUR_PI * R ** 3)[:, None, None])


def dipole_field(points, z, p):
    """Field of the point dipole p at z."""
    r = np.atleast_2d(points) - np.asarray(z, dtype=float)
    R = np.linalg.norm(r, axis=1)
    if np.any(R == 0):
        raise DomainError("field point coincides with the dipole")
    p = np.asarray(p)
    rp = r @ p
    return (3 * r * (rp / R ** 2)[:, None] - p) / (FOUR_PI * R ** 3)[:, None]


def _points(points):
    if isinstance(points, PointSet):
        return points
    return PointSet(np.atleast_2d(np.asarray(points, dtype=float)))


def background_H(scene, points, method="analytic", level=3):
    """Background field outside the core.

    Parameters
    ----------
    scene : AnomalyScene
    points : PointSet or (P, 3) array
    method : {"analytic", "layer"}
        ``layer`` rebuilds the field from its tangential trace on the core
        through the curl of a vector single layer.
    level : int
        Core mesh level for ``layer``.

    Returns
    -------
    FieldSamples
    """
    ps = _points(points)
    x = ps.points
    if np.any(np.linalg.norm(x - scene.center, axis=1) <= scene.core_radius):
        raise DomainError("background field requested inside the core")
    if method == "analytic":
        return FieldSamples(ps, scene.background.evaluate(x), "background")
    if method != "layer":
        raise ArgumentError("method must be 'analytic' or 'layer'")
    if scene.background.kind != "dipole":
        raise ArgumentError("layer representation needs a decaying field")
    core = core_model(scene.core_radius, tuple(scene.center), level)
    dens = core.curl_density(scene.background.evaluate(core.mesh.centroids))
    vals = eval_field(TangentialDensity(core.mesh, dens), "curl_A", x)
    return FieldSamples(ps, vals, "background-layer")


def polarization_ball(mu_l, mu0):
    """4 pi (mu - mu0) / (mu + 2 mu0) I for the unit ball."""
    varsigma(mu_l, mu0)
    s = 4 * np.pi if np.isinf(mu_l) else 4 * np.pi * (mu_l - mu0) / (mu_l + 2 * mu0)
    return PolarizationTensor(s * np.eye(3), mu_l, mu0, "ball")


def depolarization_factors(semi_axes):
    """Demagnetizing factors of an ellipsoid (they sum to 1)."""
    a, b, c = (float(s) for s in semi_axes)
    abc = a * b * c
    return np.array([abc / 3 * elliprd(b * b, c * c, a * a),
                     abc / 3 * elliprd(c * c, a * a, b * b),
                     abc / 3 * elliprd(a * a, b * b, c * c)])


def polarization_ellipsoid(mu_l, mu0, semi_axes):
    """Closed-form tensor of an axis-aligned ellipsoid.

    M_ii = |Omega| (k - 1) / (1 + (k - 1) N_i) with k = mu / mu0.
    """
    varsigma(mu_l, mu0)
    k = mu_l / mu0
    vol = 4 * np.pi / 3 * np.prod(semi_axes)
    Nf = depolarization_factors(semi_axes)
    return PolarizationTensor(np.diag(vol * (k - 1) / (1 + (k - 1) * Nf)),
                              mu_l, mu0, "ellipsoid")


def polarization_bem(mesh, varsigma_value, mu=None, mu0=None):
    """Polarization tensor of a unit-scale shape by boundary elements.

    Solves (varsigma I - K*) X_j = nu_j and integrates y X^T over the
    surface.  The returned matrix is the symmetric part; the raw relative
    asymmetry is kept in ``asymmetry``.
    """
    if not abs(varsigma_value) > 0.5:
        raise ArgumentError("need |varsigma| > 1/2")
    K = assemble_Kstar(mesh).matrix
    A = varsigma_value * np.eye(mesh.n_faces) - K
    X = factorize(A).solve(mesh.normals)
    raw = np.einsum("f,fi,fj->ij", mesh.areas, mesh.centroids, X)
    sym = 0.5 * (raw + raw.T)
    asym = float(np.linalg.norm(raw - raw.T) / np.linalg.norm(raw))
    return PolarizationTensor(sym, mu, mu0, mesh.name or "mesh", asym)


def mesh_volume(mesh):
    """Enclosed volume by the divergence theorem."""
    return float(np.sum(mesh.areas * np.einsum("fj,fj->f", mesh.centroids,
                                               mesh.normals)) / 3)


def anomaly_mesh(anomaly, level=3, unit=False, match_volume=True):
    """Triangulation of ``anomaly`` at true scale (or unit scale).

    Balls and ellipsoids are inscribed polyhedra; with ``match_volume``
    they are rescaled to the exact enclosed volume, which removes most of
    the flat-panel bias in the dipole moment.
    """
    if anomaly.shape == "ball":
        m = make_icosphere(level)
        exact = 4 * np.pi / 3
    elif anomaly.shape == "ellipsoid":
        m = make_ellipsoid(level, anomaly.semi_axes)
        exact = 4 * np.pi / 3 * float(np.prod(anomaly.semi_axes))
    else:
        m, exact = anomaly.shape, None
    s = 1.0
    if match_volume and exact is not None:
        s = (exact / mesh_volume(m)) ** (1 / 3)
    if unit:
        return transform_mesh(m, scale=s)
    return transform_mesh(m, scale=s * anomaly.delta, shift=anomaly.center)


def polarization_tensor(anomaly, mu0, level=3):
    """Closed form for balls and ellipsoids, boundary elements otherwise."""
    if anomaly.shape == "ball":
        return polarization_ball(anomaly.mu, mu0)
    if anomaly.shape == "ellipsoid":
        return polarization_ellipsoid(anomaly.mu, mu0, anomaly.semi_axes)
    return polarization_bem(anomaly.shape, varsigma(anomaly.mu, mu0),
                            anomaly.mu, mu0)


class CoreModel:
    """Boundary-element model of the core surface with cached factors."""

    def __init__(self, radius, center, level):
        self.mesh = make_icosphere(level, radius, center)
        self._curl = None
        self._neumann = None

    @property
    def curl_factor(self):
        if self._curl is None:
            self._curl = factorize(exterior_curl_system(self.mesh))
        return self._curl

    @property
    def neumann_factor(self):
        # -I/2 + K* has the equilibrium density in its kernel; border it
        # with the zero-total-charge constraint
        if self._neumann is None:
            F = self.mesh.n_faces
            a = self.mesh.areas
            B = np.zeros((F + 1, F + 1))
            B[:F, :F] = assemble_Kstar(self.mesh).matrix - 0.5 * np.eye(F)
            B[:F, F] = a
            B[F, :F] = a
            self._neumann = factorize(B)
        return self._neumann

    def curl_density(self, H):
        """(-I/2 + M)^{-1} [nu x H] for field values at the centroids."""
        t = np.cross(self.mesh.normals, H)
        return self.curl_factor.solve(t.reshape(-1)).reshape(-1, 3)

    def neumann_density(self, g):
        """Zero-mean psi with (-I/2 + K*) psi = g (columns allowed)."""
        g = np.asarray(g)
        rhs = np.concatenate([g, np.zeros((1,) + g.shape[1:])])
        return self.neumann_factor.solve(rhs)[:-1]

    def reflection_rhs(self, z, p):
        """nu . Hess Gamma_0(. - z) p on the core, for dipoles (z_l, p_l)."""
        c, n = self.mesh.centroids, self.mesh.normals
        g = np.zeros(len(c))
        for zl, pl in zip(np.atleast_2d(z), np.atleast_2d(p)):
            g -= np.einsum("fj,fj->f", n, dipole_field(c, zl, pl))
        return g

    def reflection_matrix(self, points):
        """B with core-reflection field = B @ reflection_rhs (3P x F)."""
        E = field_matrix(self.mesh, "grad_S", points)
        F = self.mesh.n_faces
        # E Y where Y = first F rows of the bordered inverse applied to
        # [I; 0]; use the transposed solve on E^T
        Et = np.zeros((F + 1, E.shape[0]))
        Et[:F] = E.T
        return self.neumann_factor.solve(Et, trans=True)[:F].T


@lru_cache(maxsize=4)
def core_model(radius, center, level):
    """Cached ``CoreModel``; ``center`` must be a tuple."""
    return CoreModel(radius, center, level)


@dataclass(frozen=True)
class LeadingDensities:
    """Solution of the coupled leading-order density system.

    ``phis[l]`` lives on ``meshes[l]``; ``core_density`` is the tangential
    density on the core whose curl field is the total exterior field
    produced by the core.
    """

    meshes: tuple
    phis: tuple
    core_mesh: TriangleMesh
    core_density: np.ndarray
    reflection_density: np.ndarray
    condition: float

    def perturbation(self, points):
        """H^0 - H_0^0: anomaly single layers plus their core reflection."""
        x = _points(points).points
        out = eval_field(TangentialDensity(self.core_mesh,
                                           self.reflection_density),
                         "curl_A", x)
        for m, ph in zip(self.meshes, self.phis):
            out = out + eval_field(ScalarDensity(m, ph), "grad_S", x)
        return out

    def scaled_density(self, l):
        """Density l as a function on the unit shape (values unchanged)."""
        return self.phis[l]


def _zero_flux(mesh):
    """Projector removing the area-weighted mean of a scalar density."""
    a = mesh.areas
    return np.eye(mesh.n_faces) - np.outer(np.ones(mesh.n_faces), a) / a.sum()


def solve_leading_densities(scene, disc=Discretization(), project=True):
    """Coupled anomaly densities with core coupling through P and L.

    Solves, for every anomaly l,

        (s_l - K*_l + P_l L_l) phi_l - sum_{l' != l} (K_{l,l'} - P_l L_l') phi_l'
            = P_l [nu x H_0]

    with P_l = N_{l <- core} (-I/2 + M_core)^{-1}, then forms the core
    density (-I/2 + M)^{-1} [nu x H_0 - sum_l L_l phi_l].

    Parameters
    ----------
    scene : AnomalyScene
    disc : Discretization
    project : bool
        Remove the area mean from every coupling and source term on each
        anomaly.  These terms are fluxes of divergence-free fields and
        vanish in the continuum; the projection makes the discrete
        densities exactly zero-mean.

    Returns
    -------
    LeadingDensities
    """
    core = core_model(scene.core_radius, tuple(scene.center), disc.core_level)
    meshes = [anomaly_mesh(a, disc.anomaly_level) for a in scene.anomalies]
    sizes = [m.n_faces for m in meshes]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    H0 = scene.background.evaluate(core.mesh.centroids)
    t0 = np.cross(core.mesh.normals, H0).reshape(-1)
    Xinv_t0 = core.curl_factor.solve(t0)
    Ls = [assemble_L(m, core.mesh).matrix for m in meshes]
    Xinv_L = core.curl_factor.solve(np.hstack(Ls)) if Ls else None
    n = offs[-1]
    A = np.zeros((n, n))
    rhs = np.zeros(n)
    for l, (a, m) in enumerate(zip(scene.anomalies, meshes)):
        sl = slice(offs[l], offs[l + 1])
        Nl = assemble_N(core.mesh, m).matrix
        PL = Nl @ Xinv_L
        row = PL.copy()
        for lp, mp in enumerate(meshes):
            if lp != l:
                row[:, offs[lp]:offs[lp + 1]] -= assemble_Kstar(mp, m).matrix
        b = Nl @ Xinv_t0
        if project:
            Pz = _zero_flux(m)
            row = Pz @ row
            b = Pz @ b
        A[sl] = row
        A[sl, sl] += (varsigma(a.mu, scene.mu0) * np.eye(m.n_faces)
                      - assemble_Kstar(m).matrix)
        rhs[sl] = b
    f = factorize(A)
    phi = f.solve(rhs)
    phis = tuple(phi[offs[l]:offs[l + 1]] for l in range(len(meshes)))
    refl = -(Xinv_L @ phi) if Ls else np.zeros(3 * core.mesh.n_faces)
    return LeadingDensities(tuple(meshes), phis, core.mesh,
                            (Xinv_t0 + refl).reshape(-1, 3),
                            refl.reshape(-1, 3), f.condition)


def _moments(scene, disc, H_at=None):
    ps = []
    for a in scene.anomalies:
        M = polarization_tensor(a, scene.mu0, disc.anomaly_level).matrix
        H = scene.background.evaluate(a.center)[0] if H_at is None else H_at
        ps.append(a.delta ** 3 * M @ H)
    return np.array(ps).reshape(-1, 3)


def dipole_perturbation(scene, points, disc=Discretization(),
                        include_core=True):
    """Three-term dipole asymptotic of the perturbation field.

    Returns sum_l [field of dipole p_l at z_l] plus, when ``include_core``,
    the core reflection grad S_core (-I/2 + K*)^{-1} [nu . Hess Gamma_0 p],
    with p_l = delta^3 M_l H(z_l).

    Parameters
    ----------
    scene : AnomalyScene
    points : PointSet or (P, 3) array
        Points outside the shell.
    disc : Discretization
    include_core : bool

    Returns
    -------
    FieldSamples
    """
    ps = _points(points)
    x = ps.points
    scene.check_exterior(x)
    scene.check_far(x)
    p = _moments(scene, disc)
    out = np.zeros_like(x)
    for a, pl in zip(scene.anomalies, p):
        out += dipole_field(x, a.center, pl)
    if include_core and len(p):
        core = core_model(scene.core_radius, tuple(scene.center),
                          disc.core_level)
        zs = np.array([a.center for a in scene.anomalies])
        psi = core.neumann_density(core.reflection_rhs(zs, p))
        out += eval_field(ScalarDensity(core.mesh, psi), "grad_S", x)
    return FieldSamples(ps, out, "asymptotic")


def bem_oracle_perturbation(scene, points, disc=Discretization(),
                            include_core=True):
    """Full static transmission solve in scalar-potential form.

    Unknowns: a single-layer density phi on every anomaly, a density psi on
    the core and a constant c.  Equations:

        (s_l - K*_l) phi_l - sum_{l' != l} nu . grad S_l' phi_l'
            - nu . grad S_core psi = nu . H_0          on each anomaly
        sum_l S_l phi_l + S_core psi = c               on the core
        int psi = 0

    The perturbation is grad (sum_l S_l phi_l + S_core psi); its tangential
    trace on the core vanishes.  ``include_core=False`` solves the
    free-space problem.

    Returns
    -------
    FieldSamples
    """
    ps = _points(points)
    x = ps.points
    meshes = [anomaly_mesh(a, disc.anomaly_level) for a in scene.anomalies]
    sizes = [m.n_faces for m in meshes]
    if include_core:
        core = core_model(scene.core_radius, tuple(scene.center),
                          disc.core_level).mesh
        sizes.append(core.n_faces)
    offs = np.concatenate([[0], np.cumsum(sizes)])
    n = offs[-1] + (1 if include_core else 0)
    A = np.zeros((n, n))
    rhs = np.zeros(n)
    for l, (a, m) in enumerate(zip(scene.anomalies, meshes)):
        sl = slice(offs[l], offs[l + 1])
        A[sl, sl] = (varsigma(a.mu, scene.mu0) * np.eye(m.n_faces)
                     - assemble_Kstar(m).matrix)
        for lp, mp in enumerate(meshes):
            if lp != l:
                A[sl, offs[lp]:offs[lp + 1]] = -assemble_Kstar(mp, m).matrix
        if include_core:
            A[sl, offs[-2]:offs[-1]] = -assemble_Kstar(core, m).matrix
        H = scene.background.evaluate(m.centroids)
        rhs[sl] = np.einsum("fj,fj->f", m.normals, H)
    if include_core:
        cs = slice(offs[-2], offs[-1])
        for l, m in enumerate(meshes):
            A[cs, offs[l]:offs[l + 1]] = assemble_S(m, target=core).matrix
        A[cs, cs] = assemble_S(core).matrix
        A[cs, -1] = -1.0
        A[-1, cs] = core.areas
    sol = factorize(A).solve(rhs)
    out = np.zeros_like(x)
    for l, m in enumerate(meshes):
        out += eval_field(ScalarDensity(m, sol[offs[l]:offs[l + 1]]),
                          "grad_S", x)
    if include_core:
        out += eval_field(ScalarDensity(core, sol[offs[-2]:offs[-1]]),
                          "grad_S", x)
    return FieldSamples(ps, out, "oracle")


def omega_linear_difference(scene_a, scene_b, points, index=0, n_radial=12,
                            n_theta=16):
    """First-order-in-frequency field difference from a conductivity change.

    i (mu_a sigma_a - mu_b sigma_b) int_D Gamma_0(x - y) H(y) dy for the
    ball anomaly ``index``, with H the background field.  Points may lie
    inside or outside the ball.

    Returns
    -------
    FieldSamples (complex values)
    """
    A, B = scene_a.anomalies[index], scene_b.anomalies[index]
    same = (np.allclose(A.center, B.center) and A.delta == B.delta
            and A.mu == B.mu and A.shape == B.shape == "ball"
            and scene_a.core_radius == scene_b.core_radius
            and scene_a.shell_radius == scene_b.shell_radius)
    if not same:
        raise ArgumentError("scenes must share geometry and permeability, "
                            "with a ball anomaly")
    dl = A.mu * A.sigma - B.mu * B.sigma
    ps = _points(points)
    x = ps.points
    out = np.zeros(x.shape, complex)
    if dl == 0:
        return FieldSamples(ps, out, "omega-linear")
    g = sphere_grid(1.0, n_theta)
    dirs, wd = g.points, g.weights
    t, wt = np.polynomial.legendre.leggauss(n_radial)
    bg = scene_a.background
    for i, xi in enumerate(x):
        d = xi - A.center
        if np.linalg.norm(d) < A.delta:
            # polar coordinates about x: integrand -H(x + s w) s / (4 pi)
            b = dirs @ d
            T = -b + np.sqrt(b * b - (d @ d - A.delta ** 2))
            s = 0.5 * T[:, None] * (t[None] + 1)
            w = 0.5 * T[:, None] * wt[None] * wd[:, None]
            y = xi + s[..., None] * dirs[:, None, :]
            H = bg.evaluate(y.reshape(-1, 3)).reshape(y.shape)
            val = -np.einsum("qr,qrj->j", w * s, H) / FOUR_PI
        else:
            r = 0.5 * A.delta * (t + 1)
            wr = 0.5 * A.delta * wt * r * r
            y = A.center + r[:, None, None] * dirs[None]
            H = bg.evaluate(y.reshape(-1, 3)).reshape(y.shape)
            G = gamma_k(xi - y)
            val = np.einsum("r,q,rq,rqj->j", wr, wd, G, H)
        out[i] = 1j * dl * val
    return FieldSamples(ps, out, "omega-linear")
