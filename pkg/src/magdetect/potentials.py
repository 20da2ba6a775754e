"""Collocation discretizations of scalar and vector layer potentials.

Densities are piecewise constant on flat triangles and collocated at
centroids.  Scalar densities are arrays of length F.  Tangential densities
are stored as (F, 3) Cartesian arrays, and operators acting on them use a
flattened 3F layout (face-major).  Tangency is enforced by projecting every
source density onto the tangent plane of its triangle.

Static kernels are integrated in closed form over each panel, so near and
self interactions are exact for constant densities.  For k != 0 the smooth
difference Gamma_k - Gamma_0 is added with a triangle quadrature rule.

Kernel convention: Gamma_k(x) = -exp(ik|x|) / (4 pi |x|).
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree

from ._panels import panel_integrals
from .errors import (ArgumentError, ConditioningError, GeometryError,
                     SingularityError, SolveError)
from .geometry import PointSet, TriangleMesh, triangle_rule

__all__ = [
    "WaveNumber",
    "OperatorMatrix",
    "ScalarDensity",
    "TangentialDensity",
    "Factorization",
    "gamma_k",
    "grad_gamma_k",
    "assemble_S",
    "assemble_K",
    "assemble_Kstar",
    "assemble_M",
    "assemble_L",
    "assemble_N",
    "assemble_P",
    "eval_field",
    "eval_potential",
    "exterior_curl_system",
    "field_matrix",
    "factorize",
    "solve_dense",
    "tangential_projector",
]

FOUR_PI = 4.0 * np.pi
# pairs per assembly chunk; bounds temporary memory to a few tens of MB
CHUNK_PAIRS = 250_000
# condition estimates above this are treated as numerically singular
MAX_CONDITION = 1e10


def _n_threads():
    try:
        return max(1, int(os.environ.get("MAGDETECT_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class WaveNumber:
    """Complex wavenumber with k**2 = -i omega / lambda.

    Parameters
    ----------
    omega : float
        Angular frequency.
    lam : float
        Magnetic diffusivity 1 / (mu sigma).
    branch : {"principal", "conjugate"}
        ``principal`` takes Re k >= 0 (Im k <= 0); ``conjugate`` takes the
        decaying root with Im k >= 0.
    """

    omega: float = 0.0
    lam: float = 1.0
    branch: str = "principal"

    def __post_init__(self):
        if self.branch not in ("principal", "conjugate"):
            raise ArgumentError("branch must be 'principal' or 'conjugate'")
        if self.omega < 0 or self.lam <= 0:
            raise ArgumentError("need omega >= 0 and lam > 0")

    @property
    def k(self):
        if self.omega == 0:
            return 0j
        k = np.sqrt(-1j * self.omega / self.lam)
        return complex(np.conj(-k) if self.branch == "conjugate" else k)

    @property
    def is_static(self):
        return self.omega == 0

    @classmethod
    def from_k_squared(cls, k2_abs, branch="principal"):
        """Wavenumber with |k|**2 = ``k2_abs`` (lambda = 1)."""
        return cls(omega=float(k2_abs), lam=1.0, branch=branch)


STATIC = WaveNumber()


def _as_wavenumber(k):
    if k is None:
        return STATIC
    if isinstance(k, WaveNumber):
        return k
    raise ArgumentError("k must be a WaveNumber")


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense operator between two discretized surfaces or point sets."""

    matrix: np.ndarray
    kind: str
    source: object
    target: object

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, v):
        return self.matrix @ v


@dataclass(frozen=True)
class ScalarDensity:
    mesh: TriangleMesh
    values: np.ndarray


@dataclass(frozen=True)
class TangentialDensity:
    mesh: TriangleMesh
    values: np.ndarray  # (F, 3)

    @classmethod
    def project(cls, mesh, values):
        """Drop the normal component of ``values`` on each triangle."""
        v = np.asarray(values).reshape(-1, 3)
        nv = np.einsum("fj,fj->f", mesh.normals, v)
        return cls(mesh, v - nv[:, None] * mesh.normals)

    def max_normal_ratio(self):
        nv = np.abs(np.einsum("fj,fj->f", self.mesh.normals, self.values))
        mag = np.linalg.norm(self.values, axis=1)
        return float(np.max(nv / np.maximum(mag, 1e-300)))


def gamma_k(x, k=None):
    """Fundamental solution -exp(ik|x|) / (4 pi |x|).

    Parameters
    ----------
    x : (..., 3) array_like
    k : WaveNumber or None
    """
    kk = _as_wavenumber(k).k
    r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
    if np.any(r == 0):
        raise SingularityError("fundamental solution evaluated at x = 0")
    if kk == 0:
        return -1.0 / (FOUR_PI * r)
    return -np.exp(1j * kk * r) / (FOUR_PI * r)


def grad_gamma_k(x, k=None):
    """Gradient of ``gamma_k`` with respect to x."""
    kk = _as_wavenumber(k).k
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise SingularityError("fundamental solution evaluated at x = 0")
    g = 1.0 / (FOUR_PI * r ** 3)
    if kk != 0:
        g = g * np.exp(1j * kk * r) * (1 - 1j * kk * r)
    return x * g[..., None]


def _smooth_parts(d, kk):
    """Gamma_k - Gamma_0 and its gradient for offsets d (..., 3)."""
    r = np.linalg.norm(d, axis=-1)
    u = kk * r
    small = np.abs(u) < 1e-3
    with np.errstate(divide="ignore", invalid="ignore"):
        g0 = np.where(small, -1j * kk * (1 + 0.5j * u - u * u / 6),
                      -np.expm1(1j * u) / np.where(r > 0, r, 1))
        g1 = np.where(small, kk * kk * (0.5 + 1j * u / 3 - u * u / 8),
                      (np.exp(1j * u) * (1 - 1j * u) - 1)
                      / np.where(r > 0, r * r, 1))
        dhat = np.where(r[..., None] > 0, d / np.where(r > 0, r, 1)[..., None],
                        0.0)
    return g0 / FOUR_PI, dhat * (g1 / FOUR_PI)[..., None]


def _chunks(n_targets, n_sources):
    step = max(1, CHUNK_PAIRS // max(1, n_sources))
    return [slice(i, min(i + step, n_targets)) for i in range(0, n_targets, step)]


def _panel_kernels(x, mesh, k, potential, order=6):
    """Integrals of Gamma_k and grad Gamma_k over each panel of ``mesh``.

    Returns
    -------
    S : (P, F) array or None
        int_T Gamma_k(x - y) dS_y
    D : (P, F, 3) array
        int_T grad_x Gamma_k(x - y) dS_y
    """
    kk = _as_wavenumber(k).k

    def work(sl):
        I, G = panel_integrals(x[sl], mesh.corners, mesh.normals, potential)
        S = None if I is None else -I / FOUR_PI
        D = G / FOUR_PI
        if kk != 0:
            bary, w = triangle_rule(order)
            nodes = np.einsum("qk,fkj->fqj", bary, mesh.corners)
            d = x[sl][:, None, None, :] - nodes[None]
            g0, g1 = _smooth_parts(d, kk)
            wa = mesh.areas[:, None] * w[None, :]
            D = D + np.einsum("fq,pfqj->pfj", wa, g1)
            if S is not None:
                S = S + np.einsum("fq,pfq->pf", wa, g0)
        return S, D

    parts = _map(work, _chunks(len(x), mesh.n_faces))
    D = np.concatenate([p[1] for p in parts])
    S = np.concatenate([p[0] for p in parts]) if potential else None
    return S, D


def _self_kernels(mesh, k, rule):
    """Panel gradients on ``mesh`` itself with a chosen outer rule.

    The double integral W_ij = int_Ti int_Tj grad Gamma is antisymmetric.
    ``collocation`` evaluates the outer integral at the target centroid,
    ``swapped`` at the source centroid via W_ij = -W_ji, and ``symmetric``
    averages the two.  Returns D with W_ij ~ A_i D_ij.
    """
    _, D = _panel_kernels(mesh.centroids, mesh, k, False)
    if rule == "collocation":
        return D
    a = mesh.areas
    Dsw = -(a[None, :] / a[:, None])[:, :, None] * D.transpose(1, 0, 2)
    if rule == "swapped":
        return Dsw
    if rule == "symmetric":
        return 0.5 * (D + Dsw)
    raise ArgumentError("rule must be collocation, swapped or symmetric")


def _map(fn, items):
    n = _n_threads()
    if n == 1 or len(items) == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(n) as ex:
        return list(ex.map(fn, items))


def tangential_projector(mesh):
    """(F, 3, 3) stack of I - nu nu^T."""
    n = mesh.normals
    return np.eye(3)[None] - n[:, :, None] * n[:, None, :]


def _check_disjoint(source, target):
    if source is target:
        raise GeometryError("cross-surface operator needs distinct surfaces")
    d, _ = cKDTree(source.centroids).query(target.centroids)
    if d.min() < 0.25 * max(source.size, target.size):
        raise GeometryError("surfaces overlap or touch")


def _dtype(k):
    return float if _as_wavenumber(k).is_static else complex


def assemble_S(mesh, k=None, target=None):
    """Single-layer operator S_B^k (F_t x F), on ``mesh`` or onto ``target``."""
    tgt = mesh if target is None else target
    if tgt is not mesh:
        _check_disjoint(mesh, tgt)
    S, _ = _panel_kernels(tgt.centroids, mesh, k, True)
    return OperatorMatrix(S.astype(_dtype(k)), "S", mesh, tgt)


def assemble_Kstar(source, target=None, k=None, rule="swapped"):
    """Adjoint double layer (K^k)* or a cross-surface normal derivative.

    With ``target`` omitted this is the principal-value operator on
    ``source``; otherwise it maps densities on ``source`` to
    nu . grad S[phi] at the collocation points of ``target``.

    On a single surface the default ``swapped`` outer rule equals the
    area-weighted transpose of the collocated double layer.  It keeps the
    curvature information that flat panels lose under plain collocation.
    """
    tgt = source if target is None else target
    if target is None or target is source:
        D = _self_kernels(source, k, rule)
    else:
        _check_disjoint(source, target)
        _, D = _panel_kernels(tgt.centroids, source, k, False)
    K = np.einsum("pj,pfj->pf", tgt.normals, D)
    return OperatorMatrix(K.astype(_dtype(k)), "Kstar", source, tgt)


def assemble_K(mesh, k=None):
    """Double-layer operator K^k with kernel d/dnu_y Gamma_k(x - y)."""
    _, D = _panel_kernels(mesh.centroids, mesh, k, False)
    K = -np.einsum("fj,pfj->pf", mesh.normals, D)
    return OperatorMatrix(K.astype(_dtype(k)), "K", mesh, mesh)


def assemble_M(source, target=None, k=None, rule="symmetric"):
    """nu x curl A^k from tangential densities on ``source`` (3F_t x 3F_s).

    Without ``target`` this is the principal-value operator M_B^k, built
    with the ``symmetric`` outer rule by default (second-order accurate on
    smooth surfaces, against first order for plain collocation).
    """
    tgt = source if target is None else target
    if target is None or target is source:
        D = _self_kernels(source, k, rule)
    else:
        _check_disjoint(source, target)
        _, D = _panel_kernels(tgt.centroids, source, k, False)
    n = tgt.normals
    # nu x (D x Phi) = D (nu . Phi) - Phi (nu . D)
    blk = (D[:, :, :, None] * n[:, None, None, :]
           - np.einsum("pj,pfj->pf", n, D)[:, :, None, None] * np.eye(3))
    blk = np.einsum("pfab,fbc->pafc", blk, tangential_projector(source))
    M = blk.reshape(3 * tgt.n_faces, 3 * source.n_faces)
    return OperatorMatrix(M.astype(_dtype(k)), "M", source, tgt)


def assemble_N(source, target=None, k=None, rule="symmetric"):
    """nu . curl A^k from tangential densities on ``source`` (F_t x 3F_s)."""
    tgt = source if target is None else target
    if target is None or target is source:
        D = _self_kernels(source, k, rule)
    else:
        _check_disjoint(source, target)
        _, D = _panel_kernels(tgt.centroids, source, k, False)
    # nu . (D x Phi) = Phi . (nu x D)
    row = np.cross(tgt.normals[:, None, :], D)
    row = np.einsum("pfb,fbc->pfc", row, tangential_projector(source))
    N = row.reshape(tgt.n_faces, 3 * source.n_faces)
    return OperatorMatrix(N.astype(_dtype(k)), "N", source, tgt)


def assemble_L(source, target, k=None):
    """nu x grad S^k from scalar densities on ``source`` (3F_t x F_s).

    Off the source surface curl curl A[grad_S phi] reduces to the gradient of
    a single layer, so the cross-surface operator acts on scalar densities.
    """
    _check_disjoint(source, target)
    _, D = _panel_kernels(target.centroids, source, k, False)
    L = np.cross(target.normals[:, None, :], D)  # (P, F, 3)
    L = L.transpose(0, 2, 1).reshape(3 * target.n_faces, source.n_faces)
    return OperatorMatrix(L.astype(_dtype(k)), "L", source, target)


def assemble_P(anomaly, core, core_factor=None):
    """Composite N^0_{D, core} (-I/2 + M^0_core)^{-1} (F_a x 3F_c).

    Parameters
    ----------
    anomaly, core : TriangleMesh
    core_factor : Factorization, optional
        Precomputed factorization of -I/2 + M^0 on ``core``.
    """
    if core_factor is None:
        core_factor = factorize(exterior_curl_system(core))
    N = assemble_N(core, anomaly).matrix
    # P = N X^{-1}  <=>  P^T = X^{-T} N^T
    P = core_factor.solve(N.T, trans=True).T
    return OperatorMatrix(P, "P", core, anomaly)


def exterior_curl_system(core):
    """-I/2 + M^0 on ``core``, the exterior trace map of curl A."""
    M = assemble_M(core).matrix
    A = M - 0.5 * np.eye(M.shape[0])
    return OperatorMatrix(A, "-I/2+M", core, core)


def eval_field(density, kind, points, k=None):
    """Gradient of S[phi] or curl of A[Phi] at points off the surface.

    Parameters
    ----------
    density : ScalarDensity or TangentialDensity
    kind : {"grad_S", "curl_A"}
    points : PointSet or (P, 3) array
    k : WaveNumber, optional

    Returns
    -------
    (P, 3) array
    """
    x = points.points if isinstance(points, PointSet) else np.atleast_2d(
        np.asarray(points, dtype=float))
    mesh = density.mesh
    d, _ = cKDTree(mesh.centroids).query(x)
    if np.any(d < 1e-9 * mesh.size):
        raise SingularityError("evaluation point lies on the source surface")
    vals = np.asarray(density.values)
    out = []
    for sl in _chunks(len(x), mesh.n_faces):
        _, D = _panel_kernels(x[sl], mesh, k, False)
        if kind == "grad_S":
            out.append(np.einsum("pfj,f->pj", D, vals))
        elif kind == "curl_A":
            tang = TangentialDensity.project(mesh, vals).values
            out.append(np.cross(D, tang[None]).sum(axis=1))
        else:
            raise ArgumentError("kind must be 'grad_S' or 'curl_A'")
    return np.concatenate(out)


def eval_potential(density, points, k=None):
    """Single-layer potential S[phi] at arbitrary points."""
    x = points.points if isinstance(points, PointSet) else np.atleast_2d(
        np.asarray(points, dtype=float))
    mesh = density.mesh
    out = []
    for sl in _chunks(len(x), mesh.n_faces):
        S, _ = _panel_kernels(x[sl], mesh, k, True)
        out.append(S @ np.asarray(density.values))
    return np.concatenate(out)


def field_matrix(mesh, kind, points, k=None):
    """Dense map from density coefficients to field samples (3P x n)."""
    x = points.points if isinstance(points, PointSet) else np.atleast_2d(
        np.asarray(points, dtype=float))
    _, D = _panel_kernels(x, mesh, k, False)
    if kind == "grad_S":
        return D.transpose(0, 2, 1).reshape(3 * len(x), mesh.n_faces)
    if kind == "curl_A":
        # (D x Phi)_a = eps_abc D_b Phi_c
        eps = np.zeros((3, 3, 3))
        eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1
        eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1
        blk = np.einsum("abc,pfb->pafc", eps, D)
        blk = np.einsum("pafb,fbc->pafc", blk, tangential_projector(mesh))
        return blk.reshape(3 * len(x), 3 * mesh.n_faces)
    raise ArgumentError("kind must be 'grad_S' or 'curl_A'")


@dataclass(frozen=True)
class Factorization:
    """LU factors of a square matrix with a 1-norm condition estimate."""

    lu: tuple
    condition: float
    n: int

    def solve(self, rhs, trans=False):
        return linalg.lu_solve(self.lu, rhs, trans=1 if trans else 0)


def factorize(A, max_condition=MAX_CONDITION):
    """LU with partial pivoting; raises ConditioningError if near singular.

    Parameters
    ----------
    A : OperatorMatrix or (n, n) array
    max_condition : float
    """
    a = A.matrix if isinstance(A, OperatorMatrix) else np.asarray(A)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ArgumentError("matrix must be square")
    if not np.all(np.isfinite(a)):
        raise SolveError("matrix has non-finite entries")
    anorm = np.linalg.norm(a, 1)
    lu, piv = linalg.lu_factor(a, check_finite=False)
    gecon = linalg.get_lapack_funcs("gecon", (lu,))
    rcond, info = gecon(lu, anorm, norm="1")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if info != 0 or not cond < max_condition:
        raise ConditioningError(
            f"matrix is numerically singular (condition ~ {cond:.3e})", cond)
    return Factorization((lu, piv), float(cond), a.shape[0])


def solve_dense(A, rhs, max_condition=MAX_CONDITION):
    """Solve A x = rhs; returns (x, condition estimate)."""
    f = factorize(A, max_condition)
    return f.solve(np.asarray(rhs)), f.condition
