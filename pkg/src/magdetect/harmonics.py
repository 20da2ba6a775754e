"""Scalar and vector spherical harmonics and multipole expansion tools.

Conventions
-----------
Complex orthonormal harmonics with the Condon-Shortley phase, evaluated
through Cartesian solid harmonics ``r**n Y_n^m``.  The recurrence is free of
pole singularities, and differentiating it gives exact gradients and
Hessians.  Flat index of (n, m) is ``n*n + n + m``.

Vector families on the unit sphere, for degree n:

    N_{n+1}^m = (n+1) Y x - grad_S Y     |N|^2 = (n+1)(2n+1)
    Q_{n-1}^m = grad_S Y + n Y x         |Q|^2 = n(2n+1)
    T_n^m     = grad_S Y x x             |T|^2 = n(n+1)

Exterior gradient fields (sources inside the sphere) expand in N only, and
interior gradient fields in Q only.
"""

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np

from .errors import ArgumentError, ConditioningError, DomainError
from .geometry import sphere_grid

__all__ = [
    "flat_index",
    "harmonics_table",
    "eval_Y",
    "eval_NQT",
    "vector_basis",
    "sphere_quadrature",
    "coeff_ab",
    "coeff_cd",
    "hessian_block",
    "hessian_block_direct",
    "hessian_block_assembled",
    "grad_gamma_series",
    "hessian_gamma_series",
    "build_D0_Q0",
    "HarmonicCoeffs",
    "fit_harmonics",
]

FAMILY_NORM = {
    "N": lambda n: (n + 1) * (2 * n + 1),
    "Q": lambda n: n * (2 * n + 1),
    "T": lambda n: n * (n + 1),
}


def flat_index(n, m):
    return n * n + n + m


def _norm_const(n, m):
    return np.sqrt((2 * n + 1) / (4 * np.pi)
                   * factorial(n - m) / factorial(n + m))


def _solid(N, x, order):
    """Unnormalized solid harmonics r^n P_n^m e^{im phi} for m >= 0.

    Returns lists indexed [n][m] of values (P,), gradients (P, 3) and
    Hessians (P, 3, 3), up to ``order`` derivatives.
    """
    P = len(x)
    X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
    r2 = np.einsum("pj,pj->p", x, x)
    w = X + 1j * Y
    ez = np.array([0.0, 0.0, 1.0])
    dw = np.array([1.0, 1j, 0.0])
    V = [[None] * (N + 1) for _ in range(N + 1)]
    G = [[None] * (N + 1) for _ in range(N + 1)]
    H = [[None] * (N + 1) for _ in range(N + 1)]
    zero3 = np.zeros((P, 3), complex)
    zero33 = np.zeros((P, 3, 3), complex)
    for m in range(N + 1):
        c = (-1) ** m * float(np.prod(np.arange(1, 2 * m, 2)))
        V[m][m] = c * w ** m
        if order >= 1:
            G[m][m] = (c * m * w ** (m - 1))[:, None] * dw if m >= 1 else zero3
        if order >= 2:
            H[m][m] = ((c * m * (m - 1) * w ** (m - 2))[:, None, None]
                       * np.outer(dw, dw)) if m >= 2 else zero33
        if m + 1 <= N:
            a = 2 * m + 1
            V[m + 1][m] = a * Z * V[m][m]
            if order >= 1:
                G[m + 1][m] = a * (Z[:, None] * G[m][m] + V[m][m][:, None] * ez)
            if order >= 2:
                H[m + 1][m] = a * (Z[:, None, None] * H[m][m]
                                   + ez[None, :, None] * G[m][m][:, None, :]
                                   + G[m][m][:, :, None] * ez[None, None, :])
        for n in range(m + 2, N + 1):
            a, b = (2 * n - 1) / (n - m), (n + m - 1) / (n - m)
            q1, q2 = V[n - 1][m], V[n - 2][m]
            V[n][m] = a * Z * q1 - b * r2 * q2
            if order >= 1:
                g1, g2 = G[n - 1][m], G[n - 2][m]
                G[n][m] = (a * (Z[:, None] * g1 + q1[:, None] * ez)
                           - b * (r2[:, None] * g2 + 2 * q2[:, None] * x))
            if order >= 2:
                h1, h2 = H[n - 1][m], H[n - 2][m]
                H[n][m] = (a * (Z[:, None, None] * h1
                                + ez[None, :, None] * g1[:, None, :]
                                + g1[:, :, None] * ez[None, None, :])
                           - b * (r2[:, None, None] * h2
                                  + 2 * x[:, :, None] * g2[:, None, :]
                                  + 2 * g2[:, :, None] * x[:, None, :]
                                  + 2 * q2[:, None, None] * np.eye(3)))
    return V, G, H


def _check_unit(dirs):
    d = np.atleast_2d(np.asarray(dirs, dtype=float))
    if d.shape[-1] != 3:
        raise ArgumentError("directions must be 3-vectors")
    if np.any(np.abs(np.linalg.norm(d, axis=1) - 1) > 1e-10):
        raise ArgumentError("directions must be unit vectors")
    return d


def harmonics_table(N, dirs, order=1):
    """All Y_n^m with n <= N on unit directions, with derivatives.

    Parameters
    ----------
    N : int
        Degree cap.
    dirs : (P, 3) array of unit vectors
    order : {0, 1, 2}
        0: values; 1: also surface gradients; 2: also the Jacobian of the
        degree-0 extension of the surface gradient.

    Returns
    -------
    Y : (P, K) complex
    gradS : (P, K, 3) complex or None
    S2 : (P, K, 3, 3) complex or None
        ``S2[..., i, j] = d_j (grad_S Y)_i``.
    """
    x = _check_unit(dirs)
    V, G, H = _solid(N, x, order)
    K = (N + 1) ** 2
    P = len(x)
    Yv = np.empty((P, K), complex)
    gS = np.empty((P, K, 3), complex) if order >= 1 else None
    S2 = np.empty((P, K, 3, 3), complex) if order >= 2 else None
    for n in range(N + 1):
        for m in range(n + 1):
            c = _norm_const(n, m)
            vals = [c * V[n][m]]
            if order >= 1:
                # grad of the degree-0 extension Q / r^n at r = 1
                g = c * (G[n][m] - n * V[n][m][:, None] * x)
                vals.append(g)
            if order >= 2:
                hq = c * H[n][m]
                gq = c * G[n][m]
                q = c * V[n][m]
                xx = x[:, :, None] * x[:, None, :]
                hess0 = (hq - n * (gq[:, :, None] * x[:, None, :]
                                   + x[:, :, None] * gq[:, None, :])
                         + q[:, None, None] * (-n * np.eye(3)
                                               + n * (n + 2) * xx))
                vals.append(hess0 + g[:, :, None] * x[:, None, :])
            for sign, mm in ((1, m), (-1, -m)):
                if sign < 0 and m == 0:
                    continue
                f = 1.0 if sign > 0 else (-1.0) ** m
                conj = (lambda a: a) if sign > 0 else np.conj
                k = flat_index(n, mm)
                Yv[:, k] = f * conj(vals[0])
                if order >= 1:
                    gS[:, k] = f * conj(vals[1])
                if order >= 2:
                    S2[:, k] = f * conj(vals[2])
    return Yv, gS, S2


def eval_Y(n, m, dirs):
    """Y_n^m at unit directions (scalar for a single direction)."""
    _check_index(n, m)
    d = np.asarray(dirs, dtype=float)
    Yv, _, _ = harmonics_table(n, d, 0)
    out = Yv[:, flat_index(n, m)]
    return out[0] if d.ndim == 1 else out


def _check_index(n, m):
    if n < 0 or abs(m) > n:
        raise ArgumentError(f"invalid harmonic index (n={n}, m={m})")


def eval_NQT(n, m, dirs, families=("N", "Q", "T")):
    """Vector harmonics N_{n+1}^m, Q_{n-1}^m, T_n^m at unit directions.

    Returns
    -------
    tuple of (P, 3) arrays (or 3-vectors for a single direction), one per
    requested family.
    """
    _check_index(n, m)
    if n == 0 and ("Q" in families or "T" in families):
        raise ArgumentError("Q and T families need degree n >= 1")
    d = np.asarray(dirs, dtype=float)
    x = _check_unit(d)
    Yv, gS, _ = harmonics_table(n, x, 1)
    k = flat_index(n, m)
    y, g = Yv[:, k][:, None], gS[:, k]
    out = {"N": (n + 1) * y * x - g, "Q": g + n * y * x,
           "T": np.cross(g, x)}
    res = tuple(out[f] for f in families)
    return tuple(r[0] for r in res) if d.ndim == 1 else res


def _labels(N, families):
    lab = []
    for fam in families:
        start = 0 if fam == "N" else 1
        for n in range(start, N + 1):
            for m in range(-n, n + 1):
                lab.append((fam, n, m))
    return lab


def vector_basis(N, dirs, families=("N", "Q", "T")):
    """Vector harmonics up to degree N as columns.

    Returns
    -------
    B : (P, 3, K) complex
    labels : list of (family, n, m)
    """
    x = _check_unit(dirs)
    Yv, gS, _ = harmonics_table(N, x, 1)
    labels = _labels(N, families)
    B = np.empty((len(x), 3, len(labels)), complex)
    for j, (fam, n, m) in enumerate(labels):
        k = flat_index(n, m)
        y, g = Yv[:, k][:, None], gS[:, k]
        if fam == "N":
            B[:, :, j] = (n + 1) * y * x - g
        elif fam == "Q":
            B[:, :, j] = g + n * y * x
        else:
            B[:, :, j] = np.cross(g, x)
    return B, labels


@lru_cache(maxsize=8)
def sphere_quadrature(degree):
    """Unit-sphere nodes and weights exact for polynomials up to ``degree``."""
    g = sphere_grid(1.0, degree // 2 + 1)
    return g.points, g.weights


def _ab_tables(nmax):
    """a and b for all index pairs with degrees up to ``nmax``."""
    nodes, w = sphere_quadrature(2 * nmax + 2)
    Yv, gS, _ = harmonics_table(nmax, nodes, 1)
    a = np.einsum("q,qk,qlj->klj", w, np.conj(Yv), gS)
    b = np.einsum("q,qk,ql,qj->klj", w, np.conj(Yv), Yv, nodes)
    return a, b


@lru_cache(maxsize=4)
def _ab_cached(nmax):
    a, b = _ab_tables(nmax)
    # exact zeros where selection rules forbid coupling
    a.real[np.abs(a.real) < 1e-13] = 0
    a.imag[np.abs(a.imag) < 1e-13] = 0
    b.real[np.abs(b.real) < 1e-13] = 0
    b.imag[np.abs(b.imag) < 1e-13] = 0
    a.setflags(write=False)
    b.setflags(write=False)
    return a, b


def coeff_ab(n1, m1, n, m):
    """Coupling vectors a and b by exact sphere quadrature.

    a = int conj(Y_{n1}^{m1}) grad_S Y_n^m,   b = int conj(Y_{n1}^{m1}) Y_n^m x.

    Returns
    -------
    a, b : complex 3-vectors
    """
    _check_index(n1, m1)
    _check_index(n, m)
    nmax = max(n1, n, 6)
    a, b = _ab_cached(nmax)
    i, j = flat_index(n1, m1), flat_index(n, m)
    return a[i, j].copy(), b[i, j].copy()


def coeff_cd(n1, m1, n, m):
    """Coefficients of A_n^m xi on N_{n1+1}^{m1} and Q_{n1-1}^{m1}.

    A_n^m xi is the gradient of w = xi . N_{n+1}^m / r^{n+2}, homogeneous of
    degree -(n+2).  Projecting that gradient on each family gives

        c = (n1 + n + 2) (a - (n+1) b) / (2 n1 + 1)
        d = (n1 - n - 1) ((n+1) b - a) / (2 n1 + 1)

    with a, b = coeff_ab(n1, m1, n, m); the coefficients multiply xi as
    ``c @ xi`` and ``d @ xi``.  d is ``None`` for n1 = 0, where no Q_{-1}
    exists.
    """
    a, b = coeff_ab(n1, m1, n, m)
    t = a - (n + 1) * b
    c = (n1 + n + 2) * t / (2 * n1 + 1)
    d = None if n1 == 0 else -(n1 - n - 1) * t / (2 * n1 + 1)
    return c, d


def hessian_block(n, m, dirs):
    """A_n^m at unit directions from surface derivatives of Y_n^m.

    A = (n+1)(x grad_S Y^T + Y (I - x x^T)) - grad_S^2 Y - (n+2) N x^T,
    the Hessian of -r^{-(n+1)} Y_n^m at the unit sphere.

    Returns
    -------
    (P, 3, 3) complex
    """
    _check_index(n, m)
    x = _check_unit(dirs)
    Yv, gS, S2 = harmonics_table(n, x, 2)
    k = flat_index(n, m)
    y, g, s2 = Yv[:, k], gS[:, k], S2[:, k]
    xx = x[:, :, None] * x[:, None, :]
    Nv = (n + 1) * y[:, None] * x - g
    return ((n + 1) * (x[:, :, None] * g[:, None, :]
                       + y[:, None, None] * (np.eye(3) - xx))
            - s2 - (n + 2) * Nv[:, :, None] * x[:, None, :])


def hessian_block_direct(n, m, dirs):
    """A_n^m as the Cartesian Hessian of -Q_n^m r^{-(2n+1)} at r = 1."""
    _check_index(n, m)
    x = _check_unit(dirs)
    mm = abs(m)
    V, G, H = _solid(n, x, 2)
    c = _norm_const(n, mm)
    q, g, h = c * V[n][mm], c * G[n][mm], c * H[n][mm]
    p = 2 * n + 1
    xx = x[:, :, None] * x[:, None, :]
    hess = (h - p * (g[:, :, None] * x[:, None, :] + x[:, :, None] * g[:, None, :])
            + q[:, None, None] * (-p * np.eye(3) + p * (p + 2) * xx))
    if m < 0:
        hess = (-1.0) ** mm * np.conj(hess)
    return -hess


def hessian_block_assembled(n, m, dirs, xi):
    """A_n^m xi rebuilt from the N/Q expansion with c, d coefficients."""
    x = _check_unit(dirs)
    xi = np.asarray(xi)
    out = np.zeros((len(x), 3), complex)
    for n1 in (n - 1, n + 1):
        if n1 < 0:
            continue
        for m1 in (m - 1, m, m + 1):
            if abs(m1) > n1:
                continue
            c, d = coeff_cd(n1, m1, n, m)
            Nv, = eval_NQT(n1, m1, x, ("N",))
            out += (c @ xi) * Nv
            if d is not None:
                Qv, = eval_NQT(n1, m1, x, ("Q",))
                out += (d @ xi) * Qv
    return out


def _series_setup(x, z, N):
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    rx, rz = np.linalg.norm(x), np.linalg.norm(z)
    if not rz < rx:
        raise DomainError("series needs |z| < |x|")
    xh = x / rx
    zh = z / rz if rz > 0 else np.array([0.0, 0.0, 1.0])
    Yz, _, _ = harmonics_table(N, zh[None], 0)
    return xh, rx, rz, np.conj(Yz[0])


def grad_gamma_series(x, z, N):
    """Truncated multipole series of grad Gamma_0(x - z) for |z| < |x|.

    sum_{n<=N} sum_m N_{n+1}^m(x^) conj(Y_n^m(z^)) |z|^n / ((2n+1)|x|^{n+2})
    """
    xh, rx, rz, Yzc = _series_setup(x, z, N)
    B, labels = vector_basis(N, xh[None], ("N",))
    out = np.zeros(3, complex)
    for j, (_, n, m) in enumerate(labels):
        out += (B[0, :, j] * Yzc[flat_index(n, m)]
                * rz ** n / ((2 * n + 1) * rx ** (n + 2)))
    return out.real


def hessian_gamma_series(x, z, N):
    """Truncated multipole series of the Hessian of Gamma_0(x - z)."""
    xh, rx, rz, Yzc = _series_setup(x, z, N)
    out = np.zeros((3, 3), complex)
    for n in range(N + 1):
        for m in range(-n, n + 1):
            A = hessian_block_direct(n, m, xh[None])[0]
            out += (A * Yzc[flat_index(n, m)]
                    * rz ** n / ((2 * n + 1) * rx ** (n + 3)))
    return out.real


def build_D0_Q0():
    """The 3x3 matrix D0 and an evaluator for the stacked Q_0 rows.

    D0 rows are -(1/6) a_{0,1}^{0,m} for m = -1, 0, 1; Q0(x) stacks
    Q_0^{-1}, Q_0^0, Q_0^1 (constant vectors) as rows.
    """
    D0 = np.array([-coeff_ab(0, 0, 1, m)[0] / 6 for m in (-1, 0, 1)])

    def Q0(dirs):
        d = np.asarray(dirs, dtype=float)
        rows = [eval_NQT(1, m, d, ("Q",))[0] for m in (-1, 0, 1)]
        return np.stack(rows, axis=-2)

    return D0, Q0


@dataclass(frozen=True)
class HarmonicCoeffs:
    """Vector-harmonic expansion of a field sampled on a sphere.

    ``coeffs[j]`` multiplies the basis field ``labels[j]``.  The expansion
    is in the direction variable only; it describes the field on the
    sphere of the stated radius.
    """

    N: int
    radius: float
    center: np.ndarray
    families: tuple
    labels: tuple
    coeffs: np.ndarray
    residual: float
    condition: float

    def coefficient(self, family, n, m):
        return self.coeffs[self.labels.index((family, n, m))]

    def evaluate(self, points):
        d = np.atleast_2d(points) - self.center
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        B, _ = vector_basis(self.N, d, self.families)
        return np.einsum("pjk,k->pj", B, self.coeffs)

    def project(self, family, n, m):
        """int conj(basis) . field over the unit sphere."""
        return self.coefficient(family, n, m) * FAMILY_NORM[family](n)


def fit_harmonics(points, values, N, ridge=0.0, radius=None, center=None,
                  families=("N", "Q", "T"), weights=None):
    """Ridge-regularized least-squares vector-harmonic fit.

    Parameters
    ----------
    points : (P, 3) array
        Samples on one sphere.
    values : (P, 3) array
        Field vectors.
    N : int
        Degree cap.
    ridge : float
        Tikhonov weight on the squared coefficient norm, relative to the
        mean squared column norm of the design.
    radius, center : optional
        Sphere geometry; inferred from the points when omitted.
    families : tuple of {"N", "Q", "T"}
    weights : (P,) array, optional
        Per-sample weights (e.g. quadrature weights).

    Returns
    -------
    HarmonicCoeffs
    """
    x = np.asarray(points, dtype=float)
    f = np.asarray(values)
    c0 = np.zeros(3) if center is None else np.asarray(center, dtype=float)
    r = np.linalg.norm(x - c0, axis=1)
    R = float(r.mean()) if radius is None else float(radius)
    d = (x - c0) / r[:, None]
    B, labels = vector_basis(N, d, families)
    P, K = len(x), B.shape[2]
    if ridge == 0 and 3 * P < K:
        raise ConditioningError(
            f"{3 * P} field components cannot determine {K} coefficients")
    sw = np.ones(P) if weights is None else np.sqrt(np.asarray(weights))
    A = (B * sw[:, None, None]).reshape(3 * P, K)
    rhs = (f * sw[:, None]).reshape(3 * P)
    s = np.linalg.svd(A, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
    if ridge == 0:
        if cond > 1e10:
            raise ConditioningError(
                f"design rank deficient at N={N} (condition {cond:.2e}); "
                "use a ridge or a smaller N", cond)
        coef, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    else:
        lam = ridge * np.mean(np.sum(np.abs(A) ** 2, axis=0))
        AhA = A.conj().T @ A + lam * np.eye(K)
        coef = np.linalg.solve(AhA, A.conj().T @ rhs)
    res = float(np.linalg.norm(A @ coef - rhs))
    return HarmonicCoeffs(N, R, c0, tuple(families), tuple(labels), coef,
                          res, cond)
