"""Reconstruction: data continuation, moment extraction, dipole
localization and permeability recovery.

Measurement data are perturbation fields (total minus background) at
points outside the shell.  Only the products delta^3 M H(z) are
identifiable from such data; permeabilities follow once delta and the
shape are supplied.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial import cKDTree

from .errors import (ArgumentError, ConvergenceError, CoverageError,
                     DegenerateDataError, ModelInconsistencyError)
from .forward import FieldSamples, core_model, dipole_tensor
from .geometry import sphere_grid
from .harmonics import (build_D0_Q0, fit_harmonics, harmonics_table,
                        flat_index, sphere_quadrature, vector_basis)

__all__ = [
    "MomentResult",
    "DipoleEstimate",
    "ContinuationResult",
    "InversionResult",
    "continue_patch",
    "lcurve_ridge",
    "extract_moment",
    "second_moments",
    "DipoleModel",
    "localize_dipoles",
    "recover_mu",
    "invert",
]

FOUR_PI = 4.0 * np.pi
# relative moment below which an extra component is reported as pruned
PRUNE_RATIO = 1e-3
# residual ratio within which two multi-start minima count as tied
TIE_TOL = 1e-9


@dataclass(frozen=True)
class MomentResult:
    """Moments recovered from full-sphere data.

    Attributes
    ----------
    v0 : (3,) array
        delta^3 sum_l M_l H(z_l).
    v2 : (5, 3) complex array or None
        delta^3 sum_l conj(Y_2^m(z_l^)) |z_l|^2 M_l H(z_l) for m = -2..2;
        filled from localized dipoles, ``None`` before localization.
    quadrupole : (5,) complex array
        Degree-2 exterior expansion coefficients of the data.
    q0_projection : (3,) complex array
        int conj(Q_0^m) . F over the unit sphere, m = -1, 0, 1.
    residual : float
        Relative residual of the harmonic fit.
    radius : float
    method : str
    """

    v0: np.ndarray
    v2: object
    quadrupole: np.ndarray
    q0_projection: np.ndarray
    residual: float
    radius: float
    method: str


@dataclass(frozen=True)
class DipoleEstimate:
    """One localized anomaly; ``*_std`` are normal-matrix proxies."""

    position: np.ndarray
    moment: np.ndarray
    position_std: np.ndarray
    moment_std: np.ndarray
    mu: float = None
    pruned: bool = False


@dataclass(frozen=True)
class ContinuationResult:
    samples: FieldSamples
    coeffs: object
    condition: float
    fit_residual: float


@dataclass(frozen=True)
class InversionResult:
    moment: MomentResult
    dipoles: tuple
    residual: float
    continuation: object = None


def _sphere_directions(samples):
    ps = samples.points
    c = np.zeros(3) if ps.center is None else ps.center
    d = ps.points - c
    r = np.linalg.norm(d, axis=1)
    return d / r[:, None], r, c


def continue_patch(samples, N=6, ridge=1e-8, n_theta=None,
                   families=("N",), radius=None):
    """Extend cap data to a full sphere through a harmonic fit.

    The field outside the shell is an exterior gradient field, so the
    default basis is the N family; its coefficients also continue the
    field to any larger radius.

    Parameters
    ----------
    samples : FieldSamples
        Data on a spherical cap (half-angle at least pi/6).
    N : int
        Degree cap.
    ridge : float
        Relative Tikhonov weight.
    n_theta : int, optional
        Latitude count of the output grid (default N + 2).
    families : tuple
    radius : float, optional
        Output sphere radius (default: the data radius; N family only).

    Returns
    -------
    ContinuationResult
    """
    ps = samples.points
    if ps.half_angle is not None and ps.half_angle < np.pi / 6 - 1e-12:
        raise ArgumentError("cap half-angle below pi/6 is outside the "
                            "validated range")
    d, r, c = _sphere_directions(samples)
    R = float(np.mean(r))
    coeffs = fit_harmonics(ps.points, samples.values, N, ridge, R, c,
                           families)
    Rout = R if radius is None else float(radius)
    if Rout != R and tuple(families) != ("N",):
        raise ArgumentError("radial continuation needs the N family only")
    grid = sphere_grid(Rout, n_theta or N + 2, c)
    B, labels = vector_basis(N, grid.directions, families)
    scale = np.array([(R / Rout) ** (n + 2) for _, n, _ in labels])
    vals = np.einsum("pjk,k->pj", B, coeffs.coeffs * scale)
    out = FieldSamples(grid, vals.real, "continued")
    rel = coeffs.residual / max(np.linalg.norm(samples.values), 1e-300)
    return ContinuationResult(out, coeffs, coeffs.condition, float(rel))


def lcurve_ridge(samples, N=6, ridges=None, families=("N",)):
    """Ridge at the corner of the L-curve of a cap fit.

    The curve is (log residual, log coefficient norm) parametrized by
    log ridge; the corner is its point of largest curvature.

    Returns
    -------
    ridge : float
    curve : (K, 3) array of (ridge, residual, coefficient norm)
    """
    ridges = np.logspace(-10, -2, 17) if ridges is None else np.sort(ridges)
    if len(ridges) < 3:
        raise ArgumentError("need at least three ridge values")
    d, r, c = _sphere_directions(samples)
    R = float(np.mean(r))
    rows = []
    for lam in ridges:
        fit = fit_harmonics(samples.points.points, samples.values, N, lam,
                            R, c, families)
        rows.append((lam, fit.residual, np.linalg.norm(fit.coeffs)))
    curve = np.array(rows)
    t = np.log(curve[:, 0])
    rho, eta = np.log(curve[:, 1]), np.log(curve[:, 2])
    r1, e1 = np.gradient(rho, t), np.gradient(eta, t)
    r2, e2 = np.gradient(r1, t), np.gradient(e1, t)
    kappa = (r1 * e2 - r2 * e1) / np.maximum(r1 ** 2 + e1 ** 2, 1e-300) ** 1.5
    return float(curve[int(np.argmax(kappa)), 0]), curve


def _coverage_gap(dirs):
    """Largest angular distance from a test direction to the nearest sample."""
    test = sphere_grid(1.0, 24).points
    dist, _ = cKDTree(dirs).query(test)
    return float(2 * np.arcsin(min(1.0, dist.max() / 2)))


def _dipole_channel(R):
    """C with N_2 coefficients e = C p for a dipole p inside radius R."""
    nodes, w = sphere_quadrature(8)
    B, _ = vector_basis(1, nodes, ("N",))
    N2 = B[:, :, 1:4]
    T = (3 * nodes[:, :, None] * nodes[:, None, :] - np.eye(3)) / (FOUR_PI * R ** 3)
    return np.einsum("q,qjm,qjk->mk", w, np.conj(N2), T) / 6.0


def extract_moment(samples, method="dipole", N=4, max_gap=0.35):
    """Recover delta^3 sum M_l H(z_l) from full-sphere data.

    Parameters
    ----------
    samples : FieldSamples
        Perturbation field on a full sphere (continue cap data first).
    method : {"dipole", "q0"}
        ``dipole`` reads the moment from the degree-1 exterior coefficients
        of an N-family fit.  ``q0`` applies R^3 conj(D0)^{-1} to the Q_0
        projection of the data; that projection is identically zero for
        fields produced outside-in, so it returns zero on physical data and
        is kept for comparison only.
    N : int
        Degree cap of the harmonic fit.
    max_gap : float
        Largest admissible angular gap (radians) in the sample coverage.

    Returns
    -------
    MomentResult
    """
    if method not in ("dipole", "q0"):
        raise ArgumentError("method must be 'dipole' or 'q0'")
    dirs, r, c = _sphere_directions(samples)
    R = float(np.mean(r))
    if np.max(np.abs(r - R)) > 1e-9 * R:
        raise ArgumentError("samples must lie on one sphere")
    if _coverage_gap(dirs) > max_gap:
        raise CoverageError("samples do not cover the sphere; continue the "
                            "patch data first")
    F = np.asarray(samples.values)
    w = samples.points.weights
    w = np.full(len(F), FOUR_PI / len(F)) if w is None else w / R ** 2
    _, Q0 = build_D0_Q0()
    q0 = np.einsum("q,qmj,qj->m", w, np.conj(Q0(dirs)), F)
    coeffs = fit_harmonics(samples.points.points, F, N, 0.0, R, c, ("N",),
                           weights=w)
    nrm = np.linalg.norm(F * np.sqrt(w)[:, None])
    res = coeffs.residual / nrm if nrm > 0 else 0.0
    e1 = np.array([coeffs.coefficient("N", 1, m) for m in (-1, 0, 1)])
    quad = (np.array([coeffs.coefficient("N", 2, m) for m in range(-2, 3)])
            if N >= 2 else np.zeros(5, complex))
    if method == "dipole":
        v0 = np.linalg.solve(_dipole_channel(R), e1).real
    else:
        D0, _ = build_D0_Q0()
        v0 = (R ** 3 * np.linalg.solve(np.conj(D0), q0)).real
    return MomentResult(v0, None, quad, q0, float(res), R, method)


def second_moments(positions, moments, center=(0.0, 0.0, 0.0)):
    """sum_l conj(Y_2^m(z_l^)) |z_l|^2 m_l for m = -2..2 (shape (5, 3))."""
    out = np.zeros((5, 3), complex)
    for z, m in zip(np.atleast_2d(positions), np.atleast_2d(moments)):
        d = z - np.asarray(center, dtype=float)
        r = np.linalg.norm(d)
        if r == 0:
            continue
        Y, _, _ = harmonics_table(2, (d / r)[None], 0)
        for i, mm in enumerate(range(-2, 3)):
            out[i] += np.conj(Y[0, flat_index(2, mm)]) * r * r * m
    return out


class DipoleModel:
    """Linear-in-moment forward map for dipoles at trial positions.

    The field of a dipole p at z is G(z) p with G the free-space dipole
    tensor plus, when a core is given, its reflection from the core.
    """

    def __init__(self, points, core=None, components="vector"):
        if components not in ("vector", "normal"):
            raise ArgumentError("components must be 'vector' or 'normal'")
        self.points = np.atleast_2d(points)
        self.components = components
        self.core = core
        if core is not None:
            self._B = core.reflection_matrix(self.points)
            self._c = core.mesh.centroids
            self._n = core.mesh.normals
        ctr = np.zeros(3) if core is None else core.mesh.centroids.mean(0)
        d = self.points - ctr
        self._rhat = d / np.linalg.norm(d, axis=1, keepdims=True)

    def reduce(self, values):
        v = np.asarray(values).reshape(len(self.points), 3)
        if self.components == "normal":
            return np.einsum("pj,pj->p", v, self._rhat)
        return v.reshape(-1)

    def matrix(self, z, with_core=True):
        """Column block G(z) with shape (n_data, 3)."""
        G = dipole_tensor(self.points, z).reshape(-1, 3)
        if with_core and self.core is not None:
            T = dipole_tensor(self._c, z)
            rhs = -np.einsum("fj,fjk->fk", self._n, T)
            G = G + self._B @ rhs
        if self.components == "normal":
            return np.einsum("pj,pjk->pk", self._rhat,
                             G.reshape(len(self.points), 3, 3))
        return G

    def design(self, zs, with_core=True):
        return np.hstack([self.matrix(z, with_core) for z in zs])


def _ls_moments(G, d):
    p, *_ = np.linalg.lstsq(G, d, rcond=None)
    return p, d - G @ p


def _grid_candidates(r_min, r_max, n, center):
    t = (np.arange(n) + 0.5) / n * 2 - 1
    g = np.stack(np.meshgrid(t, t, t, indexing="ij"), -1).reshape(-1, 3)
    g = g * r_max
    r = np.linalg.norm(g, axis=1)
    return g[(r > r_min) & (r < r_max)] + center


def _scan(model, resid, cands):
    """Residual drop of the best single pure dipole at every candidate."""
    d2 = resid @ resid
    drops = np.empty(len(cands))
    for i, z in enumerate(cands):
        G = model.matrix(z, with_core=False)
        _, r = _ls_moments(G, resid)
        drops[i] = d2 - r @ r
    return drops


def _refine(model, data, z0, bounds, max_nfev):
    L = len(z0)

    def fun(x):
        zs = x.reshape(L, 3)
        _, r = _ls_moments(model.design(zs), data)
        return r

    # unit-norm data keep the gradient tolerance meaningful
    data = data / max(np.linalg.norm(data), 1e-300)
    sol = least_squares(fun, np.ravel(z0), bounds=bounds, method="trf",
                        x_scale="jac", xtol=1e-12, ftol=1e-12, gtol=1e-12,
                        max_nfev=max_nfev)
    return sol


def localize_dipoles(samples, count, r_min, r_max, center=(0.0, 0.0, 0.0),
                     core=None, grid=16, components="vector",
                     max_nfev=400, n_starts=3):
    """Fit ``count`` dipoles to perturbation data by damped least squares.

    Seeds come from a greedy scan of a ``grid``^3 lattice over the shell
    with pure dipoles; every combination of the best ``n_starts`` seeds per
    component is refined jointly (moments eliminated linearly, positions by
    trust-region Levenberg-Marquardt with the core reflection included).

    Parameters
    ----------
    samples : FieldSamples
    count : int
    r_min, r_max : float
        Shell prior: every position satisfies r_min < |z - center| < r_max.
    center : 3-vector
    core : CoreModel, optional
        Core surface used for the reflection term.
    grid : int
    components : {"vector", "normal"}
    max_nfev : int
    n_starts : int

    Returns
    -------
    list of DipoleEstimate
    """
    if count < 1:
        raise ArgumentError("need at least one dipole")
    center = np.asarray(center, dtype=float)
    model = DipoleModel(samples.points.points, core, components)
    data = model.reduce(samples.values)
    cands = _grid_candidates(r_min, r_max, grid, center)
    # greedy seeds: best candidates against the running residual
    seeds, resid = [], data.copy()
    for _ in range(count):
        drops = _scan(model, resid, cands)
        order = np.argsort(-drops, kind="stable")
        picked = []
        for i in order:
            z = cands[i]
            if all(np.linalg.norm(z - s) > 2.5 * r_max / grid
                   for s in picked + [q[0] for q in seeds]):
                picked.append(z)
            if len(picked) == n_starts:
                break
        seeds.append(picked)
        _, resid = _ls_moments(model.design([s[0] for s in seeds], False),
                               data)
    lo = np.tile(center - r_max, count)
    hi = np.tile(center + r_max, count)
    starts = [[s[0] for s in seeds]]
    for l in range(count):
        for alt in seeds[l][1:]:
            z0 = [s[0] for s in seeds]
            z0[l] = alt
            starts.append(z0)
    best = None
    for k, z0 in enumerate(starts):
        sol = _refine(model, data, np.array(z0), (lo, hi), max_nfev)
        zs = sol.x.reshape(count, 3)
        cost = float(sol.fun @ sol.fun)
        sep = min((np.linalg.norm(zs[i] - zs[j]) for i in range(count)
                   for j in range(i)), default=0.0)
        key = (cost, -sep, k)
        if best is None or _better(key, best[0]):
            best = (key, sol, zs)
    _, sol, zs = best
    r = np.linalg.norm(zs - center, axis=1)
    if not sol.success and sol.status == 0:
        raise ConvergenceError("dipole fit hit the evaluation cap", best=zs)
    if np.any(r <= r_min) or np.any(r >= r_max):
        raise ConvergenceError("fitted position left the shell prior",
                               best=zs)
    G = model.design(zs)
    p, res = _ls_moments(G, data)
    p = p.reshape(count, 3)
    pstd, zstd = _uncertainty(model, zs, p, res)
    pmax = np.linalg.norm(p, axis=1).max()
    out = []
    for l in range(count):
        out.append(DipoleEstimate(zs[l], p[l], zstd[l], pstd[l],
                                  pruned=bool(np.linalg.norm(p[l])
                                              <= PRUNE_RATIO * pmax)))
    return out


def _better(a, b):
    if a[0] < b[0] * (1 - TIE_TOL):
        return True
    if b[0] < a[0] * (1 - TIE_TOL):
        return False
    return a[1:] < b[1:]


def _uncertainty(model, zs, p, res, h=1e-6):
    """Standard-deviation proxies from the Gauss-Newton normal matrix."""
    L = len(zs)
    G = model.design(zs)
    cols = [G]
    for l in range(L):
        for j in range(3):
            zp = zs.copy()
            zp[l, j] += h
            zm = zs.copy()
            zm[l, j] -= h
            dG = (model.matrix(zp[l]) - model.matrix(zm[l])) / (2 * h)
            cols.append((dG @ p[l])[:, None])
    J = np.hstack(cols)
    dof = max(1, len(res) - J.shape[1])
    s2 = float(res @ res) / dof
    cov = np.linalg.pinv(J.T @ J) * s2
    sd = np.sqrt(np.clip(np.diag(cov), 0, None))
    return sd[:3 * L].reshape(L, 3), sd[3 * L:].reshape(L, 3)


def recover_mu(m_hat, H_at_z, delta, mu0=1.0, min_field=1e-12):
    """Ball permeability from a fitted moment.

    s = m . H / (delta^3 |H|^2) = 4 pi (mu - mu0) / (mu + 2 mu0), so
    mu = mu0 (4 pi + 2 s) / (4 pi - s).

    Returns
    -------
    mu : float
        ``inf`` at the perfectly permeable limit.
    """
    H = np.asarray(H_at_z, dtype=float)
    h2 = float(H @ H)
    if not delta > 0:
        raise ArgumentError("delta must be positive")
    if np.sqrt(h2) < min_field:
        raise DegenerateDataError("background field vanishes at the anomaly")
    s = float(np.asarray(m_hat) @ H) / (delta ** 3 * h2)
    if np.isclose(s, 4 * np.pi, rtol=1e-12, atol=0):
        return np.inf
    if not -2 * np.pi < s < 4 * np.pi:
        raise ModelInconsistencyError(
            f"moment ratio {s:.4g} outside the attainable range (-2pi, 4pi)")
    return mu0 * (4 * np.pi + 2 * s) / (4 * np.pi - s)


def invert(samples, count, r_min, r_max, scene=None, delta=None,
           core_level=3, continuation=None, grid=16, components="vector",
           moment_degree=4, max_nfev=400, n_starts=3):
    """Full pipeline: moments, localization and (optionally) permeability.

    Parameters
    ----------
    samples : FieldSamples
        Perturbation data; cap data are continued for the moment stage.
    count : int
    r_min, r_max : float
        Shell prior.
    scene : AnomalyScene, optional
        Supplies the core (reflection term), background field and mu0.
    delta : float or sequence, optional
        Anomaly scales for permeability recovery.
    continuation : dict, optional
        Keyword arguments for ``continue_patch``.
    max_nfev, n_starts : int
        Optimizer caps passed to ``localize_dipoles``.

    Returns
    -------
    InversionResult
    """
    cont = None
    full = samples
    if not samples.points.full_sphere:
        cont = continue_patch(samples, **(continuation or {}))
        full = cont.samples
    mom = extract_moment(full, N=moment_degree)
    center = np.zeros(3) if scene is None else scene.center
    core = None
    if scene is not None:
        core = core_model(scene.core_radius, tuple(scene.center), core_level)
    est = localize_dipoles(samples, count, r_min, r_max, center, core, grid,
                           components, max_nfev, n_starts)
    if scene is not None and delta is not None:
        deltas = np.broadcast_to(np.asarray(delta, dtype=float), (count,))
        upd = []
        for e, dl in zip(est, deltas):
            mu = None
            if not e.pruned:
                H = scene.background.evaluate(e.position)[0]
                mu = recover_mu(e.moment, H, dl, scene.mu0)
            upd.append(DipoleEstimate(e.position, e.moment, e.position_std,
                                      e.moment_std, mu, e.pruned))
        est = upd
    live = [e for e in est if not e.pruned]
    v2 = second_moments([e.position for e in live],
                        [e.moment for e in live], center)
    mom = MomentResult(mom.v0, v2, mom.quadrupole, mom.q0_projection,
                       mom.residual, mom.radius, mom.method)
    model = DipoleModel(samples.points.points, core, components)
    data = model.reduce(samples.values)
    G = model.design([e.position for e in est])
    _, res = _ls_moments(G, data)
    rel = float(np.linalg.norm(res) / max(np.linalg.norm(data), 1e-300))
    return InversionResult(mom, tuple(est), rel, cont)
