"""Closed-form integrals of 1/R and its gradient over flat triangles.

For a target x and a flat triangle T with unit normal n,

    I(x) = int_T 1/|x-y| dS_y,      G(x) = int_T (x-y)/|x-y|^3 dS_y = -grad I.

G splits into a normal part (signed solid angle) and an in-plane part that
reduces to edge integrals of 1/R by the divergence theorem.  On the panel
itself the normal part is replaced by its principal value, zero.
"""

import numpy as np

__all__ = ["panel_integrals"]


def _edge_log(rp, rq, t):
    """int over the segment p->q of 1/|x-y| dl, given rp = p-x, rq = q-x."""
    sp = np.einsum("...j,...j->...", rp, t)
    sq = np.einsum("...j,...j->...", rq, t)
    Rp = np.linalg.norm(rp, axis=-1)
    Rq = np.linalg.norm(rq, axis=-1)
    perp = rp - sp[..., None] * t
    d2 = np.einsum("...j,...j->...", perp, perp)
    out = np.empty_like(sp)
    a = sp >= 0
    b = ~a & (sq <= 0)
    c = ~a & ~b
    with np.errstate(divide="ignore", invalid="ignore"):
        out[a] = np.log((Rq[a] + sq[a]) / (Rp[a] + sp[a]))
        out[b] = np.log((Rp[b] - sp[b]) / (Rq[b] - sq[b]))
        out[c] = np.log((Rq[c] + sq[c]) * (Rp[c] - sp[c]) / d2[c])
    return out


def panel_integrals(x, corners, normals, potential=True):
    """Evaluate I and G for every (target, panel) pair.

    Parameters
    ----------
    x : (P, 3) array
        Targets.
    corners : (F, 3, 3) array
        Triangle corners, counter-clockwise about ``normals``.
    normals : (F, 3) array
    potential : bool
        Also return I.

    Returns
    -------
    I : (P, F) array or None
    G : (P, F, 3) array
    """
    x = np.asarray(x, dtype=float)
    r = corners[None, :, :, :] - x[:, None, None, :]  # (P, F, 3, 3)
    R = np.linalg.norm(r, axis=-1)
    r0, r1, r2 = r[:, :, 0], r[:, :, 1], r[:, :, 2]
    R0, R1, R2 = R[:, :, 0], R[:, :, 1], R[:, :, 2]

    triple = np.einsum("pfj,pfj->pf", r0, np.cross(r1, r2))
    denom = (R0 * R1 * R2 + np.einsum("pfj,pfj->pf", r0, r1) * R2
             + np.einsum("pfj,pfj->pf", r0, r2) * R1
             + np.einsum("pfj,pfj->pf", r1, r2) * R0)
    omega = -2.0 * np.arctan2(triple, denom)
    # in-plane targets: zero outside the panel, principal value inside;
    # the test uses the plane distance so that rounding in far-from-origin
    # coordinates cannot flip the sign of a self solid angle
    h = np.einsum("fj,pfj->pf", normals, -r0)
    omega[np.abs(h) <= 1e-10 * np.minimum(np.minimum(R0, R1), R2)] = 0.0

    G = omega[..., None] * normals[None, :, :]
    I = None
    if potential:
        I = -np.abs(h) * np.abs(omega)
    for k in range(3):
        p, q = corners[:, k], corners[:, (k + 1) % 3]
        e = q - p
        t = e / np.linalg.norm(e, axis=1, keepdims=True)
        m = np.cross(t, normals)
        f = _edge_log(r[:, :, k], r[:, :, (k + 1) % 3], t[None])
        G += f[..., None] * m[None]
        if potential:
            I += np.einsum("fj,pfj->pf", m, r[:, :, k]) * f
    return I, G
