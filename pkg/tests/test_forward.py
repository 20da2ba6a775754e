import numpy as np
import pytest
from numpy.testing import assert_allclose

from magdetect.errors import (ArgumentError, ContrastError, DomainError,
                              GeometryError)
from magdetect.forward import (Anomaly, AnomalyScene, Background,
                               Discretization, background_H,
                               bem_oracle_perturbation, dipole_field,
                               dipole_perturbation, mesh_volume,
                               omega_linear_difference, polarization_ball,
                               polarization_bem, polarization_ellipsoid,
                               solve_leading_densities, varsigma)
from magdetect.geometry import make_ellipsoid, make_icosphere, sphere_grid
from magdetect.potentials import assemble_Kstar, solve_dense

Z = np.array([0.1, 0.2, 0.8])
FAST = Discretization(3, 2)


def scene(delta=0.02, mu=2.0, **kw):
    return AnomalyScene(0.55, 1.0, [Anomaly(Z, delta, mu)], **kw)


def test_varsigma_values():
    assert varsigma(2, 1) == 1.5
    assert varsigma(3, 1) == 1.0
    assert varsigma(np.inf, 1, with_flag=True) == (0.5, True)
    assert varsigma(2, 1, with_flag=True)[1] is False
    with pytest.raises(ContrastError):
        varsigma(1.0, 1.0)
    with pytest.raises(ContrastError):
        varsigma(-1.0, 1.0)


def test_scene_invariants():
    with pytest.raises(GeometryError):
        AnomalyScene(0.55, 1.0, [Anomaly([0, 0, 0.56], 0.02, 2.0)])
    with pytest.raises(GeometryError):
        AnomalyScene(0.55, 1.0, [Anomaly(Z, 0.02, 2.0),
                                 Anomaly(Z + [0.1, 0, 0], 0.02, 2.0)])
    with pytest.raises(ContrastError):
        scene(mu=1.0)
    with pytest.raises(DomainError):
        scene().check_far([[0.1, 0.2, 1.1]])
    with pytest.raises(DomainError):
        scene().check_exterior([[0.0, 0.0, 0.9]])


def test_axial_dipole_background():
    r = 2.0
    H = background_H(scene(), [[0, 0, r]]).values[0]
    assert_allclose(H, [0, 0, 1 / (2 * np.pi * r ** 3)], rtol=1e-14)


def test_background_layer_path():
    rng = np.random.default_rng(0)
    d = rng.standard_normal((50, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    x = d * rng.uniform(0.7, 2.0, 50)[:, None]
    a = background_H(scene(), x).values
    b = background_H(scene(), x, method="layer").values
    err = np.linalg.norm(a - b, axis=1) / np.linalg.norm(a, axis=1)
    assert err.max() <= 0.02


def test_background_is_harmonic():
    sc = scene(background=Background("dipole", (0.3, -0.2, 1.0),
                                     (0.05, 0.0, -0.1)))
    x0 = np.array([0.4, 0.7, 0.9])
    h = 1e-4
    J = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        J[:, j] = (background_H(sc, [x0 + e]).values[0]
                   - background_H(sc, [x0 - e]).values[0]) / (2 * h)
    scale = np.linalg.norm(J)
    assert abs(np.trace(J)) <= 1e-6 * scale
    assert np.linalg.norm(J - J.T) <= 1e-6 * scale


def test_background_inside_core_rejected():
    with pytest.raises(DomainError):
        background_H(scene(), [[0, 0, 0.3]])


def test_ball_tensor_values():
    assert_allclose(polarization_ball(2, 1).matrix, np.pi * np.eye(3))
    assert_allclose(polarization_ball(5, 1).matrix, 16 * np.pi / 7 * np.eye(3))
    assert_allclose(polarization_ball(0.5, 1).matrix, -0.8 * np.pi * np.eye(3))


def test_ellipsoid_closed_form_reduces_to_ball():
    assert_allclose(polarization_ellipsoid(3.0, 1.0, (1, 1, 1)).matrix,
                    polarization_ball(3.0, 1.0).matrix, rtol=1e-12)


def test_bem_prolate_spheroid():
    ax = np.array([2.0, 1.0, 1.0])
    ax /= np.prod(ax) ** (1 / 3)
    pt = polarization_bem(make_ellipsoid(3, ax), varsigma(2.0, 1.0))
    M = pt.matrix
    assert pt.asymmetry <= 1e-6
    assert np.abs(M - np.diag(np.diag(M))).max() <= 1e-3 * np.abs(M).max()
    assert M[0, 0] > M[1, 1] * 1.1
    ref = polarization_ellipsoid(2.0, 1.0, ax).matrix
    assert_allclose(np.diag(M), np.diag(ref), rtol=0.02)


def test_bem_weak_contrast():
    m = make_icosphere(3)
    M = polarization_bem(m, 50.0).matrix
    assert_allclose(M * 50 / mesh_volume(m), np.eye(3), atol=0.05)


def test_bem_rejects_spectrum_interior():
    with pytest.raises(ArgumentError):
        polarization_bem(make_icosphere(1), 0.3)


def test_leading_density_approaches_isolated_solution():
    errs = []
    for d in (0.04, 0.02):
        sc = scene(d)
        ld = solve_leading_densities(sc, FAST)
        m = ld.meshes[0]
        H = sc.background.evaluate(Z)[0]
        ref, _ = solve_dense(1.5 * np.eye(m.n_faces) - assemble_Kstar(m).matrix,
                             m.normals @ H)
        errs.append(np.linalg.norm(ld.phis[0] - ref) / np.linalg.norm(ref))
    assert 0.35 <= errs[1] / errs[0] <= 0.7


def test_leading_density_zero_field():
    sc = scene(background=Background("dipole", (0.0, 0.0, 0.0)))
    ld = solve_leading_densities(sc, FAST)
    assert_allclose(ld.phis[0], 0.0)


def test_pair_coupling_is_small():
    d = 0.02
    u = np.cross(Z, [0, 0, 1.0])
    u /= np.linalg.norm(u)
    sc = AnomalyScene(0.55, 1.0, [Anomaly(Z, d, 2.0),
                                  Anomaly(Z + 20 * d * u, d, 5.0)])
    ld = solve_leading_densities(sc, FAST)
    for l in range(2):
        alone = solve_leading_densities(sc.with_anomalies([sc.anomalies[l]]),
                                        FAST).phis[0]
        assert np.linalg.norm(ld.phis[l] - alone) <= d ** 2 * np.linalg.norm(alone)


def test_dipole_perturbation_scales_as_volume():
    x = sphere_grid(2.0, 6)
    norms = [np.linalg.norm(dipole_perturbation(scene(d), x).values)
             for d in (0.01, 0.02, 0.04)]
    slope = np.polyfit(np.log([0.01, 0.02, 0.04]), np.log(norms), 1)[0]
    assert abs(slope - 3) <= 0.05


def test_dipole_far_field():
    sc = scene()
    H = sc.background.evaluate(Z)[0]
    xh = np.array([30.0, 20.0, 35.0])
    xh /= np.linalg.norm(xh)
    errs = []
    for r in (50.0, 200.0):
        f = dipole_perturbation(sc, [r * xh], include_core=False).values[0]
        lead = (3 * np.outer(xh, xh) - np.eye(3)) @ (0.02 ** 3 * np.pi * H)
        lead /= 4 * np.pi * r ** 3
        errs.append(np.linalg.norm(f - lead) / np.linalg.norm(lead))
    # next term is O(|z| / |x|)
    assert errs[0] <= 5 * np.linalg.norm(Z) / 50
    assert_allclose(errs[0] / errs[1], 4.0, rtol=0.05)
    assert errs[1] <= 0.02


def test_dipole_perturbation_linear_in_tensor():
    x = sphere_grid(1.25, 4)
    f2 = dipole_perturbation(scene(mu=2.0), x, include_core=False).values
    f5 = dipole_perturbation(scene(mu=5.0), x, include_core=False).values
    assert_allclose(f5, f2 * (16 / 7), rtol=1e-12)


def test_oracle_uniform_field_sphere():
    sc = scene(background=Background("uniform", field=(0.3, 0.1, 1.0)))
    g = sphere_grid(1.25, 6)
    o = bem_oracle_perturbation(sc, g, include_core=False).values
    ref = dipole_field(g.points, Z, 0.02 ** 3 * np.pi * np.array([0.3, 0.1, 1.0]))
    assert np.linalg.norm(o - ref) <= 0.01 * np.linalg.norm(ref)


def test_oracle_pair_superposition():
    d = 0.02
    u = np.cross(Z, [0, 0, 1.0])
    u /= np.linalg.norm(u)
    sc = AnomalyScene(0.55, 1.0, [Anomaly(Z, d, 2.0),
                                  Anomaly(Z + 20 * d * u, d, 5.0)])
    g = sphere_grid(1.25, 6)
    both = bem_oracle_perturbation(sc, g, FAST, include_core=False).values
    singles = [bem_oracle_perturbation(sc.with_anomalies([a]), g, FAST,
                                       include_core=False).values
               for a in sc.anomalies]
    resid = np.linalg.norm(both - singles[0] - singles[1])
    assert resid <= 0.01 * min(np.linalg.norm(s) for s in singles)


def test_omega_difference_basics():
    sa = AnomalyScene(0.55, 1.0, [Anomaly(Z, 0.02, 2.0, sigma=2.0)])
    sb = AnomalyScene(0.55, 1.0, [Anomaly(Z, 0.02, 2.0, sigma=1.0)])
    x = [[0.4, 0.1, 0.5], Z + [0.005, 0.0, 0.0]]
    assert np.all(omega_linear_difference(sa, sa, x).values == 0)
    out = omega_linear_difference(sa, sb, x).values
    assert np.all(out.real == 0) and np.all(np.abs(out) > 0)
    with pytest.raises(ArgumentError):
        omega_linear_difference(sa, scene(0.03), x)
