import numpy as np
import pytest
from numpy.testing import assert_allclose

from magdetect.errors import (ArgumentError, ConditioningError, GeometryError,
                              SingularityError)
from magdetect.geometry import make_icosphere
from magdetect.potentials import (ScalarDensity, TangentialDensity, WaveNumber,
                                  assemble_K, assemble_Kstar, assemble_L,
                                  assemble_M, assemble_N, assemble_P,
                                  assemble_S, eval_field, gamma_k, solve_dense)


@pytest.fixture(scope="module")
def sphere2():
    return make_icosphere(2)


def test_wavenumber_branch():
    for omega, lam in ((1.0, 1.0), (3.0, 0.5), (1e-6, 2.0)):
        w = WaveNumber(omega, lam)
        assert_allclose(w.k ** 2, -1j * omega / lam, rtol=1e-14)
        assert w.k.real >= 0
    assert WaveNumber(0.0).k == 0
    with pytest.raises(ArgumentError):
        WaveNumber(-1.0)


def test_gamma_values():
    assert_allclose(gamma_k([1, 0, 0]), -0.0795775, rtol=1e-6)
    assert_allclose(gamma_k([0, 2, 0]), -0.0397887, rtol=1e-5)
    assert_allclose(gamma_k([0, 0, 1], WaveNumber(1.0, 1.0)),
                    -0.1227 - 0.1049j, atol=1e-4)
    with pytest.raises(SingularityError):
        gamma_k([0, 0, 0])


def test_single_layer_of_constant():
    m = make_icosphere(3)
    S = assemble_S(m).matrix
    assert_allclose(S @ np.ones(m.n_faces), -1.0, rtol=1e-2)


def test_single_layer_symmetry(sphere2):
    S = assemble_S(sphere2).matrix
    assert np.isrealobj(S)
    # kernel matrix per unit area is symmetric
    A = S / sphere2.areas[None, :]
    assert np.linalg.norm(A - A.T) <= 1e-2 * np.linalg.norm(A)


def test_single_layer_first_order_in_k(sphere2):
    S0 = assemble_S(sphere2).matrix
    ks = np.array([1e-3, 1e-2])
    d = [np.linalg.norm(assemble_S(sphere2, WaveNumber.from_k_squared(k * k))
                        .matrix - S0, 2) for k in ks]
    slope = np.polyfit(np.log(ks), np.log(d), 1)[0]
    assert abs(slope - 1) < 0.05


def test_double_layer_of_one(sphere2):
    assert_allclose(assemble_K(sphere2).matrix.sum(axis=1), 0.5, rtol=1e-10)


def test_kstar_area_balance(sphere2):
    K = assemble_Kstar(sphere2).matrix
    assert_allclose(sphere2.areas @ K, 0.5 * sphere2.areas, rtol=1e-10)


@pytest.mark.parametrize("assemble", [assemble_M, assemble_N])
def test_cross_surface_decay(assemble):
    a = make_icosphere(1)
    scaled = []
    for d in (5.0, 10.0):
        b = make_icosphere(1, 1.0, (d, 0, 0))
        A = assemble(a, b).matrix
        assert np.all(np.isfinite(A))
        scaled.append(np.abs(A).max() * (d - 2) ** 2)
    assert scaled[0] / scaled[1] < 2 and scaled[1] / scaled[0] < 2


def test_overlap_rejected():
    a = make_icosphere(1)
    with pytest.raises(GeometryError):
        assemble_L(a, make_icosphere(1, 1.0, (0.5, 0, 0)))


def test_L_scales_with_volume():
    core = make_icosphere(1, 0.55)
    z = np.array([0.0, 0.2, 0.8])
    norms = []
    for delta in (0.1, 0.05):
        ball = make_icosphere(2, delta, z)
        phi = ball.normals @ np.array([0.2, 0.4, 1.0])
        norms.append(np.linalg.norm(assemble_L(ball, core).matrix @ phi))
        const = np.linalg.norm(assemble_L(ball, core).matrix
                               @ np.ones(ball.n_faces))
        assert const > 0
    slope = np.log(norms[0] / norms[1]) / np.log(2)
    assert abs(slope - 3) < 0.1


def test_P_reproduces_normal_field():
    from magdetect.forward import dipole_field
    core = make_icosphere(3, 0.55)
    ball = make_icosphere(2, 0.05, (0.0, 0.2, 0.8))
    H = dipole_field(core.centroids, np.zeros(3), np.array([0.0, 0.0, 1.0]))
    trace = np.cross(core.normals, H).reshape(-1)
    P = assemble_P(ball, core).matrix
    direct = np.einsum("fj,fj->f", ball.normals,
                       dipole_field(ball.centroids, np.zeros(3), [0, 0, 1.0]))
    got = P @ trace
    assert np.linalg.norm(got - direct) <= 1e-2 * np.linalg.norm(direct)
    assert_allclose(P @ np.zeros_like(trace), 0.0)


def test_grad_S_constant_density():
    m = make_icosphere(3)
    x = np.array([[2.0, 0.5, -1.0], [0.0, 0.0, 3.0]])
    got = eval_field(ScalarDensity(m, np.ones(m.n_faces)), "grad_S", x)
    r = np.linalg.norm(x, axis=1)
    ref = m.areas.sum() * x / (4 * np.pi * r[:, None] ** 3)
    assert_allclose(got, ref, rtol=5e-3, atol=1e-12)


def test_grad_S_dipole_decay():
    m = make_icosphere(2)
    phi = m.normals[:, 2] - np.average(m.normals[:, 2], weights=m.areas)
    r = np.geomspace(5, 50, 6)
    x = np.outer(r, [0.3, 0.4, np.sqrt(0.75)])
    f = np.linalg.norm(eval_field(ScalarDensity(m, phi), "grad_S", x), axis=1)
    slope = np.polyfit(np.log(r), np.log(f), 1)[0]
    assert abs(slope + 3) < 0.02


def test_eval_field_on_surface_raises(sphere2):
    with pytest.raises(SingularityError):
        eval_field(ScalarDensity(sphere2, np.ones(sphere2.n_faces)), "grad_S",
                   sphere2.centroids[:2])


def test_tangential_projection(sphere2):
    v = np.random.default_rng(0).standard_normal((sphere2.n_faces, 3))
    t = TangentialDensity.project(sphere2, v)
    assert t.max_normal_ratio() < 1e-12


def test_solve_identity():
    rhs = np.arange(5.0)
    x, cond = solve_dense(np.eye(5), rhs)
    assert_allclose(x, rhs)
    assert cond == 1.0


def test_solve_shifted_kstar(sphere2):
    K = assemble_Kstar(sphere2).matrix
    rhs = sphere2.normals[:, 2]
    x, _ = solve_dense(1.5 * np.eye(len(K)) - K, rhs)
    a = sphere2.areas
    coef = (a * x) @ rhs / ((a * rhs) @ rhs)
    assert_allclose(coef, 1 / (1.5 - 1 / 6), rtol=2e-2)


def test_solve_at_discrete_eigenvalues(sphere2):
    K = assemble_Kstar(sphere2).matrix
    I = np.eye(len(K))
    with pytest.raises(ConditioningError):
        solve_dense((0.5 + 1e-12) * I - K, np.ones(len(K)))
    lam = np.linalg.eigvals(K).real
    near = lam[np.argmin(np.abs(lam - 1 / 6))]
    with pytest.raises(ConditioningError):
        solve_dense((near + 1e-12) * I - K, sphere2.normals[:, 2])


def test_threads_do_not_change_results(monkeypatch):
    m = make_icosphere(2)
    ref = assemble_M(m).matrix
    monkeypatch.setenv("MAGDETECT_THREADS", "3")
    assert np.array_equal(assemble_M(m).matrix, ref)
