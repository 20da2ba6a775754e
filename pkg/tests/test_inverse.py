import numpy as np
import pytest
from numpy.testing import assert_allclose

from magdetect.errors import (ArgumentError, CoverageError,
                              DegenerateDataError, ModelInconsistencyError)
from magdetect.forward import FieldSamples, core_model, dipole_field
from magdetect.geometry import sample_cap, sphere_grid
from magdetect.inverse import (DipoleModel, continue_patch, extract_moment,
                               invert, lcurve_ridge, localize_dipoles,
                               recover_mu, second_moments)

Z = np.array([0.1, 0.2, 0.8])
P = np.array([1e-5, 2e-5, 5e-5])


def _cap_case(n=400, offset=0.1):
    R = 1.25
    u = np.array([0.4, -0.6, 1.0])
    u /= np.linalg.norm(u)
    z, p = offset * R * u, np.array([0.3, 0.2, 1.0])
    cap = sample_cap(R, (0, 0, 1), np.pi / 2, n)
    test = sample_cap(R, (0, 0, -1), np.pi / 2 - 0.05, 300)
    return cap, test, z, p


def test_moment_of_pure_dipole():
    g = sphere_grid(10.0, 12)
    z = np.array([0.3, -0.5, 0.8])
    p = 0.02 ** 3 * np.pi * np.array([0, 0, 1.0])
    res = extract_moment(FieldSamples(g, dipole_field(g.points, z, p), "t"))
    assert_allclose(res.v0, p, rtol=1e-10, atol=1e-12 * np.linalg.norm(p))
    assert res.residual < 1e-3


def test_moment_on_fibonacci_sphere():
    s = sample_cap(2.0, n=600)
    res = extract_moment(FieldSamples(s, dipole_field(s.points, Z, P), "t"))
    assert_allclose(res.v0, P, rtol=1e-3)


def test_q0_projection_vanishes_on_exterior_fields():
    # a source at |z|/R = 0.66 needs a fine grid for the projection
    g = sphere_grid(1.25, 60)
    F = dipole_field(g.points, Z, P)
    res = extract_moment(FieldSamples(g, F, "t"), method="q0")
    scale = np.sum(g.weights / 1.25 ** 2 * np.linalg.norm(F, axis=1))
    assert np.abs(res.q0_projection).max() <= 1e-8 * scale
    assert np.abs(res.v0).max() <= 1e-8 * np.linalg.norm(P)


def test_zero_field_moment():
    g = sphere_grid(1.25, 8)
    res = extract_moment(FieldSamples(g, np.zeros((len(g), 3)), "t"))
    assert_allclose(res.v0, 0)
    assert res.residual == 0


def test_moment_needs_coverage():
    cap = sample_cap(1.25, (0, 0, 1), np.pi / 2, 300)
    with pytest.raises(CoverageError):
        extract_moment(FieldSamples(cap, dipole_field(cap.points, Z, P), "t"))
    g = sphere_grid(1.25, 8)
    with pytest.raises(ArgumentError):
        extract_moment(FieldSamples(g, np.zeros((len(g), 3)), "t"),
                       method="other")


def test_continue_full_sphere_is_identity():
    g = sphere_grid(1.25, 10)
    F = dipole_field(g.points, 0.1 * Z, P)
    c = continue_patch(FieldSamples(g, F, "t"), N=8, n_theta=10)
    assert_allclose(c.samples.points.points, g.points, atol=1e-14)
    assert np.linalg.norm(c.samples.values - F) <= 1e-6 * np.linalg.norm(F)


def test_continue_hemisphere():
    cap, test, z, p = _cap_case()
    c = continue_patch(FieldSamples(cap, dipole_field(cap.points, z, p), "t"),
                       N=6, ridge=1e-8)
    ref = dipole_field(test.points, z, p)
    err = np.linalg.norm(c.coeffs.evaluate(test.points).real - ref)
    assert err <= 0.02 * np.linalg.norm(ref)
    assert c.samples.points.full_sphere


def test_continue_radially():
    g = sphere_grid(1.25, 10)
    z = 0.1 * Z
    c = continue_patch(FieldSamples(g, dipole_field(g.points, z, P), "t"),
                       N=8, radius=2.0)
    ref = dipole_field(c.samples.points.points, z, P)
    assert np.linalg.norm(c.samples.values - ref) <= 1e-6 * np.linalg.norm(ref)


def test_continue_rejects_small_caps():
    cap = sample_cap(1.25, (0, 0, 1), np.pi / 8, 100)
    with pytest.raises(ArgumentError):
        continue_patch(FieldSamples(cap, np.zeros((100, 3)), "t"))


def test_lcurve_returns_grid_ridge():
    cap, _, z, p = _cap_case()
    s = FieldSamples(cap, dipole_field(cap.points, z, p), "t")
    lam, curve = lcurve_ridge(s, 6)
    assert lam in curve[:, 0]
    assert np.all(np.diff(curve[:, 1]) >= -1e-12 * curve[0, 1])


@pytest.mark.xfail(strict=True, reason="the L-curve corner over-regularizes "
                   "hemisphere continuation; see the decisions ledger")
def test_continue_noisy_hemisphere_lcurve():
    cap, test, z, p = _cap_case()
    F = dipole_field(cap.points, z, p)
    rng = np.random.default_rng(0)
    s = FieldSamples(cap, F + 0.01 * np.abs(F).max()
                     * rng.standard_normal(F.shape), "t")
    lam, _ = lcurve_ridge(s, 6)
    ref = dipole_field(test.points, z, p)
    est = continue_patch(s, 6, lam).coeffs.evaluate(test.points).real
    assert np.linalg.norm(est - ref) <= 0.1 * np.linalg.norm(ref)


def test_localize_single_free_space():
    g = sphere_grid(1.25, 10)
    e, = localize_dipoles(FieldSamples(g, dipole_field(g.points, Z, P), "t"),
                          1, 0.55, 1.0)
    assert np.linalg.norm(e.position - Z) <= 1e-6
    assert np.linalg.norm(e.moment - P) <= 1e-6 * np.linalg.norm(P)


@pytest.fixture(scope="module")
def core_data():
    g = sphere_grid(1.25, 10)
    core = core_model(0.55, (0.0, 0.0, 0.0), 3)
    F = (DipoleModel(g.points, core).matrix(Z) @ P).reshape(-1, 3)
    return g, core, F


def test_localize_single_with_core(core_data):
    g, core, F = core_data
    e, = localize_dipoles(FieldSamples(g, F, "t"), 1, 0.55, 1.0, core=core)
    assert np.linalg.norm(e.position - Z) <= 1e-6
    assert np.linalg.norm(e.moment - P) <= 1e-6 * np.linalg.norm(P)


def test_localize_prunes_extra_component(core_data):
    g, core, F = core_data
    est = localize_dipoles(FieldSamples(g, F, "t"), 2, 0.55, 1.0, core=core)
    big = max(np.linalg.norm(e.moment) for e in est)
    live = [e for e in est if not e.pruned]
    assert len(live) == 1
    assert np.linalg.norm(live[0].position - Z) <= 1e-6
    for e in est:
        if e.pruned:
            assert np.linalg.norm(e.moment) <= 1e-3 * big


def test_normal_component_mode(core_data):
    g, core, F = core_data
    e, = localize_dipoles(FieldSamples(g, F, "t"), 1, 0.55, 1.0, core=core,
                          components="normal")
    assert np.linalg.norm(e.position - Z) <= 1e-6


def test_localize_is_deterministic():
    g = sphere_grid(1.25, 8)
    s = FieldSamples(g, dipole_field(g.points, Z, P), "t")
    a, = localize_dipoles(s, 1, 0.55, 1.0)
    b, = localize_dipoles(s, 1, 0.55, 1.0)
    assert np.array_equal(a.position, b.position)


def test_recover_mu_values():
    H = np.array([0.0, 0.3, 2.0])
    d = 0.02
    assert_allclose(recover_mu(np.pi * d ** 3 * H, H, d), 2.0, rtol=1e-12)
    assert_allclose(recover_mu(16 * np.pi / 7 * d ** 3 * H, H, d), 5.0,
                    rtol=1e-12)
    assert recover_mu(4 * np.pi * d ** 3 * H, H, d) == np.inf
    with pytest.raises(ModelInconsistencyError):
        recover_mu(5 * np.pi * d ** 3 * H, H, d)
    with pytest.raises(DegenerateDataError):
        recover_mu(H, np.zeros(3), d)


def test_second_moments_single():
    v2 = second_moments([[0, 0, 2.0]], [[1.0, 0, 0]])
    # only m = 0 survives on the z axis
    assert_allclose(np.abs(v2[[0, 1, 3, 4]]), 0, atol=1e-15)
    assert_allclose(v2[2].real, [4 * np.sqrt(5 / (4 * np.pi)), 0, 0])


def test_invert_on_cap_uses_raw_data_for_positions(core_data):
    g, core, _ = core_data
    from magdetect.forward import Anomaly, AnomalyScene
    sc = AnomalyScene(0.55, 1.0, [Anomaly(Z, 0.02, 2.0)])
    p = 0.02 ** 3 * np.pi * sc.background.evaluate(Z)[0]
    cap = sample_cap(1.25, Z, np.pi / 2, 400)
    F = (DipoleModel(cap.points, core).matrix(Z) @ p).reshape(-1, 3)
    res = invert(FieldSamples(cap, F, "t"), 1, 0.55, 1.0, scene=sc,
                 delta=0.02)
    assert res.continuation is not None
    assert np.linalg.norm(res.dipoles[0].position - Z) <= 1e-6
    assert_allclose(res.dipoles[0].mu, 2.0, rtol=1e-6)
    assert res.residual <= 1e-8
