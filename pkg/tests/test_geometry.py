import numpy as np
import pytest
from numpy.testing import assert_allclose

from magdetect.errors import ArgumentError
from magdetect.geometry import (check_closed, in_cap, make_ellipsoid,
                                make_icosphere, mesh_from_arrays,
                                quadrature_for, sample_cap, sphere_grid)


def test_icosahedron_counts():
    m = make_icosphere(0)
    assert m.n_faces == 20
    assert len(m.vertices) == 12


def test_icosphere_area_level3():
    m = make_icosphere(3)
    assert m.n_faces == 1280
    assert abs(m.areas.sum() - 4 * np.pi) / (4 * np.pi) < 5e-3


def test_icosphere_radius_and_center():
    m = make_icosphere(2, 2.0, (0, 0, 5))
    assert_allclose(np.linalg.norm(m.vertices - [0, 0, 5], axis=1), 2.0,
                    atol=1e-12)


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_topology(level):
    info = check_closed(make_icosphere(level))
    assert info == {"euler": 2, "manifold": True, "outward": True}


def test_ellipsoid_topology():
    info = check_closed(make_ellipsoid(2, (2.0, 1.0, 0.5)))
    assert info["euler"] == 2 and info["manifold"] and info["outward"]


def test_area_converges():
    errs = [abs(make_icosphere(l).areas.sum() - 4 * np.pi) for l in (1, 2, 3)]
    assert errs[0] > errs[1] > errs[2]


def test_quadrature_weights():
    q = quadrature_for(make_icosphere(3), 1)
    assert_allclose(q.weights.sum(), 12.566, rtol=5e-3)
    m = make_icosphere(2)
    q6 = quadrature_for(m, 6)
    assert_allclose(q6.integrate(np.ones(len(q6.weights))), m.areas.sum(),
                    rtol=1e-13)


def test_quadrature_linear_exact():
    m = make_icosphere(1)
    q = quadrature_for(m, 3)
    f = q.nodes @ np.array([0.3, -1.2, 2.0]) + 0.7
    exact = (m.centroids @ np.array([0.3, -1.2, 2.0]) + 0.7) * m.areas
    per_face = np.bincount(q.face_index, q.weights * f)
    assert_allclose(per_face, exact, atol=1e-14)


def test_bad_quadrature_order():
    with pytest.raises(ArgumentError):
        quadrature_for(make_icosphere(0), 2)


def test_sample_cap_full_sphere():
    p = sample_cap(10, (0, 0, 1), np.pi, 500)
    assert len(p) == 500
    assert_allclose(np.linalg.norm(p.points, axis=1), 10, atol=1e-12)
    assert p.full_sphere


def test_sample_cap_membership():
    p = sample_cap(10, (0, 0, 1), np.pi / 6, 100)
    assert np.all(p.points[:, 2] / 10 >= np.cos(np.pi / 6) - 1e-12)
    assert np.all(in_cap(p.points, (0, 0, 1), np.pi / 6))


def test_sample_cap_hemisphere():
    p = sample_cap(1, (1, 0, 0), np.pi / 2, 4)
    assert np.all(p.points[:, 0] >= -1e-12)


def test_sphere_grid_exactness():
    g = sphere_grid(2.0, 6)
    assert_allclose(g.weights.sum(), 16 * np.pi, rtol=1e-13)
    d = g.directions
    assert_allclose(np.sum(g.weights * d[:, 2] ** 4), 16 * np.pi / 5,
                    rtol=1e-13)


def test_mesh_from_arrays_rejects_bad_indices():
    with pytest.raises(ArgumentError):
        mesh_from_arrays(np.zeros((3, 3)), [[0, 1, 5]])
