# SPDX-License-Identifier: GPL-3.0-or-later
import numpy as np
import pytest

from canalatlas.errors import EmptyMeshError
from canalatlas.geometry import (
    TriMesh, TriangleLocator, cap_open_boundaries, closest_point, closest_points,
    closest_points_on_triangles, surface_distance,
)


def brute_force(mesh, point):
    triangles = mesh.triangles
    repeated = np.repeat(np.asarray(point, dtype=np.float64)[None, :], len(triangles), axis=0)
    closest = closest_points_on_triangles(
        repeated, triangles[:, 0], triangles[:, 1], triangles[:, 2])
    distances = np.linalg.norm(repeated - closest, axis=1)
    face = int(np.argmin(distances))
    return closest[face], face, distances[face]


def test_closest_point_at_vertex(sphere_mesh):
    vertex = sphere_mesh.vertices[100]
    point, face, distance = closest_point(sphere_mesh, vertex)
    assert distance == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(point, vertex, atol=1e-12)
    assert 100 in sphere_mesh.faces[face]


def test_closest_point_from_sphere_center(sphere_mesh):
    _, _, distance = closest_point(sphere_mesh, [0.0, 0.0, 0.0])
    # The faceted sphere is inscribed, so the chord error only shortens the distance
    assert 9.9 < distance <= 10.0


def test_closest_point_lies_on_face(canal_mesh):
    point, face, _ = closest_point(canal_mesh, [1.0, 2.0, 10.0])
    a, b, c = canal_mesh.triangles[face]
    normal = np.cross(b - a, c - a)
    assert abs(np.dot(point - a, normal / np.linalg.norm(normal))) < 1e-9


@pytest.mark.parametrize('mesh_fixture, scale', (
    ('sphere_mesh', 15.0),
    ('canal_mesh', 20.0),
))
def test_closest_point_matches_brute_force(request, mesh_fixture, scale):
    mesh = request.getfixturevalue(mesh_fixture)
    rng = np.random.default_rng(0)
    center = mesh.vertices.mean(axis=0)
    queries = center + rng.uniform(-scale, scale, size=(100, 3))
    points, faces, distances = closest_points(mesh, queries)
    for query, point, face, distance in zip(queries, points, faces, distances):
        expected_point, expected_face, expected_distance = brute_force(mesh, query)
        assert abs(distance - expected_distance) < 1e-9
        # Faces sharing the nearest edge or corner can only differ by rounding
        assert face == expected_face or abs(distance - expected_distance) < 1e-12
        np.testing.assert_allclose(point, expected_point, atol=1e-9)


def test_capped_canal_matches_brute_force(canal_mesh):
    mesh = cap_open_boundaries(canal_mesh)
    locator = TriangleLocator(mesh)
    # The cap fans are split into several samples each
    assert locator.sample_count > len(mesh.faces)
    rng = np.random.default_rng(4)
    cap_corners = mesh.triangles[len(canal_mesh.faces):].reshape(-1, 3)
    queries = np.vstack((
        cap_corners[rng.choice(len(cap_corners), size=50)] + rng.normal(0, 1.5, size=(50, 3)),
        mesh.vertices.mean(axis=0) + rng.uniform(-30, 30, size=(50, 3)),
    ))
    _, _, distances = locator.query_many(queries)
    expected = np.array([brute_force(mesh, query)[2] for query in queries])
    np.testing.assert_allclose(distances, expected, rtol=0, atol=1e-9)


def test_approximate_mode_is_an_upper_bound(canal_mesh):
    rng = np.random.default_rng(3)
    queries = canal_mesh.vertices.mean(axis=0) + rng.uniform(-20, 20, size=(200, 3))
    _, _, exact = closest_points(canal_mesh, queries, exact=True)
    _, _, approximate = closest_points(canal_mesh, queries, exact=False)
    assert np.all(approximate >= exact - 1e-12)


def test_small_mesh_uses_all_faces():
    mesh = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 2, 1], [0, 1, 3]])
    locator = TriangleLocator(mesh)
    point, face, distance = locator.query([0.2, 0.2, -1.0])
    assert face == 0
    assert distance == pytest.approx(1.0)
    np.testing.assert_allclose(point, [0.2, 0.2, 0.0])


def test_closest_point_empty_mesh():
    mesh = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
    with pytest.raises(EmptyMeshError):
        closest_point(mesh, [0.0, 0.0, 0.0])


@pytest.mark.parametrize('query, expected', (
    # Face interior
    ([0.25, 0.25, 1.0], [0.25, 0.25, 0.0]),
    # Corners
    ([-1.0, -1.0, 0.0], [0.0, 0.0, 0.0]),
    ([2.0, -0.5, 0.0], [1.0, 0.0, 0.0]),
    ([-0.5, 2.0, 0.0], [0.0, 1.0, 0.0]),
    # Edges
    ([0.5, -1.0, 0.0], [0.5, 0.0, 0.0]),
    ([-1.0, 0.5, 0.0], [0.0, 0.5, 0.0]),
    ([1.0, 1.0, 0.0], [0.5, 0.5, 0.0]),
))
def test_closest_points_on_triangles_regions(query, expected):
    a = np.array([[0.0, 0.0, 0.0]])
    b = np.array([[1.0, 0.0, 0.0]])
    c = np.array([[0.0, 1.0, 0.0]])
    result = closest_points_on_triangles(np.array([query], dtype=np.float64), a, b, c)
    np.testing.assert_allclose(result[0], expected, atol=1e-12)


def test_surface_distance(sphere_factory):
    inner = sphere_factory(radius=10.0)
    outer = sphere_factory(radius=11.0)
    mean, hausdorff = surface_distance(inner, inner)
    assert mean == pytest.approx(0.0, abs=1e-12)
    assert hausdorff == pytest.approx(0.0, abs=1e-12)
    mean, hausdorff = surface_distance(inner, outer)
    assert mean == pytest.approx(1.0, abs=0.05)
    assert hausdorff == pytest.approx(1.0, abs=0.05)
