# SPDX-License-Identifier: GPL-3.0-or-later
import time

import numpy as np
import pytest

from canalatlas.errors import (
    EmptyLevelSetError, GridTooSmallError, MeshNotClosedError, ValidationError,
)
from canalatlas.geometry import (
    CanalSpec, GridSpec, ScalarField, TriMesh, cap_open_boundaries, closest_points,
    closest_points_on_triangles, extract_isosurface, inside_mask, signed_distance_field,
    surface_distance, synth_canal,
)


def parity_inside(mesh, points):
    """Classify points with a single ray in a generic direction."""
    direction = np.array([0.5773, 0.5774, 0.5776])
    direction /= np.linalg.norm(direction)
    tri = mesh.triangles
    edge1 = tri[:, 1] - tri[:, 0]
    edge2 = tri[:, 2] - tri[:, 0]
    p = np.cross(direction, edge2)
    det = np.einsum('ij,ij->i', edge1, p)
    inside = []
    for point in points:
        s = point - tri[:, 0]
        u = np.einsum('ij,ij->i', s, p) / det
        q = np.cross(s, edge1)
        v = q.dot(direction) / det
        t = np.einsum('ij,ij->i', edge2, q) / det
        hits = (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
        inside.append(np.count_nonzero(hits) % 2 == 1)
    return np.array(inside)


def exhaustive_distances(mesh, points):
    """Find the distance from every point to every triangle and keep the smallest."""
    tri = mesh.triangles
    distances = []
    for point in points:
        repeated = np.repeat(point[None, :], len(tri), axis=0)
        closest = closest_points_on_triangles(repeated, tri[:, 0], tri[:, 1], tri[:, 2])
        distances.append(np.linalg.norm(repeated - closest, axis=1).min())
    return np.array(distances)


@pytest.fixture(scope='module')
def sphere_field(sphere_mesh):
    return signed_distance_field(sphere_mesh, GridSpec.around(sphere_mesh, spacing=0.5))


@pytest.mark.parametrize('origin, spacing, dims, expected', (
    ((0, 0), (1, 1, 1), (4, 4, 4), 'three'),
    ((0, 0, 0), (1, 0, 1), (4, 4, 4), 'spacing must be positive'),
    ((0, 0, 0), (1, 1, 1), (4, 1, 4), 'at least two samples'),
))
def test_grid_spec_invariants(origin, spacing, dims, expected):
    with pytest.raises(ValidationError, match=expected):
        GridSpec(origin, spacing, dims)


def test_grid_spec_around(sphere_mesh):
    grid = GridSpec.around(sphere_mesh, spacing=0.5, margin=4)
    assert grid.spacing == (0.5, 0.5, 0.5)
    assert grid.contains(sphere_mesh.vertices, margin=4)
    assert grid.points().shape == (grid.size, 3)
    np.testing.assert_allclose(grid.points()[0], grid.origin)
    assert grid.voxel_diagonal == pytest.approx(np.sqrt(3) * 0.5)


def test_scalar_field_invariants():
    grid = GridSpec((0, 0, 0), (1, 1, 1), (2, 2, 2))
    with pytest.raises(ValidationError, match='samples'):
        ScalarField(grid, np.zeros(7))
    with pytest.raises(ValidationError, match='finite'):
        ScalarField(grid, np.full(8, np.inf))


def test_scalar_field_sample_and_downsample():
    grid = GridSpec((0, 0, 0), (1, 1, 1), (9, 9, 9))
    x = grid.points()[:, 0]
    field = ScalarField(grid, 2.0 * x + 1.0)
    np.testing.assert_allclose(field.sample([[0.5, 3, 3], [7.25, 1, 1]]), [2.0, 15.5])
    # Positions outside the grid clamp to the border
    np.testing.assert_allclose(field.sample([[-5, 0, 0], [20, 0, 0]]), [1.0, 17.0])
    coarse = field.downsampled(2)
    assert coarse.grid.dims == (5, 5, 5)
    assert coarse.grid.spacing == (2.0, 2.0, 2.0)
    # Smoothing preserves a linear profile away from the border
    np.testing.assert_allclose(coarse.values[2, 2, 2], 9.0, atol=1e-9)


def test_sdf_of_sphere(sphere_mesh, sphere_field):
    center = sphere_field.sample([[0.0, 0.0, 0.0]])[0]
    assert center == pytest.approx(-10.0, abs=0.5)
    analytic = np.linalg.norm(sphere_field.grid.points(), axis=1) - 10.0
    error = np.abs(sphere_field.values.ravel() - analytic)
    assert error.max() < sphere_field.grid.voxel_diagonal


def test_sdf_of_sphere_runtime(sphere_mesh):
    start = time.monotonic()
    signed_distance_field(sphere_mesh, GridSpec.around(sphere_mesh, spacing=0.5))
    assert time.monotonic() - start < 10


def test_sdf_far_outside(sphere_mesh):
    grid = GridSpec((-12.0, -12.0, -12.0), (0.5, 0.5, 0.5), (69, 49, 49))
    field = signed_distance_field(sphere_mesh, grid)
    assert field.sample([[20.0, 0.0, 0.0]])[0] == pytest.approx(10.0, abs=0.5)


def test_sdf_at_surface_vertices(sphere_mesh, sphere_field):
    values = sphere_field.sample(sphere_mesh.vertices)
    assert np.abs(values).max() < sphere_field.grid.voxel_diagonal


def test_sdf_metric_property(canal_mesh):
    capped = cap_open_boundaries(canal_mesh)
    field = signed_distance_field(capped, GridSpec.around(capped, spacing=0.5))
    rng = np.random.default_rng(1)
    low, high = np.array(field.grid.origin), np.array(field.grid.upper)
    samples = rng.uniform(low, high, size=(500, 3))
    _, _, exact = closest_points(capped, samples)
    assert np.all(np.abs(field.sample(samples)) <= exact + field.grid.voxel_diagonal)


def test_sdf_matches_exhaustive_search_on_capped_canal():
    # The drum cap fans out into slivers much longer than the wall faces
    mesh = cap_open_boundaries(synth_canal(CanalSpec(), seed=0))
    field = signed_distance_field(mesh, GridSpec.around(mesh, 1.0))
    values = field.values.ravel()
    points = field.grid.points()
    rng = np.random.default_rng(0)
    near = rng.choice(np.flatnonzero(np.abs(values) < 4.0), size=300, replace=False)
    far = rng.choice(np.flatnonzero(np.abs(values) >= 4.0), size=50, replace=False)
    selected = np.concatenate((near, far))
    expected = exhaustive_distances(mesh, points[selected])
    np.testing.assert_allclose(np.abs(values[selected]), expected, rtol=0, atol=1e-9)


def test_surface_distance_matches_exhaustive_search():
    first = cap_open_boundaries(synth_canal(CanalSpec(), seed=0))
    second = TriMesh(first.vertices + np.array([0.3, -0.2, 0.4]), first.faces)
    mean, hausdorff = surface_distance(first, second)
    expected = np.concatenate((
        exhaustive_distances(second, first.vertices),
        exhaustive_distances(first, second.vertices),
    ))
    assert mean == pytest.approx(expected.mean(), abs=1e-9)
    assert hausdorff == pytest.approx(expected.max(), abs=1e-9)


@pytest.mark.parametrize('mesh_fixture', ('sphere_mesh', 'canal_mesh'))
def test_sdf_sign_matches_parity(request, mesh_fixture):
    mesh = cap_open_boundaries(request.getfixturevalue(mesh_fixture))
    field = signed_distance_field(mesh, GridSpec.around(mesh, spacing=0.5))
    rng = np.random.default_rng(2)
    low, high = np.array(field.grid.origin), np.array(field.grid.upper)
    samples = rng.uniform(low, high, size=(1000, 3))
    # Interpolation across the zero level can flip the sign right next to the surface
    _, _, distance = closest_points(mesh, samples)
    samples = samples[distance > field.grid.voxel_diagonal]
    expected = parity_inside(mesh, samples)
    assert np.array_equal(field.sample(samples) < 0, expected)


def test_inside_mask_of_tube_cap(cylinder_mesh):
    grid = GridSpec((-6.0, -6.0, -2.0), (0.5, 0.5, 0.5), (25, 25, 65))
    mask = inside_mask(cylinder_mesh, grid)
    x, y, z = (axis.reshape(grid.dims) for axis in grid.points().T)
    radius = np.hypot(x, y)
    clearly_inside = (radius < 3.5) & (z > 0.5) & (z < 27.5)
    clearly_outside = (radius > 4.5) | (z < -0.5) | (z > 28.5)
    assert mask[clearly_inside].all()
    assert not mask[clearly_outside].any()


def test_sdf_requires_closed_mesh(tube_mesh):
    with pytest.raises(MeshNotClosedError, match='2 open boundary loops'):
        signed_distance_field(tube_mesh, GridSpec.around(tube_mesh))


def test_sdf_requires_margin(sphere_mesh):
    grid = GridSpec.around(sphere_mesh, spacing=0.5, margin=1)
    with pytest.raises(GridTooSmallError):
        signed_distance_field(sphere_mesh, grid)


@pytest.mark.parametrize('level', (0.0, 1.0))
def test_extract_isosurface_of_sphere(sphere_field, level):
    mesh = extract_isosurface(sphere_field, level)
    radii = np.linalg.norm(mesh.vertices, axis=1)
    half_diagonal = 0.5 * sphere_field.grid.voxel_diagonal
    assert np.abs(radii - (10.0 + level)).max() < half_diagonal
    assert mesh.is_closed


def test_isosurface_round_trip_is_contractive(sphere_mesh, sphere_field):
    reconstructed = extract_isosurface(sphere_field, 0.0)
    _, hausdorff = surface_distance(sphere_mesh, reconstructed)
    assert hausdorff < sphere_field.grid.voxel_diagonal


def test_extract_isosurface_empty_level():
    grid = GridSpec((0, 0, 0), (1, 1, 1), (4, 4, 4))
    with pytest.raises(EmptyLevelSetError):
        extract_isosurface(ScalarField(grid, np.full(64, 3.0)), 0.0)
