# SPDX-License-Identifier: GPL-3.0-or-later
import numpy as np
import pytest

from canalatlas.geometry import (
    CanalSpec, GridSpec, ScalarField, TriMesh, cap_open_boundaries, synth_canal,
)


def make_sphere(radius=10.0, center=(0.0, 0.0, 0.0), rings=24, segments=48):
    """Build a closed, outward oriented UV sphere."""
    polar = np.pi * np.arange(1, rings) / rings
    azimuth = 2 * np.pi * np.arange(segments) / segments
    sin_polar = np.sin(polar)[:, None]
    ring_points = np.stack((
        sin_polar * np.cos(azimuth)[None, :],
        sin_polar * np.sin(azimuth)[None, :],
        np.repeat(np.cos(polar)[:, None], segments, axis=1),
    ), axis=-1).reshape(-1, 3)
    vertices = np.vstack(([0.0, 0.0, 1.0], ring_points, [0.0, 0.0, -1.0]))
    vertices = radius * vertices + np.asarray(center)

    north, south = 0, len(vertices) - 1
    faces = []
    for j in range(segments):
        j_next = (j + 1) % segments
        faces.append((north, 1 + j, 1 + j_next))
        for i in range(rings - 2):
            a = 1 + i * segments + j
            b = 1 + (i + 1) * segments + j
            c = 1 + (i + 1) * segments + j_next
            d = 1 + i * segments + j_next
            faces.append((a, b, c))
            faces.append((a, c, d))
        last = 1 + (rings - 2) * segments
        faces.append((south, last + j_next, last + j))
    return TriMesh(vertices, faces)


def make_tube(radius=4.0, length=20.0, rings=21, segments=32):
    """Build a straight tube along z with both ends open."""
    z = np.linspace(0.0, length, rings)
    azimuth = 2 * np.pi * np.arange(segments) / segments
    vertices = np.stack((
        np.repeat(radius * np.cos(azimuth)[None, :], rings, axis=0),
        np.repeat(radius * np.sin(azimuth)[None, :], rings, axis=0),
        np.repeat(z[:, None], segments, axis=1),
    ), axis=-1).reshape(-1, 3)
    faces = []
    for i in range(rings - 1):
        for j in range(segments):
            j_next = (j + 1) % segments
            a, b = i * segments + j, i * segments + j_next
            c, d = (i + 1) * segments + j_next, (i + 1) * segments + j
            faces.append((a, b, c))
            faces.append((a, c, d))
    return TriMesh(vertices, faces)


def make_disk(radius=5.0, segments=16):
    """Build a flat disk fan in the z = 0 plane with one boundary loop."""
    azimuth = 2 * np.pi * np.arange(segments) / segments
    rim = np.column_stack((radius * np.cos(azimuth), radius * np.sin(azimuth), np.zeros(segments)))
    vertices = np.vstack(([0.0, 0.0, 0.0], rim))
    faces = [(0, 1 + j, 1 + (j + 1) % segments) for j in range(segments)]
    return TriMesh(vertices, faces)


@pytest.fixture(scope='session')
def sphere_factory():
    return make_sphere


@pytest.fixture(scope='session')
def sphere_mesh():
    return make_sphere()


@pytest.fixture(scope='session')
def tube_mesh():
    return make_tube()


@pytest.fixture(scope='session')
def disk_mesh():
    return make_disk()


@pytest.fixture(scope='session')
def straight_spec():
    return CanalSpec(
        length=28.0,
        entrance_radius=4.0,
        drum_radius=4.0,
        bend_angles=(0.0, 0.0),
        ellipticity=1.0,
        noise_amplitude=0.0,
    )


@pytest.fixture(scope='session')
def cylinder_mesh(straight_spec):
    """A capped straight cylinder with r = 4 mm and L = 28 mm."""
    return cap_open_boundaries(synth_canal(straight_spec, seed=0))


@pytest.fixture(scope='session')
def canal_spec():
    return CanalSpec(noise_amplitude=0.1)


@pytest.fixture(scope='session')
def canal_mesh(canal_spec):
    return synth_canal(canal_spec, seed=7)


def sphere_field(grid, radius=8.0, center=(0.0, 0.0, 0.0)):
    """Sample the exact signed distance to a sphere."""
    return ScalarField(grid, np.linalg.norm(grid.points() - np.asarray(center), axis=1) - radius)


def capsule_field(grid, segments, radius=3.0):
    """Sample the signed distance to a union of capsules around line segments."""
    points = grid.points()
    distances = []
    for start, end in segments:
        start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
        axis = end - start
        t = np.clip((points - start).dot(axis) / axis.dot(axis), 0.0, 1.0)
        distances.append(np.linalg.norm(points - start - t[:, None] * axis, axis=1))
    return ScalarField(grid, np.min(distances, axis=0) - radius)


# A tube with one bend, the shape of a short canal
BENT_TUBE = (((0.0, 0.0, 0.0), (0.0, 0.0, 12.0)), ((0.0, 0.0, 12.0), (6.0, 0.0, 20.0)))


@pytest.fixture(scope='session')
def field_factories():
    return sphere_field, capsule_field


@pytest.fixture(scope='session')
def sphere_grid():
    return GridSpec((-16.0, -16.0, -16.0), (0.5, 0.5, 0.5), (65, 65, 65))


@pytest.fixture(scope='session')
def tube_grid():
    return GridSpec((-10.0, -10.0, -8.0), (0.5, 0.5, 0.5), (49, 41, 73))


@pytest.fixture(scope='session')
def bent_tube_field(tube_grid):
    return capsule_field(tube_grid, BENT_TUBE)
