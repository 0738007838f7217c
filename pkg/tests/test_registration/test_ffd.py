# SPDX-License-Identifier: GPL-3.0-or-later
from unittest import mock

import numpy as np
import pytest

from canalatlas.errors import NoDescentError
from canalatlas.geometry import ScalarField
from canalatlas.registration import (
    AffineTransform, ComposedTransform, FfdTransform, RegistrationConfig, register_affine,
    register_ffd, register_pair, similarity_l1,
)


def _bump_warp(grid, amplitude=2.0):
    """A known deformation on a 4 mm lattice that pushes a patch of the sphere radially."""
    lattice = FfdTransform.covering(grid, 4.0)
    index = np.stack(np.meshgrid(*(np.arange(d) for d in lattice.lattice_dims), indexing='ij'),
                     axis=-1)
    positions = np.array(lattice.lattice_origin) + index * np.array(lattice.lattice_spacing)
    radius = np.linalg.norm(positions, axis=-1, keepdims=True)
    direction = positions / np.maximum(radius, 1e-9)
    bump = np.exp(-np.sum((positions - [8.0, 0.0, 0.0]) ** 2, axis=-1) / 32.0)[..., None]
    displacements = bump * direction
    displacements *= amplitude / np.linalg.norm(displacements, axis=-1).max()
    return lattice.with_displacements(displacements)


def test_register_ffd_identity(field_factories, sphere_grid):
    sphere_field, _ = field_factories
    field = sphere_field(sphere_grid)
    config = RegistrationConfig()
    ffd = register_ffd(field, field, AffineTransform.identity(), config)
    assert ffd.lattice_spacing == (2.0, 2.0, 2.0)
    assert np.sqrt(np.mean(ffd.displacements ** 2)) < 0.05
    assert similarity_l1(field, field, (None, ffd), config) < 1e-3


def test_register_ffd_lattice_levels(field_factories, sphere_grid):
    sphere_field, _ = field_factories
    field = sphere_field(sphere_grid)
    spacings = []

    def fake_descent(objective, initial, *args, **kwargs):
        spacings.append(kwargs['context']['level'])
        return mock.Mock(parameters=initial, accepted=1, value=0.0, gradient_norm=0.0)

    with mock.patch('canalatlas.registration.ffd.gradient_descent', side_effect=fake_descent):
        ffd = register_ffd(field, field, None, RegistrationConfig(lattice_spacing=3.0))
    assert spacings == [0, 1, 2]
    # 12 mm, then 6 mm, then 3 mm
    assert ffd.lattice_spacing == (3.0, 3.0, 3.0)


def test_register_ffd_no_descent(field_factories, sphere_grid):
    sphere_field, _ = field_factories
    field = sphere_field(sphere_grid)
    with mock.patch('canalatlas.registration.ffd.gradient_descent') as mock_descent:
        mock_descent.return_value = mock.Mock(accepted=0, value=1.0, gradient_norm=0.5)
        with pytest.raises(NoDescentError, match='FFD'):
            register_ffd(field, field, None, RegistrationConfig())


def test_register_pair_composes_both_stages(field_factories, sphere_grid):
    sphere_field, _ = field_factories
    field = sphere_field(sphere_grid)
    transform = register_pair(field, field, RegistrationConfig())
    assert isinstance(transform, ComposedTransform)
    assert transform.affine.is_identity or np.allclose(transform.affine.matrix, np.eye(3))
    assert transform.ffd.max_displacement < 0.05


@pytest.mark.slow
def test_register_ffd_recovers_a_known_warp(field_factories, sphere_grid):
    sphere_field, _ = field_factories
    reference = sphere_field(sphere_grid)
    warp = _bump_warp(sphere_grid)
    assert warp.max_displacement == pytest.approx(2.0)
    # The subject is the reference seen through the warp: S(x) = R(x + u(x))
    subject = ScalarField(sphere_grid, reference.sample(warp.apply(sphere_grid.points())))

    config = RegistrationConfig()
    affine = register_affine(subject, reference, config)
    ffd = register_ffd(subject, reference, affine, config)

    band = sphere_grid.points()[np.abs(subject.values.ravel()) < config.narrowband_width]
    recovered = ComposedTransform(affine, ffd).apply(band) - band
    error = np.linalg.norm(recovered - warp.displacement_at(band), axis=1)
    assert np.sqrt(np.mean(error ** 2)) < config.lattice_spacing / 4

    affine_only = similarity_l1(subject, reference, affine, config)
    assert similarity_l1(subject, reference, (affine, ffd), config) <= 0.1 * affine_only
