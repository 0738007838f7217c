# SPDX-License-Identifier: GPL-3.0-or-later
import logging

import numpy as np

from canalatlas.errors import EmptyNarrowbandError, GridMismatchError
from canalatlas.registration.transforms import as_transform


__all__ = [
    'SimilarityTerm',
    'bending_energy',
    'bending_energy_gradient',
    'sample_with_gradient',
    'similarity_l1',
]
log = logging.getLogger(__name__)


def sample_with_gradient(field, points):
    """
    Trilinearly interpolate a field and its exact spatial gradient.

    Positions outside the grid clamp to the border, where the gradient along the clamped axis is
    zero.

    :param ScalarField field: the field
    :param numpy.ndarray points: the (n, 3) positions in mm
    :return: the (n,) values and the (n, 3) gradients in field units per mm
    :rtype: tuple(numpy.ndarray, numpy.ndarray)
    """
    grid = field.grid
    dims = np.array(grid.dims)
    index = grid.to_index(points)
    inside = (index >= 0) & (index <= dims - 1)
    index = np.clip(index, 0, dims - 1)
    base = np.minimum(np.floor(index).astype(np.int64), dims - 2)
    frac = index - base
    values = field.values
    x0, y0, z0 = base.T
    fx, fy, fz = frac.T

    c000 = values[x0, y0, z0]
    c100 = values[x0 + 1, y0, z0]
    c010 = values[x0, y0 + 1, z0]
    c110 = values[x0 + 1, y0 + 1, z0]
    c001 = values[x0, y0, z0 + 1]
    c101 = values[x0 + 1, y0, z0 + 1]
    c011 = values[x0, y0 + 1, z0 + 1]
    c111 = values[x0 + 1, y0 + 1, z0 + 1]

    # Interpolate along x, then y, then z
    c00 = c000 + fx * (c100 - c000)
    c10 = c010 + fx * (c110 - c010)
    c01 = c001 + fx * (c101 - c001)
    c11 = c011 + fx * (c111 - c011)
    c0 = c00 + fy * (c10 - c00)
    c1 = c01 + fy * (c11 - c01)
    result = c0 + fz * (c1 - c0)

    dx0 = (c100 - c000) + fy * ((c110 - c010) - (c100 - c000))
    dx1 = (c101 - c001) + fy * ((c111 - c011) - (c101 - c001))
    gradient = np.column_stack((
        dx0 + fz * (dx1 - dx0),
        (c10 - c00) + fz * ((c11 - c01) - (c10 - c00)),
        c1 - c0,
    ))
    gradient = np.where(inside, gradient, 0.0) / np.array(grid.spacing)
    return result, gradient


class SimilarityTerm:
    """
    The narrow-band ℓ1 similarity between a fixed and a moving signed distance field.

    M(φ) = mean over x in B of |S(x) - R(φ(x))|, where B holds the samples with |S(x)| below the
    narrow band width and both fields are Gaussian smoothed beforehand.
    """

    def __init__(self, subject, reference, config):
        """
        Prepare the term.

        :param ScalarField subject: the fixed field S, sampled at the grid points
        :param ScalarField reference: the moving field R, sampled through the transform
        :param RegistrationConfig config: the narrow band and smoothing settings
        :raises GridMismatchError: if the fields have different grids
        :raises EmptyNarrowbandError: if no sample lies in the narrow band
        """
        if subject.grid != reference.grid:
            raise GridMismatchError('The subject and reference fields must share a grid')
        band = np.abs(subject.values) < config.narrowband_width
        if not band.any():
            raise EmptyNarrowbandError(
                f'No sample lies within {config.narrowband_width} mm of the subject surface')
        self.grid = subject.grid
        self.points = self.grid.points()[band.ravel()]
        self.fixed = subject.smoothed(config.smoothing_sigma).values[band]
        self.moving = reference.smoothed(config.smoothing_sigma)

    def __len__(self):
        return len(self.points)

    def residuals(self, warped):
        return self.fixed - self.moving.sample(warped)

    def value(self, warped):
        """
        Evaluate the similarity at the warped band points.

        :param numpy.ndarray warped: the band points mapped through the transform
        :return: the mean absolute difference
        :rtype: float
        """
        return float(np.abs(self.residuals(warped)).mean())

    def value_and_gradient(self, warped):
        """
        Evaluate the similarity and its gradient with respect to the warped positions.

        :param numpy.ndarray warped: the band points mapped through the transform
        :return: the similarity and the (n, 3) gradient
        :rtype: tuple(float, numpy.ndarray)
        """
        sampled, spatial = sample_with_gradient(self.moving, warped)
        residuals = self.fixed - sampled
        gradient = -np.sign(residuals)[:, None] * spatial / len(residuals)
        return float(np.abs(residuals).mean()), gradient


def similarity_l1(subject, reference, transform, config):
    """
    Compute the narrow-band ℓ1 similarity of a subject and a transformed reference.

    :param ScalarField subject: the fixed field S
    :param ScalarField reference: the moving field R
    :param transform: the transform φ, in any form accepted by as_transform
    :param RegistrationConfig config: the registration settings
    :return: the mean absolute difference in mm, never negative
    :rtype: float
    :raises EmptyNarrowbandError: if no sample lies in the narrow band
    """
    term = SimilarityTerm(subject, reference, config)
    return term.value(as_transform(transform).apply(term.points))


def _second_differences():
    """Yield (weight, first axis, second axis or None) for every squared difference stencil."""
    for axis in range(3):
        yield 1.0, axis, None
    for first in range(3):
        for second in range(first + 1, 3):
            yield 2.0, first, second


def _pure(displacements, axis):
    n = displacements.shape[axis]
    take = np.take
    return (
        take(displacements, range(0, n - 2), axis=axis)
        - 2.0 * take(displacements, range(1, n - 1), axis=axis)
        + take(displacements, range(2, n), axis=axis)
    )


def _pure_adjoint(residual, axis, shape):
    result = np.zeros(shape)
    n = shape[axis]
    index = [slice(None)] * 4

    def add(start, stop, coefficient):
        index[axis] = slice(start, stop)
        result[tuple(index)] += coefficient * residual

    add(0, n - 2, 1.0)
    add(1, n - 1, -2.0)
    add(2, n, 1.0)
    return result


def _mixed_slices(first, second, a, b):
    index = [slice(None)] * 4
    index[first] = slice(a, None) if a else slice(None, -1)
    index[second] = slice(b, None) if b else slice(None, -1)
    return tuple(index)


_MIXED_STENCIL = ((1, 1, 1.0), (1, 0, -1.0), (0, 1, -1.0), (0, 0, 1.0))


def _mixed(displacements, first, second):
    return sum(
        coefficient * displacements[_mixed_slices(first, second, a, b)]
        for a, b, coefficient in _MIXED_STENCIL
    )


def _mixed_adjoint(residual, first, second, shape):
    result = np.zeros(shape)
    for a, b, coefficient in _MIXED_STENCIL:
        result[_mixed_slices(first, second, a, b)] += coefficient * residual
    return result


def bending_energy(transform):
    """
    Compute the discrete thin-plate bending energy of an FFD control lattice.

    The energy sums the squared pure second differences along each axis and twice the squared
    mixed differences of each axis pair, in control index units, divided by the control point
    count. Every affine displacement field has zero energy.

    :param FfdTransform transform: the deformation
    :return: the energy in mm²
    :rtype: float
    """
    displacements = transform.displacements
    total = 0.0
    for weight, first, second in _second_differences():
        if second is None:
            difference = _pure(displacements, first)
        else:
            difference = _mixed(displacements, first, second)
        total += weight * float(np.sum(difference ** 2))
    return total / transform.size


def bending_energy_gradient(transform):
    """
    Compute the gradient of bending_energy with respect to the control displacements.

    :param FfdTransform transform: the deformation
    :return: the gradient with the shape of the displacements
    :rtype: numpy.ndarray
    """
    displacements = transform.displacements
    shape = displacements.shape
    gradient = np.zeros(shape)
    for weight, first, second in _second_differences():
        if second is None:
            gradient += weight * _pure_adjoint(_pure(displacements, first), first, shape)
        else:
            gradient += weight * _mixed_adjoint(
                _mixed(displacements, first, second), first, second, shape)
    return 2.0 * gradient / transform.size
