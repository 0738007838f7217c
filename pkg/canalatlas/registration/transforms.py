# SPDX-License-Identifier: GPL-3.0-or-later
import logging
from typing import NamedTuple

import numpy as np

from canalatlas.errors import ValidationError
from canalatlas.geometry.field import GridSpec, ScalarField


__all__ = [
    'AFFINE_SCALE',
    'AffineTransform',
    'ComposedTransform',
    'FfdTransform',
    'as_transform',
    'bspline_weights',
    'resample_through_transform',
]
log = logging.getLogger(__name__)

# The lever arm in mm that converts linear affine parameters to displacements
AFFINE_SCALE = 10.0


class AffineTransform:
    """An orientation-preserving affine map y = matrix·x + translation, in mm."""

    def __init__(self, matrix, translation):
        """
        Initialize the transform.

        :param numpy.ndarray matrix: the 3×3 linear part
        :param numpy.ndarray translation: the translation in mm
        :raises ValidationError: if the matrix is not finite or its determinant is not positive
        """
        matrix = np.array(matrix, dtype=np.float64).reshape(3, 3)
        translation = np.array(translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(matrix)) and np.all(np.isfinite(translation))):
            raise ValidationError('The affine transform must be finite')
        if np.linalg.det(matrix) <= 0:
            raise ValidationError('The affine matrix must have a positive determinant')
        matrix.flags.writeable = False
        translation.flags.writeable = False
        self.matrix = matrix
        self.translation = translation

    def __repr__(self):
        return f'<AffineTransform matrix={self.matrix.tolist()} translation={self.translation}>'

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_parameters(cls, parameters, center):
        """
        Create a transform from the registration parameterization.

        The transform is y = M(x - c) + c + τ with M = I + P / AFFINE_SCALE, where P is the
        row-major 3×3 block of the first nine parameters and τ the last three.

        :param numpy.ndarray parameters: the 12 parameters
        :param numpy.ndarray center: the center c in mm
        :return: the transform
        :rtype: AffineTransform
        """
        parameters = np.asarray(parameters, dtype=np.float64)
        center = np.asarray(center, dtype=np.float64)
        matrix = np.eye(3) + parameters[:9].reshape(3, 3) / AFFINE_SCALE
        return cls(matrix, center + parameters[9:] - matrix.dot(center))

    def to_parameters(self, center):
        """
        Express the transform in the registration parameterization.

        :param numpy.ndarray center: the center c in mm
        :return: the 12 parameters
        :rtype: numpy.ndarray
        """
        center = np.asarray(center, dtype=np.float64)
        linear = (self.matrix - np.eye(3)).ravel() * AFFINE_SCALE
        shift = self.matrix.dot(center) + self.translation - center
        return np.concatenate((linear, shift))

    @property
    def parameters(self):
        """The 12 numbers of the row-major matrix followed by the translation."""
        return np.concatenate((self.matrix.ravel(), self.translation))

    @property
    def is_identity(self):
        return bool(np.all(self.matrix == np.eye(3)) and np.all(self.translation == 0))

    def apply(self, points):
        """
        Map points through the transform.

        :param numpy.ndarray points: the (n, 3) points in mm
        :return: the mapped points
        :rtype: numpy.ndarray
        """
        points = np.asarray(points, dtype=np.float64)
        if self.is_identity:
            return points.copy()
        return points.dot(self.matrix.T) + self.translation

    def inverse(self):
        inverse = np.linalg.inv(self.matrix)
        return AffineTransform(inverse, -inverse.dot(self.translation))

    def compose(self, other):
        """
        Create the transform applying other first and then this one.

        :param AffineTransform other: the inner transform
        :return: the composition
        :rtype: AffineTransform
        """
        return AffineTransform(
            self.matrix.dot(other.matrix), self.matrix.dot(other.translation) + self.translation)


def bspline_weights(fraction):
    """
    Evaluate the four uniform cubic B-spline basis functions.

    :param numpy.ndarray fraction: the positions within the knot interval, in [0, 1]
    :return: the (n, 4) weights of the control points i - 1 .. i + 2
    :rtype: numpy.ndarray
    """
    f = np.asarray(fraction, dtype=np.float64)
    f2 = f * f
    f3 = f2 * f
    return np.stack((
        (1.0 - f) ** 3 / 6.0,
        (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0,
        (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0,
        f3 / 6.0,
    ), axis=-1)


class PointWeights(NamedTuple):
    """The B-spline support of points: the first control index and four weights per axis."""

    starts: np.ndarray
    weights: tuple


class FfdTransform:
    """A cubic B-spline free-form deformation y = x + u(x) over a regular control lattice."""

    def __init__(self, lattice_origin, lattice_spacing, lattice_dims, displacements=None):
        """
        Initialize the transform.

        :param tuple lattice_origin: the position of control point (0, 0, 0) in mm
        :param tuple lattice_spacing: the control point spacing in mm
        :param tuple lattice_dims: the number of control points per axis, at least 4
        :param numpy.ndarray displacements: the control point displacements with shape
            lattice_dims + (3,); zero when omitted
        :raises ValidationError: if the lattice is invalid or a displacement is not finite
        """
        self.lattice_origin = tuple(float(v) for v in lattice_origin)
        self.lattice_spacing = tuple(float(v) for v in lattice_spacing)
        self.lattice_dims = tuple(int(v) for v in lattice_dims)
        if min(self.lattice_dims) < 4:
            raise ValidationError('An FFD lattice needs at least 4 control points per axis')
        if min(self.lattice_spacing) <= 0:
            raise ValidationError('The FFD lattice spacing must be positive')
        if displacements is None:
            displacements = np.zeros(self.lattice_dims + (3,))
        displacements = np.array(displacements, dtype=np.float64).reshape(
            self.lattice_dims + (3,))
        if not np.all(np.isfinite(displacements)):
            raise ValidationError('The FFD displacements must be finite')
        displacements.flags.writeable = False
        self.displacements = displacements

    def __repr__(self):
        return (
            f'<FfdTransform dims={self.lattice_dims} spacing={self.lattice_spacing} '
            f'max_displacement={self.max_displacement:.4g}>'
        )

    @classmethod
    def covering(cls, grid, spacing):
        """
        Create a zero deformation whose B-spline support covers a grid.

        :param GridSpec grid: the region to cover
        :param float spacing: the control point spacing in mm
        :return: the identity deformation
        :rtype: FfdTransform
        """
        extent = np.array(grid.upper) - np.array(grid.origin)
        dims = np.maximum(np.ceil(extent / spacing).astype(int) + 3, 4)
        origin = np.array(grid.origin) - spacing
        return cls(tuple(origin), (spacing,) * 3, tuple(dims))

    @property
    def size(self):
        return int(np.prod(self.lattice_dims))

    @property
    def max_displacement(self):
        return float(np.linalg.norm(self.displacements, axis=-1).max())

    def with_displacements(self, displacements):
        return FfdTransform(
            self.lattice_origin, self.lattice_spacing, self.lattice_dims, displacements)

    def _axis_support(self, axis, coords):
        position = (np.asarray(coords, dtype=np.float64) - self.lattice_origin[axis]) / (
            self.lattice_spacing[axis])
        # Points outside the lattice take the deformation at its border
        position = np.clip(position, 1.0, self.lattice_dims[axis] - 2.0)
        start = np.minimum(np.floor(position), self.lattice_dims[axis] - 3).astype(np.int64)
        return start - 1, bspline_weights(position - start)

    def weight_matrix(self, axis, coords):
        """
        Build the dense matrix mapping control values along one axis to sample values.

        :param int axis: the axis
        :param numpy.ndarray coords: the sample coordinates along the axis in mm
        :return: the (len(coords), lattice_dims[axis]) weight matrix
        :rtype: numpy.ndarray
        """
        start, weights = self._axis_support(axis, coords)
        matrix = np.zeros((len(start), self.lattice_dims[axis]))
        rows = np.arange(len(start))
        for offset in range(4):
            matrix[rows, start + offset] = weights[:, offset]
        return matrix

    def point_weights(self, points):
        """
        Precompute the B-spline support of scattered points.

        :param numpy.ndarray points: the (n, 3) points in mm
        :return: the support, reusable across displacement updates
        :rtype: PointWeights
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        supports = [self._axis_support(axis, points[:, axis]) for axis in range(3)]
        return PointWeights(
            np.column_stack([support[0] for support in supports]),
            tuple(support[1] for support in supports),
        )

    def _neighbourhood(self, support):
        """Yield the flat control index and weight of each of the 64 neighbours."""
        ny, nz = self.lattice_dims[1], self.lattice_dims[2]
        wx, wy, wz = support.weights
        for a in range(4):
            ix = support.starts[:, 0] + a
            for b in range(4):
                iy = support.starts[:, 1] + b
                wab = wx[:, a] * wy[:, b]
                for c in range(4):
                    iz = support.starts[:, 2] + c
                    yield (ix * ny + iy) * nz + iz, wab * wz[:, c]

    def displacement_at(self, points, support=None):
        """
        Evaluate the displacement at scattered points.

        :param numpy.ndarray points: the (n, 3) points in mm
        :param PointWeights support: the precomputed support of the points
        :return: the (n, 3) displacements in mm
        :rtype: numpy.ndarray
        """
        if support is None:
            support = self.point_weights(points)
        flat = self.displacements.reshape(-1, 3)
        result = np.zeros((len(support.starts), 3))
        for index, weight in self._neighbourhood(support):
            result += weight[:, None] * flat[index]
        return result

    def scatter_gradient(self, support, point_gradient):
        """
        Pull a gradient with respect to point displacements back onto the control points.

        :param PointWeights support: the support of the points
        :param numpy.ndarray point_gradient: the (n, 3) gradient at the points
        :return: the gradient with the shape of the displacements
        :rtype: numpy.ndarray
        """
        result = np.zeros((self.size, 3))
        for index, weight in self._neighbourhood(support):
            for component in range(3):
                result[:, component] += np.bincount(
                    index, weights=weight * point_gradient[:, component], minlength=self.size)
        return result.reshape(self.lattice_dims + (3,))

    def displacement_field(self, grid):
        """
        Evaluate the displacement on every sample of a grid with separable contractions.

        :param GridSpec grid: the grid
        :return: the displacements with shape grid.dims + (3,)
        :rtype: numpy.ndarray
        """
        wx, wy, wz = (self.weight_matrix(axis, coords) for axis, coords in enumerate(grid.axes()))
        field = np.einsum('ia,abcd->ibcd', wx, self.displacements)
        field = np.einsum('jb,ibcd->ijcd', wy, field)
        return np.einsum('kc,ijcd->ijkd', wz, field)

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return points + self.displacement_at(points)

    def refined(self):
        """
        Halve the lattice spacing while keeping the deformation.

        The finer lattice covers the same region; its displacements are the separable
        least-squares fit of the current deformation sampled at quarter spacing.

        :return: the refined deformation
        :rtype: FfdTransform
        """
        spacing = tuple(s / 2.0 for s in self.lattice_spacing)
        # The original support region: control points 1 .. dims - 2
        low = [o + s for o, s in zip(self.lattice_origin, self.lattice_spacing)]
        high = [o + s * (d - 2) for o, s, d in zip(
            self.lattice_origin, self.lattice_spacing, self.lattice_dims)]
        dims = [int(np.ceil((h - lo) / s - 1e-9)) + 3 for lo, h, s in zip(low, high, spacing)]
        refined = FfdTransform(
            tuple(lo - s for lo, s in zip(low, spacing)), spacing, tuple(max(d, 4) for d in dims))
        if not np.any(self.displacements):
            return refined

        samples = [
            np.linspace(lo, h, int(np.ceil((h - lo) / (s / 2.0))) + 1)
            for lo, h, s in zip(low, high, spacing)
        ]
        values = self.displacement_field(GridSpec(
            (samples[0][0], samples[1][0], samples[2][0]),
            tuple(s[1] - s[0] for s in samples),
            tuple(len(s) for s in samples),
        ))
        fx, fy, fz = (
            np.linalg.pinv(refined.weight_matrix(axis, samples[axis])) for axis in range(3)
        )
        fitted = np.einsum('ai,ijkd->ajkd', fx, values)
        fitted = np.einsum('bj,ajkd->abkd', fy, fitted)
        fitted = np.einsum('ck,abkd->abcd', fz, fitted)
        return refined.with_displacements(fitted)


class ComposedTransform:
    """The transform φ(x) = A(x + u(x)): the affine part is applied after the deformation."""

    def __init__(self, affine=None, ffd=None):
        self.affine = affine if affine is not None else AffineTransform.identity()
        self.ffd = ffd

    def __repr__(self):
        return f'<ComposedTransform affine={self.affine!r} ffd={self.ffd!r}>'

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if self.ffd is not None:
            points = self.ffd.apply(points)
        return self.affine.apply(points)

    def map_grid(self, grid):
        """
        Map every sample of a grid, using separable evaluation of the deformation.

        :param GridSpec grid: the grid
        :return: the (size, 3) mapped positions
        :rtype: numpy.ndarray
        """
        points = grid.points()
        if self.ffd is not None:
            points = points + self.ffd.displacement_field(grid).reshape(-1, 3)
        return self.affine.apply(points)


def as_transform(transform):
    """
    Normalize the accepted transform forms to a ComposedTransform.

    :param transform: an AffineTransform, an FfdTransform, a ComposedTransform or an
        (affine, ffd) pair where either may be None
    :return: the composed transform
    :rtype: ComposedTransform
    :raises ValidationError: if the transform type is not supported
    """
    if isinstance(transform, ComposedTransform):
        return transform
    if transform is None:
        return ComposedTransform()
    if isinstance(transform, AffineTransform):
        return ComposedTransform(affine=transform)
    if isinstance(transform, FfdTransform):
        return ComposedTransform(ffd=transform)
    if isinstance(transform, (tuple, list)) and len(transform) == 2:
        return ComposedTransform(*transform)
    raise ValidationError(f'The transform type {type(transform).__name__} is not supported')


def resample_through_transform(field, transform, grid=None):
    """
    Resample a field through a transform with trilinear interpolation.

    Each output sample x takes the value field(φ(x)); positions outside the field clamp to its
    border.

    :param ScalarField field: the field to resample
    :param transform: the transform, in any form accepted by as_transform
    :param GridSpec grid: the output grid; defaults to the field's grid
    :return: the resampled field
    :rtype: ScalarField
    """
    grid = grid or field.grid
    mapped = as_transform(transform).map_grid(grid)
    return ScalarField(grid, field.sample(mapped))
