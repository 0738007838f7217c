# SPDX-License-Identifier: GPL-3.0-or-later
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage import measure

from canalatlas.errors import (
    EmptyLevelSetError, GridTooSmallError, MeshNotClosedError, ValidationError,
)
from canalatlas.geometry.locate import TriangleLocator
from canalatlas.geometry.mesh import TriMesh, orient_outward


__all__ = [
    'DEFAULT_SPACING',
    'GridSpec',
    'ScalarField',
    'extract_isosurface',
    'inside_mask',
    'signed_distance_field',
]
log = logging.getLogger(__name__)

# Isotropic voxel size in mm, the coarsest MRI dimension of the source population
DEFAULT_SPACING = 0.5
# The number of voxels required between the mesh and the grid border
SDF_MARGIN = 2
# Per cast axis, the in-plane ray offsets in voxels
RAY_NUDGE = (
    (1.31e-7, 2.17e-7),
    (1.73e-7, 1.19e-7),
    (2.41e-7, 1.57e-7),
)


@dataclass(frozen=True)
class GridSpec:
    """A regular 3D sampling grid in millimeters."""

    origin: tuple
    spacing: tuple
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, 'origin', tuple(float(v) for v in self.origin))
        object.__setattr__(self, 'spacing', tuple(float(v) for v in self.spacing))
        object.__setattr__(self, 'dims', tuple(int(v) for v in self.dims))
        if len(self.origin) != 3 or len(self.spacing) != 3 or len(self.dims) != 3:
            raise ValidationError('A grid needs three origin, spacing and dims components')
        if min(self.spacing) <= 0:
            raise ValidationError('The grid spacing must be positive')
        if min(self.dims) < 2:
            raise ValidationError('The grid needs at least two samples per axis')

    @classmethod
    def around(cls, mesh, spacing=DEFAULT_SPACING, margin=4):
        """
        Create an isotropic grid enclosing a mesh.

        :param TriMesh mesh: the mesh to enclose
        :param float spacing: the voxel size in mm
        :param int margin: the number of voxels between the mesh bounds and the grid border
        :return: the grid
        :rtype: GridSpec
        """
        return cls.around_points(mesh.vertices, spacing, margin)

    @classmethod
    def around_points(cls, points, spacing=DEFAULT_SPACING, margin=4):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        low = np.floor(points.min(axis=0) / spacing) * spacing - margin * spacing
        high = np.ceil(points.max(axis=0) / spacing) * spacing + margin * spacing
        dims = np.round((high - low) / spacing).astype(int) + 1
        return cls(tuple(low), (spacing,) * 3, tuple(dims))

    @property
    def shape(self):
        return self.dims

    @property
    def size(self):
        return int(np.prod(self.dims))

    @property
    def voxel_diagonal(self):
        return float(np.linalg.norm(self.spacing))

    @property
    def upper(self):
        return tuple(o + s * (d - 1) for o, s, d in zip(self.origin, self.spacing, self.dims))

    def axes(self):
        """
        Get the sample coordinates along each axis.

        :return: three 1D coordinate arrays
        :rtype: tuple
        """
        return tuple(
            o + s * np.arange(d) for o, s, d in zip(self.origin, self.spacing, self.dims)
        )

    def points(self):
        """
        Get every sample position in C order.

        :return: the (size, 3) sample positions
        :rtype: numpy.ndarray
        """
        x, y, z = np.meshgrid(*self.axes(), indexing='ij')
        return np.column_stack((x.ravel(), y.ravel(), z.ravel()))

    def to_index(self, points):
        """
        Convert positions to continuous voxel indices.

        :param numpy.ndarray points: the (n, 3) positions in mm
        :return: the (n, 3) continuous indices
        :rtype: numpy.ndarray
        """
        return (np.asarray(points, dtype=np.float64) - self.origin) / self.spacing

    def scaled(self, factor):
        """
        Create a coarser grid covering the same box.

        :param int factor: the integer coarsening factor
        :return: the coarser grid
        :rtype: GridSpec
        """
        if factor == 1:
            return self
        dims = tuple(max(2, (d - 1) // factor + 1) for d in self.dims)
        return GridSpec(self.origin, tuple(s * factor for s in self.spacing), dims)

    def contains(self, points, margin=0):
        index = self.to_index(points)
        return bool(
            np.all(index >= margin) and np.all(index <= np.array(self.dims) - 1 - margin)
        )


class ScalarField:
    """Real samples on a GridSpec; signed distances are in mm, negative inside."""

    def __init__(self, grid, values):
        """
        Initialize the field.

        :param GridSpec grid: the sampling grid
        :param numpy.ndarray values: the samples, reshaped to the grid dims
        :raises ValidationError: if the sample count doesn't match or a sample isn't finite
        """
        values = np.array(values, dtype=np.float64)
        if values.size != grid.size:
            raise ValidationError(
                f'The field has {values.size} samples but the grid needs {grid.size}'
            )
        values = values.reshape(grid.dims)
        if not np.all(np.isfinite(values)):
            raise ValidationError('The field samples must be finite')
        values.flags.writeable = False
        self.grid = grid
        self.values = values

    def __repr__(self):
        return f'<ScalarField dims={self.grid.dims} spacing={self.grid.spacing}>'

    def sample(self, points):
        """
        Trilinearly interpolate the field, clamping positions to the grid border.

        :param numpy.ndarray points: the (n, 3) positions in mm
        :return: the interpolated values
        :rtype: numpy.ndarray
        """
        index = self.grid.to_index(points).T
        return ndimage.map_coordinates(self.values, index, order=1, mode='nearest')

    def smoothed(self, sigma):
        """
        Smooth the field with a Gaussian kernel.

        :param float sigma: the standard deviation in mm; 0 returns the field itself
        :return: the smoothed field
        :rtype: ScalarField
        """
        if sigma <= 0:
            return self
        sigma_voxels = [sigma / s for s in self.grid.spacing]
        return ScalarField(self.grid, ndimage.gaussian_filter(self.values, sigma_voxels,
                                                              mode='nearest'))

    def downsampled(self, factor):
        """
        Resample the field onto a grid coarser by an integer factor.

        :param int factor: the coarsening factor
        :return: the coarse field
        :rtype: ScalarField
        """
        if factor == 1:
            return self
        coarse = self.grid.scaled(factor)
        # Suppress aliasing before decimation
        smooth = self.smoothed(0.5 * factor * min(self.grid.spacing))
        return ScalarField(coarse, smooth.sample(coarse.points()))


def _axis_crossings(triangles, grid, axis):
    """
    Count the surface crossings of rays cast from every sample in the +axis direction.

    :return: the crossing counts with the grid dims
    :rtype: numpy.ndarray
    """
    u_axis, v_axis = [a for a in range(3) if a != axis]
    coords = grid.axes()
    # Rays pass a hair beside the samples so they don't run exactly through grid-aligned edges
    nudge_u, nudge_v = RAY_NUDGE[axis]
    u0 = grid.origin[u_axis] + nudge_u * grid.spacing[u_axis]
    v0 = grid.origin[v_axis] + nudge_v * grid.spacing[v_axis]
    du, nu = grid.spacing[u_axis], grid.dims[u_axis]
    dv, nv = grid.spacing[v_axis], grid.dims[v_axis]
    n_axis = grid.dims[axis]

    tu = (triangles[:, :, u_axis] - u0) / du
    tv = (triangles[:, :, v_axis] - v0) / dv
    i_lo = np.clip(np.ceil(tu.min(axis=1)), 0, nu).astype(np.int64)
    i_hi = np.clip(np.floor(tu.max(axis=1)), -1, nu - 1).astype(np.int64)
    j_lo = np.clip(np.ceil(tv.min(axis=1)), 0, nv).astype(np.int64)
    j_hi = np.clip(np.floor(tv.max(axis=1)), -1, nv - 1).astype(np.int64)
    ni = np.maximum(i_hi - i_lo + 1, 0)
    nj = np.maximum(j_hi - j_lo + 1, 0)
    counts = ni * nj

    crossings = np.zeros((nu, nv, n_axis + 1), dtype=np.int64)
    if counts.sum():
        tri_index = np.repeat(np.arange(len(triangles)), counts)
        offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        ii = i_lo[tri_index] + offsets // nj[tri_index]
        jj = j_lo[tri_index] + offsets % nj[tri_index]

        # Barycentric coordinates of the column in the projected triangle
        pu = u0 + ii * du
        pv = v0 + jj * dv
        t = triangles[tri_index]
        au, av = t[:, 0, u_axis], t[:, 0, v_axis]
        bu, bv = t[:, 1, u_axis], t[:, 1, v_axis]
        cu, cv = t[:, 2, u_axis], t[:, 2, v_axis]
        det = (bu - au) * (cv - av) - (cu - au) * (bv - av)
        with np.errstate(divide='ignore', invalid='ignore'):
            w1 = ((pu - au) * (cv - av) - (cu - au) * (pv - av)) / det
            w2 = ((bu - au) * (pv - av) - (pu - au) * (bv - av)) / det
        w0 = 1.0 - w1 - w2
        hit = (det != 0) & (w0 > 0) & (w1 > 0) & (w2 > 0)
        depth = (w0 * t[:, 0, axis] + w1 * t[:, 1, axis] + w2 * t[:, 2, axis])[hit]
        # Samples strictly below the hit are crossed by the ray
        above = np.searchsorted(coords[axis], depth, side='left')
        np.add.at(crossings, (ii[hit], jj[hit], above), 1)

    # crossings[k] = hits with index > k
    cumulative = np.cumsum(crossings[:, :, ::-1], axis=2)[:, :, ::-1]
    per_sample = cumulative[:, :, 1:]
    order = [0, 0, 0]
    order[u_axis], order[v_axis], order[axis] = 0, 1, 2
    return np.transpose(per_sample, order)


def inside_mask(mesh, grid):
    """
    Classify grid samples as inside a closed mesh with a three-ray parity vote.

    Rays are cast along +x, +y and +z; a sample is inside when at least two rays report an odd
    number of crossings, which survives grazing hits on projected edges.

    :param TriMesh mesh: the closed mesh
    :param GridSpec grid: the sampling grid
    :return: a boolean array with the grid dims
    :rtype: numpy.ndarray
    """
    triangles = mesh.triangles
    votes = sum((_axis_crossings(triangles, grid, axis) % 2).astype(np.int64) for axis in range(3))
    return votes >= 2


def signed_distance_field(mesh, grid):
    """
    Sample the signed distance to a closed mesh on a grid.

    The magnitude at every grid point is the exact Euclidean distance to the nearest triangle.

    :param TriMesh mesh: the closed, watertight mesh
    :param GridSpec grid: the grid; it must contain the mesh with a two voxel margin
    :return: the signed distances in mm, negative inside
    :rtype: ScalarField
    :raises MeshNotClosedError: if the mesh has boundary loops
    :raises GridTooSmallError: if the grid is too small for the mesh
    """
    if not mesh.is_closed:
        raise MeshNotClosedError(
            f'The mesh has {len(mesh.boundary_loops)} open boundary loops; cap them first'
        )
    if not grid.contains(mesh.vertices, margin=SDF_MARGIN):
        raise GridTooSmallError(
            f'The grid must contain the mesh with a margin of {SDF_MARGIN} voxels'
        )

    log.debug('Computing the signed distance of %r on a %s grid', mesh, grid.dims)
    _, _, distances = TriangleLocator(mesh).query_many(grid.points())
    distances = distances.reshape(grid.dims)
    inside = inside_mask(mesh, grid)
    return ScalarField(grid, np.where(inside, -distances, distances))


def extract_isosurface(field, level=0.0):
    """
    Triangulate a level set of a field with marching cubes.

    :param ScalarField field: the field
    :param float level: the level in field units (mm for SDFs)
    :return: the outward oriented surface, closed when the level set avoids the grid border
    :rtype: TriMesh
    :raises EmptyLevelSetError: if the field never crosses the level
    """
    low, high = float(field.values.min()), float(field.values.max())
    if not low < level < high:
        raise EmptyLevelSetError(
            f'The level {level} is outside the field value range [{low}, {high}]'
        )
    vertices, faces, _, _ = measure.marching_cubes(
        field.values, level=level, spacing=field.grid.spacing, allow_degenerate=False
    )
    vertices = vertices + np.array(field.grid.origin)
    mesh = TriMesh(vertices, faces)
    log.debug('Extracted %r at level %g', mesh, level)
    if mesh.is_closed:
        mesh = orient_outward(mesh)
    return mesh
