# SPDX-License-Identifier: GPL-3.0-or-later
import logging

import numpy as np
from scipy.spatial import cKDTree

from canalatlas.errors import EmptyMeshError


__all__ = [
    'TriangleLocator',
    'closest_point',
    'closest_points',
    'closest_points_on_triangles',
    'surface_distance',
]
log = logging.getLogger(__name__)


def _dot(a, b):
    return np.einsum('ij,ij->i', a, b)


def closest_points_on_triangles(points, a, b, c):
    """
    Find the closest point on each triangle to the matching query point.

    This is a vectorized form of the Voronoi-region walk over the triangle's vertices, edges and
    face; the regions are tested in the same order as the scalar algorithm, so vertex and edge
    hits return exact corner or edge coordinates.

    :param numpy.ndarray points: the (n, 3) query points
    :param numpy.ndarray a: the (n, 3) first corners
    :param numpy.ndarray b: the (n, 3) second corners
    :param numpy.ndarray c: the (n, 3) third corners
    :return: the (n, 3) closest points
    :rtype: numpy.ndarray
    """
    ab = b - a
    ac = c - a
    ap = points - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    bp = points - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    cp = points - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    result = np.empty_like(points)
    done = np.zeros(len(points), dtype=bool)

    def assign(mask, values):
        mask = mask & ~done
        result[mask] = values[mask] if values.ndim == 2 else values
        done[mask] = True

    with np.errstate(divide='ignore', invalid='ignore'):
        assign((d1 <= 0) & (d2 <= 0), a)
        assign((d3 >= 0) & (d4 <= d3), b)
        v = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        assign((d6 >= 0) & (d5 <= d6), c)
        w = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + w[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        assign(np.ones(len(points), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    return result


def _face_samples(triangles, radius):
    """
    Split every face into similar sub-triangles no wider than a radius and sample their centroids.

    :param numpy.ndarray triangles: the (f, 3, 3) face corners
    :param float radius: the largest wanted distance from a sub-triangle centroid to its corners
    :return: the sample points, the face of each sample, and the largest distance from a point of
        a face to the nearest sample of that face
    :rtype: tuple(numpy.ndarray, numpy.ndarray, float)
    """
    centroids = triangles.mean(axis=1)
    radii = np.linalg.norm(triangles - centroids[:, None, :], axis=2).max(axis=1)
    levels = np.maximum(1, np.ceil(radii / radius)).astype(np.int64)
    points = []
    faces = []
    for level in np.unique(levels):
        selected = np.flatnonzero(levels == level)
        i, j = np.meshgrid(np.arange(level), np.arange(level), indexing='ij')
        upward = (i + j) <= level - 1
        downward = (i + j) <= level - 2
        coords = np.concatenate((
            np.column_stack((3 * i[upward] + 1, 3 * j[upward] + 1)),
            np.column_stack((3 * i[downward] + 2, 3 * j[downward] + 2)),
        )) / (3.0 * level)
        weights = np.column_stack((1.0 - coords.sum(axis=1), coords))
        points.append(np.einsum('sk,fkd->fsd', weights, triangles[selected]).reshape(-1, 3))
        faces.append(np.repeat(selected, len(weights)))
    # The sub-triangles are the face scaled by 1 / level
    reach = float((radii / levels).max())
    return np.concatenate(points), np.concatenate(faces), reach


class TriangleLocator:
    """A closest-point index over the faces of a mesh, backed by a KD-tree of face samples."""

    # The number of nearest samples examined per query before the search widens
    candidates = 16
    # The number of query point and candidate pairs evaluated together
    batch_size = 1 << 18

    def __init__(self, mesh):
        """
        Build the index.

        :param TriMesh mesh: the mesh to index
        :raises EmptyMeshError: if the mesh has no faces
        """
        if not len(mesh.faces):
            raise EmptyMeshError('The closest point cannot be found on a mesh without faces')
        self.mesh = mesh
        self._triangles = mesh.triangles
        offsets = self._triangles - self._triangles.mean(axis=1)[:, None, :]
        radii = np.linalg.norm(offsets, axis=2).max(axis=1)
        # Typical faces keep a single sample; slivers are split to the typical size
        radius = float(np.median(radii))
        if not radius > 0:
            radius = max(float(radii.max()), 1.0)
        samples, self._sample_faces, self._reach = _face_samples(self._triangles, radius)
        self._tree = cKDTree(samples)

    @property
    def sample_count(self):
        return len(self._sample_faces)

    def _distances_to(self, points, face_indices):
        tri = self._triangles[face_indices]
        closest = closest_points_on_triangles(points, tri[:, 0], tri[:, 1], tri[:, 2])
        return closest, np.linalg.norm(points - closest, axis=1)

    def _nearest_candidates(self, points, k):
        """
        Find the closest point among the faces of the k nearest samples.

        :return: the closest points, faces and distances, and the distance of the kth sample
        """
        k = min(k, self.sample_count)
        sample_distances, samples = self._tree.query(points, k=k)
        samples = np.asarray(samples).reshape(len(points), k)
        sample_distances = np.asarray(sample_distances).reshape(len(points), k)
        # Keep ties resolved toward the lowest face index
        faces = np.sort(self._sample_faces[samples], axis=1, kind='stable')
        repeated = np.repeat(points, k, axis=0)
        closest, distances = self._distances_to(repeated, faces.ravel())
        distances = distances.reshape(len(points), k)
        best = np.argmin(distances, axis=1)
        rows = np.arange(len(points))
        return (
            closest.reshape(len(points), k, 3)[rows, best],
            faces[rows, best],
            distances[rows, best],
            sample_distances.max(axis=1),
        )

    def _search(self, points, k):
        rows = max(1, self.batch_size // min(k, self.sample_count))
        batches = [
            self._nearest_candidates(points[start:start + rows], k)
            for start in range(0, max(len(points), 1), rows)
        ]
        return tuple(np.concatenate([batch[i] for batch in batches]) for i in range(4))

    def query(self, point):
        """
        Find the exact closest point on the mesh to a single query point.

        :param numpy.ndarray point: the 3D query point
        :return: the closest point, the face it lies on and the distance
        :rtype: tuple(numpy.ndarray, int, float)
        """
        point = np.asarray(point, dtype=np.float64).reshape(1, 3)
        closest, faces, distances = self.query_many(point, exact=True)
        return closest[0], int(faces[0]), float(distances[0])

    def query_many(self, points, exact=True):
        """
        Find the closest points on the mesh to many query points.

        In exact mode the result is identical to an exhaustive search over all faces, with ties
        resolved toward the lowest face index: the search around a query widens until no face
        outside the examined samples can be closer. In approximate mode only the faces of the
        nearest samples are examined; the returned distance is then an upper bound.

        :param numpy.ndarray points: the (n, 3) query points
        :param bool exact: whether to guarantee agreement with an exhaustive search
        :return: the closest points, their face indices and distances
        :rtype: tuple(numpy.ndarray, numpy.ndarray, numpy.ndarray)
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        k = self.candidates
        closest, faces, distances, kth_sample = self._search(points, k)
        if not exact:
            return closest, faces, distances

        widened = 0
        pending = np.arange(len(points))
        while k < self.sample_count:
            # Every point of an unexamined face is at least kth_sample - reach away
            unresolved = distances[pending] + 1e-9 > kth_sample[pending] - self._reach
            pending = pending[unresolved]
            if not len(pending):
                break
            widened += len(pending)
            k = min(4 * k, self.sample_count)
            result = self._search(points[pending], k)
            closest[pending], faces[pending], distances[pending], kth_sample[pending] = result
        log.debug('Widened %d closest point searches over %d queries', widened, len(points))
        return closest, faces, distances


def closest_point(mesh, query):
    """
    Find the closest point on a mesh to a query point.

    :param TriMesh mesh: the mesh to search
    :param numpy.ndarray query: the 3D query point
    :return: the closest point, the face index it lies on, and the distance in mm
    :rtype: tuple(numpy.ndarray, int, float)
    :raises EmptyMeshError: if the mesh has no faces
    """
    return TriangleLocator(mesh).query(query)


def closest_points(mesh, queries, exact=True):
    """
    Find the closest points on a mesh to many query points.

    :param TriMesh mesh: the mesh to search
    :param numpy.ndarray queries: the (n, 3) query points
    :param bool exact: whether to guarantee agreement with an exhaustive search
    :return: the closest points, their face indices and distances
    :rtype: tuple(numpy.ndarray, numpy.ndarray, numpy.ndarray)
    :raises EmptyMeshError: if the mesh has no faces
    """
    return TriangleLocator(mesh).query_many(queries, exact=exact)


def surface_distance(first, second):
    """
    Compute symmetric vertex-to-surface distances between two meshes.

    :param TriMesh first: the first mesh
    :param TriMesh second: the second mesh
    :return: the mean and the maximum (Hausdorff) distance in mm
    :rtype: tuple(float, float)
    """
    _, _, forward = closest_points(second, first.vertices)
    _, _, backward = closest_points(first, second.vertices)
    both = np.concatenate((forward, backward))
    return float(both.mean()), float(both.max())
