# SPDX-License-Identifier: GPL-3.0-or-later
import csv
import logging
from dataclasses import dataclass

import numpy as np

from canalatlas.errors import NotTubularError, ValidationError


__all__ = [
    'AreaFunction',
    'DEFAULT_STATIONS',
    'centerline_and_area',
    'load_area_function',
    'plane_sections',
    'save_area_function',
]
log = logging.getLogger(__name__)

DEFAULT_STATIONS = 50
# The marching step along the canal in mm
MARCH_STEP = 0.5
# How far inside the end planes the first and last sections are taken, in mm
END_OFFSET = 0.25


@dataclass(frozen=True, eq=False)
class AreaFunction:
    """Cross-sectional area along a centerline, in SI units (m and m²)."""

    arc_length: np.ndarray
    area: np.ndarray
    points: np.ndarray = None

    def __post_init__(self):
        arc_length = np.array(self.arc_length, dtype=np.float64).ravel()
        area = np.array(self.area, dtype=np.float64).ravel()
        if len(arc_length) < 2 or len(arc_length) != len(area):
            raise ValidationError(
                'An area function needs at least two stations and one area per station'
            )
        if arc_length[0] != 0 or np.any(np.diff(arc_length) <= 0):
            raise ValidationError('The arc length must start at 0 and be strictly increasing')
        if not np.all(np.isfinite(area)) or np.any(area <= 0):
            raise ValidationError('The cross-sectional areas must be positive')
        arc_length.flags.writeable = False
        area.flags.writeable = False
        object.__setattr__(self, 'arc_length', arc_length)
        object.__setattr__(self, 'area', area)
        if self.points is not None:
            points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
            if len(points) != len(arc_length):
                raise ValidationError('The centerline needs one point per station')
            points.flags.writeable = False
            object.__setattr__(self, 'points', points)

    @classmethod
    def uniform(cls, length, area, stations=DEFAULT_STATIONS):
        """
        Create the area function of a straight uniform duct.

        :param float length: the duct length in m
        :param float area: the cross-sectional area in m²
        :param int stations: the number of stations
        :return: the area function
        :rtype: AreaFunction
        """
        arc_length = np.linspace(0.0, length, stations)
        points = np.column_stack((np.zeros(stations), np.zeros(stations), arc_length))
        return cls(arc_length, np.full(stations, float(area)), points)

    @property
    def length(self):
        return float(self.arc_length[-1])

    def area_at(self, s):
        """
        Linearly interpolate the area, holding the end values outside the sampled range.

        :param s: the arc length(s) in m
        :return: the area(s) in m²
        """
        return np.interp(s, self.arc_length, self.area)

    def extended(self, distance):
        """
        Prepend a uniform duct with the entrance area.

        :param float distance: the length of the prepended duct in m
        :return: the extended area function; arc length 0 is the new entrance
        :rtype: AreaFunction
        """
        if distance <= 0:
            return self
        arc_length = np.concatenate(([0.0], self.arc_length + distance))
        area = np.concatenate(([self.area[0]], self.area))
        points = None
        if self.points is not None:
            direction = self.points[1] - self.points[0]
            direction = direction / np.linalg.norm(direction)
            points = np.vstack((self.points[0] - distance * direction, self.points))
        return AreaFunction(arc_length, area, points)


def _plane_basis(normal):
    helper = np.eye(3)[int(np.argmin(np.abs(normal)))]
    u = np.cross(normal, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(normal, u)


def plane_sections(mesh, origin, normal):
    """
    Intersect a mesh with a plane and chain the intersection into closed loops.

    :param TriMesh mesh: the surface
    :param numpy.ndarray origin: a point on the plane
    :param numpy.ndarray normal: the unit plane normal
    :return: the closed loops, each an (n, 3) array of points in order
    :rtype: list
    """
    vertices = mesh.vertices
    faces = mesh.faces
    side = (vertices - origin).dot(normal)
    positive = side >= 0
    face_sides = positive[faces]
    mixed = faces[face_sides.any(axis=1) & ~face_sides.all(axis=1)]
    if not len(mixed):
        return []

    starts = mixed
    ends = np.roll(mixed, -1, axis=1)
    crossed = positive[starts] != positive[ends]
    # Every mixed face has exactly two crossed edges
    edge_start = starts[crossed].reshape(-1, 2)
    edge_end = ends[crossed].reshape(-1, 2)
    low = np.minimum(edge_start, edge_end)
    high = np.maximum(edge_start, edge_end)
    keys = low * len(vertices) + high

    unique_keys, first_index = np.unique(keys.ravel(), return_index=True)
    low_flat = low.ravel()[first_index]
    high_flat = high.ravel()[first_index]
    t = side[low_flat] / (side[low_flat] - side[high_flat])
    crossing = vertices[low_flat] + t[:, None] * (vertices[high_flat] - vertices[low_flat])
    position = dict(zip(unique_keys.tolist(), crossing))

    segments = keys.tolist()
    by_key = {}
    for index, (a, b) in enumerate(segments):
        by_key.setdefault(a, []).append(index)
        by_key.setdefault(b, []).append(index)

    used = [False] * len(segments)
    loops = []
    for first in range(len(segments)):
        if used[first]:
            continue
        used[first] = True
        start_key, current_key = segments[first]
        chain = [start_key]
        closed = False
        while True:
            chain.append(current_key)
            following = [i for i in by_key[current_key] if not used[i]]
            if not following:
                closed = current_key == start_key
                break
            used[following[0]] = True
            a, b = segments[following[0]]
            current_key = b if a == current_key else a
            if current_key == start_key:
                closed = True
                break
        if closed and len(chain) >= 3:
            loops.append(np.array([position[key] for key in chain]))
    return loops


def _loop_geometry(loop, origin, normal):
    """
    Compute the area, area centroid and 2D outline of a planar loop.

    :return: the area in mm², the 3D centroid and the (n, 2) in-plane coordinates
    :rtype: tuple
    """
    u, v = _plane_basis(normal)
    relative = loop - origin
    xy = np.column_stack((relative.dot(u), relative.dot(v)))
    x, y = xy[:, 0], xy[:, 1]
    x_next, y_next = np.roll(x, -1), np.roll(y, -1)
    cross = x * y_next - x_next * y
    signed_area = 0.5 * cross.sum()
    if abs(signed_area) < 1e-15:
        return 0.0, loop.mean(axis=0), xy
    cx = ((x + x_next) * cross).sum() / (6.0 * signed_area)
    cy = ((y + y_next) * cross).sum() / (6.0 * signed_area)
    return abs(signed_area), origin + cx * u + cy * v, xy


def _contains(xy, point):
    """Test whether a 2D point is inside a polygon with the even-odd rule."""
    x, y = xy[:, 0], xy[:, 1]
    x_next, y_next = np.roll(x, -1), np.roll(y, -1)
    straddles = (y > point[1]) != (y_next > point[1])
    with np.errstate(divide='ignore', invalid='ignore'):
        x_cross = x + (point[1] - y) * (x_next - x) / (y_next - y)
    return bool(np.count_nonzero(straddles & (x_cross > point[0])) % 2)


def _section_at(mesh, point, normal, largest=False):
    """
    Find the cross-section through a point.

    :return: the area in mm² and centroid of the section containing the point, or None
    """
    sections = []
    for loop in plane_sections(mesh, point, normal):
        area, centroid, xy = _loop_geometry(loop, point, normal)
        if area > 0:
            sections.append((area, centroid, xy))
    if not sections:
        return None
    if largest:
        area, centroid, _ = max(sections, key=lambda section: section[0])
        return area, centroid
    containing = [s for s in sections if _contains(s[2], np.zeros(2))]
    if len(containing) != 1:
        return None
    return containing[0][0], containing[0][1]


def _ray_hit(mesh, origin, direction):
    """
    Find the nearest intersection of a ray with the mesh.

    :return: the distance along the ray, or None when the ray misses
    """
    tri = mesh.triangles
    edge1 = tri[:, 1] - tri[:, 0]
    edge2 = tri[:, 2] - tri[:, 0]
    p = np.cross(direction, edge2)
    det = np.einsum('ij,ij->i', edge1, p)
    with np.errstate(divide='ignore', invalid='ignore'):
        inv = 1.0 / det
        s = origin - tri[:, 0]
        u = np.einsum('ij,ij->i', s, p) * inv
        q = np.cross(s, edge1)
        v = q.dot(direction) * inv
        t = np.einsum('ij,ij->i', edge2, q) * inv
    hit = (np.abs(det) > 1e-15) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
    if not hit.any():
        return None
    return float(t[hit].min())


def _entrance_frame(mesh, entrance):
    """
    Choose the entrance point and the initial marching direction.

    :return: the entrance point and the inward unit direction
    """
    if entrance is not None:
        point, direction = (np.asarray(value, dtype=np.float64) for value in entrance)
        return point, direction / np.linalg.norm(direction)

    vertex_mean = mesh.vertices.mean(axis=0)
    loops = mesh.boundary_loops
    if loops:
        loop = mesh.vertices[max(loops, key=len)]
        centroid = loop.mean(axis=0)
        # Newell's method
        following = np.roll(loop, -1, axis=0)
        normal = np.cross(loop - centroid, following - centroid).sum(axis=0)
        normal /= np.linalg.norm(normal)
        if normal.dot(vertex_mean - centroid) < 0:
            normal = -normal
        return centroid, normal

    # A closed surface is entered from the principal axis end with the larger section
    _, _, axes = np.linalg.svd(mesh.vertices - vertex_mean, full_matrices=False)
    axis = axes[0]
    projection = (mesh.vertices - vertex_mean).dot(axis)
    candidates = []
    for sign, extreme in ((1.0, projection.min()), (-1.0, projection.max())):
        direction = sign * axis
        point = vertex_mean + extreme * axis
        section = _section_at(mesh, point + END_OFFSET * direction, direction, largest=True)
        candidates.append((section[0] if section else 0.0, point, direction))
    _, point, direction = max(candidates, key=lambda candidate: candidate[0])
    return point, direction


def _march(mesh, entrance):
    """
    March from the entrance to the drum through section centroids.

    :return: the (n, 3) centerline polyline in mm including both end points
    """
    start, direction = _entrance_frame(mesh, entrance)
    first = _section_at(mesh, start + END_OFFSET * direction, direction, largest=True)
    if first is None:
        raise NotTubularError('The first cross-section from the entrance is empty')

    centroids = [first[1]]
    tangent = direction
    extent = np.linalg.norm(np.ptp(mesh.vertices, axis=0))
    for _ in range(int(4 * extent / MARCH_STEP) + 10):
        predicted = centroids[-1] + MARCH_STEP * tangent
        section = _section_at(mesh, predicted, tangent)
        if section is None:
            break
        step = section[1] - centroids[-1]
        if np.linalg.norm(step) < 1e-9:
            break
        centroids.append(section[1])
        tangent = step / np.linalg.norm(step)

    if len(centroids) < 3:
        raise NotTubularError(
            f'Only {len(centroids)} connected cross-sections were found along the surface'
        )
    centroids = np.array(centroids)

    first_tangent = centroids[1] - centroids[0]
    first_tangent /= np.linalg.norm(first_tangent)
    back = _ray_hit(mesh, centroids[0], -first_tangent)
    if back is None or back > 2 * MARCH_STEP:
        back = END_OFFSET
    last_tangent = centroids[-1] - centroids[-2]
    last_tangent /= np.linalg.norm(last_tangent)
    forward = _ray_hit(mesh, centroids[-1], last_tangent)
    if forward is None or forward > 2 * MARCH_STEP:
        forward = 0.0
    ends = [centroids[0] - back * first_tangent]
    ends_last = [centroids[-1] + forward * last_tangent] if forward > 0 else []
    return np.vstack(ends + [centroids] + ends_last)


def centerline_and_area(mesh, stations=DEFAULT_STATIONS, entrance=None):
    """
    Extract the centerline and cross-sectional area function of a tubular surface.

    The centerline is traced by slicing perpendicular to the running tangent and stepping
    through the section centroids. The area is then resampled at equally spaced stations.
    The entrance is the largest open boundary loop, the given hint, or for closed surfaces the
    principal axis end with the larger section.

    :param TriMesh mesh: the tubular surface in mm
    :param int stations: the number of output stations (at least 2)
    :param tuple entrance: an optional (point, inward direction) pair in mm
    :return: the area function in SI units
    :rtype: AreaFunction
    :raises NotTubularError: if the slicing yields disconnected or empty sections
    """
    if stations < 2:
        raise ValidationError('At least two stations are required')
    polyline = _march(mesh, entrance)
    segment_lengths = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    cumulative = np.concatenate(([0.0], np.cumsum(segment_lengths)))
    total = cumulative[-1]
    log.debug('Traced a centerline of %.3f mm through %d sections', total, len(polyline) - 2)

    arc_length = np.linspace(0.0, total, stations)
    station_points = np.column_stack(
        [np.interp(arc_length, cumulative, polyline[:, axis]) for axis in range(3)]
    )
    # The end sections are taken slightly inside the caps
    probe = np.clip(arc_length, END_OFFSET, total - END_OFFSET)
    areas = np.empty(stations)
    for index, s in enumerate(probe):
        segment = min(np.searchsorted(cumulative, s, side='right') - 1, len(segment_lengths) - 1)
        tangent = (polyline[segment + 1] - polyline[segment]) / segment_lengths[segment]
        point = np.array([np.interp(s, cumulative, polyline[:, axis]) for axis in range(3)])
        section = _section_at(mesh, point, tangent)
        if section is None:
            raise NotTubularError(f'The cross-section at {s:.3f} mm along the centerline is not '
                                  'a single closed loop')
        areas[index] = section[0]

    return AreaFunction(arc_length * 1e-3, areas * 1e-6, station_points * 1e-3)


def save_area_function(area_fn, path):
    """
    Save an area function as CSV with the header "arclength_m,area_m2".

    :param AreaFunction area_fn: the area function
    :param str path: the destination path
    """
    with open(path, 'w', newline='') as csv_file:
        writer = csv.writer(csv_file, lineterminator='\n')
        writer.writerow(('arclength_m', 'area_m2'))
        for s, area in zip(area_fn.arc_length.tolist(), area_fn.area.tolist()):
            writer.writerow((repr(s), repr(area)))


def load_area_function(path):
    """
    Load an area function saved by save_area_function.

    :param str path: the CSV path
    :return: the area function
    :rtype: AreaFunction
    :raises ValidationError: if the header or a row is invalid
    """
    with open(path, 'r', newline='') as csv_file:
        rows = list(csv.reader(csv_file))
    if not rows or rows[0] != ['arclength_m', 'area_m2']:
        raise ValidationError(f'The file "{path}" does not have the area function header')
    try:
        values = np.array([[float(value) for value in row] for row in rows[1:] if row])
    except ValueError:
        raise ValidationError(f'The file "{path}" has a non-numeric row')
    return AreaFunction(values[:, 0], values[:, 1])
