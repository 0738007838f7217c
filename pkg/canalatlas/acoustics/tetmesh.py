# SPDX-License-Identifier: GPL-3.0-or-later
from dataclasses import dataclass
import logging

import numpy as np

from canalatlas.acoustics.curves import AirProperties
from canalatlas.errors import MeshParseError, ValidationError
from canalatlas.geometry import canal_centerline, rotation_minimizing_frames


__all__ = [
    'BOUNDARY_TAGS',
    'TetMesh',
    'load_tet_mesh',
    'max_element_size',
    'save_tet_mesh',
    'sweep_area_tet_mesh',
    'sweep_tet_mesh',
]
log = logging.getLogger(__name__)

BOUNDARY_TAGS = ('entrance', 'drum', 'wall')
ELEMENTS_PER_WAVELENGTH = 6
# The sizing starts from this fraction of the edge limit and shrinks until the limit holds
INITIAL_SIZE_FRACTION = 0.95 / np.sqrt(2.0)
SIZE_REDUCTION = 0.85
MAX_SIZING_ATTEMPTS = 20


def _tet_volumes(vertices, tets):
    corners = vertices[tets]
    edges = corners[:, 1:] - corners[:, :1]
    return np.linalg.det(edges) / 6.0


def _tet_faces(tets):
    return np.concatenate((tets[:, [1, 2, 3]], tets[:, [0, 2, 3]], tets[:, [0, 1, 3]],
                           tets[:, [0, 1, 2]]))


@dataclass(frozen=True, eq=False)
class TetMesh:
    """
    A linear tetrahedral volume mesh in SI units with a tagged boundary.

    Every boundary triangle carries one of the tags entrance, drum or wall.
    """

    vertices: np.ndarray
    tets: np.ndarray
    boundary_faces: np.ndarray
    boundary_tags: np.ndarray

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        tets = np.array(self.tets, dtype=np.int64).reshape(-1, 4)
        faces = np.array(self.boundary_faces, dtype=np.int64).reshape(-1, 3)
        tags = np.array(self.boundary_tags, dtype=str).ravel()
        for array in (vertices, tets, faces, tags):
            array.flags.writeable = False
        object.__setattr__(self, 'vertices', vertices)
        object.__setattr__(self, 'tets', tets)
        object.__setattr__(self, 'boundary_faces', faces)
        object.__setattr__(self, 'boundary_tags', tags)
        self._validate()

    def _validate(self):
        if not len(self.tets):
            raise ValidationError('A tetrahedral mesh needs at least one cell')
        for name, cells in (('tet', self.tets), ('boundary face', self.boundary_faces)):
            if cells.size and (cells.min() < 0 or cells.max() >= len(self.vertices)):
                raise ValidationError(f'A {name} references a vertex that does not exist')
        if len(self.boundary_tags) != len(self.boundary_faces):
            raise ValidationError('Every boundary face needs exactly one tag')
        unknown = set(self.boundary_tags.tolist()) - set(BOUNDARY_TAGS)
        if unknown:
            raise ValidationError(
                'The following boundary tags are not valid: {}'.format(', '.join(sorted(unknown)))
            )
        for tag in ('entrance', 'drum'):
            if not np.any(self.boundary_tags == tag):
                raise ValidationError(f'The mesh has no {tag} faces')
        volumes = _tet_volumes(self.vertices, self.tets)
        if np.any(volumes <= 0):
            raise ValidationError(
                f'{int(np.sum(volumes <= 0))} tets have a volume that is not positive'
            )

        faces, counts = np.unique(np.sort(_tet_faces(self.tets), axis=1), axis=0,
                                  return_counts=True)
        if np.any(counts > 2):
            raise ValidationError('A triangle is shared by more than two tets')
        boundary = faces[counts == 1]
        tagged = np.unique(np.sort(self.boundary_faces, axis=1), axis=0)
        if len(tagged) != len(self.boundary_faces) or not np.array_equal(tagged, boundary):
            raise ValidationError('The tagged faces do not partition the boundary of the mesh')

    @property
    def volume(self):
        return float(_tet_volumes(self.vertices, self.tets).sum())

    def faces_tagged(self, tag):
        return self.boundary_faces[self.boundary_tags == tag]

    def face_areas(self, tag):
        corners = self.vertices[self.faces_tagged(tag)]
        normals = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        return 0.5 * np.linalg.norm(normals, axis=1)

    def tag_area(self, tag):
        return float(self.face_areas(tag).sum())

    def edges(self):
        pairs = self.tets[:, [0, 0, 0, 1, 1, 2]], self.tets[:, [1, 2, 3, 2, 3, 3]]
        edges = np.sort(np.column_stack((pairs[0].ravel(), pairs[1].ravel())), axis=1)
        return np.unique(edges, axis=0)

    @property
    def max_edge_length(self):
        edges = self.edges()
        return float(np.linalg.norm(
            self.vertices[edges[:, 1]] - self.vertices[edges[:, 0]], axis=1,
        ).max())

    def __repr__(self):
        return (
            f'<TetMesh vertices={len(self.vertices)} tets={len(self.tets)} '
            f'boundary_faces={len(self.boundary_faces)}>'
        )


def max_element_size(frequency, air=None, elements_per_wavelength=ELEMENTS_PER_WAVELENGTH):
    """
    Get the largest element edge that resolves a wavelength.

    :param float frequency: the highest frequency in Hz
    :param AirProperties air: the air properties
    :param int elements_per_wavelength: the elements required per wavelength
    :return: the edge length c / (f n) in m
    :rtype: float
    """
    air = air or AirProperties()
    return air.sound_speed / (frequency * elements_per_wavelength)


def _unit_disk(rings):
    """
    Triangulate the unit disk with concentric rings of 6 j points.

    :return: the 2D points, the counter-clockwise triangles and the index of the first point
        on the outer ring
    :rtype: tuple(numpy.ndarray, numpy.ndarray, int)
    """
    points = [np.zeros((1, 2))]
    starts = [0]
    for j in range(1, rings + 1):
        count = 6 * j
        angles = 2.0 * np.pi * np.arange(count) / count
        starts.append(starts[-1] + len(points[-1]))
        points.append((j / rings) * np.column_stack((np.cos(angles), np.sin(angles))))

    triangles = [(0, 1 + k, 1 + (k + 1) % 6) for k in range(6)]
    for j in range(2, rings + 1):
        inner_start, inner_count = starts[j - 1], 6 * (j - 1)
        outer_start, outer_count = starts[j], 6 * j
        i = k = 0
        # Zip the two rings together in order of angle
        while i < inner_count or k < outer_count:
            next_inner = (i + 1) / inner_count
            next_outer = (k + 1) / outer_count
            inner = inner_start + i % inner_count
            outer = outer_start + k % outer_count
            if k == outer_count or (i < inner_count and next_inner < next_outer):
                triangles.append((inner, inner_start + (i + 1) % inner_count, outer))
                i += 1
            else:
                triangles.append((inner, outer_start + (k + 1) % outer_count, outer))
                k += 1

    points = np.vstack(points)
    triangles = np.array(triangles, dtype=np.int64)
    corners = points[triangles]
    ab, ac = corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]
    clockwise = ab[:, 0] * ac[:, 1] - ab[:, 1] * ac[:, 0] < 0
    triangles[clockwise] = triangles[clockwise][:, [0, 2, 1]]
    return points, triangles, starts[-1]


def _extrude(stations, disk, triangles, outer_start):
    """
    Join consecutive disks into tet layers.

    Each prism between two disks splits into three tets. A quad side with local corners i < j
    is cut along the diagonal from bottom i to top j, so neighboring prisms agree on it.
    """
    layer_count = len(stations) - 1
    per_disk = len(disk)
    ordered = np.sort(triangles, axis=1)
    offsets = per_disk * np.arange(layer_count)[:, None, None]
    bottom = (ordered[None, :, :] + offsets).reshape(-1, 3)
    top = bottom + per_disk
    a0, a1, a2 = bottom.T
    b0, b1, b2 = top.T
    tets = np.concatenate((
        np.column_stack((a0, a1, a2, b2)),
        np.column_stack((a0, a1, b1, b2)),
        np.column_stack((a0, b0, b1, b2)),
    ))

    rim = np.arange(outer_start, per_disk)
    rim_next = np.append(rim[1:], rim[0])
    low, high = np.minimum(rim, rim_next), np.maximum(rim, rim_next)
    wall = []
    for layer in range(layer_count):
        a_low, a_high = low + layer * per_disk, high + layer * per_disk
        b_low, b_high = a_low + per_disk, a_high + per_disk
        wall.append(np.column_stack((a_low, a_high, b_high)))
        wall.append(np.column_stack((a_low, b_high, b_low)))
    entrance = triangles
    drum = triangles + layer_count * per_disk
    faces = np.vstack([entrance, drum] + wall)
    tags = ['entrance'] * len(entrance) + ['drum'] * len(drum)
    tags += ['wall'] * (len(faces) - len(tags))
    return tets, faces, tags


def _sweep(centerline_points, tangents, semi_major, semi_minor, slant, max_edge):
    """
    Sweep elliptic disks along a centerline into a tet mesh.

    :param numpy.ndarray centerline_points: the (n, 3) station points in mm
    :param numpy.ndarray tangents: the (n, 3) unit tangents
    :param numpy.ndarray semi_major: the semi-axis along the normal per station, in mm
    :param numpy.ndarray semi_minor: the semi-axis along the binormal per station, in mm
    :param numpy.ndarray slant: the axial offset per unit of normal coordinate per station
    :param float max_edge: the edge limit in mm
    :return: the mesh in m
    :rtype: TetMesh
    """
    normals, binormals = rotation_minimizing_frames(centerline_points, tangents)
    size = max_edge * INITIAL_SIZE_FRACTION
    rings = max(1, int(np.ceil(1.25 * float(np.max(semi_major)) / size)))
    disk, triangles, outer_start = _unit_disk(rings)
    local_x = semi_major[:, None] * disk[None, :, 0]
    local_y = semi_minor[:, None] * disk[None, :, 1]
    local_z = slant[:, None] * local_x
    vertices = (
        centerline_points[:, None, :]
        + local_x[:, :, None] * normals[:, None, :]
        + local_y[:, :, None] * binormals[:, None, :]
        + local_z[:, :, None] * tangents[:, None, :]
    ).reshape(-1, 3)
    tets, faces, tags = _extrude(centerline_points, disk, triangles, outer_start)

    volumes = _tet_volumes(vertices, tets)
    flipped = volumes < 0
    tets[flipped] = tets[flipped][:, [1, 0, 2, 3]]
    return TetMesh(vertices * 1e-3, tets, faces, tags)


def _sized(build, max_edge):
    """Build meshes with a shrinking target size until every edge is within max_edge (m)."""
    size = max_edge * 1e3
    for _ in range(MAX_SIZING_ATTEMPTS):
        mesh = build(size)
        if mesh.max_edge_length <= max_edge:
            log.info('Swept %r with the longest edge %.4g mm', mesh, mesh.max_edge_length * 1e3)
            return mesh
        log.debug('The longest edge %.4g mm exceeds %.4g mm; refining',
                  mesh.max_edge_length * 1e3, max_edge * 1e3)
        size *= SIZE_REDUCTION
    raise ValidationError(f'No sweep satisfied the edge limit of {max_edge * 1e3:.4g} mm')


def sweep_tet_mesh(spec, max_edge):
    """
    Build a tet mesh of a synthetic canal by sweeping triangulated disks along its centerline.

    The sections follow the generator: elliptic, interpolating from the entrance to the drum
    radius, with the slanted drum. The radial jitter of the surface generator is not applied.

    :param CanalSpec spec: the canal specification
    :param float max_edge: the longest allowed edge in m
    :return: the mesh in m with entrance, drum and wall faces
    :rtype: TetMesh
    :raises InvalidSpecError: if the canal specification is invalid
    """
    spec.validate()
    if not max_edge > 0:
        raise ValidationError('The maximum edge length must be positive')

    def build(size):
        step = size * INITIAL_SIZE_FRACTION
        centerline = canal_centerline(spec, samples=max(2, int(np.ceil(spec.length / step))))
        radius = spec.entrance_radius + (
            (spec.drum_radius - spec.entrance_radius) * centerline.arc_length / spec.length
        )
        root = np.sqrt(spec.ellipticity)
        weight = np.clip((centerline.arc_length / spec.length - 0.8) / 0.2, 0.0, 1.0)
        slant = np.tan(np.radians(spec.drum_slant)) * weight
        return _sweep(centerline.points, centerline.tangents, radius * root, radius / root,
                      slant, size)

    return _sized(build, max_edge)


def sweep_area_tet_mesh(area_fn, max_edge):
    """
    Build a tet mesh of circular sections with the areas of an area function.

    The sections are swept along the area function's centerline, or along z without one.

    :param AreaFunction area_fn: the area function in SI units
    :param float max_edge: the longest allowed edge in m
    :return: the mesh in m with entrance, drum and wall faces
    :rtype: TetMesh
    """
    if not max_edge > 0:
        raise ValidationError('The maximum edge length must be positive')
    length = area_fn.length * 1e3
    arc_length = area_fn.arc_length * 1e3
    if area_fn.points is None:
        path = np.column_stack((np.zeros(len(arc_length)), np.zeros(len(arc_length)), arc_length))
    else:
        path = area_fn.points * 1e3

    def build(size):
        samples = max(2, int(np.ceil(length / (size * INITIAL_SIZE_FRACTION))))
        s = np.linspace(0.0, length, samples + 1)
        points = np.column_stack([np.interp(s, arc_length, path[:, axis]) for axis in range(3)])
        tangents = np.gradient(points, axis=0)
        tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)
        radius = np.sqrt(area_fn.area_at(s * 1e-3) / np.pi) * 1e3
        return _sweep(points, tangents, radius, radius, np.zeros(len(s)), size)

    return _sized(build, max_edge)


def save_tet_mesh(mesh, path):
    """
    Save a tet mesh in the ASCII format.

    The first line holds the vertex, tet and boundary face counts. The vertex lines hold
    coordinates in m, the tet lines four 0-based vertex indices and the boundary lines three
    vertex indices and the tag.

    :param TetMesh mesh: the mesh
    :param str path: the destination path
    """
    with open(path, 'w') as f:
        f.write(f'{len(mesh.vertices)} {len(mesh.tets)} {len(mesh.boundary_faces)}\n')
        for x, y, z in mesh.vertices.tolist():
            f.write(f'{x!r} {y!r} {z!r}\n')
        for tet in mesh.tets.tolist():
            f.write('{} {} {} {}\n'.format(*tet))
        for face, tag in zip(mesh.boundary_faces.tolist(), mesh.boundary_tags.tolist()):
            f.write('{} {} {} {}\n'.format(*face, tag))


def load_tet_mesh(path):
    """
    Load a tet mesh saved by save_tet_mesh.

    :param str path: the mesh path
    :return: the mesh
    :rtype: TetMesh
    :raises FileNotFoundError: if the file doesn't exist
    :raises MeshParseError: if a line can't be parsed
    :raises ValidationError: if the mesh violates its invariants
    """
    with open(path, 'r') as f:
        lines = f.read().splitlines()
    if not lines:
        raise MeshParseError('The tet mesh file is empty', 1)
    try:
        counts = [int(value) for value in lines[0].split()]
    except ValueError:
        counts = []
    if len(counts) != 3:
        raise MeshParseError('The first line must hold three counts', 1)
    vertex_count, tet_count, face_count = counts
    if len(lines) < 1 + sum(counts):
        raise MeshParseError('The file ends before the counted records', len(lines))

    def parse(index, converters):
        values = lines[index].split()
        if len(values) != len(converters):
            raise MeshParseError(f'Expected {len(converters)} values', index + 1)
        try:
            return [convert(value) for convert, value in zip(converters, values)]
        except ValueError:
            raise MeshParseError('A value could not be parsed', index + 1)

    first_tet = 1 + vertex_count
    first_face = first_tet + tet_count
    vertices = [parse(i, (float,) * 3) for i in range(1, first_tet)]
    tets = [parse(i, (int,) * 4) for i in range(first_tet, first_face)]
    boundary = [parse(i, (int, int, int, str)) for i in range(first_face, first_face + face_count)]
    return TetMesh(
        vertices,
        tets,
        [row[:3] for row in boundary],
        [row[3] for row in boundary],
    )
