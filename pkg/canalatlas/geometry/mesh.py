# SPDX-License-Identifier: GPL-3.0-or-later
import logging
import os

import numpy as np

from canalatlas.errors import FaceIndexError, MeshParseError, NonSimpleLoopError, ValidationError


__all__ = [
    'TriMesh',
    'boundary_loops',
    'cap_open_boundaries',
    'euler_characteristic',
    'load_obj',
    'mesh_io',
    'mesh_volume',
    'orient_outward',
    'save_obj',
]
log = logging.getLogger(__name__)

# Faces with an area at or below this (mm²) are degenerate
DEGENERATE_AREA = 1e-12


class TriMesh:
    """An immutable triangle surface in millimeters, optionally with open boundary loops."""

    def __init__(self, vertices, faces):
        """
        Initialize the mesh and validate its invariants.

        :param numpy.ndarray vertices: the (n, 3) vertex coordinates
        :param numpy.ndarray faces: the (m, 3) vertex indices of each triangle
        :raises FaceIndexError: if a face references a vertex that doesn't exist
        :raises ValidationError: if the arrays are malformed or a face is degenerate
        """
        vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(vertices)):
            raise ValidationError('The mesh vertices must be finite')
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            bad = int(faces.max() if faces.max() >= len(vertices) else faces.min())
            raise FaceIndexError(
                f'The face index {bad} is out of range for a mesh with {len(vertices)} vertices'
            )
        vertices.flags.writeable = False
        faces.flags.writeable = False
        self._vertices = vertices
        self._faces = faces
        self._boundary_loops = None
        if faces.size:
            degenerate = np.flatnonzero(self.face_areas() <= DEGENERATE_AREA)
            if degenerate.size:
                raise ValidationError(f'The face {int(degenerate[0])} is degenerate')

    def __repr__(self):
        return f'<TriMesh vertices={len(self._vertices)} faces={len(self._faces)}>'

    @property
    def vertices(self):
        return self._vertices

    @property
    def faces(self):
        return self._faces

    @property
    def triangles(self):
        """
        Get the corner coordinates of every face.

        :return: the (m, 3, 3) array of face corners
        :rtype: numpy.ndarray
        """
        return self._vertices[self._faces]

    @property
    def boundary_loops(self):
        """
        Get the closed loops formed by the edges used by exactly one face.

        :return: a tuple of vertex index arrays, each ordered along the face winding
        :rtype: tuple
        """
        if self._boundary_loops is None:
            self._boundary_loops = boundary_loops(self)
        return self._boundary_loops

    @property
    def is_closed(self):
        return len(self.boundary_loops) == 0

    def face_areas(self):
        tri = self.triangles
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def face_normals(self):
        tri = self.triangles
        normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return normals / np.linalg.norm(normals, axis=1)[:, None]

    def edges(self):
        """
        Get the unique undirected edges and the number of faces using each.

        :return: the (e, 2) sorted edges and their face incidence counts
        :rtype: tuple(numpy.ndarray, numpy.ndarray)
        """
        directed = self._faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        return np.unique(np.sort(directed, axis=1), axis=0, return_counts=True)

    def with_vertices(self, vertices):
        """
        Create a mesh with the same connectivity and new vertex positions.

        :param numpy.ndarray vertices: the (n, 3) replacement vertex coordinates
        :return: the new mesh
        :rtype: TriMesh
        """
        return TriMesh(vertices, self._faces)


def boundary_loops(mesh):
    """
    Chain the edges with face incidence 1 into closed loops.

    :param TriMesh mesh: the mesh to inspect
    :return: a tuple of vertex index arrays, each ordered along the face winding
    :rtype: tuple
    :raises NonSimpleLoopError: if a boundary vertex starts more than one boundary edge
    """
    if not len(mesh.faces):
        return ()
    directed = mesh.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    undirected, inverse, counts = np.unique(
        np.sort(directed, axis=1), axis=0, return_inverse=True, return_counts=True
    )
    on_boundary = counts[np.ravel(inverse)] == 1
    following = {}
    for start, end in directed[on_boundary].tolist():
        if start in following:
            raise NonSimpleLoopError(f'The boundary vertex {start} belongs to more than one loop')
        following[start] = end

    loops = []
    remaining = set(following)
    # Walk from the lowest index so the loops are reproducible
    while remaining:
        start = min(remaining)
        loop = [start]
        remaining.discard(start)
        current = following[start]
        while current != start:
            if current not in remaining:
                raise NonSimpleLoopError(f'The boundary through vertex {current} does not close')
            loop.append(current)
            remaining.discard(current)
            current = following[current]
        loops.append(np.array(loop, dtype=np.int64))
    return tuple(loops)


def cap_open_boundaries(mesh):
    """
    Close every boundary loop with a triangle fan around the loop centroid.

    :param TriMesh mesh: the mesh to close
    :return: the closed mesh; the input itself when it has no boundary
    :rtype: TriMesh
    :raises NonSimpleLoopError: if a boundary loop is not simple
    """
    loops = mesh.boundary_loops
    if not loops:
        return mesh

    vertices = [mesh.vertices]
    faces = [mesh.faces]
    next_index = len(mesh.vertices)
    for loop in loops:
        centroid = mesh.vertices[loop].mean(axis=0)
        vertices.append(centroid[None, :])
        # The boundary runs a -> b in its face, so the cap uses b -> a to keep the winding
        fan = np.column_stack((np.roll(loop, -1), loop, np.full(len(loop), next_index)))
        faces.append(fan)
        next_index += 1
    log.debug('Capped %d boundary loops', len(loops))
    return TriMesh(np.vstack(vertices), np.vstack(faces))


def euler_characteristic(mesh):
    """
    Compute V - E + F for the mesh.

    :param TriMesh mesh: the mesh
    :return: the Euler characteristic
    :rtype: int
    """
    edges, _ = mesh.edges()
    used = np.unique(mesh.faces)
    return int(len(used) - len(edges) + len(mesh.faces))


def mesh_volume(mesh):
    """
    Compute the signed enclosed volume with the divergence theorem.

    :param TriMesh mesh: a closed mesh
    :return: the volume in cubic mesh units; negative when the faces wind inward
    :rtype: float
    """
    tri = mesh.triangles
    return float(np.einsum('ij,ij->i', tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)


def orient_outward(mesh):
    """
    Flip the face winding when it encloses a negative volume.

    :param TriMesh mesh: a closed mesh
    :return: a mesh whose face normals point outward
    :rtype: TriMesh
    """
    if mesh_volume(mesh) >= 0:
        return mesh
    return TriMesh(mesh.vertices, mesh.faces[:, ::-1])


def load_obj(path):
    """
    Load a triangle mesh from an ASCII OBJ file.

    Only the "v" and "f" records are interpreted; polygons are split into triangle fans.

    :param str path: the path to the OBJ file
    :return: the loaded mesh
    :rtype: TriMesh
    :raises FileNotFoundError: if the file doesn't exist
    :raises MeshParseError: if a record can't be parsed
    :raises FaceIndexError: if a face references a vertex that doesn't exist
    """
    vertices = []
    faces = []
    with open(path, 'r') as obj_file:
        for line_number, line in enumerate(obj_file, start=1):
            parts = line.split()
            if not parts or parts[0].startswith('#'):
                continue
            if parts[0] == 'v':
                try:
                    vertices.append([float(value) for value in parts[1:4]])
                except ValueError:
                    raise MeshParseError('The vertex record is not numeric', line_number)
                if len(vertices[-1]) != 3:
                    raise MeshParseError('A vertex record needs three coordinates', line_number)
            elif parts[0] == 'f':
                try:
                    # "f 1/2/3" style records reference the position first
                    corners = [int(token.split('/')[0]) for token in parts[1:]]
                except ValueError:
                    raise MeshParseError('The face record is not an index list', line_number)
                if len(corners) < 3:
                    raise MeshParseError('A face record needs at least three indices', line_number)
                corners = [c - 1 if c > 0 else len(vertices) + c for c in corners]
                for i in range(1, len(corners) - 1):
                    faces.append([corners[0], corners[i], corners[i + 1]])
            else:
                log.debug('Skipping the unsupported OBJ record "%s" on line %d', parts[0],
                          line_number)

    log.debug('Loaded %d vertices and %d faces from %s', len(vertices), len(faces), path)
    return TriMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh, path):
    """
    Save a triangle mesh as an ASCII OBJ file with full double precision.

    :param TriMesh mesh: the mesh to save
    :param str path: the destination path; its parent directory must exist
    :raises FileNotFoundError: if the parent directory doesn't exist
    """
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise FileNotFoundError(f'The directory "{parent}" does not exist')
    lines = [f'v {x!r} {y!r} {z!r}' for x, y, z in mesh.vertices.tolist()]
    lines.extend(f'f {a + 1} {b + 1} {c + 1}' for a, b, c in mesh.faces.tolist())
    with open(path, 'w') as obj_file:
        obj_file.write('\n'.join(lines))
        obj_file.write('\n')


def mesh_io(path, direction, mesh=None):
    """
    Load or save a mesh.

    :param str path: the OBJ file path
    :param str direction: either "load" or "save"
    :param TriMesh mesh: the mesh to save; required when saving
    :return: the loaded mesh when loading, otherwise None
    :rtype: TriMesh or None
    :raises ValidationError: if the direction is unknown or no mesh was given to save
    """
    if direction == 'load':
        return load_obj(path)
    if direction == 'save':
        if mesh is None:
            raise ValidationError('A mesh is required when saving')
        save_obj(mesh, path)
        return None
    raise ValidationError(f'The direction "{direction}" is invalid. It must be "load" or "save".')
