# SPDX-License-Identifier: GPL-3.0-or-later
from dataclasses import dataclass
import json
import logging
import os
import warnings

import numpy as np
from scipy import linalg

from canalatlas.errors import (
    DegeneratePopulationWarning, InvalidRangeError, TooManyCoefficientsError, ValidationError,
)
from canalatlas.geometry import TriMesh, cap_open_boundaries, closest_points
from canalatlas.mapping import serial_map


__all__ = [
    'CorrespondenceSet',
    'ShapeModel',
    'build_pdm',
    'explained_variance',
    'load_model',
    'mode_extremes',
    'nearest_to_mean',
    'procrustes_align',
    'project_correspondences',
    'project_shape',
    'save_model',
    'synthesize',
]
log = logging.getLogger(__name__)

# Modes with an eigenvalue below this fraction of the largest are numerical noise
MODE_FLOOR = 1e-12
MODEL_FORMAT = 'canalatlas-shape-model'
MODEL_VERSION = 1
PROCRUSTES_ITERATIONS = 10


def _read_only(array, dtype):
    array = np.array(array, dtype=dtype)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Corresponding points of every subject, ordered like the template vertices."""

    points: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        points = _read_only(self.points, np.float64)
        if points.ndim != 3 or points.shape[2] != 3 or points.shape[0] < 1:
            raise ValidationError(
                'The correspondences must have the shape (subjects, vertices, 3)'
            )
        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'faces', _read_only(self.faces, np.int64).reshape(-1, 3))

    @property
    def population_size(self):
        return self.points.shape[0]

    @property
    def vertex_count(self):
        return self.points.shape[1]

    def data_matrix(self):
        """Flatten every subject to one row of x, y, z coordinates."""
        return self.points.reshape(self.population_size, -1)

    def mesh(self, index):
        return TriMesh(self.points[index], self.faces)


@dataclass(frozen=True, eq=False)
class ShapeModel:
    """
    A linear point distribution model.

    The modes are the orthonormal columns of a (3 * vertex count, mode count) matrix over the
    flattened coordinates; the eigenvalues are their variances in mm², in descending order.
    """

    mean_points: np.ndarray
    modes: np.ndarray
    eigenvalues: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        mean_points = _read_only(self.mean_points, np.float64).reshape(-1, 3)
        eigenvalues = _read_only(self.eigenvalues, np.float64).reshape(-1)
        modes = _read_only(self.modes, np.float64).reshape(mean_points.size, len(eigenvalues))
        if np.any(eigenvalues < 0) or np.any(np.diff(eigenvalues) > 0):
            raise ValidationError('The eigenvalues must be non-negative and descending')
        object.__setattr__(self, 'mean_points', mean_points)
        object.__setattr__(self, 'modes', modes)
        object.__setattr__(self, 'eigenvalues', eigenvalues)
        object.__setattr__(self, 'faces', _read_only(self.faces, np.int64).reshape(-1, 3))

    @property
    def mode_count(self):
        return len(self.eigenvalues)

    @property
    def vertex_count(self):
        return len(self.mean_points)

    @property
    def standard_deviations(self):
        return np.sqrt(self.eigenvalues)


def _snap(surface, points):
    snapped, _, _ = closest_points(surface, points, exact=True)
    return snapped


def project_correspondences(atlas, surfaces, mapper=None):
    """
    Project the template vertices onto every subject surface.

    Each template vertex is mapped into the space of every subject by the atlas transforms and
    then snapped to the closest point of the capped subject surface.

    :param AtlasResult atlas: the atlas built from the surfaces
    :param list surfaces: the TriMesh population, in the order used to build the atlas
    :param callable mapper: maps a function over argument tuples, returning results in order
    :return: the correspondences
    :rtype: CorrespondenceSet
    :raises ValidationError: if the population sizes differ
    :raises EmptyMeshError: if a surface has no faces
    """
    if len(surfaces) != atlas.population_size:
        raise ValidationError(
            f'The atlas has {atlas.population_size} subjects but {len(surfaces)} surfaces were '
            'given'
        )
    mapper = mapper or serial_map
    template = atlas.template_mesh.vertices
    snapped = mapper(_snap, [
        (cap_open_boundaries(surface), template + atlas.displacements[index])
        for index, surface in enumerate(surfaces)
    ])
    return CorrespondenceSet(np.stack(snapped), atlas.template_mesh.faces)


def _kabsch(source, target):
    """Find the rotation and scale that best map the centered source onto the centered target."""
    u, singular, vt = np.linalg.svd(source.T.dot(target))
    sign = np.sign(np.linalg.det(u.dot(vt)))
    correction = np.diag([1.0, 1.0, sign])
    rotation = u.dot(correction).dot(vt)
    scale = float(np.sum(singular * np.diag(correction))) / float(np.sum(source ** 2))
    return rotation, scale


def procrustes_align(points):
    """
    Align shapes with generalized similarity Procrustes analysis.

    The shapes are centered, then rotated and scaled onto their evolving mean, which keeps the
    centroid size of the first shape.

    :param numpy.ndarray points: the (subjects, vertices, 3) shapes
    :return: the aligned shapes
    :rtype: numpy.ndarray
    """
    shapes = points - points.mean(axis=1, keepdims=True)
    reference = shapes[0]
    size = np.linalg.norm(reference)
    for _ in range(PROCRUSTES_ITERATIONS):
        aligned = []
        for shape in shapes:
            rotation, scale = _kabsch(shape, reference)
            aligned.append(scale * shape.dot(rotation))
        aligned = np.stack(aligned)
        mean = aligned.mean(axis=0)
        mean *= size / np.linalg.norm(mean)
        if np.allclose(mean, reference, atol=1e-10):
            break
        reference = mean
    return aligned


def build_pdm(correspondences, procrustes=False):
    """
    Build a point distribution model by principal component analysis.

    The eigenvectors come from the subjects × subjects Gram matrix of the centered data, which is
    far smaller than the coordinate covariance matrix. Each mode's largest-magnitude component
    is positive.

    :param CorrespondenceSet correspondences: the corresponded population
    :param bool procrustes: whether to align the shapes by similarity Procrustes first
    :return: the model, with at most population size - 1 modes
    :rtype: ShapeModel
    :raises ValidationError: if the population has fewer than two subjects
    """
    count = correspondences.population_size
    if count < 2:
        raise ValidationError('A shape model needs at least two subjects')
    points = correspondences.points
    if procrustes:
        points = procrustes_align(points)
    data = points.reshape(count, -1)
    mean = data.mean(axis=0)
    centered = data - mean

    gram = centered.dot(centered.T) / (count - 1)
    eigenvalues, vectors = linalg.eigh(gram)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues, vectors = eigenvalues[order], vectors[:, order]

    noise = (np.finfo(np.float64).eps * max(1.0, float(np.abs(data).max()))) ** 2 * data.shape[1]
    if eigenvalues[0] <= noise:
        warnings.warn(
            'All shapes of the population are identical; the model has no modes',
            DegeneratePopulationWarning,
        )
        keep = 0
    else:
        keep = int(np.sum(eigenvalues[:count - 1] > MODE_FLOOR * eigenvalues[0]))
    eigenvalues, vectors = eigenvalues[:keep], vectors[:, :keep]

    modes = centered.T.dot(vectors) / np.sqrt((count - 1) * eigenvalues)
    for k in range(keep):
        if modes[np.argmax(np.abs(modes[:, k])), k] < 0:
            modes[:, k] = -modes[:, k]
    log.info(
        'Built a shape model of %d subjects with %d modes; total variance %.6g mm²',
        count, keep, float(eigenvalues.sum()),
    )
    return ShapeModel(mean.reshape(-1, 3), modes, eigenvalues, correspondences.faces)


def _shape_points(model, coefficients):
    coefficients = np.asarray(coefficients, dtype=np.float64).reshape(-1)
    if len(coefficients) > model.mode_count:
        raise TooManyCoefficientsError(
            f'{len(coefficients)} coefficients were given but the model has {model.mode_count} '
            'modes'
        )
    used = len(coefficients)
    offset = model.modes[:, :used].dot(coefficients * model.standard_deviations[:used])
    return model.mean_points + offset.reshape(-1, 3)


def synthesize(model, coefficients=()):
    """
    Create a shape from mode coefficients.

    :param ShapeModel model: the model
    :param coefficients: the coefficients of the leading modes in standard deviations
    :return: the shape mean + Σ c_k · sqrt(λ_k) · mode_k with the model faces
    :rtype: TriMesh
    :raises TooManyCoefficientsError: if there are more coefficients than modes
    """
    return TriMesh(_shape_points(model, coefficients), model.faces)


def project_shape(model, points):
    """
    Find the mode coefficients, in standard deviations, that best reproduce a shape.

    :param ShapeModel model: the model
    :param numpy.ndarray points: the (vertices, 3) shape in model correspondence
    :return: one coefficient per mode
    :rtype: numpy.ndarray
    :raises ValidationError: if the vertex count doesn't match the model
    """
    points = np.asarray(points, dtype=np.float64)
    if points.shape != model.mean_points.shape:
        raise ValidationError(
            f'The shape has {points.shape} coordinates but the model has '
            f'{model.mean_points.shape}'
        )
    return model.modes.T.dot((points - model.mean_points).ravel()) / model.standard_deviations


def explained_variance(model, k):
    """
    Compute the fraction of the total variance explained by the first k modes.

    :param ShapeModel model: the model
    :param int k: the number of leading modes
    :return: the ratio in [0, 1]; 1.0 when k is the mode count
    :rtype: float
    :raises InvalidRangeError: if k is negative or larger than the mode count
    """
    if not 0 <= k <= model.mode_count:
        raise InvalidRangeError(f'k must be between 0 and {model.mode_count}, got {k}')
    # All the retained modes explain all the variance, even when there are none
    if k == model.mode_count:
        return 1.0
    total = float(model.eigenvalues.sum())
    if k == 0 or total == 0:
        return 0.0
    return float(model.eigenvalues[:k].sum()) / total


def nearest_to_mean(model, correspondences):
    """
    Find the subject closest to the model mean.

    :param ShapeModel model: the model
    :param CorrespondenceSet correspondences: the population
    :return: the index of the subject with the smallest RMS vertex distance; the lowest on ties
    :rtype: int
    """
    squared = np.sum((correspondences.points - model.mean_points) ** 2, axis=2)
    rms = np.sqrt(squared.mean(axis=1))
    return int(np.argmin(rms))


def mode_extremes(model, count):
    """
    Create the shapes one standard deviation either side of the mean along the leading modes.

    :param ShapeModel model: the model
    :param int count: the number of modes; clipped to the mode count
    :return: a (minus, plus) pair of meshes per mode
    :rtype: list
    """
    extremes = []
    for k in range(min(count, model.mode_count)):
        coefficients = np.zeros(k + 1)
        coefficients[k] = 1.0
        extremes.append((synthesize(model, -coefficients), synthesize(model, coefficients)))
    return extremes


def _sidecar_path(path):
    return os.path.splitext(path)[0] + '.bin'


def save_model(model, path):
    """
    Save a shape model as a JSON header and a little-endian binary sidecar.

    The sidecar next to the header, with the .bin extension, holds the float64 mean points, the
    float64 modes in C order and the int64 faces.

    :param ShapeModel model: the model
    :param str path: the JSON header path
    :return: the sidecar path
    :rtype: str
    """
    sidecar = _sidecar_path(path)
    header = {
        'format': MODEL_FORMAT,
        'version': MODEL_VERSION,
        'vertex_count': model.vertex_count,
        'face_count': len(model.faces),
        'mode_count': model.mode_count,
        'eigenvalues': model.eigenvalues.tolist(),
        'data_file': os.path.basename(sidecar),
        'byte_order': 'little',
        'arrays': ['mean_points:float64', 'modes:float64', 'faces:int64'],
    }
    with open(path, 'w') as f:
        json.dump(header, f, indent=2)
        f.write('\n')
    with open(sidecar, 'wb') as f:
        f.write(model.mean_points.astype('<f8').tobytes())
        f.write(model.modes.astype('<f8').tobytes())
        f.write(model.faces.astype('<i8').tobytes())
    return sidecar


def load_model(path):
    """
    Load a shape model saved by save_model.

    :param str path: the JSON header path
    :return: the model
    :rtype: ShapeModel
    :raises ValidationError: if the header or the sidecar is malformed
    """
    with open(path, 'r') as f:
        header = json.load(f)
    if header.get('format') != MODEL_FORMAT:
        raise ValidationError(f'The file {path} is not a shape model')
    vertices, faces, modes = header['vertex_count'], header['face_count'], header['mode_count']
    sidecar = os.path.join(os.path.dirname(path), header['data_file'])
    with open(sidecar, 'rb') as f:
        data = f.read()
    sizes = [3 * vertices * 8, 3 * vertices * modes * 8, 3 * faces * 8]
    if len(data) != sum(sizes):
        raise ValidationError(
            f'The sidecar {sidecar} has {len(data)} bytes but the header needs {sum(sizes)}'
        )
    mean_points = np.frombuffer(data, dtype='<f8', count=3 * vertices)
    mode_data = np.frombuffer(data, dtype='<f8', count=3 * vertices * modes, offset=sizes[0])
    face_data = np.frombuffer(data, dtype='<i8', count=3 * faces, offset=sizes[0] + sizes[1])
    return ShapeModel(
        mean_points.reshape(vertices, 3),
        mode_data.reshape(3 * vertices, modes),
        header['eigenvalues'],
        face_data.reshape(faces, 3),
    )
