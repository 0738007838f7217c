# SPDX-License-Identifier: GPL-3.0-or-later
import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from canalatlas.errors import InvalidSpecError
from canalatlas.geometry.mesh import TriMesh


__all__ = [
    'CanalCenterline',
    'CanalSpec',
    'canal_centerline',
    'rotation_minimizing_frames',
    'synth_canal',
]
log = logging.getLogger(__name__)

RING_POINTS = 48
# The axial distance between generated cross-section rings in mm
RING_SPACING = 0.5


@dataclass(frozen=True)
class CanalSpec:
    """The parameters of a synthetic ear canal; lengths in mm, angles in degrees."""

    length: float = 28.0
    entrance_radius: float = 4.0
    drum_radius: float = 3.5
    bend_angles: tuple = (20.0, 15.0)
    bend_positions: tuple = (0.3, 0.65)
    ellipticity: float = 1.2
    noise_amplitude: float = 0.0
    drum_slant: float = 0.0
    # The half width of each bend as a fraction of the length
    bend_width: float = field(default=0.1)

    def __post_init__(self):
        object.__setattr__(self, 'bend_angles', tuple(float(a) for a in self.bend_angles))
        object.__setattr__(self, 'bend_positions', tuple(float(p) for p in self.bend_positions))
        self.validate()

    def validate(self):
        """
        Check the invariants of the specification.

        :raises InvalidSpecError: if an invariant doesn't hold
        """
        if not self.length > 0:
            raise InvalidSpecError(f'The canal length must be positive, got {self.length}')
        if not (self.entrance_radius > 0 and self.drum_radius > 0):
            raise InvalidSpecError('The entrance and drum radii must be positive')
        if len(self.bend_angles) != 2 or len(self.bend_positions) != 2:
            raise InvalidSpecError('Exactly two bend angles and two bend positions are required')
        first, second = self.bend_positions
        if not 0 < first < second < 1:
            raise InvalidSpecError(
                'The bend positions must be strictly increasing fractions in (0, 1), got '
                f'{self.bend_positions}'
            )
        if not self.ellipticity >= 1:
            raise InvalidSpecError(f'The ellipticity must be at least 1, got {self.ellipticity}')
        if self.noise_amplitude < 0:
            raise InvalidSpecError('The noise amplitude must not be negative')
        if self.noise_amplitude >= min(self.entrance_radius, self.drum_radius) / np.sqrt(
            self.ellipticity
        ):
            raise InvalidSpecError('The noise amplitude must be smaller than the minor radius')
        if not -60 < self.drum_slant < 60:
            raise InvalidSpecError('The drum slant must be within (-60, 60) degrees')
        if not 0 < self.bend_width < 0.5:
            raise InvalidSpecError('The bend width must be a fraction within (0, 0.5)')

    @classmethod
    def from_dict(cls, data):
        """
        Create a specification from a JSON-compatible dictionary.

        :param dict data: the specification fields
        :return: the specification
        :rtype: CanalSpec
        :raises InvalidSpecError: if a key is unknown or an invariant doesn't hold
        """
        valid_keys = set(cls.__dataclass_fields__)
        invalid_keys = set(data) - valid_keys
        if invalid_keys:
            raise InvalidSpecError(
                'The following keys are not valid for a canal spec: {}'.format(
                    ', '.join(sorted(invalid_keys)))
            )
        return cls(**data)

    def to_dict(self):
        return {
            name: list(value) if isinstance(value, tuple) else value
            for name, value in self.__dict__.items()
        }

    def jittered(self, rng, length=1.0, radius=0.3, angle=5.0):
        """
        Draw a population member around this nominal specification.

        Each magnitude is the half width of a uniform perturbation; the draws are made in a fixed
        order so a seeded generator reproduces the population.

        :param numpy.random.Generator rng: the random number generator
        :param float length: the length perturbation in mm
        :param float radius: the radius perturbation in mm, shared by both ends
        :param float angle: the perturbation of each bend angle in degrees
        :return: the perturbed specification
        :rtype: CanalSpec
        """
        d_length, d_radius, d_first, d_second = rng.uniform(-1.0, 1.0, size=4)
        floor = self.noise_amplitude * np.sqrt(self.ellipticity) + 0.5
        return replace(
            self,
            length=self.length + length * d_length,
            entrance_radius=max(floor, self.entrance_radius + radius * d_radius),
            drum_radius=max(floor, self.drum_radius + radius * d_radius),
            bend_angles=(
                self.bend_angles[0] + angle * d_first,
                self.bend_angles[1] + angle * d_second,
            ),
        )


class CanalCenterline(NamedTuple):
    """The generator centerline sampled at uniform arc length, with rotation-minimizing frames."""

    arc_length: np.ndarray
    points: np.ndarray
    tangents: np.ndarray
    normals: np.ndarray
    binormals: np.ndarray


def _smoothstep(u):
    u = np.clip(u, -1.0, 1.0)
    return 0.5 + 0.75 * u - 0.25 * u ** 3


def _tangent(spec, s):
    """
    Evaluate the unit tangent at arc lengths s.

    The first bend rotates about the y axis and the second about the x axis, so mirroring both
    angles mirrors the centerline through the z axis.
    """
    width = spec.bend_width * spec.length
    first, second = np.radians(spec.bend_angles)
    alpha = first * _smoothstep((s - spec.bend_positions[0] * spec.length) / width)
    beta = second * _smoothstep((s - spec.bend_positions[1] * spec.length) / width)
    # R_x(beta) R_y(alpha) e_z
    return np.column_stack((
        np.sin(alpha),
        -np.sin(beta) * np.cos(alpha),
        np.cos(beta) * np.cos(alpha),
    ))


def rotation_minimizing_frames(points, tangents):
    """
    Propagate a normal along a polyline by double reflection.

    The first normal is the coordinate axis least aligned with the first tangent, made
    perpendicular to it.

    :param numpy.ndarray points: the (n, 3) polyline points
    :param numpy.ndarray tangents: the (n, 3) unit tangents at the points
    :return: the (n, 3) unit normals and binormals
    :rtype: tuple(numpy.ndarray, numpy.ndarray)
    """
    normals = np.empty_like(tangents)
    reference = np.eye(3)[int(np.argmin(np.abs(tangents[0])))]
    normal = reference - tangents[0].dot(reference) * tangents[0]
    normals[0] = normal / np.linalg.norm(normal)
    for i in range(len(points) - 1):
        v1 = points[i + 1] - points[i]
        c1 = v1.dot(v1)
        reflected_normal = normals[i] - (2.0 / c1) * v1.dot(normals[i]) * v1
        reflected_tangent = tangents[i] - (2.0 / c1) * v1.dot(tangents[i]) * v1
        v2 = tangents[i + 1] - reflected_tangent
        c2 = v2.dot(v2)
        if c2 > 1e-30:
            reflected_normal = reflected_normal - (2.0 / c2) * v2.dot(reflected_normal) * v2
        normals[i + 1] = reflected_normal / np.linalg.norm(reflected_normal)
    return normals, np.cross(tangents, normals)


def canal_centerline(spec, samples=None):
    """
    Sample the centerline of a synthetic canal.

    The polyline is integrated with the midpoint tangent of every step, so its arc length equals
    the specified length exactly.

    :param CanalSpec spec: the canal specification
    :param int samples: the number of intervals; defaults to one per half millimeter
    :return: the sampled centerline in mm
    :rtype: CanalCenterline
    """
    if samples is None:
        samples = max(8, int(np.ceil(spec.length / RING_SPACING)))
    step = spec.length / samples
    s = np.arange(samples + 1) * step
    midpoint_tangents = _tangent(spec, s[:-1] + 0.5 * step)
    points = np.vstack((np.zeros((1, 3)), np.cumsum(step * midpoint_tangents, axis=0)))
    tangents = _tangent(spec, s)

    normals, binormals = rotation_minimizing_frames(points, tangents)
    return CanalCenterline(s, points, tangents, normals, binormals)


def _section_radii(spec, s):
    radius = spec.entrance_radius + (spec.drum_radius - spec.entrance_radius) * s / spec.length
    root = np.sqrt(spec.ellipticity)
    return radius * root, radius / root


def _drum_weight(spec, s):
    # The slant ramps in over the last fifth of the canal
    return np.clip((s / spec.length - 0.8) / 0.2, 0.0, 1.0)


def synth_canal(spec, seed):
    """
    Generate a synthetic ear canal surface.

    The tube is swept along the centerline with elliptic sections whose size interpolates from
    the entrance to the drum radius. The drum end is closed with a (possibly slanted) fan and the
    entrance end is left open.

    :param CanalSpec spec: the canal specification
    :param int seed: the seed of the radial jitter
    :return: the open canal surface in mm
    :rtype: TriMesh
    :raises InvalidSpecError: if the canal specification is invalid
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    centerline = canal_centerline(spec)
    rings = len(centerline.arc_length)

    theta = 2.0 * np.pi * np.arange(RING_POINTS) / RING_POINTS
    semi_major, semi_minor = _section_radii(spec, centerline.arc_length)
    local_x = semi_major[:, None] * np.cos(theta)[None, :]
    local_y = semi_minor[:, None] * np.sin(theta)[None, :]
    jitter = rng.uniform(-spec.noise_amplitude, spec.noise_amplitude, size=(rings, RING_POINTS))
    radial = np.hypot(local_x, local_y)
    local_x = local_x + jitter * local_x / radial
    local_y = local_y + jitter * local_y / radial
    local_z = (
        np.tan(np.radians(spec.drum_slant))
        * local_x
        * _drum_weight(spec, centerline.arc_length)[:, None]
    )

    vertices = (
        centerline.points[:, None, :]
        + local_x[:, :, None] * centerline.normals[:, None, :]
        + local_y[:, :, None] * centerline.binormals[:, None, :]
        + local_z[:, :, None] * centerline.tangents[:, None, :]
    ).reshape(-1, 3)
    vertices = np.vstack((vertices, centerline.points[-1:]))

    ring = np.arange(rings - 1)[:, None] * RING_POINTS
    j = np.arange(RING_POINTS)[None, :]
    j_next = (j + 1) % RING_POINTS
    a = ring + j
    b = ring + j_next
    c = ring + RING_POINTS + j_next
    d = ring + RING_POINTS + j
    tube = np.concatenate((
        np.stack((a, b, c), axis=-1).reshape(-1, 3),
        np.stack((a, c, d), axis=-1).reshape(-1, 3),
    ))
    last = (rings - 1) * RING_POINTS
    drum_cap = np.column_stack((
        np.full(RING_POINTS, len(vertices) - 1),
        last + np.arange(RING_POINTS),
        last + (np.arange(RING_POINTS) + 1) % RING_POINTS,
    ))
    mesh = TriMesh(vertices, np.vstack((tube, drum_cap)))
    log.debug('Generated a synthetic canal %r from seed %d', mesh, seed)
    return mesh
