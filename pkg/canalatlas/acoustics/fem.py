# SPDX-License-Identifier: GPL-3.0-or-later
import logging
from typing import NamedTuple
import warnings

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as sparse_linalg

from canalatlas.acoustics.curves import AirProperties, DrumImpedance, ImpedanceCurve
from canalatlas.acoustics.tetmesh import max_element_size
from canalatlas.errors import MeshTooCoarseWarning, SingularSystemError, ValidationError
from canalatlas.mapping import serial_map


__all__ = [
    'HelmholtzSystem',
    'WallLevels',
    'fem_resonances',
    'impedance_band',
    'solve_input_impedance_fem',
    'solve_pressure_field',
    'wall_spl',
]
log = logging.getLogger(__name__)

DEFAULT_BAND_SIZE = 16
REFERENCE_PRESSURE = 20e-6
# The shift of the eigenvalue search in 1/m², below the zero eigenvalue of the constant mode
EIGEN_SHIFT = -1.0


def _face_areas(vertices, faces):
    corners = vertices[faces]
    normals = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    return 0.5 * np.linalg.norm(normals, axis=1)


def _assemble(cells, local, size):
    width = cells.shape[1]
    rows = np.repeat(cells[:, :, None], width, axis=2)
    columns = np.repeat(cells[:, None, :], width, axis=1)
    return sparse.coo_matrix(
        (local.ravel(), (rows.ravel(), columns.ravel())), shape=(size, size),
    ).tocsr()


class HelmholtzSystem:
    """
    The linear tetrahedral discretization of the Helmholtz equation in a canal.

    The walls are sound hard. The drum adds a Robin term and the entrance is driven as a piston
    with a uniform normal velocity.
    """

    def __init__(self, mesh):
        """
        Assemble the frequency independent matrices.

        :param TetMesh mesh: the mesh in m
        """
        self.mesh = mesh
        size = len(mesh.vertices)
        corners = mesh.vertices[mesh.tets]
        edges = corners[:, 1:] - corners[:, :1]
        volumes = np.abs(np.linalg.det(edges)) / 6.0
        # The gradient of barycentric coordinate k + 1 is column k of the inverse edge matrix
        gradients = np.empty((len(mesh.tets), 4, 3))
        gradients[:, 1:] = np.linalg.inv(edges).transpose(0, 2, 1)
        gradients[:, 0] = -gradients[:, 1:].sum(axis=1)

        stiffness = volumes[:, None, None] * np.matmul(gradients, gradients.transpose(0, 2, 1))
        mass = volumes[:, None, None] / 20.0 * (np.ones((4, 4)) + np.eye(4))
        self.stiffness = _assemble(mesh.tets, stiffness, size)
        self.mass = _assemble(mesh.tets, mass, size)

        drum = mesh.faces_tagged('drum')
        drum_areas = _face_areas(mesh.vertices, drum)
        self.drum_mass = _assemble(
            drum, drum_areas[:, None, None] / 12.0 * (np.ones((3, 3)) + np.eye(3)), size,
        )

        entrance = mesh.faces_tagged('entrance')
        entrance_areas = _face_areas(mesh.vertices, entrance)
        self.entrance_area = float(entrance_areas.sum())
        self.entrance_load = np.bincount(
            entrance.ravel(), weights=np.repeat(entrance_areas / 3.0, 3), minlength=size,
        )
        log.debug('Assembled the Helmholtz system of %r', mesh)

    def system_matrix(self, frequency, air, drum):
        """
        Build the complex symmetric system matrix K - k² M + (i ω ρ / z_drum) B at a frequency.

        :param float frequency: the frequency in Hz
        :param AirProperties air: the air properties
        :param DrumImpedance drum: the drum termination
        :return: the sparse matrix
        :rtype: scipy.sparse.csc_matrix
        """
        omega = 2.0 * np.pi * frequency
        wavenumber = omega / air.sound_speed
        admittance = complex(drum.specific_admittance(np.array([frequency]), air)[0])
        robin = 1j * omega * air.density * admittance
        matrix = self.stiffness - wavenumber ** 2 * self.mass
        if robin != 0:
            matrix = matrix + robin * self.drum_mass
        return sparse.csc_matrix(matrix, dtype=np.complex128)

    def solve(self, frequency, air, drum, velocity=1.0):
        """
        Solve for the nodal pressure at a frequency.

        :param float frequency: the frequency in Hz
        :param AirProperties air: the air properties
        :param DrumImpedance drum: the drum termination
        :param float velocity: the piston velocity into the canal in m/s
        :return: the complex pressure per vertex in Pa
        :rtype: numpy.ndarray
        :raises SingularSystemError: if the system can't be solved
        """
        omega = 2.0 * np.pi * frequency
        load = 1j * omega * air.density * velocity * self.entrance_load
        with warnings.catch_warnings():
            warnings.simplefilter('error', sparse_linalg.MatrixRankWarning)
            try:
                pressure = sparse_linalg.spsolve(self.system_matrix(frequency, air, drum), load)
            except (sparse_linalg.MatrixRankWarning, RuntimeError):
                log.exception('The FEM solve failed at %g Hz', frequency)
                raise SingularSystemError(frequency)
        if not np.all(np.isfinite(pressure)):
            raise SingularSystemError(frequency)
        return pressure

    def input_impedance(self, frequency, air, drum):
        """
        Compute the mean entrance pressure over the piston volume velocity.

        :return: the acoustic input impedance in Pa·s/m³
        :rtype: complex
        """
        pressure = self.solve(frequency, air, drum)
        mean_pressure = self.entrance_load.dot(pressure) / self.entrance_area
        return complex(mean_pressure / self.entrance_area)


def impedance_band(mesh, frequencies, air, drum):
    """
    Compute the FEM input impedance at a band of frequencies.

    This is the unit of work that solve_input_impedance_fem distributes.

    :param TetMesh mesh: the mesh in m
    :param frequencies: the frequencies in Hz
    :param AirProperties air: the air properties
    :param DrumImpedance drum: the drum termination
    :return: the complex impedances
    :rtype: numpy.ndarray
    """
    system = HelmholtzSystem(mesh)
    values = np.empty(len(frequencies), dtype=np.complex128)
    for index, frequency in enumerate(frequencies):
        values[index] = system.input_impedance(float(frequency), air, drum)
        log.debug('frequency_hz=%.6g re_z=%.6g im_z=%.6g', frequency, values[index].real,
                  values[index].imag)
    return values


def _check_resolution(mesh, frequency, air):
    limit = max_element_size(frequency, air)
    longest = mesh.max_edge_length
    if longest > limit:
        warnings.warn(
            f'The longest edge {longest * 1e3:.3g} mm exceeds {limit * 1e3:.3g} mm, a sixth of '
            f'the wavelength at {frequency:g} Hz',
            MeshTooCoarseWarning,
        )


def solve_input_impedance_fem(mesh, grid, air=None, drum=None, mapper=None,
                              band_size=DEFAULT_BAND_SIZE):
    """
    Compute the input impedance of a canal with the finite element method.

    The frequencies are split into bands that the mapper may solve concurrently; the values are
    gathered in grid order.

    :param TetMesh mesh: the mesh in m
    :param FrequencyGrid grid: the frequencies
    :param AirProperties air: the air properties
    :param DrumImpedance drum: the drum termination; rigid by default
    :param callable mapper: maps a function over argument tuples, returning results in order
    :param int band_size: the number of frequencies per band
    :return: the input impedance in Pa·s/m³
    :rtype: ImpedanceCurve
    :raises SingularSystemError: if the system is singular at a frequency
    """
    air = air or AirProperties()
    drum = drum or DrumImpedance.rigid()
    mapper = mapper or serial_map
    if band_size < 1:
        raise ValidationError('The band size must be positive')
    _check_resolution(mesh, grid.f_max, air)
    bands = np.array_split(grid.frequencies, int(np.ceil(len(grid) / band_size)))
    log.info('Solving %r at %d frequencies in %d bands', mesh, len(grid), len(bands))
    values = mapper(impedance_band, [(mesh, band, air, drum) for band in bands])
    return ImpedanceCurve(grid, np.concatenate(values))


def solve_pressure_field(mesh, frequency, air=None, drum=None):
    """
    Compute the pressure in the canal for a piston velocity of 1 m/s.

    :param TetMesh mesh: the mesh in m
    :param float frequency: the frequency in Hz
    :param AirProperties air: the air properties
    :param DrumImpedance drum: the drum termination; rigid by default
    :return: the complex pressure per vertex in Pa
    :rtype: numpy.ndarray
    :raises SingularSystemError: if the system is singular at the frequency
    """
    air = air or AirProperties()
    drum = drum or DrumImpedance.rigid()
    _check_resolution(mesh, frequency, air)
    return HelmholtzSystem(mesh).solve(frequency, air, drum)


class WallLevels(NamedTuple):
    """The sound pressure level on the wall vertices."""

    vertex_indices: np.ndarray
    points: np.ndarray
    spl_db: np.ndarray


def wall_spl(mesh, pressure):
    """
    Get the sound pressure level on the canal wall.

    The complex pressures are amplitudes, so the RMS pressure is |p| / sqrt(2).

    :param TetMesh mesh: the mesh in m
    :param numpy.ndarray pressure: the complex pressure per vertex in Pa
    :return: the wall vertices and their level in dB re 20 µPa
    :rtype: WallLevels
    """
    pressure = np.asarray(pressure)
    if len(pressure) != len(mesh.vertices):
        raise ValidationError(
            f'{len(pressure)} pressures were given for {len(mesh.vertices)} vertices'
        )
    indices = np.unique(mesh.faces_tagged('wall'))
    rms = np.abs(pressure[indices]) / np.sqrt(2.0)
    with np.errstate(divide='ignore'):
        levels = 20.0 * np.log10(rms / REFERENCE_PRESSURE)
    return WallLevels(indices, mesh.vertices[indices], levels)


def fem_resonances(mesh, air=None, count=3):
    """
    Find the lowest resonances of the canal with every boundary sound hard.

    The generalized eigenproblem K x = k² M x is solved in shift-invert mode; the constant mode
    at zero frequency is dropped.

    :param TetMesh mesh: the mesh in m
    :param AirProperties air: the air properties
    :param int count: the number of resonances
    :return: the resonance frequencies in Hz, ascending
    :rtype: numpy.ndarray
    """
    air = air or AirProperties()
    if not 1 <= count < len(mesh.vertices) - 1:
        raise ValidationError(f'The resonance count must be between 1 and {len(mesh.vertices) - 2}')
    system = HelmholtzSystem(mesh)
    eigenvalues = sparse_linalg.eigsh(
        system.stiffness.tocsc(), k=count + 1, M=system.mass.tocsc(), sigma=EIGEN_SHIFT,
        which='LM', return_eigenvectors=False,
    )
    eigenvalues = np.sort(eigenvalues)[1:]
    frequencies = air.sound_speed * np.sqrt(np.maximum(eigenvalues, 0.0)) / (2.0 * np.pi)
    log.info('resonances_hz=%s', ','.join(f'{f:.6g}' for f in frequencies))
    return frequencies
