# SPDX-License-Identifier: GPL-3.0-or-later
from unittest import mock

import numpy as np
import pytest

from canalatlas.acoustics import (
    AirProperties, DrumImpedance, FrequencyGrid, HelmholtzSystem, analytic_tube_impedance,
    fem_resonances, find_half_wave_resonance, freq_grid, solve_input_impedance_fem,
    solve_pressure_field, sweep_tet_mesh, wall_spl,
)
from canalatlas.errors import MeshTooCoarseWarning, SingularSystemError
from canalatlas.geometry import CanalSpec
from canalatlas.mapping import serial_map


AIR = AirProperties()
RADIUS = 0.004
LENGTH = 0.01825
HALF_WAVE = AIR.sound_speed / (2 * LENGTH)
CYLINDER = CanalSpec(
    length=LENGTH * 1e3,
    entrance_radius=RADIUS * 1e3,
    drum_radius=RADIUS * 1e3,
    bend_angles=(0.0, 0.0),
    ellipticity=1.0,
)


@pytest.fixture(scope='module')
def cylinder():
    return sweep_tet_mesh(CYLINDER, 2e-3)


def test_system_matrix_is_complex_symmetric(cylinder):
    matrix = HelmholtzSystem(cylinder).system_matrix(5000.0, AIR, DrumImpedance.matched())
    scale = abs(matrix).max()
    assert abs(matrix - matrix.T).max() <= 1e-12 * scale
    assert abs(matrix - matrix.conj().T).max() > 1e-6 * scale


def test_rigid_cylinder_matches_the_transmission_line(cylinder):
    grid = freq_grid(100, 10000, 12)
    curve = solve_input_impedance_fem(cylinder, grid, AIR, DrumImpedance.rigid())
    expected = analytic_tube_impedance(LENGTH, np.pi * RADIUS ** 2, AIR, DrumImpedance.rigid(),
                                       grid)
    frequencies = grid.frequencies
    away = (np.abs(frequencies / HALF_WAVE - 1) > 0.15) & (
        np.abs(frequencies / (HALF_WAVE / 2) - 1) > 0.15
    )
    np.testing.assert_allclose(curve.magnitude[away], expected.magnitude[away], rtol=0.05)


def test_rigid_cylinder_half_wave_resonance(cylinder):
    curve = solve_input_impedance_fem(cylinder, freq_grid(4000, 16000, 24), AIR)
    resonance = find_half_wave_resonance(curve, (5000, 15000))
    assert resonance == pytest.approx(HALF_WAVE, rel=0.02)


def test_matched_cylinder_is_reflection_free(cylinder):
    grid = freq_grid(500, 10000, 6)
    curve = solve_input_impedance_fem(cylinder, grid, AIR, DrumImpedance.matched())
    characteristic = AIR.characteristic_impedance(np.pi * RADIUS ** 2)
    assert characteristic == pytest.approx(8.26e6, rel=5e-3)
    np.testing.assert_allclose(curve.magnitude, characteristic, rtol=0.1)


def test_solve_input_impedance_fem_uses_the_mapper(cylinder):
    mapper = mock.Mock(side_effect=serial_map)
    grid = freq_grid(1000, 2000, 24)
    curve = solve_input_impedance_fem(cylinder, grid, AIR, mapper=mapper, band_size=10)
    mapper.assert_called_once()
    bands = mapper.call_args[0][1]
    assert [len(args[1]) for args in bands] == [9, 8, 8]
    assert len(curve.values) == 25


def test_solve_input_impedance_fem_warns_when_coarse(cylinder):
    with pytest.warns(MeshTooCoarseWarning, match='a sixth of the wavelength at 40000 Hz'):
        solve_input_impedance_fem(cylinder, FrequencyGrid([30000.0, 40000.0], 1), AIR)


@mock.patch('canalatlas.acoustics.fem.sparse_linalg.spsolve')
def test_solve_input_impedance_fem_singular(mock_spsolve, cylinder):
    mock_spsolve.return_value = np.full(len(cylinder.vertices), np.nan)
    with pytest.raises(SingularSystemError, match='1000 Hz') as error:
        solve_input_impedance_fem(cylinder, FrequencyGrid([1000.0]), AIR)
    assert error.value.frequency == 1000.0


def test_low_frequency_pressure_is_uniform(cylinder):
    pressure = solve_pressure_field(cylinder, 100.0, AIR)
    magnitude = np.abs(pressure)
    assert magnitude.std() / magnitude.mean() < 0.01


def test_wall_spl(cylinder):
    pressure = np.full(len(cylinder.vertices), 20e-6 * np.sqrt(2) * 10.0, dtype=complex)
    levels = wall_spl(cylinder, pressure)
    np.testing.assert_allclose(levels.spl_db, 20.0)
    radii = np.hypot(levels.points[:, 0], levels.points[:, 1])
    np.testing.assert_allclose(radii, RADIUS, rtol=1e-6)
    assert len(levels.vertex_indices) == len(levels.points)


def test_fem_resonances_of_a_closed_cylinder(cylinder):
    resonances = fem_resonances(cylinder, AIR, count=2)
    assert len(resonances) == 2
    assert resonances[0] == pytest.approx(HALF_WAVE, rel=0.02)
    assert resonances[1] == pytest.approx(2 * HALF_WAVE, rel=0.05)


def test_fem_resonances_converge_at_second_order():
    errors = [
        abs(fem_resonances(sweep_tet_mesh(CYLINDER, h), AIR, count=1)[0] - HALF_WAVE)
        for h in (3e-3, 1.5e-3)
    ]
    assert errors[0] / errors[1] >= 3
