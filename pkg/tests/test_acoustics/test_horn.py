# SPDX-License-Identifier: GPL-3.0-or-later
from unittest import mock

import numpy as np
import pytest

from canalatlas.acoustics import (
    AirProperties, DrumImpedance, FrequencyGrid, ImpedanceCurve, align_to_reference_plane,
    analytic_tube_impedance, find_half_wave_resonance, freq_grid, horn, horn_input_impedance,
    horn_propagate, propagation_matrices, segment_matrices,
)
from canalatlas.errors import InvalidRangeError, NoResonanceError, OutOfRangeError
from canalatlas.geometry import AreaFunction


AIR = AirProperties()
RADIUS = 0.004
AREA = np.pi * RADIUS ** 2
HALF_WAVE_18 = 343.0 / (2 * 0.01825)


@pytest.fixture(scope='module')
def grid():
    return freq_grid(35, 25000, 24)


@pytest.fixture(scope='module')
def cone():
    """A 28 mm duct narrowing from a radius of 4 mm to 3 mm with a ripple."""
    s = np.linspace(0.0, 0.028, 60)
    radius = 0.004 - s / 0.028 * 0.001 + 0.0002 * np.sin(s / 0.028 * 6 * np.pi)
    return AreaFunction(s, np.pi * radius ** 2)


def _within_one_band(frequency, expected):
    return abs(np.log2(frequency / expected)) <= 1 / 24


def _rigid_tube(length, grid):
    return analytic_tube_impedance(length, AREA, AIR, DrumImpedance.rigid(), grid)


def test_analytic_quarter_wave_is_a_zero():
    length = 0.02
    grid = FrequencyGrid([343.0 / (4 * length)])
    curve = _rigid_tube(length, grid)
    assert abs(curve.values[0]) < 1e-9 * AIR.characteristic_impedance(AREA)


def test_analytic_matched_tube(grid):
    curve = analytic_tube_impedance(0.02, AREA, AIR, DrumImpedance.matched(), grid)
    np.testing.assert_allclose(curve.values, AIR.characteristic_impedance(AREA), rtol=1e-12)


def test_analytic_rigid_tube(grid):
    curve = _rigid_tube(0.01825, grid)
    characteristic = AIR.characteristic_impedance(AREA)
    assert characteristic == pytest.approx(8.26e6, rel=5e-3)
    # Lossless, so the resistance vanishes
    assert np.abs(curve.values.real).max() <= 1e-9 * characteristic

    window = (grid.frequencies >= 5000) & (grid.frequencies <= 15000)
    candidates = np.flatnonzero(window)
    strongest = candidates[np.argmax(curve.magnitude[candidates])]
    nearest = np.argmin(np.abs(grid.frequencies - HALF_WAVE_18))
    assert strongest == nearest


@pytest.mark.parametrize('length, expected', ((0.01825, HALF_WAVE_18), (0.02, 8575.0)))
def test_find_half_wave_resonance(grid, length, expected):
    resonance = find_half_wave_resonance(_rigid_tube(length, grid), (5000, 15000))
    assert _within_one_band(resonance, expected)


def test_find_half_wave_resonance_of_a_monotone_curve(grid):
    curve = ImpedanceCurve(grid, grid.frequencies * 1j)
    with pytest.raises(NoResonanceError, match='between 5000 and 15000 Hz'):
        find_half_wave_resonance(curve, (5000, 15000))


@pytest.mark.parametrize('window, error', (
    ((10, 15000), OutOfRangeError),
    ((5000, 30000), OutOfRangeError),
    ((9000, 8000), InvalidRangeError),
))
def test_find_half_wave_resonance_invalid_window(grid, window, error):
    with pytest.raises(error):
        find_half_wave_resonance(_rigid_tube(0.02, grid), window)


def test_segment_matrices_are_lossless(grid):
    wavenumbers = AIR.wavenumber(grid.frequencies)
    matrices = segment_matrices(wavenumbers, 0.0013, 3e-5, AIR)
    np.testing.assert_allclose(np.linalg.det(matrices), 1.0, rtol=0, atol=1e-12)


def test_propagation_is_reciprocal(cone, grid):
    forward = propagation_matrices(cone, 0.002, 0.025, grid.frequencies, AIR)
    backward = propagation_matrices(cone, 0.025, 0.002, grid.frequencies, AIR)
    identity = np.broadcast_to(np.eye(2), forward.shape)
    np.testing.assert_allclose(np.matmul(forward, backward), identity, rtol=0, atol=1e-10)


def test_horn_propagate_zero_distance(cone, grid):
    curve = _rigid_tube(0.02, grid)
    assert horn_propagate(curve, cone, 0.01, 0.01, AIR) is curve


def test_horn_propagate_round_trip(cone, grid):
    curve = horn_input_impedance(cone, DrumImpedance.matched(), grid, AIR)
    at_drum = horn_propagate(curve, cone, 0.0, cone.length, AIR)
    back = horn_propagate(at_drum, cone, cone.length, 0.0, AIR)
    np.testing.assert_allclose(back.values, curve.values, rtol=1e-9)


def test_horn_input_impedance_of_a_uniform_tube(grid):
    length = 0.01825
    uniform = AreaFunction.uniform(length, AREA)
    curve = horn_input_impedance(uniform, DrumImpedance.rigid(), grid, AIR)
    expected = _rigid_tube(length, grid)
    off_resonance = np.abs(np.sin(AIR.wavenumber(grid.frequencies) * length)) > 0.1
    np.testing.assert_allclose(
        curve.values[off_resonance], expected.values[off_resonance], rtol=5e-3,
    )


def test_horn_propagate_along_a_uniform_tube(grid):
    length, shift = 0.02, 0.005
    uniform = AreaFunction.uniform(length, AREA)
    moved = horn_propagate(_rigid_tube(length, grid), uniform, 0.0, shift, AIR)
    expected = _rigid_tube(length - shift, grid)
    wavenumbers = AIR.wavenumber(grid.frequencies)
    off_resonance = (np.abs(np.sin(wavenumbers * length)) > 0.1) & (
        np.abs(np.sin(wavenumbers * (length - shift))) > 0.1
    )
    np.testing.assert_allclose(
        moved.values[off_resonance], expected.values[off_resonance], rtol=1e-6,
    )


def test_horn_propagate_out_of_range(cone, grid):
    with pytest.raises(OutOfRangeError, match='outside the area function'):
        horn_propagate(_rigid_tube(0.02, grid), cone, 0.0, 0.03, AIR)


@pytest.mark.parametrize('length', (0.016, 0.01825, 0.02))
def test_align_to_reference_plane(grid, length):
    curve = _rigid_tube(length, grid)
    aligned = align_to_reference_plane(curve, AreaFunction.uniform(length, AREA), 9400, AIR)
    assert _within_one_band(find_half_wave_resonance(aligned, (5000, 15000)), HALF_WAVE_18)


@mock.patch('canalatlas.acoustics.horn.horn_propagate', wraps=horn.horn_propagate)
def test_align_an_aligned_curve(mock_propagate, grid):
    curve = _rigid_tube(0.01825, grid)
    align_to_reference_plane(curve, AreaFunction.uniform(0.01825, AREA), HALF_WAVE_18, AIR)
    _, _, from_s, to_s = mock_propagate.call_args[0][:4]
    assert abs(to_s - from_s) < 5e-5


def test_align_to_a_target_outside_the_grid(grid):
    curve = _rigid_tube(0.02, grid)
    with pytest.raises(OutOfRangeError, match='30000 Hz is outside the grid'):
        align_to_reference_plane(curve, AreaFunction.uniform(0.02, AREA), 30000, AIR)


@pytest.mark.parametrize('side_effect, error, expected', (
    ([HALF_WAVE_18, 4700.0], OutOfRangeError, '4700 Hz is more than one band'),
    ([HALF_WAVE_18, NoResonanceError('No impedance maximum')], NoResonanceError, 'maximum'),
))
@mock.patch('canalatlas.acoustics.horn.find_half_wave_resonance')
def test_align_rejects_a_missed_resonance(mock_find, side_effect, error, expected, grid):
    mock_find.side_effect = side_effect
    curve = _rigid_tube(0.01825, grid)
    with pytest.raises(error, match=expected):
        align_to_reference_plane(curve, AreaFunction.uniform(0.01825, AREA), HALF_WAVE_18, AIR)
    assert mock_find.call_count == 2


def test_align_beyond_the_duct(grid):
    curve = _rigid_tube(0.02, grid)
    with pytest.raises(OutOfRangeError, match='into a duct'):
        align_to_reference_plane(curve, AreaFunction.uniform(0.001, AREA), 9400, AIR)
