# SPDX-License-Identifier: GPL-3.0-or-later
import numpy as np
import pytest

from canalatlas.acoustics import (
    AirProperties, DrumImpedance, FrequencyGrid, ImpedanceCurve, compare_curves, freq_grid,
    load_drum_impedance, load_impedance_curve, population_average, save_impedance_curve,
)
from canalatlas.errors import GridMismatchError, InvalidRangeError, ValidationError


def test_freq_grid_of_the_measurement_sweep():
    grid = freq_grid(35, 25000, 24)
    assert len(grid) == 228
    np.testing.assert_allclose(grid.frequencies[:3], [35.00, 36.03, 37.08], atol=0.01)
    assert grid.f_max <= 25000
    assert grid.f_max == pytest.approx(24620, rel=1e-3)
    ratios = grid.frequencies[1:] / grid.frequencies[:-1]
    np.testing.assert_allclose(ratios, 2 ** (1 / 24), rtol=0, atol=1e-12)
    assert grid.fraction == 24


def test_freq_grid_of_one_octave():
    np.testing.assert_array_equal(freq_grid(100, 200, 1).frequencies, [100.0, 200.0])


@pytest.mark.parametrize('f_min, f_max, fraction', (
    (0, 100, 24),
    (200, 100, 24),
    (100, 100, 3),
    (35, 25000, 0),
    (35, 25000, 1.5),
))
def test_freq_grid_invalid(f_min, f_max, fraction):
    with pytest.raises(InvalidRangeError):
        freq_grid(f_min, f_max, fraction)


def test_air_properties():
    air = AirProperties()
    assert (air.density, air.sound_speed) == (1.21, 343.0)
    area = np.pi * 0.004 ** 2
    assert air.characteristic_impedance(area) == pytest.approx(8.26e6, rel=5e-3)
    assert AirProperties.from_dict({'sound_speed': 340.0}).sound_speed == 340.0
    with pytest.raises(ValidationError, match='not valid for the air: temperature'):
        AirProperties.from_dict({'temperature': 20})
    with pytest.raises(ValidationError, match='must be positive'):
        AirProperties(density=0.0)


def test_drum_admittance():
    air = AirProperties()
    frequencies = np.array([100.0, 1000.0])
    np.testing.assert_array_equal(DrumImpedance.rigid().specific_admittance(frequencies, air), 0)
    np.testing.assert_allclose(
        DrumImpedance.matched().specific_admittance(frequencies, air), 1 / air.specific_impedance,
    )
    area = 2e-5
    np.testing.assert_allclose(
        DrumImpedance.matched().acoustic_admittance(frequencies, area, air),
        area / air.specific_impedance,
    )


def test_drum_table_interpolates_in_log_frequency():
    drum = DrumImpedance.table([100.0, 10000.0], [1000 + 2000j, 3000 - 2000j])
    admittance = drum.specific_admittance(np.array([50.0, 1000.0, 20000.0]), AirProperties())
    np.testing.assert_allclose(1 / admittance, [1000 + 2000j, 2000 + 0j, 3000 - 2000j])


@pytest.mark.parametrize('kwargs, expected', (
    ({'kind': 'soft'}, 'must be one of: rigid, matched, table'),
    ({'kind': 'table', 'frequencies': [200, 100], 'values': [1, 1]}, 'ascending'),
    ({'kind': 'table', 'frequencies': [100], 'values': [1, 2]}, 'one value per frequency'),
    ({'kind': 'table', 'frequencies': [100], 'values': [0]}, 'non-zero'),
))
def test_drum_impedance_invalid(kwargs, expected):
    with pytest.raises(ValidationError, match=expected):
        DrumImpedance(**kwargs)


def test_load_drum_impedance(tmpdir):
    path = tmpdir.join('drum.csv')
    path.write('freq_hz,re_zs,im_zs\n100,1000.5,-20\n1000,2000,30\n')
    drum = load_drum_impedance(str(path))
    assert drum.kind == 'table'
    np.testing.assert_array_equal(drum.frequencies, [100.0, 1000.0])
    np.testing.assert_array_equal(drum.values, [1000.5 - 20j, 2000 + 30j])


def test_load_drum_impedance_errors(tmpdir):
    with pytest.raises(FileNotFoundError):
        load_drum_impedance(str(tmpdir.join('missing.csv')))
    path = tmpdir.join('drum.csv')
    path.write('freq_hz,re_z,im_z\n100,1,1\n')
    with pytest.raises(ValidationError, match='header "freq_hz,re_zs,im_zs"'):
        load_drum_impedance(str(path))
    path.write('freq_hz,re_zs,im_zs\n100,abc,1\n')
    with pytest.raises(ValidationError, match='non-numeric'):
        load_drum_impedance(str(path))


def test_impedance_curve_csv(tmpdir):
    grid = freq_grid(1000, 2000, 2)
    curve = ImpedanceCurve(grid, [1.5 + 2j, -0.25 + 1e7j, 3e-3 - 4j])
    path = str(tmpdir.join('z.csv'))
    save_impedance_curve(curve, path)
    lines = tmpdir.join('z.csv').read().splitlines()
    assert lines[0] == 'freq_hz,re_z,im_z'
    assert lines[1] == '1000.0,1.5,2.0'
    assert lines[2] == f'{1000 * 2 ** 0.5!r},-0.25,10000000.0'

    loaded = load_impedance_curve(path)
    assert loaded.grid.fraction == 2
    np.testing.assert_array_equal(loaded.frequencies, grid.frequencies)
    np.testing.assert_array_equal(loaded.values, curve.values)


def test_impedance_curve_invariants():
    grid = freq_grid(1000, 2000, 1)
    with pytest.raises(ValidationError, match='2 frequencies'):
        ImpedanceCurve(grid, [1.0])
    with pytest.raises(ValidationError, match='finite'):
        ImpedanceCurve(grid, [1.0, np.inf])
    with pytest.raises(ValidationError, match='ascending'):
        FrequencyGrid([2000.0, 1000.0])


def test_population_average_of_identical_curves():
    grid = freq_grid(100, 1000, 3)
    values = np.exp(1j * np.linspace(0, 6, len(grid))) * np.linspace(1e6, 3e6, len(grid))
    curve = ImpedanceCurve(grid, values)
    median, mean = population_average([curve] * 4)
    np.testing.assert_allclose(median.values, values, rtol=1e-12)
    np.testing.assert_allclose(mean.values, values, rtol=1e-12)


def test_population_average_median_magnitude():
    grid = FrequencyGrid([1000.0], 24)
    curves = [ImpedanceCurve(grid, [m * 1e6j]) for m in (10, 1, 2)]
    median, mean = population_average(curves)
    assert abs(median.values[0]) == pytest.approx(2e6, rel=1e-12)
    assert np.angle(median.values[0]) == pytest.approx(np.pi / 2)
    assert mean.values[0] == pytest.approx(13e6 / 3 * 1j)


def test_population_average_of_two_curves_is_the_db_midpoint():
    grid = FrequencyGrid([1000.0, 2000.0], 1)
    first = ImpedanceCurve(grid, [1e6, 4e6])
    second = ImpedanceCurve(grid, [4e6, 9e6])
    median, _ = population_average([first, second])
    np.testing.assert_allclose(np.abs(median.values), [2e6, 6e6], rtol=1e-12)


def test_population_average_grid_mismatch():
    first = ImpedanceCurve(freq_grid(100, 1000, 3), np.ones(10))
    second = ImpedanceCurve(freq_grid(100, 1000, 6), np.ones(20))
    with pytest.raises(GridMismatchError, match='Curve 1'):
        population_average([first, second])
    with pytest.raises(ValidationError, match='At least one curve'):
        population_average([])


def test_compare_curves():
    grid = freq_grid(100, 1000, 3)
    first = ImpedanceCurve(grid, np.full(len(grid), 2e6))
    second = ImpedanceCurve(grid, np.full(len(grid), 1e6j))
    difference, rms = compare_curves(first, second)
    np.testing.assert_allclose(difference, 20 * np.log10(2))
    assert rms == pytest.approx(20 * np.log10(2))
