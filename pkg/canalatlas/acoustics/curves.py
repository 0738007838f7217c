# SPDX-License-Identifier: GPL-3.0-or-later
import csv
from dataclasses import dataclass
import logging

import numpy as np

from canalatlas.errors import GridMismatchError, InvalidRangeError, ValidationError


__all__ = [
    'AirProperties',
    'DrumImpedance',
    'FrequencyGrid',
    'ImpedanceCurve',
    'compare_curves',
    'freq_grid',
    'load_drum_impedance',
    'load_impedance_curve',
    'population_average',
    'save_impedance_curve',
]
log = logging.getLogger(__name__)

DRUM_KINDS = ('rigid', 'matched', 'table')
CURVE_HEADER = ['freq_hz', 're_z', 'im_z']
DRUM_HEADER = ['freq_hz', 're_zs', 'im_zs']


def _read_only(array, dtype):
    array = np.array(array, dtype=dtype).ravel()
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Ascending frequencies in Hz, spaced by a fraction of an octave."""

    frequencies: np.ndarray
    fraction: int = 24

    def __post_init__(self):
        frequencies = _read_only(self.frequencies, np.float64)
        if len(frequencies) < 1 or np.any(frequencies <= 0) or np.any(np.diff(frequencies) <= 0):
            raise ValidationError('The frequencies must be positive and strictly ascending')
        if int(self.fraction) != self.fraction or self.fraction < 1:
            raise ValidationError('The bands per octave must be a positive integer')
        object.__setattr__(self, 'frequencies', frequencies)
        object.__setattr__(self, 'fraction', int(self.fraction))

    def __len__(self):
        return len(self.frequencies)

    @property
    def f_min(self):
        return float(self.frequencies[0])

    @property
    def f_max(self):
        return float(self.frequencies[-1])

    @property
    def band_ratio(self):
        """The ratio between neighboring frequencies."""
        return 2.0 ** (1.0 / self.fraction)

    def matches(self, other):
        return np.array_equal(self.frequencies, other.frequencies)

    def contains(self, frequency):
        return self.f_min <= frequency <= self.f_max


def freq_grid(f_min, f_max, fraction):
    """
    Create a fractional-octave frequency grid.

    :param float f_min: the first frequency in Hz
    :param float f_max: the upper limit in Hz; the last frequency doesn't exceed it
    :param int fraction: the number of bands per octave
    :return: the frequencies f_min * 2 ** (k / fraction)
    :rtype: FrequencyGrid
    :raises InvalidRangeError: if the range is empty or the fraction isn't a positive integer
    """
    if not 0 < f_min < f_max:
        raise InvalidRangeError(f'The frequency range {f_min} to {f_max} Hz is empty or inverted')
    if int(fraction) != fraction or fraction < 1:
        raise InvalidRangeError(f'The bands per octave must be a positive integer, got {fraction}')
    # The tolerance keeps exact octave multiples, such as 100 to 200 Hz, on the grid
    count = int(np.floor(fraction * np.log2(f_max / f_min) + 1e-9)) + 1
    frequencies = f_min * 2.0 ** (np.arange(count) / fraction)
    return FrequencyGrid(np.minimum(frequencies, f_max), int(fraction))


@dataclass(frozen=True)
class AirProperties:
    """The density in kg/m³ and the speed of sound in m/s."""

    density: float = 1.21
    sound_speed: float = 343.0

    def __post_init__(self):
        if not (self.density > 0 and self.sound_speed > 0):
            raise ValidationError('The air density and sound speed must be positive')

    @classmethod
    def from_dict(cls, data):
        """
        Create the air properties from a JSON-compatible dictionary.

        :param dict data: any of the keys "density" and "sound_speed"
        :return: the air properties
        :rtype: AirProperties
        :raises ValidationError: if a key is unknown or a value is invalid
        """
        invalid_keys = set(data) - {'density', 'sound_speed'}
        if invalid_keys:
            raise ValidationError(
                'The following keys are not valid for the air: {}'.format(
                    ', '.join(sorted(invalid_keys)))
            )
        return cls(**data)

    @property
    def specific_impedance(self):
        """The plane wave impedance ρc in Pa·s/m."""
        return self.density * self.sound_speed

    def characteristic_impedance(self, area):
        """
        Get the plane wave acoustic impedance of a duct.

        :param float area: the cross-sectional area in m²
        :return: ρc / area in Pa·s/m³
        """
        return self.specific_impedance / area

    def wavenumber(self, frequencies):
        return 2.0 * np.pi * np.asarray(frequencies, dtype=np.float64) / self.sound_speed


@dataclass(frozen=True, eq=False)
class ImpedanceCurve:
    """Complex acoustic impedance, in Pa·s/m³, per frequency of a grid."""

    grid: FrequencyGrid
    values: np.ndarray

    def __post_init__(self):
        values = _read_only(self.values, np.complex128)
        if len(values) != len(self.grid):
            raise ValidationError(
                f'The curve has {len(values)} values for {len(self.grid)} frequencies'
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError('The impedance values must be finite')
        object.__setattr__(self, 'values', values)

    @property
    def frequencies(self):
        return self.grid.frequencies

    @property
    def magnitude(self):
        return np.abs(self.values)

    @property
    def level_db(self):
        """The magnitude in dB re 1 Pa·s/m³."""
        return 20.0 * np.log10(np.abs(self.values))

    @property
    def phase(self):
        return np.unwrap(np.angle(self.values))


@dataclass(frozen=True, eq=False)
class DrumImpedance:
    """
    The termination at the tympanic end of the canal.

    A rigid drum reflects fully, a matched drum has the specific impedance ρc of air and a table
    holds the specific impedance in Pa·s/m at ascending frequencies.
    """

    kind: str = 'rigid'
    frequencies: np.ndarray = None
    values: np.ndarray = None

    def __post_init__(self):
        if self.kind not in DRUM_KINDS:
            raise ValidationError(
                'The drum impedance type must be one of: {}'.format(', '.join(DRUM_KINDS))
            )
        if self.kind != 'table':
            return
        frequencies = _read_only(self.frequencies, np.float64)
        values = _read_only(self.values, np.complex128)
        if len(frequencies) < 1 or len(frequencies) != len(values):
            raise ValidationError('The drum impedance table needs one value per frequency')
        if np.any(frequencies <= 0) or np.any(np.diff(frequencies) <= 0):
            raise ValidationError('The drum impedance frequencies must be positive and ascending')
        if not np.all(np.isfinite(values)) or np.any(values == 0):
            raise ValidationError('The drum impedance values must be finite and non-zero')
        object.__setattr__(self, 'frequencies', frequencies)
        object.__setattr__(self, 'values', values)

    @classmethod
    def rigid(cls):
        return cls('rigid')

    @classmethod
    def matched(cls):
        return cls('matched')

    @classmethod
    def table(cls, frequencies, values):
        return cls('table', frequencies, values)

    def specific_admittance(self, frequencies, air):
        """
        Get the specific admittance, the reciprocal of the specific impedance, in m/(Pa·s).

        Table values are interpolated linearly in log-frequency and held constant beyond the
        first and last entries.

        :param frequencies: the frequencies in Hz
        :param AirProperties air: the air properties
        :return: the complex admittances
        :rtype: numpy.ndarray
        """
        frequencies = np.asarray(frequencies, dtype=np.float64)
        if self.kind == 'rigid':
            return np.zeros(frequencies.shape, dtype=np.complex128)
        if self.kind == 'matched':
            return np.full(frequencies.shape, 1.0 / air.specific_impedance, dtype=np.complex128)
        log_f = np.log(frequencies)
        table_log_f = np.log(self.frequencies)
        impedance = (
            np.interp(log_f, table_log_f, self.values.real)
            + 1j * np.interp(log_f, table_log_f, self.values.imag)
        )
        return 1.0 / impedance

    def acoustic_admittance(self, frequencies, area, air):
        """
        Get the acoustic admittance of the drum across a duct.

        :param frequencies: the frequencies in Hz
        :param float area: the duct area in m²
        :param AirProperties air: the air properties
        :return: the admittances in m³/(Pa·s); zero for a rigid drum
        :rtype: numpy.ndarray
        """
        return area * self.specific_admittance(frequencies, air)


def load_drum_impedance(path):
    """
    Load a drum impedance table from a CSV file with the header "freq_hz,re_zs,im_zs".

    :param str path: the CSV path
    :return: the table drum impedance
    :rtype: DrumImpedance
    :raises FileNotFoundError: if the file doesn't exist
    :raises ValidationError: if the header or a row is invalid
    """
    values = _read_csv(path, DRUM_HEADER)
    return DrumImpedance.table(values[:, 0], values[:, 1] + 1j * values[:, 2])


def _read_csv(path, header):
    with open(path, 'r', newline='') as csv_file:
        rows = [row for row in csv.reader(csv_file) if row]
    if not rows or rows[0] != header:
        raise ValidationError(
            'The file "{}" does not have the header "{}"'.format(path, ','.join(header))
        )
    try:
        values = np.array([[float(value) for value in row] for row in rows[1:]], dtype=np.float64)
    except ValueError:
        raise ValidationError(f'The file "{path}" has a non-numeric value')
    if values.ndim != 2 or values.shape[1] != len(header):
        raise ValidationError(f'Every row of "{path}" must have {len(header)} values')
    return values


def save_impedance_curve(curve, path):
    """
    Save an impedance curve as CSV with the header "freq_hz,re_z,im_z".

    The values are written with their shortest exact representation.

    :param ImpedanceCurve curve: the curve
    :param str path: the destination path
    """
    with open(path, 'w', newline='') as csv_file:
        writer = csv.writer(csv_file, lineterminator='\n')
        writer.writerow(CURVE_HEADER)
        for frequency, value in zip(curve.frequencies.tolist(), curve.values.tolist()):
            writer.writerow((repr(frequency), repr(value.real), repr(value.imag)))


def load_impedance_curve(path, fraction=None):
    """
    Load an impedance curve saved by save_impedance_curve.

    :param str path: the CSV path
    :param int fraction: the bands per octave; inferred from the first two frequencies if unset
    :return: the curve
    :rtype: ImpedanceCurve
    :raises FileNotFoundError: if the file doesn't exist
    :raises ValidationError: if the header or a row is invalid
    """
    values = _read_csv(path, CURVE_HEADER)
    frequencies = values[:, 0]
    if fraction is None:
        fraction = 1
        if len(frequencies) > 1:
            fraction = max(1, int(round(1.0 / np.log2(frequencies[1] / frequencies[0]))))
    return ImpedanceCurve(FrequencyGrid(frequencies, fraction), values[:, 1] + 1j * values[:, 2])


def _check_grids(curves):
    if not curves:
        raise ValidationError('At least one curve is required')
    grid = curves[0].grid
    for index, curve in enumerate(curves[1:], start=1):
        if not curve.grid.matches(grid):
            raise GridMismatchError(f'Curve {index} does not share the frequency grid of curve 0')
    return grid


def population_average(curves):
    """
    Average impedance curves frequency by frequency.

    The mean is the complex arithmetic mean. The median is taken independently of the magnitude
    in dB and of the unwrapped phase and then recombined; an even number of curves gives the
    midpoint of the two middle values.

    :param list curves: the curves, all on one grid
    :return: the median and the mean curve
    :rtype: tuple(ImpedanceCurve, ImpedanceCurve)
    :raises GridMismatchError: if the curves don't share a grid
    :raises ValidationError: if there are no curves
    """
    grid = _check_grids(curves)
    values = np.stack([curve.values for curve in curves])
    mean = values.mean(axis=0)
    level = np.median(20.0 * np.log10(np.abs(values)), axis=0)
    phase = np.median(np.unwrap(np.angle(values), axis=1), axis=0)
    median = 10.0 ** (level / 20.0) * np.exp(1j * phase)
    log.info('Averaged %d impedance curves over %d frequencies', len(curves), len(grid))
    return ImpedanceCurve(grid, median), ImpedanceCurve(grid, mean)


def compare_curves(first, second):
    """
    Compare the levels of two impedance curves.

    :param ImpedanceCurve first: the first curve
    :param ImpedanceCurve second: the second curve
    :return: the level difference first - second in dB per frequency and its RMS
    :rtype: tuple(numpy.ndarray, float)
    :raises GridMismatchError: if the curves don't share a grid
    """
    _check_grids([first, second])
    difference = first.level_db - second.level_db
    return difference, float(np.sqrt(np.mean(difference ** 2)))
