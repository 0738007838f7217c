# SPDX-License-Identifier: GPL-3.0-or-later
import logging

import numpy as np

from canalatlas.acoustics.curves import AirProperties, ImpedanceCurve
from canalatlas.errors import InvalidRangeError, NoResonanceError, OutOfRangeError, ValidationError


__all__ = [
    'DEFAULT_SEGMENTS',
    'align_to_reference_plane',
    'analytic_tube_impedance',
    'find_half_wave_resonance',
    'horn_input_impedance',
    'horn_propagate',
    'propagation_matrices',
    'segment_matrices',
]
log = logging.getLogger(__name__)

DEFAULT_SEGMENTS = 100
# Arc lengths this close outside the area function, in m, count as its ends
ARC_TOLERANCE = 1e-12


def analytic_tube_impedance(length, area, air, termination, grid):
    """
    Compute the input impedance of a lossless uniform tube.

    The transmission line formula is evaluated in its admittance form,
    Z_c (cos kL + i Z_c Y_t sin kL) / (Z_c Y_t cos kL + i sin kL), so a rigid termination
    (Y_t = 0) gives -i Z_c cot kL without an infinite intermediate.

    :param float length: the tube length in m
    :param float area: the cross-sectional area in m²
    :param AirProperties air: the air properties
    :param DrumImpedance termination: the termination at the far end
    :param FrequencyGrid grid: the frequencies
    :return: the input impedance in Pa·s/m³
    :rtype: ImpedanceCurve
    :raises ValidationError: if the length or the area isn't positive
    """
    if not (length > 0 and area > 0):
        raise ValidationError('The tube length and area must be positive')
    characteristic = air.characteristic_impedance(area)
    phase = air.wavenumber(grid.frequencies) * length
    normalized = characteristic * termination.acoustic_admittance(grid.frequencies, area, air)
    cos, sin = np.cos(phase), np.sin(phase)
    values = characteristic * (cos + 1j * normalized * sin) / (normalized * cos + 1j * sin)
    return ImpedanceCurve(grid, values)


def segment_matrices(wavenumbers, length, area, air):
    """
    Build the transfer matrices of a lossless cylindrical segment.

    The matrix maps pressure and volume velocity at the far end of the segment onto the near
    end; a negative length gives the inverse matrix.

    :param numpy.ndarray wavenumbers: the wavenumbers in 1/m
    :param float length: the signed segment length in m
    :param float area: the segment area in m²
    :param AirProperties air: the air properties
    :return: the (frequencies, 2, 2) complex matrices, each with determinant 1
    :rtype: numpy.ndarray
    """
    characteristic = air.characteristic_impedance(area)
    phase = np.asarray(wavenumbers) * length
    cos, sin = np.cos(phase), np.sin(phase)
    matrices = np.empty((len(phase), 2, 2), dtype=np.complex128)
    matrices[:, 0, 0] = cos
    matrices[:, 0, 1] = 1j * characteristic * sin
    matrices[:, 1, 0] = 1j * sin / characteristic
    matrices[:, 1, 1] = cos
    return matrices


def _check_arc(area_fn, s):
    if not -ARC_TOLERANCE <= s <= area_fn.length + ARC_TOLERANCE:
        raise OutOfRangeError(
            f'The plane at {s * 1e3:.4g} mm is outside the area function of length '
            f'{area_fn.length * 1e3:.4g} mm'
        )


def propagation_matrices(area_fn, from_s, to_s, frequencies, air, segments=DEFAULT_SEGMENTS):
    """
    Chain the segment matrices that carry the acoustic state from one plane to another.

    The span between the planes is cut into equal segments, each with the area at its middle.
    Both directions use the same cut, so the matrices of opposite directions are inverses.

    :param AreaFunction area_fn: the duct geometry
    :param float from_s: the arc length of the plane where the state is known, in m
    :param float to_s: the arc length of the target plane, in m
    :param numpy.ndarray frequencies: the frequencies in Hz
    :param AirProperties air: the air properties
    :param int segments: the number of segments
    :return: the (frequencies, 2, 2) matrices P with (p, U) at to_s = P (p, U) at from_s, where
        the volume velocity U flows towards increasing arc length
    :rtype: numpy.ndarray
    :raises OutOfRangeError: if a plane is outside the area function
    """
    if segments < 1:
        raise ValidationError('At least one segment is required')
    _check_arc(area_fn, from_s)
    _check_arc(area_fn, to_s)
    wavenumbers = air.wavenumber(frequencies)
    product = np.broadcast_to(np.eye(2, dtype=np.complex128), (len(wavenumbers), 2, 2)).copy()
    if from_s == to_s:
        return product

    low, high = min(from_s, to_s), max(from_s, to_s)
    edges = np.linspace(low, high, segments + 1)
    lengths = np.diff(edges)
    areas = area_fn.area_at(0.5 * (edges[:-1] + edges[1:]))
    order = range(segments) if to_s > from_s else reversed(range(segments))
    # Moving towards the drum inverts the segment matrix
    sign = -1.0 if to_s > from_s else 1.0
    for index in order:
        product = np.matmul(
            segment_matrices(wavenumbers, sign * lengths[index], areas[index], air), product,
        )
    return product


def horn_propagate(curve, area_fn, from_s, to_s, air=None, segments=DEFAULT_SEGMENTS):
    """
    Move an impedance curve from one plane of a duct to another.

    The curve holds the impedance looking towards the drum, in the direction of increasing arc
    length. Propagating zero distance returns the curve unchanged.

    :param ImpedanceCurve curve: the impedance at from_s
    :param AreaFunction area_fn: the duct geometry
    :param float from_s: the arc length of the curve's plane, in m
    :param float to_s: the arc length of the target plane, in m
    :param AirProperties air: the air properties
    :param int segments: the number of cylindrical segments
    :return: the impedance at to_s
    :rtype: ImpedanceCurve
    :raises OutOfRangeError: if a plane is outside the area function
    """
    air = air or AirProperties()
    if from_s == to_s:
        _check_arc(area_fn, from_s)
        return curve
    matrices = propagation_matrices(area_fn, from_s, to_s, curve.frequencies, air, segments)
    z = curve.values
    values = (matrices[:, 0, 0] * z + matrices[:, 0, 1]) / (
        matrices[:, 1, 0] * z + matrices[:, 1, 1]
    )
    log.debug('Propagated %d frequencies from %.4g mm to %.4g mm', len(z), from_s * 1e3,
              to_s * 1e3)
    return ImpedanceCurve(curve.grid, values)


def horn_input_impedance(area_fn, drum, grid, air=None, segments=DEFAULT_SEGMENTS):
    """
    Compute the impedance at the entrance of a duct terminated by the drum.

    The drum end starts from the state (p, U) = (1, Y_t), which stays finite for a rigid drum.

    :param AreaFunction area_fn: the duct geometry; arc length 0 is the entrance
    :param DrumImpedance drum: the termination at the far end
    :param FrequencyGrid grid: the frequencies
    :param AirProperties air: the air properties
    :param int segments: the number of cylindrical segments
    :return: the input impedance in Pa·s/m³
    :rtype: ImpedanceCurve
    """
    air = air or AirProperties()
    matrices = propagation_matrices(
        area_fn, area_fn.length, 0.0, grid.frequencies, air, segments,
    )
    admittance = drum.acoustic_admittance(grid.frequencies, float(area_fn.area[-1]), air)
    pressure = matrices[:, 0, 0] + matrices[:, 0, 1] * admittance
    flow = matrices[:, 1, 0] + matrices[:, 1, 1] * admittance
    return ImpedanceCurve(grid, pressure / flow)


def find_half_wave_resonance(curve, window=(5000.0, 15000.0)):
    """
    Find the frequency of the strongest impedance maximum in a window.

    The sample with the largest local maximum of |Z| is refined by fitting a parabola to 1/|Z|²
    over it and its two neighbors in log-frequency; near a resonance 1/|Z|² is quadratic.

    :param ImpedanceCurve curve: the curve
    :param tuple window: the lower and upper search frequency in Hz
    :return: the resonance frequency in Hz
    :rtype: float
    :raises InvalidRangeError: if the window is empty
    :raises OutOfRangeError: if the window isn't inside the curve's grid
    :raises NoResonanceError: if |Z| has no local maximum in the window
    """
    low, high = window
    if not low < high:
        raise InvalidRangeError(f'The search window {low} to {high} Hz is empty')
    grid = curve.grid
    if not (grid.contains(low) and grid.contains(high)):
        raise OutOfRangeError(
            f'The search window {low:g} to {high:g} Hz is outside the grid '
            f'{grid.f_min:g} to {grid.f_max:g} Hz'
        )
    frequencies = curve.frequencies
    magnitude = curve.magnitude
    inner = np.arange(1, len(frequencies) - 1)
    peaks = inner[
        (magnitude[inner] > magnitude[inner - 1])
        & (magnitude[inner] >= magnitude[inner + 1])
        & (frequencies[inner] >= low)
        & (frequencies[inner] <= high)
    ]
    if not len(peaks):
        raise NoResonanceError(f'No impedance maximum was found between {low:g} and {high:g} Hz')
    peak = peaks[np.argmax(magnitude[peaks])]

    x = np.log(frequencies[peak - 1:peak + 2])
    with np.errstate(divide='ignore'):
        y = 1.0 / magnitude[peak - 1:peak + 2] ** 2
    if not np.all(np.isfinite(y)):
        return float(frequencies[peak])
    curvature, slope, _ = np.polyfit(x - x[1], y, 2)
    if curvature <= 0:
        return float(frequencies[peak])
    vertex = np.clip(-slope / (2.0 * curvature), x[0] - x[1], x[2] - x[1])
    return float(np.exp(x[1] + vertex))


def _default_window(grid, target):
    return max(grid.f_min, target / 1.5), min(grid.f_max, target * 1.5)


def align_to_reference_plane(curve, area_fn, target=9400.0, air=None, window=None,
                             segments=DEFAULT_SEGMENTS):
    """
    Move a curve to the plane where its half-wave resonance lies at the target frequency.

    The measured acoustical length c / (2 f) is compared with the target length c / (2 target)
    and the curve is propagated by the difference towards the drum. When the measured length is
    shorter, the duct is extended outwards by a uniform section with the entrance area.

    :param ImpedanceCurve curve: the impedance at the entrance of area_fn
    :param AreaFunction area_fn: the duct geometry
    :param float target: the target resonance in Hz
    :param AirProperties air: the air properties
    :param tuple window: the resonance search window in Hz; defaults to target / 1.5 to
        target * 1.5 within the grid
    :param int segments: the number of cylindrical segments
    :return: the curve at the reference plane
    :rtype: ImpedanceCurve
    :raises OutOfRangeError: if the target is outside the grid, the shift exceeds the duct or
        the resonance of the aligned curve is more than one band from the target
    :raises NoResonanceError: if no resonance is found before or after the alignment
    """
    air = air or AirProperties()
    grid = curve.grid
    if not grid.contains(target):
        raise OutOfRangeError(
            f'The target {target:g} Hz is outside the grid {grid.f_min:g} to {grid.f_max:g} Hz'
        )
    resonance = find_half_wave_resonance(curve, window or _default_window(grid, target))
    measured_length = air.sound_speed / (2.0 * resonance)
    target_length = air.sound_speed / (2.0 * target)
    shift = measured_length - target_length
    log.info(
        'resonance_hz=%.6g measured_length_mm=%.6g target_length_mm=%.6g shift_mm=%.6g',
        resonance, measured_length * 1e3, target_length * 1e3, shift * 1e3,
    )
    if shift > area_fn.length:
        raise OutOfRangeError(
            f'The reference plane is {shift * 1e3:.4g} mm into a duct of '
            f'{area_fn.length * 1e3:.4g} mm'
        )
    if shift >= 0:
        aligned = horn_propagate(curve, area_fn, 0.0, shift, air, segments)
    else:
        aligned = horn_propagate(curve, area_fn.extended(-shift), -shift, 0.0, air, segments)

    realigned = find_half_wave_resonance(aligned, _default_window(grid, target))
    if abs(np.log2(realigned / target)) > 1.0 / grid.fraction:
        raise OutOfRangeError(
            f'The aligned resonance {realigned:.6g} Hz is more than one band from the target '
            f'{target:g} Hz'
        )
    return aligned
