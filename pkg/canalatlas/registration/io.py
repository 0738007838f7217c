# SPDX-License-Identifier: GPL-3.0-or-later
import csv
import json

import numpy as np

from canalatlas.errors import ValidationError
from canalatlas.registration.transforms import AffineTransform, FfdTransform


__all__ = [
    'load_affine',
    'load_convergence_history',
    'load_ffd',
    'save_affine',
    'save_convergence_history',
    'save_ffd',
]

CONVERGENCE_HEADER = ['iteration', 'mean_update_mm']


def _load_json(path, kind):
    with open(path, 'r') as f:
        data = json.load(f)
    if not isinstance(data, dict) or data.get('type') != kind:
        raise ValidationError(f'The file {path} does not hold an {kind} transform')
    return data


def save_affine(transform, path):
    """
    Save an affine transform as JSON: the row-major matrix followed by the translation.

    :param AffineTransform transform: the transform
    :param str path: the output path
    """
    with open(path, 'w') as f:
        json.dump({'type': 'affine', 'parameters': transform.parameters.tolist()}, f, indent=2)
        f.write('\n')


def load_affine(path):
    """
    Load an affine transform saved by save_affine.

    :param str path: the JSON path
    :return: the transform
    :rtype: AffineTransform
    :raises ValidationError: if the file doesn't hold 12 affine parameters
    """
    parameters = _load_json(path, 'affine').get('parameters')
    if not isinstance(parameters, list) or len(parameters) != 12:
        raise ValidationError(f'The affine transform in {path} must have 12 parameters')
    return AffineTransform(np.reshape(parameters[:9], (3, 3)), parameters[9:])


def save_ffd(transform, path):
    """
    Save an FFD as JSON: the lattice and the flat, C-ordered displacement array.

    :param FfdTransform transform: the transform
    :param str path: the output path
    """
    data = {
        'type': 'ffd',
        'lattice_origin': list(transform.lattice_origin),
        'lattice_spacing': list(transform.lattice_spacing),
        'lattice_dims': list(transform.lattice_dims),
        'displacements': transform.displacements.ravel().tolist(),
    }
    with open(path, 'w') as f:
        json.dump(data, f, indent=2)
        f.write('\n')


def load_ffd(path):
    """
    Load an FFD saved by save_ffd.

    :param str path: the JSON path
    :return: the transform
    :rtype: FfdTransform
    :raises ValidationError: if a lattice key is missing or the displacement count is wrong
    """
    data = _load_json(path, 'ffd')
    missing = {'lattice_origin', 'lattice_spacing', 'lattice_dims', 'displacements'} - set(data)
    if missing:
        raise ValidationError(
            'The FFD in {} is missing the keys: {}'.format(path, ', '.join(sorted(missing)))
        )
    displacements = np.array(data['displacements'], dtype=np.float64)
    if displacements.size != 3 * int(np.prod(data['lattice_dims'])):
        raise ValidationError(f'The FFD in {path} has the wrong number of displacements')
    return FfdTransform(
        data['lattice_origin'], data['lattice_spacing'], data['lattice_dims'], displacements)


def save_convergence_history(history, path):
    """
    Save the atlas convergence history as CSV.

    :param list history: the mean vertex update of each iteration in mm
    :param str path: the output path
    """
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(CONVERGENCE_HEADER)
        for iteration, update in enumerate(history, start=1):
            writer.writerow([iteration, repr(float(update))])


def load_convergence_history(path):
    with open(path, 'r', newline='') as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != CONVERGENCE_HEADER:
        raise ValidationError(
            f'The file {path} must start with the header iteration,mean_update_mm')
    return [float(row[1]) for row in rows[1:] if row]
