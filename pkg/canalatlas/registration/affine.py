# SPDX-License-Identifier: GPL-3.0-or-later
import logging

import numpy as np

from canalatlas.errors import NoDescentError
from canalatlas.registration.optimize import gradient_descent
from canalatlas.registration.similarity import SimilarityTerm
from canalatlas.registration.transforms import AFFINE_SCALE, AffineTransform


__all__ = ['register_affine']
log = logging.getLogger(__name__)

# The smallest trial step, relative to the voxel size of the pyramid level
MIN_STEP_FRACTION = 1e-3
# An objective at or below this value is already at its minimum
NEGLIGIBLE_OBJECTIVE = 1e-12


def _grid_center(grid):
    return (np.array(grid.origin) + np.array(grid.upper)) / 2.0


def _affine_objective(term, center):
    offsets = term.points - center

    def objective(parameters):
        matrix = np.eye(3) + parameters[:9].reshape(3, 3) / AFFINE_SCALE
        if np.linalg.det(matrix) <= 0:
            return np.inf, np.zeros_like(parameters), {}
        warped = offsets.dot(matrix.T) + center + parameters[9:]
        value, point_gradient = term.value_and_gradient(warped)
        linear = point_gradient.T.dot(offsets) / AFFINE_SCALE
        gradient = np.concatenate((linear.ravel(), point_gradient.sum(axis=0)))
        return value, gradient, {'similarity': value}

    return objective


def register_affine(subject, reference, config, init=None):
    """
    Find the affine transform minimizing the narrow-band ℓ1 similarity.

    The 12 parameters are optimized about the grid center on a pyramid of downsampled fields,
    from the coarsest level to the full resolution. The result never scores worse than the
    initial transform at full resolution.

    :param ScalarField subject: the fixed field S
    :param ScalarField reference: the moving field R; it must share the grid of S
    :param RegistrationConfig config: the registration settings
    :param AffineTransform init: the starting transform; defaults to the identity
    :return: the transform φ such that R(φ(x)) approximates S(x)
    :rtype: AffineTransform
    :raises EmptyNarrowbandError: if the subject has no narrow band
    :raises NoDescentError: if the similarity can't be reduced at the coarsest level
    """
    init = init or AffineTransform.identity()
    center = _grid_center(subject.grid)
    parameters = init.to_parameters(center)

    for level in range(config.pyramid_levels):
        factor = config.level_factor(level)
        term = SimilarityTerm(subject.downsampled(factor), reference.downsampled(factor), config)
        voxel = min(term.grid.spacing)
        objective = _affine_objective(term, center)
        if level == config.pyramid_levels - 1:
            initial_value = objective(init.to_parameters(center))[0]
        result = gradient_descent(
            objective,
            parameters,
            config.max_iterations,
            config.gradient_tolerance,
            initial_step=voxel,
            min_step=MIN_STEP_FRACTION * voxel,
            context={'stage': 'affine', 'level': level},
        )
        if level == 0 and result.accepted == 0 and result.value > NEGLIGIBLE_OBJECTIVE and (
            not np.isfinite(result.value) or result.gradient_norm > config.gradient_tolerance
        ):
            raise NoDescentError(
                f'The affine registration could not reduce the similarity {result.value:.6g} '
                'at the coarsest level'
            )
        parameters = result.parameters

    if result.value > initial_value:
        log.warning(
            'The affine registration ended at %.6g, above the initial %.6g; keeping the initial '
            'transform', result.value, initial_value,
        )
        return init
    return AffineTransform.from_parameters(parameters, center)
