# SPDX-License-Identifier: GPL-3.0-or-later
import logging

import numpy as np

from canalatlas.errors import NoDescentError
from canalatlas.registration.affine import (
    MIN_STEP_FRACTION, NEGLIGIBLE_OBJECTIVE, register_affine,
)
from canalatlas.registration.optimize import gradient_descent
from canalatlas.registration.similarity import (
    SimilarityTerm, bending_energy, bending_energy_gradient,
)
from canalatlas.registration.transforms import AffineTransform, ComposedTransform, FfdTransform


__all__ = ['register_ffd', 'register_pair']
log = logging.getLogger(__name__)


def _ffd_objective(term, affine, lattice, bending_weight):
    support = lattice.point_weights(term.points)

    def objective(displacements):
        current = lattice.with_displacements(displacements)
        moved = term.points + current.displacement_at(term.points, support)
        similarity, point_gradient = term.value_and_gradient(affine.apply(moved))
        # φ(x) = A(x + u(x)), so the gradient reaches u through the linear part of A
        gradient = current.scatter_gradient(support, point_gradient.dot(affine.matrix))
        bending = 0.0
        if bending_weight:
            bending = bending_energy(current)
            gradient += bending_weight * bending_energy_gradient(current)
        value = similarity + bending_weight * bending
        return value, gradient, {'similarity': similarity, 'bending': bending}

    return objective


def register_ffd(subject, reference, init, config):
    """
    Find the B-spline deformation minimizing the similarity plus the weighted bending energy.

    The deformation acts before the fixed affine transform init. The control lattice starts at
    the coarsest spacing, lattice_spacing times 2 ** (pyramid_levels - 1), and is refined once
    per pyramid level while the fields move from coarse to full resolution.

    :param ScalarField subject: the fixed field S
    :param ScalarField reference: the moving field R; it must share the grid of S
    :param AffineTransform init: the affine part, usually from register_affine
    :param RegistrationConfig config: the registration settings
    :return: the deformation u such that R(init(x + u(x))) approximates S(x)
    :rtype: FfdTransform
    :raises EmptyNarrowbandError: if the subject has no narrow band
    :raises NoDescentError: if the objective can't be reduced at the coarsest level
    """
    init = init or AffineTransform.identity()
    lattice = None
    for level in range(config.pyramid_levels):
        factor = config.level_factor(level)
        if lattice is None:
            lattice = FfdTransform.covering(subject.grid, config.lattice_spacing * factor)
        else:
            lattice = lattice.refined()
        term = SimilarityTerm(subject.downsampled(factor), reference.downsampled(factor), config)
        voxel = min(term.grid.spacing)
        objective = _ffd_objective(term, init, lattice, config.bending_weight)
        if level == config.pyramid_levels - 1:
            initial_value = objective(np.zeros_like(lattice.displacements))[0]
        result = gradient_descent(
            objective,
            lattice.displacements,
            config.max_iterations,
            config.gradient_tolerance,
            initial_step=0.5 * voxel,
            min_step=MIN_STEP_FRACTION * voxel,
            context={'stage': 'ffd', 'level': level},
        )
        if level == 0 and result.accepted == 0 and result.value > NEGLIGIBLE_OBJECTIVE and (
            result.gradient_norm > config.gradient_tolerance
        ):
            raise NoDescentError(
                f'The FFD registration could not reduce the objective {result.value:.6g} at '
                'the coarsest level'
            )
        lattice = lattice.with_displacements(result.parameters)

    if result.value > initial_value:
        log.warning(
            'The FFD registration ended at %.6g, above the undeformed %.6g; keeping no '
            'deformation', result.value, initial_value,
        )
        return lattice.with_displacements(np.zeros_like(lattice.displacements))
    return lattice


def register_pair(subject, reference, config, init=None):
    """
    Register a pair of fields with an affine transform followed by a deformation.

    :param ScalarField subject: the fixed field S
    :param ScalarField reference: the moving field R
    :param RegistrationConfig config: the registration settings
    :param AffineTransform init: the starting affine transform
    :return: the transform φ(x) = A(x + u(x))
    :rtype: ComposedTransform
    """
    affine = register_affine(subject, reference, config, init=init)
    log.debug('Affine stage finished with %r', affine)
    ffd = register_ffd(subject, reference, affine, config)
    return ComposedTransform(affine, ffd)
