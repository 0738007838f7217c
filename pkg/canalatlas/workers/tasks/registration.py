# SPDX-License-Identifier: GPL-3.0-or-later
import logging

from canalatlas.geometry import signed_distance_field
from canalatlas.registration import align_subject, register_subject_pair
from canalatlas.workers.tasks.celery import app


__all__ = ['align_to_reference', 'register_subject', 'sample_signed_distance']
log = logging.getLogger(__name__)


@app.task
def sample_signed_distance(mesh, grid):
    """
    Sample the signed distance field of a closed surface.

    :param TriMesh mesh: the closed surface
    :param GridSpec grid: the sampling grid
    :return: the signed distance field
    :rtype: ScalarField
    """
    log.debug('Sampling the signed distance field of %r on %s', mesh, grid.dims)
    return signed_distance_field(mesh, grid)


@app.task
def align_to_reference(index, reference_field, subject_field, config):
    """
    Affinely align a subject to the reference subject of the atlas.

    :param int index: the subject index
    :param ScalarField reference_field: the SDF of the reference subject
    :param ScalarField subject_field: the SDF of the subject
    :param RegistrationConfig config: the registration settings
    :return: the transform from reference space to subject space
    :rtype: AffineTransform
    """
    log.info('Aligning subject %d to the reference subject', index)
    return align_subject(index, reference_field, subject_field, config)


@app.task
def register_subject(index, template_field, subject_field, config, init):
    """
    Register the current template to one subject.

    :param int index: the subject index
    :param ScalarField template_field: the SDF of the current template
    :param ScalarField subject_field: the SDF of the subject
    :param RegistrationConfig config: the registration settings
    :param AffineTransform init: the starting affine transform
    :return: the transform from template space to subject space
    :rtype: ComposedTransform
    """
    log.info('Registering the template to subject %d', index)
    return register_subject_pair(index, template_field, subject_field, config, init)
