# SPDX-License-Identifier: GPL-3.0-or-later
from dataclasses import dataclass
import logging

import numpy as np

from canalatlas.errors import CanalAtlasError, DivergedError, RegistrationError, ValidationError
from canalatlas.geometry import (
    GridSpec, TriMesh, cap_open_boundaries, extract_isosurface, signed_distance_field,
)
from canalatlas.mapping import serial_map
from canalatlas.registration.affine import register_affine
from canalatlas.registration.config import RegistrationConfig
from canalatlas.registration.ffd import register_pair
from canalatlas.registration.transforms import AffineTransform, ComposedTransform


__all__ = [
    'AtlasResult', 'align_subject', 'build_atlas', 'register_subject_pair',
    'remove_mean_displacement',
]
log = logging.getLogger(__name__)

# Consecutive growing updates that abort the atlas iteration
DIVERGENCE_STREAK = 2


@dataclass(frozen=True, eq=False)
class AtlasResult:
    """
    The groupwise template and the transforms mapping it onto every subject.

    The transforms map the space of ``template_mesh`` into the space of each subject; they were
    registered against that template and carry the unbiasedness correction. The displacements
    hold, per subject, the offset from each template vertex to its image under the subject's
    transform; their mean over the subjects is zero.
    """

    template_mesh: TriMesh
    per_subject_affine: list
    per_subject_ffd: list
    convergence_history: list
    displacements: np.ndarray
    grid: GridSpec

    @property
    def population_size(self):
        return len(self.per_subject_affine)


def align_subject(index, reference_field, subject_field, config):
    """
    Affinely align one subject to the reference subject.

    :param int index: the subject index, reported on failure
    :param ScalarField reference_field: the SDF of the reference subject
    :param ScalarField subject_field: the SDF of the subject
    :param RegistrationConfig config: the registration settings
    :return: the transform from reference space to subject space
    :rtype: AffineTransform
    :raises RegistrationError: if the registration fails
    """
    try:
        return register_affine(reference_field, subject_field, config)
    except CanalAtlasError as error:
        log.exception('Affine alignment of subject %d failed', index)
        raise RegistrationError(str(error), index) from error


def register_subject_pair(index, template_field, subject_field, config, init):
    """
    Register the template to one subject, affine first and then with a deformation.

    :param int index: the subject index, reported on failure
    :param ScalarField template_field: the SDF of the current template
    :param ScalarField subject_field: the SDF of the subject
    :param RegistrationConfig config: the registration settings
    :param AffineTransform init: the starting affine transform
    :return: the transform from template space to subject space
    :rtype: ComposedTransform
    :raises RegistrationError: if the registration fails
    """
    try:
        return register_pair(template_field, subject_field, config, init=init)
    except CanalAtlasError as error:
        log.exception('Registration of the template to subject %d failed', index)
        raise RegistrationError(str(error), index) from error


def remove_mean_displacement(transforms):
    """
    Subtract the population-mean displacement from every subject transform.

    With φ_i(x) = L_i(x + u_i(x)) + t_i and every u_i on one control lattice, the mean
    displacement d(x) = mean_j φ_j(x) - x is itself affine plus a B-spline of that lattice, so
    ψ_i = φ_i - d keeps the form: its linear part is L_i - mean_j L_j + I, its translation
    t_i - mean_j t_j and its control displacements c'_i solve (L_i - mean_j L_j + I) c'_i =
    L_i c_i - mean_j L_j c_j.

    :param list transforms: the ComposedTransform of every subject
    :return: the corrected transforms; their images of any point average to the point itself
    :rtype: list
    :raises ValidationError: if the deformations use different control lattices
    :raises RegistrationError: if a corrected linear part does not preserve orientation
    """
    matrices = np.stack([transform.affine.matrix for transform in transforms])
    translations = np.stack([transform.affine.translation for transform in transforms])
    deformations = [transform.ffd for transform in transforms if transform.ffd is not None]
    residuals = None
    if deformations:
        lattice = deformations[0]
        for ffd in deformations[1:]:
            if (ffd.lattice_origin, ffd.lattice_spacing, ffd.lattice_dims) != (
                lattice.lattice_origin, lattice.lattice_spacing, lattice.lattice_dims
            ):
                raise ValidationError('The subject deformations must share one control lattice')
        controls = np.stack([
            transform.ffd.displacements.reshape(-1, 3) if transform.ffd is not None
            else np.zeros((lattice.displacements.size // 3, 3))
            for transform in transforms
        ])
        moved = np.einsum('nij,nkj->nki', matrices, controls)
        residuals = moved - moved.mean(axis=0)

    corrected = []
    for index, transform in enumerate(transforms):
        matrix = matrices[index] - matrices.mean(axis=0) + np.eye(3)
        if np.linalg.det(matrix) <= 0:
            raise RegistrationError(
                'The unbiased affine transform does not preserve orientation', index)
        affine = AffineTransform(matrix, translations[index] - translations.mean(axis=0))
        ffd = None
        if residuals is not None:
            ffd = lattice.with_displacements(np.linalg.solve(matrix, residuals[index].T).T)
        corrected.append(ComposedTransform(affine, ffd))
    return corrected


def build_atlas(surfaces, config=None, mapper=None):
    """
    Build an unbiased template of a surface population by iterative groupwise registration.

    All surfaces are capped and sampled as signed distance fields on one common grid. Every
    subject is affinely aligned to subject 0, whose zero level set becomes the initial template.
    Each iteration registers the template to every subject and measures the mean vertex update,
    the distance from each template vertex to the mean of its images. Until that update falls
    below the atlas tolerance, every vertex moves to the mean of its images and the template SDF
    is rebuilt.

    The returned template is the one the returned transforms were registered against, so they
    map its vertices into each subject. The population-mean displacement is subtracted from the
    transforms, which makes the images of every template vertex average to the vertex itself.

    :param list surfaces: the TriMesh population, at least two surfaces
    :param RegistrationConfig config: the registration settings; defaults apply when omitted
    :param callable mapper: maps a function over argument tuples, returning results in order;
        the pairwise registrations of one iteration are handed to it together
    :return: the template, the per-subject transforms and the convergence history
    :rtype: AtlasResult
    :raises ValidationError: if fewer than two surfaces are given
    :raises RegistrationError: if a pairwise registration fails
    :raises DivergedError: if the mean vertex update grows twice in a row
    """
    if len(surfaces) < 2:
        raise ValidationError('An atlas needs at least two surfaces')
    config = config or RegistrationConfig()
    mapper = mapper or serial_map

    closed = [cap_open_boundaries(surface) for surface in surfaces]
    grid = GridSpec.around_points(
        np.concatenate([mesh.vertices for mesh in closed]), config.grid_spacing,
        config.grid_margin,
    )
    log.info('Sampling %d signed distance fields on a %s grid', len(closed), grid.dims)
    fields = mapper(signed_distance_field, [(mesh, grid) for mesh in closed])

    # Subject 0 is the reference of the affine pre-alignment
    affines = [None] + mapper(
        align_subject,
        [(index, fields[0], fields[index], config) for index in range(1, len(fields))],
    )
    template = extract_isosurface(fields[0])
    template_field = fields[0]
    history = []
    for iteration in range(1, config.atlas_max_iterations + 1):
        transforms = mapper(
            register_subject_pair,
            [
                (index, template_field, field, config, affines[index])
                for index, field in enumerate(fields)
            ],
        )
        updated = np.mean([transform.apply(template.vertices) for transform in transforms], axis=0)
        update = float(np.linalg.norm(updated - template.vertices, axis=1).mean())
        history.append(update)
        log.info('iteration=%d mean_update_mm=%.6g', iteration, update)

        affines = [transform.affine for transform in transforms]
        if update < config.atlas_tolerance:
            break
        if len(history) > DIVERGENCE_STREAK and all(
            history[-k] > history[-k - 1] for k in range(1, DIVERGENCE_STREAK + 1)
        ):
            raise DivergedError(
                f'The mean vertex update grew for {DIVERGENCE_STREAK} consecutive iterations: '
                + ', '.join(f'{value:.4g}' for value in history)
            )
        if iteration == config.atlas_max_iterations:
            log.warning(
                'The atlas did not converge below %g mm in %d iterations',
                config.atlas_tolerance, config.atlas_max_iterations,
            )
            break
        template = TriMesh(updated, template.faces)
        template_field = signed_distance_field(template, grid)

    transforms = remove_mean_displacement(transforms)
    displacements = np.stack([
        transform.apply(template.vertices) - template.vertices for transform in transforms
    ])
    return AtlasResult(
        template_mesh=template,
        per_subject_affine=[transform.affine for transform in transforms],
        per_subject_ffd=[transform.ffd for transform in transforms],
        convergence_history=history,
        displacements=displacements,
        grid=grid,
    )
