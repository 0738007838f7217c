# SPDX-License-Identifier: GPL-3.0-or-later
import csv
import functools
import json
import logging

import numpy as np

from canalatlas.acoustics import (
    align_to_reference_plane, compare_curves, horn_input_impedance, load_impedance_curve,
    population_average, save_impedance_curve, save_tet_mesh, solve_input_impedance_fem,
    solve_pressure_field, sweep_area_tet_mesh, wall_spl,
)
from canalatlas.artifacts import ArtifactWriter
from canalatlas.errors import ValidationError
from canalatlas.geometry import (
    GridSpec, cap_open_boundaries, centerline_and_area, load_obj, save_area_function,
    save_obj, signed_distance_field, surface_distance, synth_canal,
)
from canalatlas.mapping import serial_map
from canalatlas.registration import (
    align_subject, build_atlas, register_subject_pair, save_affine, save_convergence_history,
    save_ffd,
)
from canalatlas.ssm import (
    build_pdm, explained_variance, mode_extremes, nearest_to_mean, project_correspondences,
    save_model, synthesize,
)


__all__ = ['SUBCOMMANDS', 'Pipeline', 'run_subcommand']
log = logging.getLogger(__name__)

# The half-wave resonance is searched within this factor of c / 2L of each canal
RESONANCE_WINDOW_FACTOR = 1.25

SUBCOMMAND_EXPORTS = {
    'synth': ('population',),
    'register': ('registration',),
    'atlas': ('atlas',),
    'ssm': ('ssm',),
    'impedance-fem': ('fem',),
    'impedance-horn': ('horn',),
    'average': ('average',),
    'full': ('population', 'atlas', 'ssm', 'fem', 'horn', 'average', 'comparison', 'spl'),
}
SUBCOMMANDS = tuple(SUBCOMMAND_EXPORTS)


def _stage(method):
    """Compute a pipeline stage once per run."""
    @functools.wraps(method)
    def wrapper(self):
        name = method.__name__
        if name not in self._stages:
            log.info('stage=%s status=started', name)
            self._stages[name] = method(self)
            log.info('stage=%s status=finished', name)
        return self._stages[name]
    return wrapper


def _subject_name(index):
    return f'subject_{index:02d}'


def _write_json(data, path):
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')


class Pipeline:
    """
    The stages of the average-shape pipeline for one configuration.

    Each stage is computed on first use, so a subcommand only runs the stages its artifacts
    depend on. The mapper fans out the independent work items of the stages.
    """

    def __init__(self, config, mapper=None):
        """
        Initialize the pipeline.

        :param PipelineConfig config: the configuration
        :param callable mapper: maps a function over argument tuples, returning results in order
        """
        self.config = config
        self.mapper = mapper or serial_map
        self._stages = {}

    @_stage
    def population(self):
        """Return the specs (None for loaded meshes) and the subject surfaces."""
        synthetic = self.config.synthetic
        if synthetic is None:
            return None, [load_obj(path) for path in self.config.meshes]

        rng = np.random.default_rng(synthetic.seed)
        specs = [synthetic.spec.jittered(rng, **synthetic.jitter) for _ in range(synthetic.count)]
        seeds = rng.integers(0, 2 ** 32, size=synthetic.count)
        surfaces = self.mapper(synth_canal, [(spec, int(seed)) for spec, seed in zip(specs, seeds)])
        return specs, surfaces

    @property
    def surfaces(self):
        return self.population()[1]

    @_stage
    def registrations(self):
        """Register subject 0 to every other subject."""
        config = self.config.registration
        closed = [cap_open_boundaries(surface) for surface in self.surfaces]
        grid = GridSpec.around_points(
            np.concatenate([mesh.vertices for mesh in closed]), config.grid_spacing,
            config.grid_margin,
        )
        fields = self.mapper(signed_distance_field, [(mesh, grid) for mesh in closed])
        indices = range(1, len(fields))
        affines = self.mapper(
            align_subject, [(index, fields[0], fields[index], config) for index in indices],
        )
        transforms = self.mapper(
            register_subject_pair,
            [
                (index, fields[0], fields[index], config, affine)
                for index, affine in zip(indices, affines)
            ],
        )
        distances = [
            surface_distance(closed[0].with_vertices(transform.apply(closed[0].vertices)),
                             closed[index])
            for index, transform in zip(indices, transforms)
        ]
        return transforms, distances

    @_stage
    def atlas(self):
        return build_atlas(self.surfaces, self.config.registration, self.mapper)

    @_stage
    def correspondences(self):
        return project_correspondences(self.atlas(), self.surfaces, self.mapper)

    @_stage
    def shape_model(self):
        return build_pdm(self.correspondences(), procrustes=self.config.ssm.procrustes)

    @_stage
    def nearest_subject(self):
        return nearest_to_mean(self.shape_model(), self.correspondences())

    @_stage
    def area_functions(self):
        return self.mapper(centerline_and_area, [(surface,) for surface in self.surfaces])

    @_stage
    def fem_meshes(self):
        """Mesh the average shape and the subject nearest to it."""
        acoustics = self.config.acoustics
        average_area = centerline_and_area(synthesize(self.shape_model()))
        nearest_area = centerline_and_area(self.surfaces[self.nearest_subject()])
        return {
            'average_shape': sweep_area_tet_mesh(average_area, acoustics.max_edge_m),
            'nearest_subject': sweep_area_tet_mesh(nearest_area, acoustics.max_edge_m),
        }

    @_stage
    def fem_curves(self):
        acoustics = self.config.acoustics
        grid = acoustics.grid()
        return {
            name: solve_input_impedance_fem(
                mesh, grid, acoustics.air, acoustics.drum, mapper=self.mapper,
            )
            for name, mesh in self.fem_meshes().items()
        }

    @_stage
    def horn_curves(self):
        acoustics = self.config.acoustics
        grid = acoustics.grid()
        return [
            horn_input_impedance(
                area_fn, acoustics.drum, grid, acoustics.air, acoustics.horn_segments,
            )
            for area_fn in self.area_functions()
        ]

    @_stage
    def entrance_curves(self):
        """Return the measured curves, or the horn model curves when none are configured."""
        paths = self.config.acoustics.measured_curves
        if not paths:
            return self.horn_curves()
        if len(paths) != len(self.surfaces):
            raise ValidationError(
                f'{len(paths)} measured curves were given for {len(self.surfaces)} subjects'
            )
        return [load_impedance_curve(path) for path in paths]

    def _resonance_window(self, area_fn, grid):
        expected = self.config.acoustics.air.sound_speed / (2.0 * area_fn.length)
        return (
            max(grid.f_min, expected / RESONANCE_WINDOW_FACTOR),
            min(grid.f_max, expected * RESONANCE_WINDOW_FACTOR),
        )

    @_stage
    def aligned_curves(self):
        acoustics = self.config.acoustics
        aligned = []
        for index, (curve, area_fn) in enumerate(zip(self.entrance_curves(),
                                                     self.area_functions())):
            log.info('Aligning the curve of subject %d', index)
            aligned.append(align_to_reference_plane(
                curve, area_fn, acoustics.target_hz, acoustics.air,
                window=self._resonance_window(area_fn, curve.grid),
                segments=acoustics.horn_segments,
            ))
        return aligned

    @_stage
    def population_average(self):
        return population_average(self.aligned_curves())

    def export_population(self, artifacts):
        specs, surfaces = self.population()
        for index, surface in enumerate(surfaces):
            save_obj(surface, artifacts.path(f'population/{_subject_name(index)}.obj'))
        if specs is not None:
            _write_json(
                {
                    'seed': self.config.synthetic.seed,
                    'subjects': [spec.to_dict() for spec in specs],
                },
                artifacts.path('population/specs.json'),
            )

    def export_registration(self, artifacts):
        transforms, distances = self.registrations()
        summary = []
        for index, (transform, (mean, hausdorff)) in enumerate(zip(transforms, distances), 1):
            name = _subject_name(index)
            save_affine(transform.affine, artifacts.path(f'registration/{name}_affine.json'))
            save_ffd(transform.ffd, artifacts.path(f'registration/{name}_ffd.json'))
            summary.append({'subject': index, 'mean_distance_mm': mean,
                            'hausdorff_distance_mm': hausdorff})
        _write_json({'reference_subject': 0, 'subjects': summary},
                    artifacts.path('registration/summary.json'))

    def export_atlas(self, artifacts):
        atlas = self.atlas()
        save_obj(atlas.template_mesh, artifacts.path('atlas/template.obj'))
        save_convergence_history(atlas.convergence_history,
                                 artifacts.path('atlas/convergence.csv'))
        for index, (affine, ffd) in enumerate(zip(atlas.per_subject_affine,
                                                  atlas.per_subject_ffd)):
            name = _subject_name(index)
            save_affine(affine, artifacts.path(f'atlas/transforms/{name}_affine.json'))
            save_ffd(ffd, artifacts.path(f'atlas/transforms/{name}_ffd.json'))

    def export_ssm(self, artifacts):
        model = self.shape_model()
        save_model(model, artifacts.path('ssm/model.json'))
        save_obj(synthesize(model), artifacts.path('ssm/mean.obj'))
        for number, (minus, plus) in enumerate(
            mode_extremes(model, self.config.ssm.modes_to_export), start=1,
        ):
            save_obj(minus, artifacts.path(f'ssm/modes/mode_{number}_minus_1std.obj'))
            save_obj(plus, artifacts.path(f'ssm/modes/mode_{number}_plus_1std.obj'))
        _write_json(
            {
                'mode_count': model.mode_count,
                'eigenvalues': model.eigenvalues.tolist(),
                'explained_variance': [
                    explained_variance(model, k) for k in range(1, model.mode_count + 1)
                ],
                'nearest_subject': self.nearest_subject(),
            },
            artifacts.path('ssm/summary.json'),
        )

    def export_fem(self, artifacts):
        meshes = self.fem_meshes()
        for name, curve in self.fem_curves().items():
            save_tet_mesh(meshes[name], artifacts.path(f'fem/{name}.tet'))
            save_impedance_curve(curve, artifacts.path(f'fem/{name}.csv'))

    def export_horn(self, artifacts):
        for index, (area_fn, curve) in enumerate(zip(self.area_functions(),
                                                     self.horn_curves())):
            name = _subject_name(index)
            save_area_function(area_fn, artifacts.path(f'horn/area/{name}.csv'))
            save_impedance_curve(curve, artifacts.path(f'horn/impedance/{name}.csv'))

    def export_average(self, artifacts):
        for index, curve in enumerate(self.aligned_curves()):
            name = _subject_name(index)
            save_impedance_curve(curve, artifacts.path(f'average/aligned/{name}.csv'))
        median, mean = self.population_average()
        save_impedance_curve(median, artifacts.path('average/median.csv'))
        save_impedance_curve(mean, artifacts.path('average/mean.csv'))

    def export_comparison(self, artifacts):
        curves = self.fem_curves()
        difference, rms = compare_curves(curves['average_shape'], curves['nearest_subject'])
        path = artifacts.path('comparison/average_vs_nearest.csv')
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(('freq_hz', 'difference_db'))
            for frequency, value in zip(curves['average_shape'].frequencies.tolist(),
                                        difference.tolist()):
                writer.writerow((repr(frequency), repr(value)))
        _write_json({'nearest_subject': self.nearest_subject(), 'rms_difference_db': rms},
                    artifacts.path('comparison/summary.json'))

    def export_spl(self, artifacts):
        acoustics = self.config.acoustics
        if acoustics.spl_frequency_hz is None:
            log.debug('No SPL frequency is configured, skipping the wall levels')
            return
        mesh = self.fem_meshes()['average_shape']
        pressure = solve_pressure_field(
            mesh, acoustics.spl_frequency_hz, acoustics.air, acoustics.drum,
        )
        levels = wall_spl(mesh, pressure)
        with open(artifacts.path('spl/wall_spl.csv'), 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(('x_m', 'y_m', 'z_m', 'spl_db'))
            for point, level in zip(levels.points.tolist(), levels.spl_db.tolist()):
                writer.writerow(tuple(repr(value) for value in point) + (repr(level),))


def run_subcommand(name, config, mapper=None):
    """
    Run a subcommand and publish its artifacts with a manifest.

    :param str name: the subcommand
    :param PipelineConfig config: the configuration
    :param callable mapper: maps a function over argument tuples, returning results in order
    :return: the manifest
    :rtype: dict
    :raises ValidationError: if the subcommand is unknown or doesn't apply to the configuration
    :raises CanalAtlasError: if a stage fails
    """
    if name not in SUBCOMMAND_EXPORTS:
        raise ValidationError(
            'The subcommand must be one of: {}'.format(', '.join(SUBCOMMANDS))
        )
    exports = SUBCOMMAND_EXPORTS[name]
    if config.synthetic is None:
        if name == 'synth':
            raise ValidationError('The synth subcommand needs a synthetic population')
        exports = tuple(export for export in exports if export != 'population')

    pipeline = Pipeline(config, mapper)
    log.info('subcommand=%s subjects=%d output_dir=%s', name, config.population_size,
             config.output_dir)
    with ArtifactWriter(config.output_dir, name) as artifacts:
        for export in exports:
            getattr(pipeline, f'export_{export}')(artifacts)
    return artifacts.manifest
