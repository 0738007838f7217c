# SPDX-License-Identifier: GPL-3.0-or-later
from copy import deepcopy
from dataclasses import dataclass, field
import json
import logging
import os

from canalatlas.acoustics import AirProperties, DrumImpedance, freq_grid, load_drum_impedance
from canalatlas.errors import ConfigError, ValidationError
from canalatlas.geometry import CanalSpec
from canalatlas.registration import RegistrationConfig


__all__ = [
    'AcousticsOptions',
    'PipelineConfig',
    'SsmOptions',
    'SyntheticPopulation',
    'apply_overrides',
    'load_pipeline_config',
]
log = logging.getLogger(__name__)

DRUM_TYPES = ('rigid', 'matched', 'table')


def _check_keys(data, valid, required=(), section='the pipeline configuration'):
    if not isinstance(data, dict):
        raise ValidationError(f'The value of {section} must be a JSON object')
    missing = set(required) - set(data)
    if missing:
        raise ValidationError(
            'Missing required key(s) in {}: {}'.format(section, ', '.join(sorted(missing)))
        )
    invalid = set(data) - set(valid)
    if invalid:
        raise ValidationError(
            'The following keys are not valid in {}: {}'.format(section, ', '.join(sorted(invalid)))
        )


def _existing_file(path, base_dir, description):
    if not isinstance(path, str) or not path:
        raise ValidationError(f'The {description} path must be a non-empty string')
    resolved = os.path.normpath(os.path.join(base_dir, path))
    if not os.path.isfile(resolved):
        raise ConfigError(f'The {description} "{resolved}" does not exist')
    return resolved


@dataclass(frozen=True)
class SyntheticPopulation:
    """A seeded population of synthetic canals jittered around a nominal one."""

    spec: CanalSpec = field(default_factory=CanalSpec)
    count: int = 10
    seed: int = 0
    # The half widths of the uniform perturbations; see CanalSpec.jittered
    jitter: dict = field(default_factory=lambda: {'length': 1.0, 'radius': 0.3, 'angle': 5.0})

    @classmethod
    def from_dict(cls, data):
        _check_keys(data, ('spec', 'count', 'seed', 'jitter'), section='population.synthetic')
        kwargs = dict(data)
        kwargs['spec'] = CanalSpec.from_dict(data.get('spec', {}))
        count = kwargs.get('count', cls.count)
        if isinstance(count, bool) or not isinstance(count, int) or count < 2:
            raise ValidationError('The synthetic population count must be an integer of at least 2')
        seed = kwargs.get('seed', cls.seed)
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            raise ValidationError('The seed must be an unsigned 64 bit integer')
        jitter = dict(cls.__dataclass_fields__['jitter'].default_factory())
        _check_keys(data.get('jitter', {}), jitter, section='population.synthetic.jitter')
        jitter.update(data.get('jitter', {}))
        if any(value < 0 for value in jitter.values()):
            raise ValidationError('The jitter magnitudes must not be negative')
        kwargs['jitter'] = jitter
        return cls(**kwargs)

    def to_dict(self):
        return {
            'spec': self.spec.to_dict(),
            'count': self.count,
            'seed': self.seed,
            'jitter': dict(self.jitter),
        }


@dataclass(frozen=True)
class SsmOptions:
    modes_to_export: int = 6
    procrustes: bool = False

    @classmethod
    def from_dict(cls, data):
        _check_keys(data, ('modes_to_export', 'procrustes'), section='ssm')
        options = cls(**data)
        if isinstance(options.modes_to_export, bool) or not isinstance(
            options.modes_to_export, int
        ) or options.modes_to_export < 0:
            raise ValidationError('"modes_to_export" must be a non-negative integer')
        if not isinstance(options.procrustes, bool):
            raise ValidationError('"procrustes" must be a boolean')
        return options


@dataclass(frozen=True)
class AcousticsOptions:
    """The frequency grid, the medium, the drum model and the solver settings."""

    f_min: float = 35.0
    f_max: float = 25000.0
    fraction: int = 24
    air: AirProperties = field(default_factory=AirProperties)
    drum: DrumImpedance = field(default_factory=DrumImpedance.rigid)
    # The resolved path of a tabulated drum impedance
    drum_path: str = None
    max_edge_mm: float = 3.0
    horn_segments: int = 100
    target_hz: float = 9400.0
    measured_curves: tuple = ()
    spl_frequency_hz: float = None

    @classmethod
    def from_dict(cls, data, base_dir):
        """
        Create the acoustics options from a JSON-compatible dictionary.

        :param dict data: the "acoustics" section
        :param str base_dir: the directory that relative paths are resolved against
        :return: the options
        :rtype: AcousticsOptions
        :raises ValidationError: if a key is unknown or a value is invalid
        :raises ConfigError: if a referenced file doesn't exist
        """
        _check_keys(
            data,
            ('f_min', 'f_max', 'fraction', 'air', 'drum', 'max_edge_mm', 'horn_segments',
             'target_hz', 'measured_curves', 'spl_frequency_hz'),
            section='acoustics',
        )
        kwargs = {key: value for key, value in data.items() if key not in ('air', 'drum')}
        kwargs['air'] = AirProperties.from_dict(data.get('air', {}))

        drum = data.get('drum', {'type': 'rigid'})
        _check_keys(drum, ('type', 'path'), required=('type',), section='acoustics.drum')
        if drum['type'] not in DRUM_TYPES:
            raise ValidationError(
                'The drum type must be one of: {}'.format(', '.join(DRUM_TYPES))
            )
        if drum['type'] == 'table':
            if 'path' not in drum:
                raise ValidationError('A tabulated drum impedance needs a "path"')
            kwargs['drum_path'] = _existing_file(drum['path'], base_dir, 'drum impedance file')
            kwargs['drum'] = load_drum_impedance(kwargs['drum_path'])
        elif 'path' in drum:
            raise ValidationError(f'A {drum["type"]} drum does not take a "path"')
        else:
            kwargs['drum'] = DrumImpedance(kind=drum['type'])

        kwargs['measured_curves'] = tuple(
            _existing_file(path, base_dir, 'measured impedance curve')
            for path in data.get('measured_curves', [])
        )
        options = cls(**kwargs)
        # Raises InvalidRangeError on a bad grid
        options.grid()
        if not options.max_edge_mm > 0:
            raise ValidationError('"max_edge_mm" must be positive')
        if isinstance(options.horn_segments, bool) or not isinstance(
            options.horn_segments, int
        ) or options.horn_segments < 1:
            raise ValidationError('"horn_segments" must be a positive integer')
        if not options.target_hz > 0:
            raise ValidationError('"target_hz" must be positive')
        if options.spl_frequency_hz is not None and not options.spl_frequency_hz > 0:
            raise ValidationError('"spl_frequency_hz" must be positive')
        return options

    def grid(self):
        return freq_grid(self.f_min, self.f_max, self.fraction)

    @property
    def max_edge_m(self):
        return self.max_edge_mm * 1e-3


@dataclass(frozen=True)
class PipelineConfig:
    """
    The complete configuration of a pipeline run.

    Exactly one of ``meshes`` and ``synthetic`` is set.
    """

    output_dir: str
    meshes: tuple = None
    synthetic: SyntheticPopulation = None
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    ssm: SsmOptions = field(default_factory=SsmOptions)
    acoustics: AcousticsOptions = field(default_factory=AcousticsOptions)

    def __post_init__(self):
        if (self.meshes is None) == (self.synthetic is None):
            raise ValidationError(
                'The population must have exactly one of "meshes" and "synthetic"'
            )
        if self.meshes is not None and len(self.meshes) < 2:
            raise ValidationError('The population needs at least two meshes')

    @property
    def population_size(self):
        if self.meshes is not None:
            return len(self.meshes)
        return self.synthetic.count

    @classmethod
    def from_dict(cls, data, base_dir='.'):
        """
        Create the configuration from a JSON-compatible dictionary.

        :param dict data: the configuration document
        :param str base_dir: the directory that relative paths are resolved against
        :return: the configuration
        :rtype: PipelineConfig
        :raises ValidationError: if a key is missing or unknown, or a value is invalid
        :raises ConfigError: if a referenced file doesn't exist
        """
        _check_keys(
            data, ('population', 'registration', 'ssm', 'acoustics', 'output_dir'),
            required=('population', 'output_dir'),
        )
        population = data['population']
        _check_keys(population, ('meshes', 'synthetic'), section='population')
        meshes = synthetic = None
        if 'meshes' in population:
            if not isinstance(population['meshes'], list):
                raise ValidationError('"population.meshes" must be a list of paths')
            meshes = tuple(
                _existing_file(path, base_dir, 'mesh') for path in population['meshes']
            )
        if 'synthetic' in population:
            synthetic = SyntheticPopulation.from_dict(population['synthetic'])

        output_dir = data['output_dir']
        if not isinstance(output_dir, str) or not output_dir:
            raise ValidationError('"output_dir" must be a non-empty string')

        return cls(
            output_dir=os.path.normpath(os.path.join(base_dir, output_dir)),
            meshes=meshes,
            synthetic=synthetic,
            registration=RegistrationConfig.from_dict(data.get('registration', {})),
            ssm=SsmOptions.from_dict(data.get('ssm', {})),
            acoustics=AcousticsOptions.from_dict(data.get('acoustics', {}), base_dir),
        )


def apply_overrides(data, overrides):
    """
    Override keys of a configuration document.

    :param dict data: the configuration document; it isn't modified
    :param iterable overrides: "dotted.key=json" strings; a value that isn't valid JSON is taken
        as a string
    :return: the updated document
    :rtype: dict
    :raises ValidationError: if an override is malformed
    """
    data = deepcopy(data)
    for override in overrides:
        key, separator, raw_value = override.partition('=')
        if not separator or not key:
            raise ValidationError(f'The override "{override}" must have the form dotted.key=value')
        try:
            value = json.loads(raw_value)
        except ValueError:
            value = raw_value

        target = data
        parts = key.split('.')
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ValidationError(f'The override "{override}" does not name an object key')
        target[parts[-1]] = value
    return data


def load_pipeline_config(path, overrides=(), seed=None, output_dir=None):
    """
    Load the pipeline configuration from a JSON file.

    :param str path: the path to the JSON file
    :param iterable overrides: "dotted.key=json" overrides applied before validation
    :param int seed: overrides the seed of a synthetic population
    :param str output_dir: overrides the output directory
    :return: the configuration
    :rtype: PipelineConfig
    :raises ConfigError: if the file can't be read or isn't valid JSON
    :raises ValidationError: if the configuration is invalid
    """
    try:
        with open(path) as config_file:
            data = json.load(config_file)
    except FileNotFoundError:
        raise ConfigError(f'The configuration file "{path}" does not exist')
    except ValueError as error:
        raise ConfigError(f'The configuration file "{path}" is not valid JSON: {error}')

    overrides = list(overrides)
    if seed is not None:
        overrides.append(f'population.synthetic.seed={int(seed)}')
    if output_dir is not None:
        overrides.append(f'output_dir={json.dumps(os.path.abspath(output_dir))}')
    data = apply_overrides(data, overrides)
    if seed is not None and 'meshes' in data.get('population', {}):
        raise ValidationError('A seed only applies to a synthetic population')

    log.debug('Loaded the pipeline configuration from %s', path)
    return PipelineConfig.from_dict(data, os.path.dirname(os.path.abspath(path)))
