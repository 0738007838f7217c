# SPDX-License-Identifier: GPL-3.0-or-later
from dataclasses import asdict, dataclass, fields

from canalatlas.errors import ValidationError


__all__ = ['RegistrationConfig']


@dataclass(frozen=True)
class RegistrationConfig:
    """The settings of pairwise registration and groupwise atlas construction."""

    # Weight of the bending energy; "lambda" in JSON
    bending_weight: float = 0.01
    narrowband_width: float = 4.0
    pyramid_levels: int = 3
    max_iterations: int = 100
    gradient_tolerance: float = 1e-6
    smoothing_sigma: float = 1.0
    # Control point spacing of the finest FFD level in mm; coarser levels double it
    lattice_spacing: float = 2.0
    grid_spacing: float = 0.5
    # Voxels between the population bounding box and the common grid border
    grid_margin: int = 8
    atlas_tolerance: float = 0.05
    atlas_max_iterations: int = 10

    def __post_init__(self):
        if self.bending_weight < 0:
            raise ValidationError('The registration lambda must not be negative')
        if not self.narrowband_width > 0:
            raise ValidationError('The narrow band width must be positive')
        if int(self.pyramid_levels) != self.pyramid_levels or self.pyramid_levels < 1:
            raise ValidationError('The number of pyramid levels must be a positive integer')
        if self.max_iterations < 1 or self.atlas_max_iterations < 1:
            raise ValidationError('The iteration limits must be positive')
        for name in ('smoothing_sigma', 'gradient_tolerance', 'atlas_tolerance'):
            if getattr(self, name) < 0:
                raise ValidationError(f'The registration setting "{name}" must not be negative')
        for name in ('lattice_spacing', 'grid_spacing'):
            if not getattr(self, name) > 0:
                raise ValidationError(f'The registration setting "{name}" must be positive')
        if self.grid_margin < 2:
            raise ValidationError('The grid margin must be at least 2 voxels')

    @classmethod
    def from_dict(cls, data):
        """
        Create the settings from a JSON-compatible dictionary.

        :param dict data: the settings; "lambda" is accepted for bending_weight
        :return: the settings
        :rtype: RegistrationConfig
        :raises ValidationError: if a key is unknown or a value is invalid
        """
        data = dict(data)
        if 'lambda' in data:
            data['bending_weight'] = data.pop('lambda')
        valid_keys = {field.name for field in fields(cls)}
        invalid_keys = set(data) - valid_keys
        if invalid_keys:
            raise ValidationError(
                'The following keys are not valid for the registration: {}'.format(
                    ', '.join(sorted(invalid_keys)))
            )
        return cls(**data)

    def to_dict(self):
        data = asdict(self)
        data['lambda'] = data.pop('bending_weight')
        return data

    def level_factor(self, level):
        """
        Get the grid coarsening factor of a pyramid level, counted from the coarsest.

        :param int level: the level, 0 being the coarsest
        :return: the integer factor
        :rtype: int
        """
        return 2 ** (self.pyramid_levels - 1 - level)
