# SPDX-License-Identifier: GPL-3.0-or-later


class ValidationError(ValueError):
    """An error was encountered during validation."""


class CanalAtlasError(RuntimeError):
    """An error was encountered in canalatlas."""


class ConfigError(CanalAtlasError):
    """An error was encountered during configuration validation."""


class InvalidSpecError(ValidationError):
    """A canal specification violates its invariants."""


class FaceIndexError(ValidationError):
    """A face references a vertex index that does not exist."""


class NonSimpleLoopError(ValidationError):
    """A boundary loop visits the same vertex more than once."""


class MeshNotClosedError(ValidationError):
    """A closed surface was required but the mesh has boundary edges."""


class GridTooSmallError(ValidationError):
    """The sampling grid does not contain the mesh with the required margin."""


class InvalidRangeError(ValidationError):
    """A numeric range is empty or inverted."""


class OutOfRangeError(ValidationError):
    """A position or frequency lies outside the supported range."""


class GridMismatchError(ValidationError):
    """Curves that must share a frequency grid do not."""


class TooManyCoefficientsError(ValidationError):
    """More shape coefficients were supplied than the model has modes."""


class MeshParseError(CanalAtlasError):
    """A mesh file could not be parsed."""

    def __init__(self, message, line_number=None):
        """
        Initialize the error.

        :param str message: the error message
        :param int line_number: the 1-based line the parser failed on
        """
        if line_number is not None:
            message = f'{message} (line {line_number})'
        super().__init__(message)
        self.line_number = line_number


class EmptyMeshError(CanalAtlasError):
    """An operation needs at least one triangle."""


class EmptyLevelSetError(CanalAtlasError):
    """The requested level is not crossed by the field."""


class NotTubularError(CanalAtlasError):
    """Cross-section slicing did not find a single closed section."""


class EmptyNarrowbandError(CanalAtlasError):
    """No voxel lies within the narrow band."""


class NoDescentError(CanalAtlasError):
    """The optimizer could not reduce the objective at the coarsest level."""


class DivergedError(CanalAtlasError):
    """The atlas iteration is moving away from a fixed point."""


class RegistrationError(CanalAtlasError):
    """Registering the template to one subject failed."""

    def __init__(self, message, subject_index):
        """
        Initialize the error.

        :param str message: the underlying error message
        :param int subject_index: the index of the subject that failed
        """
        super().__init__(f'Registration of subject {subject_index} failed: {message}')
        self.subject_index = subject_index


class NoResonanceError(CanalAtlasError):
    """No local impedance maximum was found in the search window."""


class SingularSystemError(CanalAtlasError):
    """The FEM system could not be solved at a frequency."""

    def __init__(self, frequency):
        """
        Initialize the error.

        :param float frequency: the frequency in Hz the solve failed at
        """
        super().__init__(f'The FEM system is singular at {frequency:.6g} Hz')
        self.frequency = frequency


class MeshTooCoarseWarning(UserWarning):
    """The mesh resolves the highest frequency with fewer than six elements per wavelength."""


class DegeneratePopulationWarning(UserWarning):
    """All shapes in the population are identical, so the model has no modes."""
