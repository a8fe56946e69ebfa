"""
shelfscan
~~~~~~~~~

:license: MIT, see LICENSE for more details.
"""


class ShelfscanException(Exception):
    """The parent class of the library exceptions.

    The class hierarchy for the library exceptions is:

    BaseException
     └── Exception
          └── ShelfscanException
               ├── ImageError
               │    ├── ImageDecodeError
               │    ├── ImageEncodeError
               │    ├── ImageFetchError
               │    ├── DimensionMismatchError
               │    ├── EmptyRegionError
               │    └── InvalidParameterError
               ├── FeatureFileError
               │    ├── SchemaError
               │    ├── DescriptorLengthError
               │    └── PointOutOfBoundsError
               ├── EmptyFeatureSetError
               ├── EmptyMatchListError
               ├── VoteOutOfBoundsError
               ├── EmptyGroupError
               ├── ConfigError
               │    ├── UnknownKeyError
               │    └── InvalidValueError
               ├── SuiteSpecError
               ├── PlacementOverflowError
               ├── EmptyPatternListError
               └── OutputWriteError
    """


class ImageError(ShelfscanException):
    """The parent class of the raster-level errors.
    """


class ImageDecodeError(ImageError):
    """The input image cannot be read or decoded.
    """


class ImageEncodeError(ImageError):
    """The image cannot be encoded to the requested format.
    """


class ImageFetchError(ImageError):
    """A remote image could not be downloaded.
    """


class DimensionMismatchError(ImageError):
    """Two images that must share dimensions do not.
    """


class EmptyRegionError(ImageError):
    """The requested region does not intersect the image.
    """


class InvalidParameterError(ImageError):
    """A raster operation received an out-of-range parameter.
    """


class FeatureFileError(ShelfscanException):
    """The parent class of the feature file parse errors.
    """


class SchemaError(FeatureFileError):
    """The feature file does not conform to the schema.
    """


class DescriptorLengthError(FeatureFileError):
    """A point carries a descriptor of the wrong length.
    """


class PointOutOfBoundsError(FeatureFileError):
    """A point lies outside the image bounds.
    """


class EmptyFeatureSetError(ShelfscanException):
    """An index cannot be built over an empty feature set.
    """


class EmptyMatchListError(ShelfscanException):
    """A distance threshold needs at least one match.
    """


class VoteOutOfBoundsError(ShelfscanException):
    """A vote is positioned outside the scene.
    """


class EmptyGroupError(ShelfscanException):
    """An envelope cannot be estimated from an empty vote group.
    """


class ConfigError(ShelfscanException):
    """The parent class of the configuration errors.
    """


class UnknownKeyError(ConfigError):
    """The configuration names a section or key that does not exist.
    """


class InvalidValueError(ConfigError):
    """A configuration value has the wrong type or is out of range.
    """


class SuiteSpecError(ShelfscanException):
    """A benchmark suite or scene specification is invalid.
    """


class PlacementOverflowError(ShelfscanException):
    """The requested placements do not fit into the scene.
    """


class EmptyPatternListError(ShelfscanException):
    """A multi-product run needs at least one pattern.
    """


class OutputWriteError(ShelfscanException):
    """Writing an output file to the disk failed.
    """


error_codes = {
    "IMAGE_DECODE": ImageDecodeError,
    "IMAGE_ENCODE": ImageEncodeError,
    "IMAGE_FETCH": ImageFetchError,
    "DIMENSION_MISMATCH": DimensionMismatchError,
    "EMPTY_REGION": EmptyRegionError,
    "INVALID_PARAMETER": InvalidParameterError,
    "FEATURE_SCHEMA": SchemaError,
    "DESCRIPTOR_LENGTH": DescriptorLengthError,
    "POINT_OUT_OF_BOUNDS": PointOutOfBoundsError,
    "EMPTY_FEATURE_SET": EmptyFeatureSetError,
    "EMPTY_MATCH_LIST": EmptyMatchListError,
    "VOTE_OUT_OF_BOUNDS": VoteOutOfBoundsError,
    "EMPTY_GROUP": EmptyGroupError,
    "UNKNOWN_KEY": UnknownKeyError,
    "INVALID_VALUE": InvalidValueError,
    "SUITE_SPEC": SuiteSpecError,
    "PLACEMENT_OVERFLOW": PlacementOverflowError,
    "EMPTY_PATTERN_LIST": EmptyPatternListError,
    "OUTPUT_WRITE": OutputWriteError,
}


def code_of(error: BaseException) -> str:
    """Look up the error code of an exception instance.

    Args:
        error (BaseException): The raised exception.

    Returns:
        str: The most specific code registered for the exception class,
        or `OTHER` if none matches.
    """

    for klass in type(error).__mro__:
        for code, registered in error_codes.items():
            if registered is klass:
                return code
    return "OTHER"
