class DeflickerError(Exception):
    """
    Root of every error raised on purpose by this package.
    """


class DimensionMismatchError(DeflickerError, ValueError):
    pass


class FrameSourceError(DeflickerError, OSError):
    pass


class FlowFormatError(DeflickerError, ValueError):
    pass


class ConfigError(DeflickerError, ValueError):
    pass


def check_same_shape(name: str, *shapes: tuple) -> None:
    # only (height, width) matters, channel counts may differ
    first = tuple(shapes[0][:2])
    for shape in shapes[1:]:
        if tuple(shape[:2]) != first:
            raise DimensionMismatchError(
                "{}: size mismatch {} vs {}".format(name, first, tuple(shape[:2]))
            )
