from __future__ import annotations
from dataclasses import dataclass
from typing import Iterator, List, Sequence, Union

import numpy as np

from ste_deflick.errors import DimensionMismatchError, check_same_shape


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class FrameRGB:
    """
    One 8-bit three channel frame, stored as a read-only (height, width, 3) array.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        data: np.ndarray = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError("Invalid frame shape:{}".format(data.shape))
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("Invalid frame size:{}".format(data.shape[:2]))
        if data.dtype != np.uint8:
            raise ValueError("Invalid frame dtype:{}".format(data.dtype))
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def from_float(cls, values: np.ndarray) -> FrameRGB:
        # the only place where real values become 8-bit
        return cls(np.clip(np.rint(values), 0, 255).astype(np.uint8))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        return "FrameRGB({}x{})".format(self.width, self.height)


@dataclass(frozen=True, eq=False)
class IlluminationMap:
    """
    Per-pixel illumination (HSV value channel). Integer-valued right after
    extraction, real-valued once a correction has been applied.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        data: np.ndarray = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("Invalid illumination shape:{}".format(data.shape))
        if data.size == 0:
            raise ValueError("Invalid illumination size:{}".format(data.shape))
        if not np.all(np.isfinite(data)) or data.min() < 0 or data.max() > 255:
            raise ValueError("Illumination values must lie in [0, 255]")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def levels(self) -> np.ndarray:
        """
        Integer intensity levels (nearest), used to index lookup tables.
        """
        return np.rint(self.data).astype(np.intp)

    def __repr__(self) -> str:
        return "IlluminationMap({}x{})".format(self.width, self.height)


Image = Union[FrameRGB, IlluminationMap]


@dataclass(frozen=True, eq=False)
class FrameSequence:
    frames: Sequence[FrameRGB]
    frame_rate: float = 24.0  # metadata only

    def __post_init__(self) -> None:
        frames: List[FrameRGB] = list(self.frames)
        if len(frames) < 1:
            raise ValueError("A frame sequence needs at least one frame")
        for frame in frames[1:]:
            if frame.shape != frames[0].shape:
                raise DimensionMismatchError(
                    "Frames of one sequence must share a size: {} vs {}".format(
                        frames[0].shape[:2], frame.shape[:2]
                    )
                )
        if self.frame_rate <= 0:
            raise ValueError("Invalid frame rate:{}".format(self.frame_rate))
        object.__setattr__(self, "frames", tuple(frames))

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[FrameRGB]:
        return iter(self.frames)

    def __getitem__(self, index: int) -> FrameRGB:
        return self.frames[index]

    def with_frames(self, frames: Sequence[FrameRGB]) -> FrameSequence:
        return FrameSequence(list(frames), self.frame_rate)

    def stack(self) -> np.ndarray:
        """
        All frames as one (T, height, width, 3) uint8 array.
        """
        return np.stack([f.data for f in self.frames])


def illumination_map(frame: FrameRGB) -> IlluminationMap:
    return IlluminationMap(frame.data.max(axis=2))


def apply_illumination(
    frame: FrameRGB, old_v: IlluminationMap, new_v: IlluminationMap
) -> FrameRGB:
    """
    Rescale every channel by new_v / old_v, which keeps hue and saturation.
    Black pixels (old_v = 0) have no hue, they become gray at level new_v.
    """
    check_same_shape("apply_illumination", frame.shape, old_v.shape, new_v.shape)
    rgb: np.ndarray = frame.data.astype(np.float64)
    old: np.ndarray = old_v.data[..., None]
    new: np.ndarray = new_v.data[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled: np.ndarray = np.where(old > 0, rgb * new / old, new)
    return FrameRGB.from_float(scaled)
