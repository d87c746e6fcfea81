from __future__ import annotations
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np

from ste_deflick.core_image import IlluminationMap

LEVELS: int = 256  # 8-bit intensities
_TOLERANCE: float = 1e-9


def _frozen_vector(values: np.ndarray, name: str) -> np.ndarray:
    vector: np.ndarray = np.array(values, dtype=np.float64)
    if vector.shape != (LEVELS,):
        raise ValueError("Invalid {} shape:{}".format(name, vector.shape))
    vector.setflags(write=False)
    return vector


@dataclass(frozen=True, eq=False)
class Histogram:
    """
    bins[r] is the fraction of pixels having intensity r.
    """

    bins: np.ndarray

    def __post_init__(self) -> None:
        bins: np.ndarray = _frozen_vector(self.bins, "histogram")
        if bins.min() < 0:
            raise ValueError("Histogram bins must be nonnegative")
        if abs(bins.sum() - 1.0) > _TOLERANCE:
            raise ValueError("Histogram bins must sum to 1, got {}".format(bins.sum()))
        object.__setattr__(self, "bins", bins)

    @property
    def populated(self) -> np.ndarray:
        return np.flatnonzero(self.bins > 0)

    def to_csv(self, file: Union[str, Path]) -> None:
        # 256 lines of "bin,value"
        lines: List[str] = [
            "{},{!r}".format(level, float(value))
            for level, value in enumerate(self.bins)
        ]
        Path(file).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True, eq=False)
class CumulativeHistogram:
    values: np.ndarray

    def __post_init__(self) -> None:
        values: np.ndarray = _frozen_vector(self.values, "cumulative histogram")
        if np.any(np.diff(values) < -_TOLERANCE):
            raise ValueError("Cumulative histogram must be non-decreasing")
        if abs(values[-1] - 1.0) > _TOLERANCE:
            raise ValueError("Cumulative histogram must end at 1")
        object.__setattr__(self, "values", values)

    def inverse(self, p: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """
        Hist^{-1}(p): with j the smallest level where values[j] >= p, the
        answer is j - 1 + (p - values[j - 1]) / (values[j] - values[j - 1]),
        values[-1] read as 0. A flat step answers j. Clipped to [0, 255].
        """
        p = np.asarray(p, dtype=np.float64)
        values: np.ndarray = self.values
        j: np.ndarray = np.minimum(
            np.searchsorted(values, p - _TOLERANCE, side="left"), LEVELS - 1
        )
        below: np.ndarray = np.where(j > 0, values[j - 1], 0.0)
        step: np.ndarray = values[j] - below
        rising: np.ndarray = step > 0
        fraction: np.ndarray = np.clip(
            (p - below) / np.where(rising, step, 1.0), 0.0, 1.0
        )
        found: np.ndarray = np.where(rising, j - 1 + fraction, j)
        return np.clip(found, 0.0, LEVELS - 1.0)


@dataclass(frozen=True, eq=False)
class LookupTable:
    """
    entries[level] is the corrected (real valued) intensity for that level.
    """

    entries: np.ndarray

    def __post_init__(self) -> None:
        entries: np.ndarray = _frozen_vector(self.entries, "lookup table")
        if entries.min() < 0 or entries.max() > 255:
            raise ValueError("Lookup table entries must lie in [0, 255]")
        if np.any(np.diff(entries) < -_TOLERANCE):
            raise ValueError("Lookup table must be non-decreasing")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def identity(cls) -> LookupTable:
        return cls(np.arange(LEVELS, dtype=np.float64))

    def __call__(self, levels: np.ndarray) -> np.ndarray:
        return self.entries[levels]


def histogram_of_levels(levels: np.ndarray) -> Histogram:
    """
    Histogram of an integer array of intensity levels (any shape).
    """
    flat: np.ndarray = np.asarray(levels).ravel()
    if flat.size == 0:
        raise ValueError("Cannot build the histogram of an empty image")
    counts: np.ndarray = np.bincount(np.clip(flat, 0, LEVELS - 1), minlength=LEVELS)
    return Histogram(counts / flat.size)


def histogram(map: IlluminationMap) -> Histogram:
    return histogram_of_levels(map.levels())


def cumulative(hist: Histogram) -> CumulativeHistogram:
    return CumulativeHistogram(np.cumsum(hist.bins))


def match_value(
    level: int, source_cdf: CumulativeHistogram, target_cdf: CumulativeHistogram
) -> float:
    """
    Hist'^{-1}(Hist(level)): where an intensity lands when the source
    distribution is pushed onto the target one.
    """
    if not 0 <= level < LEVELS:
        raise ValueError("Invalid intensity level:{}".format(level))
    return float(target_cdf.inverse(source_cdf.values[level]))


def match_levels(
    source_cdf: CumulativeHistogram, target_cdf: CumulativeHistogram
) -> np.ndarray:
    # match_value for every level at once
    return np.asarray(target_cdf.inverse(source_cdf.values), dtype=np.float64)


def match_lut(source: Histogram, target: Histogram) -> LookupTable:
    return LookupTable(match_levels(cumulative(source), cumulative(target)))


def apply_lut(
    map: IlluminationMap, lut: Union[LookupTable, np.ndarray]
) -> IlluminationMap:
    """
    Replace every pixel by its table entry. A bare array of 256 entries is
    accepted for tables that need not be monotone.
    """
    if isinstance(lut, LookupTable):
        return IlluminationMap(lut(map.levels()))
    entries: np.ndarray = np.asarray(lut, dtype=np.float64)
    if entries.shape != (LEVELS,):
        raise ValueError("Invalid lookup table shape:{}".format(entries.shape))
    return IlluminationMap(entries[map.levels()])


def kolmogorov_distance(a: CumulativeHistogram, b: CumulativeHistogram) -> float:
    return float(np.max(np.abs(a.values - b.values)))


if __name__ == "__main__":
    # two-level source pushed onto a two-level target
    source: np.ndarray = np.zeros(LEVELS)
    source[[0, 255]] = 0.5
    target: np.ndarray = np.zeros(LEVELS)
    target[[100, 200]] = 0.5
    lut: LookupTable = match_lut(Histogram(source), Histogram(target))
    print("0 ->", lut.entries[0])  # 100
    print("255 ->", lut.entries[255])  # 200
