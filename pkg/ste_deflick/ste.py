"""
Scale-Time Equalization: every frame's histogram is matched onto each of its
temporal neighbours and the matched intensities are averaged with Gaussian
weights, which yields one lookup table per frame.
"""
from __future__ import annotations
from dataclasses import dataclass
from enum import Enum
from math import exp, pi, sqrt
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ste_deflick.core_image import FrameRGB, FrameSequence, IlluminationMap
from ste_deflick.errors import DimensionMismatchError
from ste_deflick.histogram import (
    CumulativeHistogram,
    Histogram,
    LookupTable,
    LEVELS,
    apply_lut,
    cumulative,
    histogram,
    histogram_of_levels,
    match_levels,
)
from ste_deflick.worker_pool import WorkerPool, serial_pool


class SmoothingKernel(str, Enum):
    GAUSSIAN = "gaussian"
    MEAN = "mean"  # flat weights, the "no scale-time" ablation


class SteSpace(str, Enum):
    ILLUMINATION = "illumination"
    RGB = "rgb"  # each colour channel on its own, ablation only


@dataclass(frozen=True)
class SteParams:
    scale_s: float = 3.5
    window_radius_l: int = 7
    kernel: SmoothingKernel = SmoothingKernel.GAUSSIAN
    space: SteSpace = SteSpace.ILLUMINATION

    def __post_init__(self) -> None:
        if not self.scale_s > 0:
            raise ValueError("Invalid scale_s:{}".format(self.scale_s))
        if self.window_radius_l < 0:
            raise ValueError("Invalid window_radius_l:{}".format(self.window_radius_l))
        object.__setattr__(self, "kernel", SmoothingKernel(self.kernel))
        object.__setattr__(self, "space", SteSpace(self.space))

    @property
    def matches_per_frame(self) -> int:
        # cost of one lookup table, independent of resolution
        return LEVELS * (2 * self.window_radius_l + 1)


@dataclass(frozen=True, eq=False)
class SteResult:
    luts: List[LookupTable]
    filtered_maps: List[IlluminationMap]
    smoothed_hists: List[Histogram]
    hists: List[Histogram]  # H_t of the input maps


def gaussian_kernel(offset: int, scale_s: float) -> float:
    return exp(-(offset * offset) / (4.0 * scale_s)) / sqrt(4.0 * pi * scale_s)


def gaussian_weights(params: SteParams, t: int, T: int) -> List[Tuple[int, float]]:
    """
    (tau, weight) pairs for frame t (1-based) of a T frame sequence. The
    window is cut at the sequence ends and the weights renormalized.
    """
    if not 1 <= t <= T:
        raise ValueError("Invalid frame index {} for {} frames".format(t, T))
    l: int = params.window_radius_l
    taus: List[int] = list(range(max(1, t - l), min(T, t + l) + 1))
    if params.kernel is SmoothingKernel.MEAN:
        raw: List[float] = [1.0] * len(taus)
    else:
        raw = [gaussian_kernel(tau - t, params.scale_s) for tau in taus]
    total: float = sum(raw)
    return [(tau, weight / total) for tau, weight in zip(taus, raw)]


def _lut_from_cdfs(
    t: int, cdfs: Sequence[CumulativeHistogram], params: SteParams
) -> LookupTable:
    entries: np.ndarray = np.zeros(LEVELS)
    for tau, weight in gaussian_weights(params, t, len(cdfs)):
        entries += weight * match_levels(cdfs[t - 1], cdfs[tau - 1])
    # weights sum to 1 only up to rounding
    return LookupTable(np.clip(entries, 0.0, 255.0))


def ste_lut(t: int, hists: Sequence[Histogram], params: SteParams) -> LookupTable:
    if len(hists) < 1:
        raise ValueError("ste_lut needs at least one histogram")
    return _lut_from_cdfs(t, [cumulative(h) for h in hists], params)


def ste_luts(
    hists: Sequence[Histogram], params: SteParams, pool: Optional[WorkerPool] = None
) -> List[LookupTable]:
    """
    One lookup table per frame; frames are independent once the cumulative
    histograms exist.
    """
    pool = pool or serial_pool()
    cdfs: List[CumulativeHistogram] = [cumulative(h) for h in hists]
    return pool.map(
        lambda t: _lut_from_cdfs(t, cdfs, params), list(range(1, len(cdfs) + 1))
    )


def ste_filter(
    maps: Sequence[IlluminationMap],
    params: SteParams,
    pool: Optional[WorkerPool] = None,
) -> SteResult:
    if len(maps) < 1:
        raise ValueError("ste_filter needs a nonempty sequence")
    for m in maps[1:]:
        if m.shape != maps[0].shape:
            raise DimensionMismatchError(
                "ste_filter: size mismatch {} vs {}".format(maps[0].shape, m.shape)
            )
    pool = pool or serial_pool()
    hists: List[Histogram] = pool.map(histogram, list(maps))
    luts: List[LookupTable] = ste_luts(hists, params, pool)
    filtered: List[IlluminationMap] = pool.map(
        lambda pair: apply_lut(pair[0], pair[1]), list(zip(maps, luts))
    )
    smoothed: List[Histogram] = pool.map(histogram, filtered)
    return SteResult(luts, filtered, smoothed, hists)


def ste_filter_rgb(
    frames: FrameSequence, params: SteParams, pool: Optional[WorkerPool] = None
) -> FrameSequence:
    """
    STE applied to R, G and B independently. Recombining three independent
    nonlinear corrections shifts hues; kept to measure exactly that.
    """
    pool = pool or serial_pool()
    stack: np.ndarray = frames.stack()
    corrected: np.ndarray = np.empty(stack.shape, dtype=np.float64)
    for channel in range(3):
        planes: List[np.ndarray] = [stack[i, ..., channel] for i in range(len(frames))]
        hists: List[Histogram] = pool.map(histogram_of_levels, planes)
        luts: List[LookupTable] = ste_luts(hists, params, pool)
        for i, lut in enumerate(luts):
            corrected[i, ..., channel] = lut(planes[i])
    return frames.with_frames([FrameRGB.from_float(c) for c in corrected])


if __name__ == "__main__":
    params: SteParams = SteParams()
    for tau, weight in gaussian_weights(params, 1, 30):
        print(tau, round(weight, 4))
