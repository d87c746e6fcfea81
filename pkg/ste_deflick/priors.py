from __future__ import annotations
from dataclasses import dataclass
from enum import Enum
from math import fsum
from typing import FrozenSet, List, Optional, Sequence, Set

import numpy as np

from ste_deflick.core_image import FrameSequence, IlluminationMap, illumination_map
from ste_deflick.histogram import Histogram, LookupTable, histogram
from ste_deflick.ste import SteParams, SteResult, ste_filter
from ste_deflick.worker_pool import WorkerPool, serial_pool

KL_SMOOTHING: float = 1e-8


class ExposureSource(str, Enum):
    FILTERED = "filtered"  # threshold the filtered map only
    INPUT = "input"  # threshold the input map only
    BOTH = "both"  # union of the two


@dataclass(frozen=True)
class PriorParams:
    ma_radius_n: int = 2
    kl_margin_rho: float = 1.0
    kl_floor: float = 0.0
    dark_eps1: float = 10.0
    bright_eps2: float = 245.0
    kl_smoothing: float = KL_SMOOTHING
    exposure_source: ExposureSource = ExposureSource.FILTERED

    def __post_init__(self) -> None:
        if self.ma_radius_n < 0:
            raise ValueError("Invalid ma_radius_n:{}".format(self.ma_radius_n))
        if not self.kl_margin_rho > 0:
            raise ValueError("Invalid kl_margin_rho:{}".format(self.kl_margin_rho))
        if self.kl_floor < 0:
            raise ValueError("Invalid kl_floor:{}".format(self.kl_floor))
        if not 0 <= self.dark_eps1 <= 255 or not 0 <= self.bright_eps2 <= 255:
            raise ValueError("Exposure thresholds must lie in [0, 255]")
        if not self.dark_eps1 < self.bright_eps2:
            raise ValueError(
                "Invalid thresholds: dark_eps1 {} must be below bright_eps2 {}".format(
                    self.dark_eps1, self.bright_eps2
                )
            )
        if not self.kl_smoothing > 0:
            raise ValueError("Invalid kl_smoothing:{}".format(self.kl_smoothing))
        object.__setattr__(
            self, "exposure_source", ExposureSource(self.exposure_source)
        )


@dataclass(frozen=True, eq=False)
class ExposureMask:
    """
    1 (True) where a pixel is at risk of being under- or over-exposed.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        data: np.ndarray = np.array(self.data, dtype=bool)
        if data.ndim != 2 or data.size == 0:
            raise ValueError("Invalid exposure mask shape:{}".format(data.shape))
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def fraction(self) -> float:
        return float(self.data.mean())

    @property
    def empty(self) -> bool:
        return not self.data.any()

    def __or__(self, other: ExposureMask) -> ExposureMask:
        return ExposureMask(self.data | other.data)


@dataclass(frozen=True, eq=False)
class DeflickerPriors:
    illumination: List[IlluminationMap]  # V_t
    filtered_maps: List[IlluminationMap]  # V~_t
    luts: List[LookupTable]
    hists: List[Histogram]
    smoothed_hists: List[Histogram]
    singular: FrozenSet[int]  # 1-based frame indices
    exposure: List[ExposureMask]
    kl_series: List[float]
    thresholds: List[float]  # moving average of the KL series

    def __len__(self) -> int:
        return len(self.filtered_maps)


def kl_divergence(p: Histogram, q: Histogram, smoothing: float = KL_SMOOTHING) -> float:
    """
    KL(p || q) in nats, after adding `smoothing` to every bin of both sides.
    """
    smoothed_p: np.ndarray = p.bins + smoothing
    smoothed_p /= smoothed_p.sum()
    smoothed_q: np.ndarray = q.bins + smoothing
    smoothed_q /= smoothed_q.sum()
    value: float = float(np.sum(smoothed_p * np.log(smoothed_p / smoothed_q)))
    return max(0.0, value)


def _window(t: int, n: int, T: int) -> range:
    # 0-based positions of the moving average window around position t
    return range(max(0, t - n), min(T, t + n + 1))


def moving_average(series: Sequence[float], n: int) -> List[float]:
    """
    Mean over [t-n, t+n], cut at the ends and averaged over what remains.
    """
    values: List[float] = [float(v) for v in series]
    T: int = len(values)
    averages: List[float] = []
    for t in range(T):
        window: range = _window(t, n, T)
        averages.append(fsum(values[i] for i in window) / len(window))
    return averages


def singular_frames(kl_series: Sequence[float], params: PriorParams) -> Set[int]:
    """
    1-based indices t with kl[t] > max(rho * mean of kl over [t-n, t+n], floor).
    """
    values: List[float] = [float(v) for v in kl_series]
    T: int = len(values)
    if T < 1:
        raise ValueError("singular_frames needs a nonempty series")
    flagged: Set[int] = set()
    for t in range(T):
        window: range = _window(t, params.ma_radius_n, T)
        # compare sums, not means: a constant window then ties exactly
        window_sum: float = fsum(values[i] for i in window)
        margin: float = params.kl_margin_rho * window_sum
        above_average: bool = values[t] * len(window) > margin
        if above_average and values[t] > params.kl_floor:
            flagged.add(t + 1)
    return flagged


def exposure_map(filtered: IlluminationMap, params: PriorParams) -> ExposureMask:
    data: np.ndarray = filtered.data
    return ExposureMask((data < params.dark_eps1) | (data > params.bright_eps2))


def _frame_exposure(
    v: IlluminationMap, filtered: IlluminationMap, params: PriorParams
) -> ExposureMask:
    if params.exposure_source is ExposureSource.FILTERED:
        return exposure_map(filtered, params)
    if params.exposure_source is ExposureSource.INPUT:
        return exposure_map(v, params)
    return exposure_map(filtered, params) | exposure_map(v, params)


def extract_priors(
    frames: FrameSequence,
    ste: SteParams,
    pp: PriorParams,
    pool: Optional[WorkerPool] = None,
) -> DeflickerPriors:
    pool = pool or serial_pool()
    maps: List[IlluminationMap] = pool.map(illumination_map, list(frames))
    result: SteResult = ste_filter(maps, ste, pool)
    hists: List[Histogram] = result.hists
    kl_series: List[float] = pool.map(
        lambda pair: kl_divergence(pair[0], pair[1], pp.kl_smoothing),
        list(zip(result.smoothed_hists, hists)),
    )
    exposure: List[ExposureMask] = pool.map(
        lambda pair: _frame_exposure(pair[0], pair[1], pp),
        list(zip(maps, result.filtered_maps)),
    )
    return DeflickerPriors(
        illumination=maps,
        filtered_maps=result.filtered_maps,
        luts=result.luts,
        hists=hists,
        smoothed_hists=result.smoothed_hists,
        singular=frozenset(singular_frames(kl_series, pp)),
        exposure=exposure,
        kl_series=kl_series,
        thresholds=moving_average(kl_series, pp.ma_radius_n),
    )
