"""
The three stage deflickering pipeline:

1. priors: STE lookup tables, filtered illumination, singular frames and
   exposure masks;
2. repair: global correction of every frame, weakened where the flicker is
   local, then local repair of the singular frames that carry exposure damage;
3. an optional temporal blend.
"""
from __future__ import annotations
from dataclasses import asdict
from enum import Enum
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple, Union
import logging
import timeit

import numpy as np

from ste_deflick.core_image import FrameRGB, FrameSequence
from ste_deflick.flow import FlowPair, FlowParams, FlowSource
from ste_deflick.priors import DeflickerPriors, PriorParams, extract_priors
from ste_deflick.repair import (
    NeighbourFlows,
    RepairParams,
    correction_strength,
    global_correct,
    local_repair,
    temporal_blend,
    tile_deviation,
    tile_means,
)
from ste_deflick.ste import SteParams, SteSpace, gaussian_weights, ste_filter_rgb
from ste_deflick.worker_pool import WorkerPool, serial_pool

logger = logging.getLogger(__name__)


def timing(f: Callable) -> Callable:
    @wraps(f)
    def wrap(*args, **kwargs) -> Tuple[Any, float]:
        start: float = timeit.default_timer()
        ret = f(*args, **kwargs)
        taken: float = (timeit.default_timer() - start) * 1000.0  # in ms
        return ret, taken

    return wrap


class PipelineResult(NamedTuple):
    frames: FrameSequence
    priors: DeflickerPriors
    report: Dict[str, Any]


def plain(params: Any) -> Dict[str, Any]:
    """
    Dataclass parameters as JSON-ready values (enums by value, tuples as lists).
    """

    def convert(value: Any) -> Any:
        if isinstance(value, Enum):
            return value.value
        if isinstance(value, (tuple, list)):
            return [convert(v) for v in value]
        return value

    return {key: convert(value) for key, value in asdict(params).items()}


@timing
def _stage_priors(
    frames: FrameSequence, ste: SteParams, prior: PriorParams, pool: WorkerPool
) -> DeflickerPriors:
    return extract_priors(frames, ste, prior, pool)


@timing
def _stage_global(
    frames: FrameSequence,
    priors: DeflickerPriors,
    ste: SteParams,
    repair: RepairParams,
    pool: WorkerPool,
) -> Tuple[FrameSequence, List[float]]:
    T: int = len(frames)
    if not repair.enable_global:
        return frames, [0.0] * T
    if ste.space is SteSpace.RGB:
        return ste_filter_rgb(frames, ste, pool), [1.0] * T
    strengths: List[float] = [1.0] * T
    if repair.gate_tiles > 0:
        means: List[np.ndarray] = pool.map(
            lambda v: tile_means(v, repair.gate_tiles), list(priors.illumination)
        )
        strengths = pool.map(
            lambda t: correction_strength(
                tile_deviation(means, gaussian_weights(ste, t, T), t), repair
            ),
            list(range(1, T + 1)),
        )
    corrected: List[FrameRGB] = pool.map(
        lambda t: global_correct(
            frames[t],
            priors.illumination[t],
            priors.filtered_maps[t],
            strengths[t],
        ),
        list(range(T)),
    )
    return frames.with_frames(corrected), strengths


def _neighbour_flows(
    t: int, T: int, source: FlowSource, weight: np.ndarray
) -> NeighbourFlows:
    return NeighbourFlows(
        prev=source.pair(t - 1, t, weight) if t > 1 else None,
        next=source.pair(t + 1, t, weight) if t < T else None,
    )


@timing
def _stage_local(
    frames: FrameSequence,
    targets: List[int],
    priors: DeflickerPriors,
    source: FlowSource,
    repair: RepairParams,
    fb_threshold: float,
    pool: WorkerPool,
) -> FrameSequence:
    T: int = len(frames)

    def repair_frame(t: int) -> FrameRGB:
        mask = priors.exposure[t - 1]
        # the damaged region has no usable texture, keep it out of the flow fit
        flows: NeighbourFlows = _neighbour_flows(
            t, T, source, 1.0 - mask.data.astype(np.float64)
        )
        return local_repair(
            frames[t - 2] if t > 1 else None,
            frames[t - 1],
            frames[t] if t < T else None,
            mask,
            flows,
            repair,
            fb_threshold,
        )

    # neighbours are always read from the globally corrected frames
    repaired: List[FrameRGB] = pool.map(repair_frame, targets)
    out: List[FrameRGB] = list(frames)
    for t, frame in zip(targets, repaired):
        out[t - 1] = frame
    return frames.with_frames(out)


@timing
def _stage_temporal(
    frames: FrameSequence,
    flow: FlowParams,
    alpha: float,
    pool: WorkerPool,
    flow_dir: Optional[Union[str, Path]] = None,
) -> Tuple[FrameSequence, FlowSource]:
    source: FlowSource = FlowSource(frames, flow, flow_dir)
    flows: List[FlowPair] = pool.map(
        lambda t: source.pair(t - 1, t), list(range(2, len(frames) + 1))
    )
    return temporal_blend(frames, flows, alpha, flow.fb_threshold), source


def deflicker_pipeline(
    frames: FrameSequence,
    ste: SteParams = SteParams(),
    prior: PriorParams = PriorParams(),
    flow: FlowParams = FlowParams(),
    repair: RepairParams = RepairParams(),
    pool: Optional[WorkerPool] = None,
    flow_dir: Optional[Union[str, Path]] = None,
) -> PipelineResult:
    pool = pool or serial_pool()
    T: int = len(frames)
    timings: Dict[str, float] = {}

    priors, timings["priors_ms"] = _stage_priors(frames, ste, prior, pool)
    singular: List[int] = sorted(priors.singular)
    logger.info(f"stage 1: {len(singular)} singular frames out of {T}")

    (corrected, strengths), timings["global_ms"] = _stage_global(
        frames, priors, ste, repair, pool
    )
    gated: List[int] = [t + 1 for t, k in enumerate(strengths) if k < 1.0]
    if repair.enable_global and gated:
        logger.info(f"stage 2: global correction weakened on frames {gated}")

    targets: List[int] = [t for t in singular if not priors.exposure[t - 1].empty]
    local: Dict[str, Any] = {"status": "ran", "frames": targets}
    flow_report: Dict[str, Any] = {"repair": None, "temporal": None}
    if not repair.enable_local:
        local = {"status": "skipped", "reason": "disabled", "frames": []}
    elif T < 2:
        local = {"status": "skipped", "reason": "single frame", "frames": []}
    elif not targets:
        local = {"status": "skipped", "reason": "no exposure damage", "frames": []}
    if local["status"] == "ran":
        source: FlowSource = FlowSource(corrected, flow, flow_dir)
        corrected, timings["local_ms"] = _stage_local(
            corrected, targets, priors, source, repair, flow.fb_threshold, pool
        )
        flow_report["repair"] = source.describe()
        logger.info(f"stage 2: repaired frames {targets}")
    else:
        timings["local_ms"] = 0.0
        logger.info(f"stage 2: local repair skipped ({local['reason']})")

    temporal: Dict[str, Any] = {
        "status": "skipped",
        "alpha": repair.temporal_blend_alpha,
    }
    timings["temporal_ms"] = 0.0
    if repair.temporal_blend_alpha > 0 and T >= 2:
        (corrected, blend_source), timings["temporal_ms"] = _stage_temporal(
            corrected, flow, repair.temporal_blend_alpha, pool, flow_dir
        )
        temporal["status"] = "ran"
        flow_report["temporal"] = blend_source.describe()
    timings["total_ms"] = sum(timings.values())

    report: Dict[str, Any] = {
        "frames": T,
        "width": frames.width,
        "height": frames.height,
        "parameters": {
            "ste": plain(ste),
            "priors": plain(prior),
            "flow": plain(flow),
            "repair": plain(repair),
        },
        "singular": singular,
        "global_strength": [round(k, 6) for k in strengths],
        "stages": {
            "global": "ran" if repair.enable_global else "skipped",
            "local": local,
            "temporal": temporal,
        },
        "flow": flow_report,
        "lut_matches_per_frame": ste.matches_per_frame,
        "timings": timings,
    }
    return PipelineResult(corrected, priors, report)
