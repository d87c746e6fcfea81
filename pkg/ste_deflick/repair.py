"""
Stage 2 and 3 repairs: global correction through the STE lookup tables, local
repair of exposure-damaged regions from flow-aligned neighbours, and an
optional temporal blend.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ste_deflick.core_image import (
    FrameRGB,
    FrameSequence,
    IlluminationMap,
    apply_illumination,
)
from ste_deflick.errors import check_same_shape
from ste_deflick.flow import FlowPair, border_validity, occlusion_mask, warp_array
from ste_deflick.priors import ExposureMask

FLAT_DEVIATION: float = 1.0  # mean squared tile deviation, in levels^2


@dataclass(frozen=True)
class RepairParams:
    enable_local: bool = True
    enable_global: bool = True
    blend_conf_power: float = 1.0
    temporal_blend_alpha: float = 0.0  # 0 disables stage 3
    gate_tiles: int = 8  # 0 applies the global correction in full
    gate_concentration: Tuple[float, float] = (0.7, 0.85)

    def __post_init__(self) -> None:
        if self.blend_conf_power < 0:
            raise ValueError(
                "Invalid blend_conf_power:{}".format(self.blend_conf_power)
            )
        if not 0.0 <= self.temporal_blend_alpha <= 1.0:
            raise ValueError(
                "Invalid temporal_blend_alpha:{}".format(self.temporal_blend_alpha)
            )
        if self.gate_tiles < 0:
            raise ValueError("Invalid gate_tiles:{}".format(self.gate_tiles))
        low, high = self.gate_concentration
        if not 0.0 <= low < high <= 1.0:
            raise ValueError(
                "Invalid gate_concentration:{}".format(self.gate_concentration)
            )
        object.__setattr__(self, "gate_concentration", (float(low), float(high)))


class NeighbourFlows(NamedTuple):
    """
    Flow pairs between the repaired frame t and its neighbours; s is the
    neighbour in both pairs. None at the clip ends.
    """

    prev: Optional[FlowPair]
    next: Optional[FlowPair]


def global_correct(
    frame: FrameRGB,
    v: IlluminationMap,
    filtered_v: IlluminationMap,
    strength: float = 1.0,
) -> FrameRGB:
    """
    Move the illumination strength of the way from v to filtered_v. Any
    strength keeps the correction a per-level lookup table.
    """
    if not 0.0 <= strength <= 1.0:
        raise ValueError("Invalid strength:{}".format(strength))
    if strength == 1.0:
        return apply_illumination(frame, v, filtered_v)
    target: np.ndarray = v.data + strength * (filtered_v.data - v.data)
    return apply_illumination(frame, v, IlluminationMap(target))


def tile_means(map: IlluminationMap, tiles: int) -> np.ndarray:
    """
    Mean illumination over a tiles x tiles grid, fewer tiles on maps smaller
    than the grid.
    """
    if tiles < 1:
        raise ValueError("Invalid tiles:{}".format(tiles))
    data: np.ndarray = map.data
    starts: List[np.ndarray] = []
    sizes: List[np.ndarray] = []
    for extent in data.shape:
        n: int = min(tiles, extent)
        edges: np.ndarray = (np.arange(n + 1) * extent) // n
        starts.append(edges[:-1])
        sizes.append(np.diff(edges))
    sums: np.ndarray = np.add.reduceat(
        np.add.reduceat(data, starts[0], axis=0), starts[1], axis=1
    )
    return sums / np.outer(sizes[0], sizes[1])


def tile_deviation(
    means: Sequence[np.ndarray], weights: Sequence[Tuple[int, float]], t: int
) -> np.ndarray:
    """
    Tile means of frame t (1-based) minus their weighted temporal average;
    weights are the (tau, weight) pairs of the frame's STE window.
    """
    reference: np.ndarray = sum(w * means[tau - 1] for tau, w in weights)
    return means[t - 1] - reference


def correction_strength(deviation: np.ndarray, params: RepairParams) -> float:
    """
    Share of the global correction a frame receives: 1 while the deviation
    energy is spread over the tiles, falling to 0 as the top quarter of the
    tiles takes gate_concentration[1] of it (local flicker).
    """
    energy: np.ndarray = np.sort((deviation * deviation).ravel())[::-1]
    if energy.size < 4 or energy.mean() <= FLAT_DEVIATION:
        return 1.0
    top: float = float(energy[: energy.size // 4].sum() / energy.sum())
    low, high = params.gate_concentration
    return float(np.clip((high - top) / (high - low), 0.0, 1.0))


def _confidence(pair: FlowPair, power: float, fb_threshold: float) -> np.ndarray:
    valid: np.ndarray = occlusion_mask(pair.s_to_t, pair.t_to_s, fb_threshold).data
    return valid.astype(np.float64) ** power * border_validity(pair.s_to_t)


def local_repair(
    prev: Optional[FrameRGB],
    cur: FrameRGB,
    next: Optional[FrameRGB],
    mask: ExposureMask,
    flows: NeighbourFlows,
    params: RepairParams,
    fb_threshold: float = 1.0,
) -> FrameRGB:
    """
    Inside the mask, replace cur by the confidence weighted average of the
    two warped neighbours; keep cur where no neighbour is trusted.
    """
    check_same_shape("local_repair", cur.shape, mask.shape)
    if mask.empty:
        return cur
    current: np.ndarray = cur.data.astype(np.float64)
    total: np.ndarray = np.zeros(current.shape)
    weight: np.ndarray = np.zeros(mask.shape)
    for neighbour, pair in ((prev, flows.prev), (next, flows.next)):
        if neighbour is None or pair is None:
            continue  # clip end
        check_same_shape("local_repair", cur.shape, neighbour.shape, pair.s_to_t.shape)
        confidence: np.ndarray = _confidence(
            pair, params.blend_conf_power, fb_threshold
        )
        total += confidence[..., None] * warp_array(neighbour.data, pair.s_to_t)
        weight += confidence
    with np.errstate(divide="ignore", invalid="ignore"):
        blended: np.ndarray = np.where(
            weight[..., None] > 0, total / weight[..., None], current
        )
    return FrameRGB.from_float(np.where(mask.data[..., None], blended, current))


def temporal_blend(
    sequence: FrameSequence,
    flows: Sequence[FlowPair],
    alpha: float,
    fb_threshold: float = 1.0,
) -> FrameSequence:
    """
    O_t = (1 - alpha) * frame_t + alpha * warp(O_{t-1}) where the flow from
    t-1 is trusted, frame_t elsewhere. flows[i] pairs frame i+1 (s) with
    frame i+2 (t), 1-based.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("Invalid alpha:{}".format(alpha))
    if alpha == 0.0 or len(sequence) < 2:
        return sequence
    if len(flows) != len(sequence) - 1:
        raise ValueError(
            "temporal_blend needs {} flow pairs, got {}".format(
                len(sequence) - 1, len(flows)
            )
        )
    running: np.ndarray = sequence[0].data.astype(np.float64)
    blended: List[FrameRGB] = [sequence[0]]
    for frame, pair in zip(list(sequence)[1:], flows):
        check_same_shape("temporal_blend", frame.shape, pair.s_to_t.shape)
        current: np.ndarray = frame.data.astype(np.float64)
        valid: np.ndarray = occlusion_mask(pair.s_to_t, pair.t_to_s, fb_threshold).data
        carried: np.ndarray = warp_array(running, pair.s_to_t)
        # keep the running output real valued, quantize on emission only
        running = np.where(
            valid[..., None], (1.0 - alpha) * current + alpha * carried, current
        )
        blended.append(FrameRGB.from_float(running))
    return sequence.with_frames(blended)
