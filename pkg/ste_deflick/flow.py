"""
Dense optical flow (coarse-to-fine local least squares), backward warping,
forward-backward occlusion masks and the Middlebury .flo format.

Convention: a flow o_{s->t} lives on frame t's pixel grid and sends pixel
(x, y) of frame t to (x + u, y + v) in frame s, so warp(frame_s, o_{s->t})
aligns frame s onto frame t.
"""
from __future__ import annotations
from dataclasses import dataclass
from pathlib import Path
from threading import Lock
from typing import Dict, List, NamedTuple, Optional, Tuple, Union
import logging

import numpy as np
from scipy import ndimage

from ste_deflick.core_image import FrameRGB, FrameSequence, IlluminationMap
from ste_deflick.errors import FlowFormatError, check_same_shape

logger = logging.getLogger(__name__)

FLO_MAGIC: float = 202021.25
_REGULARIZER: float = 1e-2  # added to the structure tensor diagonal


@dataclass(frozen=True)
class FlowParams:
    pyramid_levels: int = 3
    window: int = 7
    iterations: int = 3
    fb_threshold: float = 1.0

    def __post_init__(self) -> None:
        if self.pyramid_levels < 1:
            raise ValueError("Invalid pyramid_levels:{}".format(self.pyramid_levels))
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("Invalid window (odd, >= 3):{}".format(self.window))
        if self.iterations < 1:
            raise ValueError("Invalid iterations:{}".format(self.iterations))
        if not self.fb_threshold > 0:
            raise ValueError("Invalid fb_threshold:{}".format(self.fb_threshold))


@dataclass(frozen=True, eq=False)
class FlowField:
    """
    (height, width, 2) float32 displacements (u, v) in pixels.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        data: np.ndarray = np.array(self.data, dtype=np.float32)
        if data.ndim != 3 or data.shape[2] != 2 or 0 in data.shape[:2]:
            raise ValueError("Invalid flow shape:{}".format(data.shape))
        if not np.all(np.isfinite(data)):
            raise ValueError("Flow displacements must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, height: int, width: int) -> FlowField:
        return cls(np.zeros((height, width, 2), dtype=np.float32))

    @classmethod
    def constant(cls, height: int, width: int, u: float, v: float) -> FlowField:
        data: np.ndarray = np.empty((height, width, 2), dtype=np.float32)
        data[..., 0] = u
        data[..., 1] = v
        return cls(data)

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
    def u(self) -> np.ndarray:
        return self.data[..., 0].astype(np.float64)

    @property
    def v(self) -> np.ndarray:
        return self.data[..., 1].astype(np.float64)

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass(frozen=True, eq=False)
class OcclusionMask:
    """
    True where the flow correspondence is trusted.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        data: np.ndarray = np.array(self.data, dtype=bool)
        if data.ndim != 2:
            raise ValueError("Invalid occlusion mask shape:{}".format(data.shape))
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def full(cls, height: int, width: int) -> OcclusionMask:
        return cls(np.ones((height, width), dtype=bool))

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def fraction(self) -> float:
        return float(self.data.mean())


class FlowPair(NamedTuple):
    s_to_t: FlowField  # on t's grid, warps frame s onto t
    t_to_s: FlowField  # on s's grid, warps frame t onto s


Warpable = Union[FrameRGB, IlluminationMap]


def _as_plane(image: Union[Warpable, np.ndarray]) -> np.ndarray:
    # flow is estimated on illumination, max over R, G, B
    if isinstance(image, FrameRGB):
        return image.data.max(axis=2).astype(np.float64)
    if isinstance(image, IlluminationMap):
        return np.asarray(image.data, dtype=np.float64)
    return np.asarray(image, dtype=np.float64)


def _sample_points(flow: FlowField) -> Tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0 : flow.height, 0 : flow.width].astype(np.float64)
    return ys + flow.v, xs + flow.u


def warp_array(values: np.ndarray, flow: FlowField) -> np.ndarray:
    """
    Backward bilinear warp of a (h, w) or (h, w, c) real array, clamping at
    the border.
    """
    check_same_shape("warp", values.shape, flow.shape)
    ys, xs = _sample_points(flow)
    source: np.ndarray = np.asarray(values, dtype=np.float64)
    if source.ndim == 2:
        return ndimage.map_coordinates(source, [ys, xs], order=1, mode="nearest")
    channels: List[np.ndarray] = [
        ndimage.map_coordinates(source[..., c], [ys, xs], order=1, mode="nearest")
        for c in range(source.shape[2])
    ]
    return np.stack(channels, axis=-1)


def warp(image: Warpable, flow: FlowField) -> Warpable:
    if isinstance(image, FrameRGB):
        return FrameRGB.from_float(warp_array(image.data, flow))
    return IlluminationMap(np.clip(warp_array(image.data, flow), 0.0, 255.0))


def border_validity(flow: FlowField) -> np.ndarray:
    """
    1 where the sample point is inside the frame, falling linearly to 0 one
    pixel outside.
    """
    ys, xs = _sample_points(flow)
    out_x: np.ndarray = np.maximum(0.0, np.maximum(-xs, xs - (flow.width - 1)))
    out_y: np.ndarray = np.maximum(0.0, np.maximum(-ys, ys - (flow.height - 1)))
    return np.clip(1.0 - out_x, 0.0, 1.0) * np.clip(1.0 - out_y, 0.0, 1.0)


def occlusion_mask(
    fwd: FlowField, bwd: FlowField, fb_threshold: float
) -> OcclusionMask:
    """
    Valid where p + fwd(p) stays inside the frame and bwd brings it back
    within fb_threshold pixels.
    """
    check_same_shape("occlusion_mask", fwd.shape, bwd.shape)
    ys, xs = _sample_points(fwd)
    inside: np.ndarray = (
        (xs >= 0) & (xs <= fwd.width - 1) & (ys >= 0) & (ys <= fwd.height - 1)
    )
    bwd_at_target: np.ndarray = warp_array(bwd.data, fwd)
    error: np.ndarray = np.hypot(
        fwd.u + bwd_at_target[..., 0], fwd.v + bwd_at_target[..., 1]
    )
    return OcclusionMask(inside & (error <= fb_threshold))


def _pyramid(plane: np.ndarray, levels: int, window: int) -> List[np.ndarray]:
    # finest first; stop before a level gets smaller than the window
    pyramid: List[np.ndarray] = [plane]
    while len(pyramid) < levels and min(pyramid[-1].shape) // 2 >= window:
        blurred: np.ndarray = ndimage.gaussian_filter(pyramid[-1], 1.0, mode="nearest")
        pyramid.append(blurred[::2, ::2])
    return pyramid


def _upsample(flow: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    h, w = shape
    hc, wc = flow.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = [(ys + 0.5) * hc / h - 0.5, (xs + 0.5) * wc / w - 0.5]
    up: np.ndarray = np.empty((h, w, 2))
    up[..., 0] = ndimage.map_coordinates(flow[..., 0], coords, order=1, mode="nearest")
    up[..., 1] = ndimage.map_coordinates(flow[..., 1], coords, order=1, mode="nearest")
    up[..., 0] *= w / wc
    up[..., 1] *= h / hc
    return up


def _refine(
    src: np.ndarray,
    dst: np.ndarray,
    flow: np.ndarray,
    weight: np.ndarray,
    params: FlowParams,
) -> np.ndarray:
    size: int = params.window
    step_limit: float = size / 2.0
    for _ in range(params.iterations):
        warped: np.ndarray = warp_array(src, FlowField(flow))
        gy, gx = np.gradient(warped)
        residual: np.ndarray = warped - dst

        def window_sum(values: np.ndarray) -> np.ndarray:
            return ndimage.uniform_filter(weight * values, size=size, mode="nearest")

        sxx: np.ndarray = window_sum(gx * gx) + _REGULARIZER
        syy: np.ndarray = window_sum(gy * gy) + _REGULARIZER
        sxy: np.ndarray = window_sum(gx * gy)
        sxt: np.ndarray = window_sum(gx * residual)
        syt: np.ndarray = window_sum(gy * residual)
        det: np.ndarray = sxx * syy - sxy * sxy
        du: np.ndarray = (sxy * syt - syy * sxt) / det
        dv: np.ndarray = (sxy * sxt - sxx * syt) / det
        flow = flow + np.clip(np.stack([du, dv], axis=-1), -step_limit, step_limit)
    # a 3x3 median removes isolated outliers before the next level
    flow[..., 0] = ndimage.median_filter(flow[..., 0], size=3, mode="nearest")
    flow[..., 1] = ndimage.median_filter(flow[..., 1], size=3, mode="nearest")
    return flow


def estimate_flow(
    src: Union[Warpable, np.ndarray],
    dst: Union[Warpable, np.ndarray],
    params: FlowParams = FlowParams(),
    weight: Optional[np.ndarray] = None,
) -> FlowField:
    """
    o_{src->dst}: warp(src, flow) approximates dst. `weight` (on dst's grid,
    values in [0, 1]) scales each pixel's say in the local fit; pixels with
    weight 0 take their flow from the surroundings and the coarser levels.
    """
    src_plane: np.ndarray = _as_plane(src)
    dst_plane: np.ndarray = _as_plane(dst)
    check_same_shape("estimate_flow", src_plane.shape, dst_plane.shape)
    weight_plane: np.ndarray = (
        np.ones(dst_plane.shape) if weight is None else np.asarray(weight, np.float64)
    )
    check_same_shape("estimate_flow weight", weight_plane.shape, dst_plane.shape)

    levels: int = params.pyramid_levels
    src_pyramid: List[np.ndarray] = _pyramid(src_plane, levels, params.window)
    dst_pyramid: List[np.ndarray] = _pyramid(dst_plane, levels, params.window)
    weight_pyramid: List[np.ndarray] = _pyramid(weight_plane, levels, params.window)
    flow: np.ndarray = np.zeros(src_pyramid[-1].shape + (2,))
    for level in reversed(range(len(src_pyramid))):  # coarse to fine
        if flow.shape[:2] != src_pyramid[level].shape:
            flow = _upsample(flow, src_pyramid[level].shape)
        flow = _refine(
            src_pyramid[level], dst_pyramid[level], flow, weight_pyramid[level], params
        )
    return FlowField(np.nan_to_num(flow, nan=0.0, posinf=0.0, neginf=0.0))


def read_flo(path: Union[str, Path]) -> FlowField:
    raw: bytes = Path(path).read_bytes()
    if len(raw) < 12:
        raise FlowFormatError("Truncated .flo header: {}".format(path))
    magic: float = float(np.frombuffer(raw, "<f4", count=1)[0])
    if magic != FLO_MAGIC:
        raise FlowFormatError("Bad .flo magic {} in {}".format(magic, path))
    width, height = (int(x) for x in np.frombuffer(raw, "<i4", count=2, offset=4))
    if width < 1 or height < 1:
        raise FlowFormatError(
            "Invalid .flo size {}x{} in {}".format(width, height, path)
        )
    expected: int = 12 + 8 * width * height
    if len(raw) != expected:
        raise FlowFormatError(
            "Truncated .flo payload in {}: {} of {} bytes".format(
                path, len(raw), expected
            )
        )
    data: np.ndarray = np.frombuffer(raw, "<f4", offset=12).reshape(height, width, 2)
    return FlowField(data)


def write_flo(field: FlowField, path: Union[str, Path]) -> None:
    header: bytes = np.array([FLO_MAGIC], "<f4").tobytes() + np.array(
        [field.width, field.height], "<i4"
    ).tobytes()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(header + field.data.astype("<f4").tobytes())


class FlowSource:
    """
    Hands out flow pairs between frames of one sequence. Consecutive pairs
    come from `flow_dir` when it holds them (fwd_%06d.flo is the forward flow
    of frame t toward t+1, bwd_%06d.flo the backward flow of frame t+1 toward
    t, in the usual Middlebury sense), otherwise they are estimated.
    """

    def __init__(
        self,
        frames: FrameSequence,
        params: FlowParams,
        flow_dir: Optional[Union[str, Path]] = None,
    ) -> None:
        self.frames: FrameSequence = frames
        self.params: FlowParams = params
        self.flow_dir: Optional[Path] = Path(flow_dir) if flow_dir else None
        self._lock: Lock = Lock()
        self.provenance: Dict[str, int] = {"imported": 0, "internal": 0}

    def _count(self, kind: str) -> None:
        with self._lock:
            self.provenance[kind] += 1

    def _imported(self, kind: str, t: int) -> Optional[FlowField]:
        if self.flow_dir is None:
            return None
        path: Path = self.flow_dir / "{}_{:06d}.flo".format(kind, t)
        if not path.is_file():
            logger.warning(f"missing {path.name}, estimating that flow instead")
            return None
        return read_flo(path)

    def _imported_pair(self, s: int, t: int) -> Optional[FlowPair]:
        if abs(s - t) != 1:
            return None
        first: int = min(s, t)
        fwd: Optional[FlowField] = self._imported("fwd", first)
        bwd: Optional[FlowField] = self._imported("bwd", first)
        if fwd is None or bwd is None:
            return None
        # fwd_t lives on frame t and samples t+1: o_{t+1 -> t}
        if s == t - 1:
            return FlowPair(s_to_t=bwd, t_to_s=fwd)
        return FlowPair(s_to_t=fwd, t_to_s=bwd)

    def pair(self, s: int, t: int, weight: Optional[np.ndarray] = None) -> FlowPair:
        """
        Flows between frames s and t (1-based). `weight` lives on t's grid and
        is only used by the internal estimator.
        """
        imported: Optional[FlowPair] = self._imported_pair(s, t)
        if imported is not None:
            check_same_shape(
                "imported flow",
                self.frames[0].shape,
                imported.s_to_t.shape,
                imported.t_to_s.shape,
            )
            self._count("imported")
            return imported
        frame_s: FrameRGB = self.frames[s - 1]
        frame_t: FrameRGB = self.frames[t - 1]
        self._count("internal")
        logger.debug(f"estimating flow between frames {s} and {t}")
        s_to_t: FlowField = estimate_flow(frame_s, frame_t, self.params, weight)
        weight_s: Optional[np.ndarray] = None
        if weight is not None:
            # onto s's grid through the reversed s -> t flow
            weight_s = warp_array(weight, FlowField(-s_to_t.data))
        return FlowPair(
            s_to_t=s_to_t,
            t_to_s=estimate_flow(frame_t, frame_s, self.params, weight_s),
        )

    def occlusion(self, flows: FlowPair) -> OcclusionMask:
        return occlusion_mask(flows.s_to_t, flows.t_to_s, self.params.fb_threshold)

    def describe(self) -> Dict[str, object]:
        return {
            "flow_dir": str(self.flow_dir) if self.flow_dir else None,
            "pairs": dict(self.provenance),
        }
