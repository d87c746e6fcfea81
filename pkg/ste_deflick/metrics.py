"""
Quality and temporal consistency metrics: PSNR, SSIM, the flow-warped pair
error and its exposure weighted variant, the warping error E_warp over a whole
sequence, and the histogram divergence to ground truth.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from math import fsum, log10
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from skimage.metrics import structural_similarity

from ste_deflick.core_image import FrameRGB, FrameSequence, illumination_map
from ste_deflick.errors import DimensionMismatchError, check_same_shape
from ste_deflick.flow import (
    FlowField,
    FlowParams,
    FlowSource,
    OcclusionMask,
    warp_array,
)
from ste_deflick.histogram import histogram
from ste_deflick.priors import ExposureMask, kl_divergence
from ste_deflick.worker_pool import WorkerPool, serial_pool

logger = logging.getLogger(__name__)

PSNR_CAP: float = 99.0  # dB, also returned for identical frames
SSIM_K1: float = 0.01
SSIM_K2: float = 0.03
SSIM_SIGMA: float = 1.5
SSIM_RADIUS: int = 5  # sigma 1.5 truncated at 3.5, an 11x11 window
_LUMA: np.ndarray = np.array([0.299, 0.587, 0.114])


def psnr(a: FrameRGB, b: FrameRGB) -> float:
    check_same_shape("psnr", a.shape, b.shape)
    diff: np.ndarray = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse: float = float(np.mean(diff * diff))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * log10(255.0 ** 2 / mse))


def luma(frame: FrameRGB) -> np.ndarray:
    return frame.data.astype(np.float64) @ _LUMA


def ssim(a: FrameRGB, b: FrameRGB) -> float:
    """
    Mean structural similarity of the luma planes, Gaussian window
    (sigma 1.5, 11x11), averaged where the window fits inside the frame.
    """
    check_same_shape("ssim", a.shape, b.shape)
    if min(a.height, a.width) < 2 * SSIM_RADIUS + 1:
        raise ValueError(
            "ssim needs frames of at least 11x11, got {}".format(a.shape[:2])
        )
    return float(
        structural_similarity(
            luma(a),
            luma(b),
            data_range=255.0,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            K1=SSIM_K1,
            K2=SSIM_K2,
        )
    )


def _residual(o_t: FrameRGB, o_s: FrameRGB, flow: FlowField) -> np.ndarray:
    check_same_shape("pair_error", o_t.shape, o_s.shape, flow.shape)
    # o_s is warped real valued, no 8-bit rounding in between
    return np.abs(o_t.data.astype(np.float64) - warp_array(o_s.data, flow))


def pair_error(
    o_t: FrameRGB, o_s: FrameRGB, flow_s_to_t: FlowField, mask: OcclusionMask
) -> float:
    """
    Mean |o_t - warp(o_s)| over the valid pixels and all channels; 0 when no
    pixel is valid.
    """
    residual: np.ndarray = _residual(o_t, o_s, flow_s_to_t)
    check_same_shape("pair_error", o_t.shape, mask.shape)
    valid: np.ndarray = mask.data
    if not valid.any():
        return 0.0
    return float(residual[valid].mean())


def weighted_pair_error(
    o_t: FrameRGB,
    o_s: FrameRGB,
    flow_s_to_t: FlowField,
    occlusion: OcclusionMask,
    exposure: ExposureMask,
    weight: Optional[np.ndarray] = None,
) -> float:
    """
    Mean of W * (M + 1) * |o_t - warp(o_s)| over the valid pixels: exposed
    pixels count twice. W defaults to 1 everywhere.
    """
    residual: np.ndarray = _residual(o_t, o_s, flow_s_to_t)
    check_same_shape("weighted_pair_error", o_t.shape, occlusion.shape, exposure.shape)
    w: np.ndarray = np.ones(occlusion.shape) if weight is None else np.asarray(weight)
    check_same_shape("weighted_pair_error", o_t.shape, w.shape)
    valid: np.ndarray = occlusion.data
    if not valid.any():
        return 0.0
    factor: np.ndarray = w * (exposure.data.astype(np.float64) + 1.0)
    return float((factor[..., None] * residual)[valid].mean())


class PairTerms(NamedTuple):
    flow: FlowField  # o_{s->t}
    mask: OcclusionMask  # M_{t,s}


class ConsistencyTerms(NamedTuple):
    """
    Entry i belongs to frame t = i + 2 (1-based): `prev` pairs it with frame
    t - 1, `first` with frame 1.
    """

    prev: List[PairTerms]
    first: List[PairTerms]
    provenance: Dict[str, Any]


def consistency_terms(
    frames: FrameSequence,
    params: FlowParams = FlowParams(),
    pool: Optional[WorkerPool] = None,
    flow_dir: Optional[Union[str, Path]] = None,
) -> ConsistencyTerms:
    """
    Flows and occlusion masks for E_warp, estimated on `frames` (normally the
    ground truth) or imported from flow_dir for consecutive pairs.
    """
    pool = pool or serial_pool()
    source: FlowSource = FlowSource(frames, params, flow_dir)
    T: int = len(frames)

    def terms(pair: Tuple[int, int]) -> PairTerms:
        flows = source.pair(pair[0], pair[1])
        return PairTerms(flows.s_to_t, source.occlusion(flows))

    prev: List[PairTerms] = pool.map(terms, [(t - 1, t) for t in range(2, T + 1)])
    # frame 2's first-frame pair is its previous-frame pair
    first: List[PairTerms] = prev[:1] + pool.map(
        terms, [(1, t) for t in range(3, T + 1)]
    )
    return ConsistencyTerms(prev, first, source.describe())


def pair_errors(
    seq: FrameSequence, prev: Sequence[PairTerms], first: Sequence[PairTerms]
) -> List[Tuple[float, float]]:
    """
    (error to previous frame, error to first frame) for t = 2..T.
    """
    T: int = len(seq)
    if len(prev) != T - 1 or len(first) != T - 1:
        raise DimensionMismatchError(
            "{} frames need {} flow pairs, got {} and {}".format(
                T, T - 1, len(prev), len(first)
            )
        )
    errors: List[Tuple[float, float]] = []
    for t in range(2, T + 1):
        p: PairTerms = prev[t - 2]
        f: PairTerms = first[t - 2]
        errors.append(
            (
                pair_error(seq[t - 1], seq[t - 2], p.flow, p.mask),
                pair_error(seq[t - 1], seq[0], f.flow, f.mask),
            )
        )
    return errors


def e_warp(
    seq: FrameSequence, prev: Sequence[PairTerms], first: Sequence[PairTerms]
) -> float:
    """
    1/(T-1) * sum over t = 2..T of E_pair(O_t, O_1) + E_pair(O_t, O_{t-1}).
    """
    if len(seq) < 2:
        raise ValueError("e_warp needs at least two frames")
    errors: List[Tuple[float, float]] = pair_errors(seq, prev, first)
    return fsum(a + b for a, b in errors) / (len(seq) - 1)


def histogram_kl(pred: FrameRGB, gt: FrameRGB) -> float:
    # KL(H_gt || H_pred) of the illumination histograms
    check_same_shape("histogram_kl", pred.shape, gt.shape)
    return kl_divergence(
        histogram(illumination_map(gt)), histogram(illumination_map(pred))
    )


class FrameScore(NamedTuple):
    psnr: float
    ssim: float
    pair_err_prev: float
    pair_err_first: float
    hist_kl: float


@dataclass
class EvalReport:
    per_frame: List[FrameScore]
    aggregate: Dict[str, Optional[float]]
    info: Dict[str, Any] = field(default_factory=dict)  # paths, flow provenance

    def to_dict(self) -> Dict[str, Any]:
        return {
            "per_frame": [score._asdict() for score in self.per_frame],
            "aggregate": dict(self.aggregate),
            **self.info,
        }


def evaluate(
    pred: FrameSequence,
    gt: FrameSequence,
    params: FlowParams = FlowParams(),
    pool: Optional[WorkerPool] = None,
    terms: Optional[ConsistencyTerms] = None,
    flow_dir: Optional[Union[str, Path]] = None,
) -> EvalReport:
    """
    Score pred against gt. Temporal consistency is measured on pred with the
    flows of gt; pass `terms` to reuse them across several predictions.
    """
    if len(pred) != len(gt):
        raise DimensionMismatchError(
            "Frame counts differ: {} predicted vs {} ground truth".format(
                len(pred), len(gt)
            )
        )
    check_same_shape("evaluate", pred[0].shape, gt[0].shape)
    pool = pool or serial_pool()
    T: int = len(gt)
    if terms is None and T >= 2:
        terms = consistency_terms(gt, params, pool, flow_dir)

    def quality(t: int) -> Tuple[float, float, float]:
        return (
            psnr(pred[t], gt[t]),
            ssim(pred[t], gt[t]),
            histogram_kl(pred[t], gt[t]),
        )

    scores: List[Tuple[float, float, float]] = pool.map(quality, list(range(T)))
    errors: List[Tuple[float, float]] = [(0.0, 0.0)]  # frame 1 has no pairs
    if T >= 2:
        errors += pair_errors(pred, terms.prev, terms.first)
    per_frame: List[FrameScore] = [
        FrameScore(p, s, prev, first, kl)
        for (p, s, kl), (prev, first) in zip(scores, errors)
    ]
    e_warp_value: Optional[float] = None
    if T >= 2:
        # same sum as e_warp, frame 1 contributes zeros
        total: float = fsum(f.pair_err_prev + f.pair_err_first for f in per_frame)
        e_warp_value = total / (T - 1)
    aggregate: Dict[str, Optional[float]] = {
        "psnr_mean": fsum(f.psnr for f in per_frame) / T,
        "ssim_mean": fsum(f.ssim for f in per_frame) / T,
        "hist_kl_mean": fsum(f.hist_kl for f in per_frame) / T,
        "e_warp": e_warp_value,
    }
    logger.debug(f"evaluated {T} frames: {aggregate}")
    info: Dict[str, Any] = {"flow": terms.provenance if terms is not None else None}
    return EvalReport(per_frame, aggregate, info)


if __name__ == "__main__":
    gray: np.ndarray = np.full((16, 16, 3), 100, dtype=np.uint8)
    print(psnr(FrameRGB(gray), FrameRGB(gray + 10)))  # 28.13
    print(ssim(FrameRGB(gray), FrameRGB(gray + 10)))
