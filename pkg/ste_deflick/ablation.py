"""
Ablations: run the pipeline with one component switched off or replaced and
score every variant against the ground truth with the same flows.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence
import logging

from ste_deflick.config import Config
from ste_deflick.core_image import FrameSequence
from ste_deflick.errors import ConfigError, DimensionMismatchError
from ste_deflick.metrics import ConsistencyTerms, consistency_terms, evaluate
from ste_deflick.pipeline import deflicker_pipeline
from ste_deflick.ste import SmoothingKernel, SteSpace
from ste_deflick.worker_pool import WorkerPool, serial_pool

logger = logging.getLogger(__name__)

RAW: str = "raw"
DEFAULT_BLEND_ALPHA: float = 0.5  # used when the config leaves stage 3 off

VARIANTS: Dict[str, Callable[[Config], Config]] = {
    "full": lambda c: c,
    "no_global": lambda c: c.override("repair", enable_global=False),
    "no_local": lambda c: c.override("repair", enable_local=False),
    "no_gate": lambda c: c.override("repair", gate_tiles=0),
    "mean_filter": lambda c: c.override("ste", kernel=SmoothingKernel.MEAN),
    "rgb_space": lambda c: c.override("ste", space=SteSpace.RGB),
    "temporal_blend": lambda c: c.override(
        "repair",
        temporal_blend_alpha=c.repair.temporal_blend_alpha or DEFAULT_BLEND_ALPHA,
    ),
}


def variant_config(name: str, config: Config) -> Config:
    if name not in VARIANTS:
        raise ConfigError(
            "Unknown ablation variant {}, expected one of {}".format(
                name, ", ".join(list(VARIANTS) + [RAW])
            )
        )
    return VARIANTS[name](config)


class AblationRow(NamedTuple):
    variant: str
    aggregate: Dict[str, Optional[float]]


@dataclass
class AblationReport:
    rows: List[AblationRow]
    info: Dict[str, Any] = field(default_factory=dict)

    def row(self, variant: str) -> AblationRow:
        for r in self.rows:
            if r.variant == variant:
                return r
        raise KeyError(variant)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": [{"variant": r.variant, **r.aggregate} for r in self.rows],
            **self.info,
        }


def run_ablation(
    degraded: FrameSequence,
    gt: FrameSequence,
    config: Config = Config(),
    pool: Optional[WorkerPool] = None,
    variants: Sequence[str] = tuple(VARIANTS) + (RAW,),
) -> AblationReport:
    """
    Rows come out in the order of `variants`; "raw" scores the degraded input
    itself.
    """
    if len(degraded) != len(gt):
        raise DimensionMismatchError(
            "Frame counts differ: {} degraded vs {} ground truth".format(
                len(degraded), len(gt)
            )
        )
    pool = pool or serial_pool()
    terms: Optional[ConsistencyTerms] = None
    if len(gt) >= 2:
        terms = consistency_terms(gt, config.flow, pool)
    rows: List[AblationRow] = []
    for name in variants:
        if name == RAW:
            output: FrameSequence = degraded
        else:
            c: Config = variant_config(name, config)
            output = deflicker_pipeline(
                degraded, c.ste, c.priors, c.flow, c.repair, pool
            ).frames
        scores = evaluate(output, gt, config.flow, pool, terms)
        logger.info(f"ablation {name}: psnr {scores.aggregate['psnr_mean']:.3f}")
        rows.append(AblationRow(name, scores.aggregate))
    info: Dict[str, Any] = {"flow": terms.provenance if terms is not None else None}
    return AblationReport(rows, info)
