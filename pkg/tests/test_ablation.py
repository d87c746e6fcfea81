import pytest

from ste_deflick.ablation import (
    DEFAULT_BLEND_ALPHA,
    RAW,
    VARIANTS,
    run_ablation,
    variant_config,
)
from ste_deflick.config import Config
from ste_deflick.core_image import FrameSequence
from ste_deflick.errors import ConfigError, DimensionMismatchError
from ste_deflick.metrics import evaluate
from ste_deflick.ste import SmoothingKernel, SteSpace
from ste_deflick.synth import FlickerSpec, synth_flicker


def test_variant_configs():
    base = Config()
    assert variant_config("full", base) == base
    assert not variant_config("no_global", base).repair.enable_global
    assert not variant_config("no_local", base).repair.enable_local
    assert variant_config("mean_filter", base).ste.kernel is SmoothingKernel.MEAN
    assert variant_config("rgb_space", base).ste.space is SteSpace.RGB
    blended = variant_config("temporal_blend", base)
    assert blended.repair.temporal_blend_alpha == DEFAULT_BLEND_ALPHA
    custom = base.override("repair", temporal_blend_alpha=0.25)
    assert variant_config("temporal_blend", custom).repair.temporal_blend_alpha == 0.25


def test_unknown_variant():
    with pytest.raises(ConfigError, match="magic"):
        variant_config("magic", Config())


@pytest.fixture(scope="module")
def clips(make_static_clip):
    gt = make_static_clip(21, T=6, height=24, width=24)
    return synth_flicker(gt, FlickerSpec(seed=3)), gt


def test_rows_follow_variant_order(clips):
    degraded, gt = clips
    report = run_ablation(degraded, gt)
    assert [row.variant for row in report.rows] == list(VARIANTS) + [RAW]
    raw = evaluate(degraded, gt).aggregate
    assert report.row(RAW).aggregate["psnr_mean"] == pytest.approx(raw["psnr_mean"])
    payload = report.to_dict()
    assert set(payload) == {"rows", "flow"}
    assert payload["rows"][0]["variant"] == "full"
    with pytest.raises(KeyError):
        report.row("absent")


def test_selected_variants(clips):
    degraded, gt = clips
    report = run_ablation(degraded, gt, variants=["no_local", RAW])
    assert [row.variant for row in report.rows] == ["no_local", RAW]


def test_frame_count_mismatch(clips):
    degraded, gt = clips
    with pytest.raises(DimensionMismatchError):
        run_ablation(FrameSequence(list(degraded)[:3]), gt)
