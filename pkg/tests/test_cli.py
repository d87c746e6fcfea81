import csv
import logging

import numpy as np
import pytest

from ste_deflick.cli import EXIT_OK, EXIT_PROCESSING, EXIT_USAGE, eval_table, main
from ste_deflick.core_image import FrameSequence
from ste_deflick.frame_io import read_frames, read_json, write_frames
from ste_deflick.synth import FlickerSpec, synth_flicker


@pytest.fixture
def clean_dir(tmp_path, make_static_clip):
    write_frames(make_static_clip(1, T=8, height=32, width=32), tmp_path / "clean")
    return tmp_path / "clean"


def test_analyze_static_clip(tmp_path, make_static_clip):
    write_frames(make_static_clip(2, T=6, height=32, width=32), tmp_path / "static")
    out = tmp_path / "analysis"
    code = main(
        ["analyze", "--in", str(tmp_path / "static"), "--out", str(out), "--masks"]
        + ["--histograms", "-q"]
    )
    assert code == EXIT_OK
    report = read_json(out / "priors.json")
    assert report["frames"] == 6
    assert not any(row["flagged"] for row in report["per_frame"])
    lines = (out / "kl_series.csv").read_text().splitlines()
    assert lines[0] == "t,kl,threshold,flagged"
    assert len(lines) == 7
    assert (out / "masks" / "000006.png").is_file()
    assert (out / "histograms" / "smoothed_000001.csv").is_file()


def test_analyze_flags_flicker(tmp_path, make_moving_clip):
    clean = make_moving_clip(3, T=10, height=32, width=32)
    write_frames(synth_flicker(clean, FlickerSpec(window_w=1, seed=3)), tmp_path / "w1")
    code = main(["analyze", "--in", str(tmp_path / "w1"), "--out", str(tmp_path / "a")])
    assert code == EXIT_OK
    assert read_json(tmp_path / "a" / "priors.json")["singular"]


def test_analyze_missing_input(tmp_path):
    out = tmp_path / "never"
    code = main(["analyze", "--in", str(tmp_path / "nowhere"), "--out", str(out)])
    assert code == EXIT_USAGE
    assert not out.exists()


def test_deflicker_clean_clip(tmp_path, clean_dir):
    out = tmp_path / "out"
    code = main(["deflicker", "--in", str(clean_dir), "--out", str(out), "-q"])
    assert code == EXIT_OK
    before = read_frames(clean_dir).stack().astype(int)
    after = read_frames(out).stack().astype(int)
    assert np.abs(after - before).max() <= 1
    report = read_json(out / "report.json")
    assert report["source"] == str(clean_dir)
    assert report["frames"] == 8


def test_deflicker_flags(tmp_path, clean_dir):
    report = tmp_path / "r.json"
    code = main(
        ["deflicker", "--in", str(clean_dir), "--out", str(tmp_path / "o")]
        + ["--report", str(report), "--no-local", "--ste-radius", "3"]
        + ["--threads", "2"]
    )
    assert code == EXIT_OK
    payload = read_json(report)
    assert payload["stages"]["local"]["reason"] == "disabled"
    assert payload["parameters"]["ste"]["window_radius_l"] == 3


def test_deflicker_y4m_output(tmp_path, clean_dir):
    out = tmp_path / "clip.y4m"
    assert main(["deflicker", "--in", str(clean_dir), "--out", str(out), "-q"]) == 0
    assert len(read_frames(out)) == 8
    assert (tmp_path / "clip.report.json").is_file()


def test_usage_errors(tmp_path, clean_dir):
    assert main(["deflicker", "--in", str(clean_dir)]) == EXIT_USAGE
    no_root = ["deflicker", "--manifest", str(clean_dir / "000001.png")]
    assert main(no_root) == EXIT_USAGE
    assert main(["analyze", "--in", str(clean_dir)]) == EXIT_USAGE
    assert main(["transcode"]) == EXIT_USAGE
    bad = tmp_path / "bad.toml"
    bad.write_text("[ste]\nradius = 4\n")
    code = main(
        ["analyze", "--in", str(clean_dir), "--out", str(tmp_path / "x")]
        + ["--config", str(bad)]
    )
    assert code == EXIT_USAGE


def test_corpus_round_trip(tmp_path, clean_dir):
    corpus = tmp_path / "corpus"
    code = main(
        ["synth", "--in", str(clean_dir), "--out", str(corpus)]
        + ["--specs", "W=1", "W=3", "--seed", "4", "-q"]
    )
    assert code == EXIT_OK
    manifest = corpus / "corpus.json"
    assert [e["label"] for e in read_json(manifest)["entries"]] == ["W=1", "W=3"]
    assert all(e["seed"] == 4 for e in read_json(manifest)["entries"])

    preds = tmp_path / "preds"
    code = main(
        ["deflicker", "--manifest", str(manifest), "--out-root", str(preds), "-q"]
    )
    assert code == EXIT_OK
    assert (preds / "clean" / "W=3" / "report.json").is_file()

    report = tmp_path / "eval" / "report.json"
    code = main(
        ["eval", "--manifest", str(manifest), "--pred-root", str(preds)]
        + ["--report", str(report), "-q"]
    )
    assert code == EXIT_OK
    payload = read_json(report)
    assert len(payload["rows"]) == 2
    assert [line["label"] for line in payload["table"]] == ["W=1", "W=3"]
    with open(tmp_path / "eval" / "eval_table.csv", newline="") as stream:
        rows = list(csv.DictReader(stream))
    assert rows[0]["label"] == "W=1"
    assert rows[0]["clips"] == "1"


def test_synth_single_spec(tmp_path, clean_dir):
    code = main(
        ["synth", "--in", str(clean_dir), "--out", str(tmp_path / "c")]
        + ["--w", "2", "--local", "4", "-q"]
    )
    assert code == EXIT_OK
    assert (tmp_path / "c" / "clean" / "W=2,L=4" / "000001.png").is_file()


def test_eval_single_pair(tmp_path, clean_dir):
    flickered = synth_flicker(read_frames(clean_dir), FlickerSpec(seed=2))
    write_frames(flickered, tmp_path / "raw")
    report = tmp_path / "eval.json"
    code = main(
        ["eval", "--pred", str(clean_dir), "--gt", str(clean_dir)]
        + ["--raw", str(tmp_path / "raw"), "--report", str(report), "-q"]
    )
    assert code == EXIT_OK
    payload = read_json(report)
    assert payload["aggregate"]["psnr_mean"] == 99.0
    assert payload["raw"]["aggregate"]["psnr_mean"] < 99.0
    assert payload["flow"]["pairs"]["internal"] > 0


def test_eval_count_mismatch_names_the_clip(tmp_path, clean_dir, caplog):
    short = read_frames(clean_dir)
    write_frames(FrameSequence(list(short)[:5]), tmp_path / "short")
    with caplog.at_level(logging.ERROR):
        code = main(
            ["eval", "--pred", str(tmp_path / "short"), "--gt", str(clean_dir)]
            + ["--report", str(tmp_path / "r.json")]
        )
    assert code == EXIT_PROCESSING
    assert "short" in caplog.text
    assert not (tmp_path / "r.json").exists()


def test_analyze_rejects_a_zero_frame_rate(tmp_path, caplog):
    clip = tmp_path / "zero.y4m"
    clip.write_bytes(b"YUV4MPEG2 W2 H2 F0:0 C420\nFRAME\n" + bytes(4 + 2))
    with caplog.at_level(logging.ERROR):
        code = main(["analyze", "--in", str(clip), "--out", str(tmp_path / "a")])
    assert code == EXIT_PROCESSING
    assert "frame rate" in caplog.text
    assert not (tmp_path / "a" / "priors.json").exists()


def test_ablate(tmp_path, clean_dir):
    flickered = synth_flicker(read_frames(clean_dir), FlickerSpec(seed=6))
    write_frames(flickered, tmp_path / "deg")
    report = tmp_path / "ablation.json"
    code = main(
        ["ablate", "--in", str(tmp_path / "deg"), "--gt", str(clean_dir)]
        + ["--report", str(report), "--variants", "full", "no_local", "raw", "-q"]
    )
    assert code == EXIT_OK
    rows = read_json(report)["rows"]
    assert [row["variant"] for row in rows] == ["full", "no_local", "raw"]
    bad = main(
        ["ablate", "--in", str(tmp_path / "deg"), "--gt", str(clean_dir)]
        + ["--report", str(report), "--variants", "magic"]
    )
    assert bad == EXIT_USAGE


def test_eval_table_averages_per_label():
    rows = [
        dict(label="W=1", psnr_raw=20.0, ssim_raw=0.5, e_warp_raw=4.0, psnr=30.0),
        dict(label="W=1", psnr_raw=22.0, ssim_raw=0.7, e_warp_raw=None, psnr=32.0),
    ]
    for row, kl in zip(rows, (0.1, 0.3)):
        row.update(ssim=0.9, e_warp=None, hist_kl=kl)
    table = eval_table(rows)
    assert len(table) == 1
    assert table[0]["clips"] == 2
    assert table[0]["psnr"] == pytest.approx(31.0)
    assert table[0]["e_warp_raw"] == 4.0
