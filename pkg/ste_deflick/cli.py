"""
Command line interface: analyze | deflicker | synth | eval | ablate.

Exit codes: 0 success, 1 processing error, 2 usage error (bad flags, missing
inputs, invalid configuration).
"""
from __future__ import annotations
from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence
import csv
import logging
import sys

from tqdm import tqdm

from ste_deflick.ablation import RAW, VARIANTS, run_ablation
from ste_deflick.config import Config, load_config
from ste_deflick.core_image import FrameSequence
from ste_deflick.errors import ConfigError, DeflickerError
from ste_deflick.frame_io import (
    is_y4m,
    read_frames,
    write_frames,
    write_json,
    write_mask_png,
)
from ste_deflick.metrics import EvalReport, consistency_terms, evaluate
from ste_deflick.pipeline import PipelineResult, deflicker_pipeline, plain
from ste_deflick.priors import DeflickerPriors, extract_priors
from ste_deflick.synth import (
    CorpusEntry,
    FlickerSpec,
    build_corpus,
    load_corpus,
    spec_from_label,
)
from ste_deflick.worker_pool import WorkerPool

logger = logging.getLogger(__name__)

EXIT_OK: int = 0
EXIT_PROCESSING: int = 1
EXIT_USAGE: int = 2


class UsageError(Exception):
    pass


def _require(path: Optional[str], flag: str) -> Path:
    if path is None:
        raise UsageError("{} is required".format(flag))
    source: Path = Path(path)
    if not source.exists():
        raise UsageError("{} {} does not exist".format(flag, source))
    return source


def _report_path(out: Path, report: Optional[str]) -> Path:
    if report:
        return Path(report)
    if is_y4m(out):
        return out.with_suffix(".report.json")
    return out / "report.json"


def build_config(args: Namespace) -> Config:
    config: Config = load_config(args.config)
    config = config.with_top_level(
        threads=args.threads,
        seed=getattr(args, "seed", None),
        progress=False if args.quiet else None,
    )
    config = config.override(
        "ste",
        window_radius_l=getattr(args, "ste_radius", None),
        scale_s=getattr(args, "ste_scale", None),
    )
    return config.override(
        "repair",
        enable_local=False if getattr(args, "no_local", False) else None,
        temporal_blend_alpha=getattr(args, "blend_alpha", None),
    )


def _priors_report(
    source: Path, priors: DeflickerPriors, config: Config
) -> Dict[str, Any]:
    return {
        "source": str(source),
        "frames": len(priors),
        "singular": sorted(priors.singular),
        "parameters": {"ste": plain(config.ste), "priors": plain(config.priors)},
        "per_frame": [
            {
                "t": t,
                "kl": priors.kl_series[t - 1],
                "threshold": priors.thresholds[t - 1],
                "flagged": t in priors.singular,
                "exposure_fraction": priors.exposure[t - 1].fraction,
            }
            for t in range(1, len(priors) + 1)
        ],
    }


def _write_kl_series(priors: DeflickerPriors, file: Path) -> None:
    with open(file, "w", newline="") as stream:
        writer = csv.writer(stream)
        writer.writerow(["t", "kl", "threshold", "flagged"])
        for t in range(1, len(priors) + 1):
            writer.writerow(
                [
                    t,
                    repr(priors.kl_series[t - 1]),
                    repr(priors.thresholds[t - 1]),
                    int(t in priors.singular),
                ]
            )


def cmd_analyze(args: Namespace, config: Config, pool: WorkerPool) -> int:
    source: Path = _require(args.input, "--in")
    out: Path = Path(args.out)
    frames: FrameSequence = read_frames(source)
    priors: DeflickerPriors = extract_priors(frames, config.ste, config.priors, pool)
    logger.info(f"{len(priors.singular)} singular frames: {sorted(priors.singular)}")
    out.mkdir(parents=True, exist_ok=True)
    write_json(_priors_report(source, priors, config), out / "priors.json")
    _write_kl_series(priors, out / "kl_series.csv")
    if args.masks:
        for t, mask in enumerate(priors.exposure, start=1):
            write_mask_png(mask.data, out / "masks" / "{:06d}.png".format(t))
    if args.histograms:
        (out / "histograms").mkdir(parents=True, exist_ok=True)
        for t in range(1, len(priors) + 1):
            priors.hists[t - 1].to_csv(out / "histograms" / "hist_{:06d}.csv".format(t))
            priors.smoothed_hists[t - 1].to_csv(
                out / "histograms" / "smoothed_{:06d}.csv".format(t)
            )
    return EXIT_OK


def _deflicker_one(
    source: Path,
    out: Path,
    report: Path,
    config: Config,
    pool: WorkerPool,
    flow_dir: Optional[str],
) -> PipelineResult:
    frames: FrameSequence = read_frames(source)
    result: PipelineResult = deflicker_pipeline(
        frames, config.ste, config.priors, config.flow, config.repair, pool, flow_dir
    )
    write_frames(result.frames, out)
    write_json({"source": str(source), **result.report}, report)
    return result


def cmd_deflicker(args: Namespace, config: Config, pool: WorkerPool) -> int:
    if args.manifest:
        if not args.out_root:
            raise UsageError("--manifest needs --out-root")
        entries: List[CorpusEntry] = load_corpus(_require(args.manifest, "--manifest"))
        root: Path = Path(args.out_root)
        for entry in tqdm(entries, desc="deflicker", disable=not config.progress):
            target: Path = root / entry.clip / entry.label
            try:
                _deflicker_one(
                    entry.degraded, target, target / "report.json", config, pool, None
                )
            except DeflickerError as error:
                raise DeflickerError(
                    "clip {} {}: {}".format(entry.clip, entry.label, error)
                )
        return EXIT_OK
    source: Path = _require(args.input, "--in")
    if not args.out:
        raise UsageError("--out is required")
    out: Path = Path(args.out)
    _deflicker_one(
        source, out, _report_path(out, args.report), config, pool, args.flow_dir
    )
    return EXIT_OK


def _synth_specs(args: Namespace, config: Config) -> List[FlickerSpec]:
    base: FlickerSpec = config.synth
    if args.specs:
        try:
            return [spec_from_label(label, base) for label in args.specs]
        except ValueError as error:
            raise UsageError(str(error))
    label: str = "W={}".format(args.w or base.window_w)
    if args.local:
        label += ",L={}".format(args.local)
    return [spec_from_label(label, base)]


def cmd_synth(args: Namespace, config: Config, pool: WorkerPool) -> int:
    clips: List[Path] = [_require(path, "--in") for path in args.input]
    build_corpus(clips, _synth_specs(args, config), Path(args.out), config.progress)
    return EXIT_OK


_TABLE_COLUMNS: List[str] = [
    "label",
    "clips",
    "psnr_raw",
    "ssim_raw",
    "e_warp_raw",
    "psnr",
    "ssim",
    "e_warp",
    "hist_kl",
]


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    present: List[float] = [v for v in values if v is not None]
    return sum(present) / len(present) if present else None


def eval_table(rows: Sequence[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """
    One row per flicker label, each metric averaged over the clips.
    """
    labels: List[str] = list(dict.fromkeys(row["label"] for row in rows))
    table: List[Dict[str, Any]] = []
    for label in labels:
        group = [row for row in rows if row["label"] == label]
        line: Dict[str, Any] = {"label": label, "clips": len(group)}
        for column in _TABLE_COLUMNS[2:]:
            line[column] = _mean([row[column] for row in group])
        table.append(line)
    return table


def _score_row(
    label: str, clip: str, pred: EvalReport, raw: EvalReport
) -> Dict[str, Any]:
    return {
        "clip": clip,
        "label": label,
        "psnr_raw": raw.aggregate["psnr_mean"],
        "ssim_raw": raw.aggregate["ssim_mean"],
        "e_warp_raw": raw.aggregate["e_warp"],
        "psnr": pred.aggregate["psnr_mean"],
        "ssim": pred.aggregate["ssim_mean"],
        "e_warp": pred.aggregate["e_warp"],
        "hist_kl": pred.aggregate["hist_kl_mean"],
    }


def _write_table(table: Sequence[Dict[str, Any]], file: Path) -> None:
    file.parent.mkdir(parents=True, exist_ok=True)
    with open(file, "w", newline="") as stream:
        writer = csv.DictWriter(stream, fieldnames=_TABLE_COLUMNS)
        writer.writeheader()
        for line in table:
            writer.writerow({k: "" if v is None else v for k, v in line.items()})


def _load_pair(pred: Path, gt: Path, name: str) -> List[FrameSequence]:
    sequences: List[FrameSequence] = [read_frames(pred), read_frames(gt)]
    if len(sequences[0]) != len(sequences[1]):
        raise DeflickerError(
            "{}: {} predicted frames vs {} ground truth frames".format(
                name, len(sequences[0]), len(sequences[1])
            )
        )
    return sequences


def cmd_eval(args: Namespace, config: Config, pool: WorkerPool) -> int:
    report: Path = Path(args.report)
    if args.manifest:
        entries: List[CorpusEntry] = load_corpus(_require(args.manifest, "--manifest"))
        pred_root: Path = _require(args.pred_root, "--pred-root")
        rows: List[Dict[str, Any]] = []
        for entry in tqdm(entries, desc="eval", disable=not config.progress):
            name: str = "clip {} {}".format(entry.clip, entry.label)
            pred, gt = _load_pair(pred_root / entry.clip / entry.label, entry.gt, name)
            raw: FrameSequence = _load_pair(entry.degraded, entry.gt, name)[0]
            terms = consistency_terms(gt, config.flow, pool) if len(gt) >= 2 else None
            rows.append(
                _score_row(
                    entry.label,
                    entry.clip,
                    evaluate(pred, gt, config.flow, pool, terms),
                    evaluate(raw, gt, config.flow, pool, terms),
                )
            )
        table: List[Dict[str, Any]] = eval_table(rows)
        write_json(
            {"manifest": str(args.manifest), "rows": rows, "table": table}, report
        )
        _write_table(table, report.parent / "eval_table.csv")
        return EXIT_OK

    pred_path: Path = _require(args.pred, "--pred")
    gt_path: Path = _require(args.gt, "--gt")
    pred, gt = _load_pair(pred_path, gt_path, str(pred_path))
    terms = None
    if len(gt) >= 2:
        terms = consistency_terms(gt, config.flow, pool, args.flow_dir)
    payload: Dict[str, Any] = {
        "pred": str(pred_path),
        "gt": str(gt_path),
        **evaluate(pred, gt, config.flow, pool, terms).to_dict(),
    }
    if args.raw:
        raw_path: Path = _require(args.raw, "--raw")
        raw = _load_pair(raw_path, gt_path, str(raw_path))[0]
        payload["raw"] = {
            "path": str(raw_path),
            **evaluate(raw, gt, config.flow, pool, terms).to_dict(),
        }
    write_json(payload, report)
    return EXIT_OK


def cmd_ablate(args: Namespace, config: Config, pool: WorkerPool) -> int:
    source: Path = _require(args.input, "--in")
    gt_path: Path = _require(args.gt, "--gt")
    variants: List[str] = args.variants or list(VARIANTS) + [RAW]
    unknown: List[str] = [v for v in variants if v not in VARIANTS and v != RAW]
    if unknown:
        raise UsageError("Unknown variants: {}".format(", ".join(unknown)))
    degraded, gt = _load_pair(source, gt_path, str(source))
    ablation = run_ablation(degraded, gt, config, pool, variants)
    write_json(
        {"source": str(source), "gt": str(gt_path), **ablation.to_dict()},
        Path(args.report),
    )
    return EXIT_OK


def _common(parser: ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML configuration file")
    parser.add_argument("--threads", type=int, help="worker threads, 0 = auto")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("-q", "--quiet", action="store_true")


def _pipeline_flags(parser: ArgumentParser) -> None:
    parser.add_argument("--ste-radius", type=int, help="STE half window l")
    parser.add_argument("--ste-scale", type=float, help="STE Gaussian scale s")
    parser.add_argument("--no-local", action="store_true", help="skip local repair")
    parser.add_argument("--blend-alpha", type=float, help="temporal blend weight")


def build_parser() -> ArgumentParser:
    parser: ArgumentParser = ArgumentParser(
        prog="ste_deflick", description="Blind video deflickering"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    analyze = commands.add_parser("analyze", help="extract deflickering priors")
    analyze.add_argument("--in", dest="input", required=True)
    analyze.add_argument("--out", required=True, help="output directory")
    analyze.add_argument("--masks", action="store_true", help="write exposure masks")
    analyze.add_argument("--histograms", action="store_true", help="write histograms")
    _common(analyze)

    deflicker = commands.add_parser("deflicker", help="run the pipeline")
    deflicker.add_argument("--in", dest="input")
    deflicker.add_argument("--out")
    deflicker.add_argument("--report")
    deflicker.add_argument("--flow-dir", help="fwd_%%06d.flo / bwd_%%06d.flo files")
    deflicker.add_argument("--manifest", help="corpus.json for batch mode")
    deflicker.add_argument("--out-root")
    _pipeline_flags(deflicker)
    _common(deflicker)

    synth = commands.add_parser("synth", help="build a synthetic flicker corpus")
    synth.add_argument("--in", dest="input", nargs="+", required=True)
    synth.add_argument("--out", required=True, help="corpus root")
    synth.add_argument("--w", type=int, help="frames sharing one artifact")
    synth.add_argument("--local", type=int, help="local seed window L")
    synth.add_argument("--specs", nargs="+", help='labels such as "W=1" "L=3"')
    synth.add_argument("--seed", type=int)
    _common(synth)

    evaluate_cmd = commands.add_parser("eval", help="score predictions")
    evaluate_cmd.add_argument("--pred")
    evaluate_cmd.add_argument("--gt")
    evaluate_cmd.add_argument("--raw")
    evaluate_cmd.add_argument("--flow-dir")
    evaluate_cmd.add_argument("--manifest")
    evaluate_cmd.add_argument("--pred-root")
    evaluate_cmd.add_argument("--report", required=True)
    _common(evaluate_cmd)

    ablate = commands.add_parser("ablate", help="score pipeline variants")
    ablate.add_argument("--in", dest="input", required=True)
    ablate.add_argument("--gt", required=True)
    ablate.add_argument("--report", required=True)
    ablate.add_argument("--variants", nargs="+")
    _pipeline_flags(ablate)
    _common(ablate)
    return parser


COMMANDS: Dict[str, Callable[[Namespace, Config, WorkerPool], int]] = {
    "analyze": cmd_analyze,
    "deflicker": cmd_deflicker,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def setup_logging(verbose: bool, quiet: bool) -> None:
    level: int = logging.INFO
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser: ArgumentParser = build_parser()
    try:
        args: Namespace = parser.parse_args(argv)
    except SystemExit as stop:
        return int(stop.code or 0)
    setup_logging(args.verbose, args.quiet)
    try:
        config: Config = build_config(args)
    except (ConfigError, ValueError) as error:
        logger.error(str(error))
        return EXIT_USAGE
    try:
        with WorkerPool(config.threads) as pool:
            return COMMANDS[args.command](args, config, pool)
    except UsageError as error:
        logger.error(str(error))
        return EXIT_USAGE
    except (DeflickerError, OSError, ValueError) as error:
        logger.error(str(error))
        return EXIT_PROCESSING


if __name__ == "__main__":
    sys.exit(main())
