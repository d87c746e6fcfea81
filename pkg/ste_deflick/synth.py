"""
Synthetic flicker: consecutive blocks of W frames share one random affine
artifact X = clamp(g * G + b), applied to the whole frame (global flicker) or
inside one random rectangle (local flicker).
"""
from __future__ import annotations
from dataclasses import dataclass, replace
from hashlib import sha256
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union
from zlib import crc32
import logging

import numpy as np
from tqdm import tqdm

from ste_deflick.core_image import FrameRGB, FrameSequence
from ste_deflick.errors import FrameSourceError
from ste_deflick.frame_io import read_frames, read_json, write_json, write_png_dir
from ste_deflick.pipeline import plain

logger = logging.getLogger(__name__)

MANIFEST_NAME: str = "corpus.json"
_SEED_MASK: int = (1 << 64) - 1


@dataclass(frozen=True)
class FlickerSpec:
    window_w: int = 1  # frames sharing one artifact
    local_window_l: Optional[int] = None  # None is global flicker
    offset_range: Tuple[float, float] = (-50.0, 50.0)
    gain_range: Optional[Tuple[float, float]] = (0.7, 1.3)
    seed: int = 0
    window_range: Optional[Tuple[int, int]] = None  # W drawn per clip when set

    def __post_init__(self) -> None:
        if self.window_w < 1:
            raise ValueError("Invalid window_w:{}".format(self.window_w))
        if self.local_window_l is not None and self.local_window_l < 1:
            raise ValueError("Invalid local_window_l:{}".format(self.local_window_l))
        lo, hi = self.offset_range
        if lo > hi:
            raise ValueError("Invalid offset_range:{}".format(self.offset_range))
        object.__setattr__(self, "offset_range", (float(lo), float(hi)))
        if self.gain_range is not None:
            g_lo, g_hi = self.gain_range
            if not 0 < g_lo <= g_hi:
                raise ValueError("Invalid gain_range:{}".format(self.gain_range))
            object.__setattr__(self, "gain_range", (float(g_lo), float(g_hi)))
        if self.window_range is not None:
            w_lo, w_hi = self.window_range
            if not 1 <= w_lo <= w_hi:
                raise ValueError("Invalid window_range:{}".format(self.window_range))
            object.__setattr__(self, "window_range", (int(w_lo), int(w_hi)))

    @property
    def label(self) -> str:
        if self.window_range is not None:
            window: str = "W={}-{}".format(*self.window_range)
        else:
            window = "W={}".format(self.window_w)
        if self.local_window_l is None:
            return window
        if self.window_range is None and self.window_w == 1:
            return "L={}".format(self.local_window_l)
        return "{},L={}".format(window, self.local_window_l)


def spec_from_label(label: str, base: FlickerSpec = FlickerSpec()) -> FlickerSpec:
    """
    Parse a manifest label ("W=3", "L=3", "W=2-12", "W=3,L=4") into a spec;
    ranges, gains and seed come from `base`.
    """
    changes: Dict[str, Any] = {
        "window_w": 1,
        "local_window_l": None,
        "window_range": None,
    }
    for part in label.split(","):
        key, _, value = part.strip().partition("=")
        try:
            if key == "W" and "-" in value:
                lo, hi = value.split("-")
                changes["window_range"] = (int(lo), int(hi))
            elif key == "W":
                changes["window_w"] = int(value)
            elif key == "L":
                changes["local_window_l"] = int(value)
            else:
                raise ValueError(key)
        except ValueError:
            raise ValueError("Invalid flicker label:{}".format(label))
    return replace(base, **changes)


class FlickerArtifact(NamedTuple):
    gain: float
    offset: float
    # (top, left, bottom, right), None for the whole frame
    region: Optional[Tuple[int, int, int, int]]


def _rng(spec: FlickerSpec, clip_id: str, *keys: int) -> np.random.Generator:
    entropy: List[int] = [spec.seed & _SEED_MASK, crc32(clip_id.encode("utf-8"))]
    return np.random.default_rng(np.random.SeedSequence(entropy + list(keys)))


def block_length(spec: FlickerSpec, clip_id: str) -> int:
    if spec.window_range is None:
        return spec.window_w
    lo, hi = spec.window_range
    # a key no block index reaches
    return int(_rng(spec, clip_id, 1 << 32).integers(lo, hi + 1))


def draw_artifact(
    spec: FlickerSpec, clip_id: str, block: int, height: int, width: int
) -> FlickerArtifact:
    rng: np.random.Generator = _rng(spec, clip_id, block)
    gain: float = 1.0
    if spec.gain_range is not None:
        gain = float(rng.uniform(*spec.gain_range))
    lo, hi = spec.offset_range
    offset: float = lo if lo == hi else float(rng.uniform(lo, hi))
    region: Optional[Tuple[int, int, int, int]] = None
    if spec.local_window_l is not None:
        h: int = max(1, height // spec.local_window_l)
        w: int = max(1, width // spec.local_window_l)
        top: int = int(rng.integers(0, height - h + 1))
        left: int = int(rng.integers(0, width - w + 1))
        region = (top, left, top + h, left + w)
    return FlickerArtifact(gain, offset, region)


def draw_artifacts(
    spec: FlickerSpec, clip_id: str, T: int, height: int, width: int
) -> List[FlickerArtifact]:
    """
    The artifact of every frame; frames of one block share the same object.
    """
    length: int = block_length(spec, clip_id)
    blocks: List[FlickerArtifact] = [
        draw_artifact(spec, clip_id, block, height, width)
        for block in range((T + length - 1) // length)
    ]
    return [blocks[t // length] for t in range(T)]


def apply_artifact(frame: FrameRGB, artifact: FlickerArtifact) -> FrameRGB:
    values: np.ndarray = frame.data.astype(np.float64)
    flickered: np.ndarray = artifact.gain * values + artifact.offset
    if artifact.region is None:
        return FrameRGB.from_float(flickered)
    top, left, bottom, right = artifact.region
    values[top:bottom, left:right] = flickered[top:bottom, left:right]
    return FrameRGB.from_float(values)


def synth_flicker(
    clean: FrameSequence, spec: FlickerSpec, clip_id: str = "clip"
) -> FrameSequence:
    if len(clean) < 1:
        raise ValueError("synth_flicker needs a nonempty sequence")
    artifacts: List[FlickerArtifact] = draw_artifacts(
        spec, clip_id, len(clean), clean.height, clean.width
    )
    return clean.with_frames(
        [apply_artifact(frame, artifact) for frame, artifact in zip(clean, artifacts)]
    )


def checksum(sequence: FrameSequence) -> str:
    digest = sha256()
    for frame in sequence:
        digest.update(frame.data.tobytes())
    return digest.hexdigest()


class CorpusEntry(NamedTuple):
    clip: str
    label: str
    gt: Path
    degraded: Path
    seed: int
    sha256: str


def build_corpus(
    clean_dirs: Sequence[Union[str, Path]],
    specs: Sequence[FlickerSpec],
    out_root: Union[str, Path],
    progress: bool = False,
) -> Dict[str, Any]:
    """
    Degrade every clip with every spec into out_root/<clip>/<label>/ and write
    out_root/corpus.json. Nothing is written when there is nothing to do.
    """
    root: Path = Path(out_root)
    entries: List[Dict[str, Any]] = []
    if not specs or not clean_dirs:
        return {"entries": entries}
    for clip_dir in tqdm(list(clean_dirs), desc="synth", disable=not progress):
        clip_path: Path = Path(clip_dir)
        clip_id: str = clip_path.stem
        try:
            clean: FrameSequence = read_frames(clip_path)
        except FrameSourceError as error:
            raise FrameSourceError("clip {}: {}".format(clip_id, error))
        for spec in specs:
            degraded: FrameSequence = synth_flicker(clean, spec, clip_id)
            target: Path = root / clip_id / spec.label
            write_png_dir(degraded, target)
            entries.append(
                {
                    "clip": clip_id,
                    "label": spec.label,
                    "spec": plain(spec),
                    "seed": spec.seed,
                    "gt": str(clip_path.resolve()),
                    "degraded": str(target.resolve()),
                    "frames": len(degraded),
                    "sha256": checksum(degraded),
                }
            )
            logger.info(f"{clip_id} {spec.label}: {len(degraded)} frames")
    manifest: Dict[str, Any] = {"entries": entries}
    write_json(manifest, root / MANIFEST_NAME)
    return manifest


def load_corpus(manifest: Union[str, Path]) -> List[CorpusEntry]:
    payload: Dict[str, Any] = read_json(manifest)
    try:
        return [
            CorpusEntry(
                clip=e["clip"],
                label=e["label"],
                gt=Path(e["gt"]),
                degraded=Path(e["degraded"]),
                seed=int(e["seed"]),
                sha256=e["sha256"],
            )
            for e in payload["entries"]
        ]
    except (KeyError, TypeError) as error:
        raise FrameSourceError(
            "Malformed corpus manifest {}: {}".format(manifest, error)
        )


if __name__ == "__main__":
    spec: FlickerSpec = FlickerSpec(window_w=3, seed=7)
    for t, artifact in enumerate(draw_artifacts(spec, "demo", 7, 64, 64), start=1):
        print(t, round(artifact.gain, 3), round(artifact.offset, 2))
