"""
Frame sequence input/output: numbered PNG directories (bit exact) and
uncompressed YUV4MPEG2 files (4:2:0, BT.601 full range, lossy).
"""
from __future__ import annotations
from fractions import Fraction
from pathlib import Path
from typing import Any, BinaryIO, Dict, List, Tuple, Union
import json
import logging

import numpy as np
from PIL import Image

from ste_deflick.core_image import FrameRGB, FrameSequence
from ste_deflick.errors import FrameSourceError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FRAME_PATTERN: str = "{:06d}.png"
Y4M_MAGIC: bytes = b"YUV4MPEG2"
Y4M_CHROMA_420: Tuple[str, ...] = ("420jpeg", "420", "420paldv", "420mpeg2")


def is_y4m(path: PathLike) -> bool:
    return Path(path).suffix.lower() == ".y4m"


def read_frames(source: PathLike, frame_rate: float = 24.0) -> FrameSequence:
    """
    Read a directory of PNG files (sorted by name) or a .y4m file.
    """
    path: Path = Path(source)
    if is_y4m(path):
        return read_y4m(path)
    return read_png_dir(path, frame_rate)


def write_frames(sequence: FrameSequence, target: PathLike) -> List[Path]:
    path: Path = Path(target)
    if is_y4m(path):
        write_y4m(sequence, path)
        return [path]
    return write_png_dir(sequence, path)


def png_files(directory: PathLike) -> List[Path]:
    path: Path = Path(directory)
    if not path.is_dir():
        raise FrameSourceError("Not a frame directory: {}".format(path))
    return sorted(p for p in path.iterdir() if p.suffix.lower() == ".png")


def read_png_dir(directory: PathLike, frame_rate: float = 24.0) -> FrameSequence:
    files: List[Path] = png_files(directory)
    if not files:
        raise FrameSourceError("No PNG frames in {}".format(directory))
    frames: List[FrameRGB] = []
    for file in files:
        try:
            with Image.open(file) as image:
                frames.append(FrameRGB(np.asarray(image.convert("RGB"))))
        except OSError as error:
            raise FrameSourceError("Unreadable frame {}: {}".format(file, error))
    logger.debug(f"read {len(frames)} frames from {directory}")
    return FrameSequence(frames, frame_rate)


def write_png_dir(sequence: FrameSequence, directory: PathLike) -> List[Path]:
    path: Path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    for index, frame in enumerate(sequence, start=1):  # frames are numbered from 1
        file: Path = path / FRAME_PATTERN.format(index)
        Image.fromarray(np.asarray(frame.data)).save(file)
        written.append(file)
    logger.debug(f"wrote {len(written)} frames to {path}")
    return written


def write_mask_png(mask: np.ndarray, file: PathLike) -> None:
    Path(file).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(file)


# BT.601 full range (JPEG) conversion matrices
_RGB_TO_YCBCR: np.ndarray = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCBCR_TO_RGB: np.ndarray = np.array(
    [
        [1.0, 0.0, 1.402],
        [1.0, -0.344136, -0.714136],
        [1.0, 1.772, 0.0],
    ]
)


def rgb_to_ycbcr420(frame: FrameRGB) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    ycc: np.ndarray = frame.data.astype(np.float64) @ _RGB_TO_YCBCR.T
    ycc[..., 1:] += 128.0
    h, w = frame.height, frame.width
    # pad to even size by edge replication, then average 2x2 blocks
    padded: np.ndarray = np.pad(ycc[..., 1:], ((0, h % 2), (0, w % 2), (0, 0)), "edge")
    ch, cw = padded.shape[0] // 2, padded.shape[1] // 2
    chroma: np.ndarray = padded.reshape(ch, 2, cw, 2, 2).mean(axis=(1, 3))

    def to_u8(plane: np.ndarray) -> np.ndarray:
        return np.clip(np.rint(plane), 0, 255).astype(np.uint8)

    return to_u8(ycc[..., 0]), to_u8(chroma[..., 0]), to_u8(chroma[..., 1])


def ycbcr420_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> FrameRGB:
    h, w = y.shape

    def up(plane: np.ndarray) -> np.ndarray:
        return np.repeat(np.repeat(plane, 2, axis=0), 2, axis=1)[:h, :w]

    ycc: np.ndarray = np.stack(
        [y.astype(np.float64), up(cb) - 128.0, up(cr) - 128.0], axis=-1
    )
    return FrameRGB.from_float(ycc @ _YCBCR_TO_RGB.T)


def _parse_y4m_header(line: bytes) -> Dict[str, str]:
    tokens: List[str] = line.decode("ascii", errors="replace").split()
    if not tokens or tokens[0].encode() != Y4M_MAGIC:
        raise FrameSourceError("Not a YUV4MPEG2 stream")
    fields: Dict[str, str] = {}
    for token in tokens[1:]:
        fields[token[0]] = token[1:]
    return fields


def _y4m_rate(field: str, path: Path) -> float:
    num, _, den = field.partition(":")
    try:
        rate: Fraction = Fraction(int(num), int(den or 1))
    except (ValueError, ZeroDivisionError):
        raise FrameSourceError("Invalid Y4M frame rate F{} in {}".format(field, path))
    if rate <= 0:
        raise FrameSourceError("Invalid Y4M frame rate F{} in {}".format(field, path))
    return float(rate)


def read_y4m(file: PathLike) -> FrameSequence:
    path: Path = Path(file)
    if not path.is_file():
        raise FrameSourceError("No such Y4M file: {}".format(path))
    with open(path, "rb") as stream:
        fields: Dict[str, str] = _parse_y4m_header(stream.readline())
        try:
            width: int = int(fields["W"])
            height: int = int(fields["H"])
        except (KeyError, ValueError):
            raise FrameSourceError("Y4M header lacks a valid size: {}".format(path))
        chroma: str = fields.get("C", "420jpeg")
        if chroma not in Y4M_CHROMA_420:
            raise FrameSourceError("Unsupported Y4M chroma layout: {}".format(chroma))
        frame_rate: float = 24.0
        if "F" in fields:
            frame_rate = _y4m_rate(fields["F"], path)
        frames: List[FrameRGB] = []
        while True:
            marker: bytes = stream.readline()
            if not marker:
                break
            if not marker.startswith(b"FRAME"):
                raise FrameSourceError("Corrupt Y4M frame marker in {}".format(path))
            frames.append(_read_y4m_planes(stream, width, height, path))
    if not frames:
        raise FrameSourceError("No frames in {}".format(path))
    logger.debug(f"read {len(frames)} frames from {path}")
    return FrameSequence(frames, frame_rate)


def _read_y4m_planes(stream: BinaryIO, width: int, height: int, path: Path) -> FrameRGB:
    cw, ch = (width + 1) // 2, (height + 1) // 2
    size: int = width * height + 2 * cw * ch
    payload: bytes = stream.read(size)
    if len(payload) != size:
        raise FrameSourceError("Truncated Y4M frame in {}".format(path))
    data: np.ndarray = np.frombuffer(payload, dtype=np.uint8)
    y: np.ndarray = data[: width * height].reshape(height, width)
    cb: np.ndarray = data[width * height : width * height + cw * ch].reshape(ch, cw)
    cr: np.ndarray = data[width * height + cw * ch :].reshape(ch, cw)
    return ycbcr420_to_rgb(y, cb, cr)


def write_y4m(sequence: FrameSequence, file: PathLike) -> None:
    path: Path = Path(file)
    path.parent.mkdir(parents=True, exist_ok=True)
    rate: Fraction = Fraction(sequence.frame_rate).limit_denominator(1001)
    header: str = "YUV4MPEG2 W{} H{} F{}:{} Ip A1:1 C420jpeg\n".format(
        sequence.width, sequence.height, rate.numerator, rate.denominator
    )
    with open(path, "wb") as stream:
        stream.write(header.encode("ascii"))
        for frame in sequence:
            stream.write(b"FRAME\n")
            for plane in rgb_to_ycbcr420(frame):
                stream.write(plane.tobytes())
    logger.debug(f"wrote {len(sequence)} frames to {path}")


def write_json(payload: Any, file: PathLike) -> None:
    # sorted keys, two space indent
    path: Path = Path(file)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def read_json(file: PathLike) -> Any:
    path: Path = Path(file)
    if not path.is_file():
        raise FrameSourceError("No such file: {}".format(path))
    return json.loads(path.read_text())
