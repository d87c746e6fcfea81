import numpy as np
import pytest

from ste_deflick.core_image import (
    FrameRGB,
    FrameSequence,
    IlluminationMap,
    apply_illumination,
    illumination_map,
)
from ste_deflick.errors import DimensionMismatchError


def pixel(r: int, g: int, b: int) -> FrameRGB:
    return FrameRGB(np.array([[[r, g, b]]], dtype=np.uint8))


def test_frame_validation():
    with pytest.raises(ValueError):
        FrameRGB(np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(ValueError):
        FrameRGB(np.zeros((4, 4, 3), dtype=np.float64))
    with pytest.raises(ValueError):
        FrameRGB(np.zeros((0, 4, 3), dtype=np.uint8))


def test_frame_is_read_only():
    frame = pixel(1, 2, 3)
    with pytest.raises(ValueError):
        frame.data[0, 0, 0] = 9


def test_from_float_rounds_and_clips():
    frame = FrameRGB.from_float(np.array([[[-3.0, 255.6, 127.5]]]))
    assert frame.data.tolist() == [[[0, 255, 128]]]


def test_illumination_map_is_channel_maximum():
    assert illumination_map(pixel(0, 0, 0)).data[0, 0] == 0
    assert illumination_map(pixel(10, 200, 55)).data[0, 0] == 200
    frame = FrameRGB(np.array([[[255, 0, 0], [3, 3, 3]]], dtype=np.uint8))
    assert illumination_map(frame).data.tolist() == [[255.0, 3.0]]


def test_illumination_map_range_is_checked():
    with pytest.raises(ValueError):
        IlluminationMap(np.array([[256.0]]))
    with pytest.raises(ValueError):
        IlluminationMap(np.zeros((0, 3)))


def test_apply_illumination_same_map_is_identity(make_texture, make_frame):
    frame = make_frame(make_texture(3, 16, 16))
    v = illumination_map(frame)
    assert np.array_equal(apply_illumination(frame, v, v).data, frame.data)


def test_apply_illumination_halves():
    out = apply_illumination(
        pixel(100, 50, 0), IlluminationMap([[100.0]]), IlluminationMap([[50.0]])
    )
    assert out.data.tolist() == [[[50, 25, 0]]]


def test_apply_illumination_black_pixel_becomes_gray():
    out = apply_illumination(
        pixel(0, 0, 0), IlluminationMap([[0.0]]), IlluminationMap([[37.0]])
    )
    assert out.data.tolist() == [[[37, 37, 37]]]


def test_apply_illumination_size_mismatch():
    with pytest.raises(DimensionMismatchError):
        apply_illumination(
            pixel(1, 1, 1), IlluminationMap(np.ones((2, 2))), IlluminationMap([[1.0]])
        )


def test_sequence_requires_uniform_size(make_gray):
    with pytest.raises(DimensionMismatchError):
        FrameSequence([make_gray(10, 4, 4), make_gray(10, 4, 5)])
    with pytest.raises(ValueError):
        FrameSequence([])


def test_sequence_access(make_gray):
    seq = FrameSequence([make_gray(10, 4, 6), make_gray(20, 4, 6)], frame_rate=25.0)
    assert len(seq) == 2
    assert (seq.width, seq.height) == (6, 4)
    assert seq.stack().shape == (2, 4, 6, 3)
    assert seq[1].data[0, 0, 0] == 20
    assert seq.with_frames([seq[0]]).frame_rate == 25.0


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("scale", [0.8, 0.9, 1.1, 1.2])
def test_apply_illumination_round_trip(make_texture, make_frame, seed, scale):
    frame = make_frame(make_texture(seed, 16, 16))
    v = illumination_map(frame)
    out = apply_illumination(frame, v, IlluminationMap(v.data * scale))
    back = apply_illumination(out, illumination_map(out), v)
    assert np.abs(back.data.astype(int) - frame.data.astype(int)).max() <= 1


@pytest.mark.parametrize("seed", range(3))
def test_apply_illumination_keeps_channel_ratios(make_texture, make_frame, seed):
    frame = make_frame(make_texture(seed, 16, 16))
    v = illumination_map(frame)
    rng = np.random.default_rng(seed)
    new_v = IlluminationMap(np.clip(v.data + rng.uniform(-40, 40, v.shape), 0, 255))
    out = apply_illumination(frame, v, new_v).data.astype(float)
    expected = frame.data.astype(float) * (new_v.data / v.data)[..., None]
    assert np.abs(out - expected).max() <= 1.0


@pytest.mark.parametrize("seed", range(3))
def test_apply_illumination_is_monotone_in_the_new_map(
    make_texture, make_frame, seed
):
    frame = make_frame(make_texture(seed, 16, 16))
    v = illumination_map(frame)
    rng = np.random.default_rng(10 + seed)
    lower = rng.uniform(0, 200, v.shape)
    higher = lower + rng.uniform(0, 55, v.shape)
    dim = apply_illumination(frame, v, IlluminationMap(lower)).data
    bright = apply_illumination(frame, v, IlluminationMap(higher)).data
    assert np.all(bright >= dim)
