import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from ensemble_pad.errors import BadBandFraction, BadWeights, BoxOutOfBounds, EmptyVideo, NoFaceFound
from ensemble_pad.frames import (
    ExternalLocator,
    FaceBox,
    RegionKind,
    VideoFrames,
    extract_region,
    laplacian_variance,
    locate_face,
    luminance,
    score_frame_quality,
    select_best_frame,
)
from ensemble_pad.imaging import resize_bilinear


def brute_laplacian_variance(frame):
    """Oracle: explicit 3x3 convolution loop over interior pixels."""
    lum = luminance(frame)
    kernel = [[0, 1, 0], [1, -4, 1], [0, 1, 0]]
    vals = []
    for r in range(1, lum.shape[0] - 1):
        for c in range(1, lum.shape[1] - 1):
            acc = 0.0
            for i in range(3):
                for j in range(3):
                    acc += kernel[i][j] * lum[r + i - 1, c + j - 1]
            vals.append(acc)
    vals = np.array(vals)
    return float(((vals - vals.mean()) ** 2).mean())


def blurred(frame, sigma):
    return ndimage.gaussian_filter(frame, sigma=(sigma, sigma, 0), mode="reflect")


@pytest.fixture
def textured():
    return np.random.default_rng(0).random((24, 20, 3))


def test_constant_gray_frame():
    q = score_frame_quality(np.full((10, 10, 3), 0.5), weights=(0.5, 0.25, 0.25))
    assert q.sharpness == 0.0
    assert q.exposure == 1.0
    assert q.face_presence == 1.0
    assert q.total == pytest.approx(0.25 + 0.25, abs=1e-15)


def test_black_frame_exposure():
    assert score_frame_quality(np.zeros((8, 8, 3))).exposure == 0.0


def test_laplacian_matches_brute_force(textured):
    assert laplacian_variance(textured) == pytest.approx(brute_laplacian_variance(textured), rel=1e-12)


def test_blur_lowers_sharpness(textured):
    sharp = brute_laplacian_variance(textured)
    soft = brute_laplacian_variance(blurred(textured, 2.0))
    assert sharp > soft
    assert score_frame_quality(textured).sharpness > score_frame_quality(blurred(textured, 2.0)).sharpness


def test_sharpness_flip_invariant(textured):
    assert laplacian_variance(textured[:, ::-1]) == pytest.approx(laplacian_variance(textured), rel=1e-12)


@pytest.mark.parametrize("weights", [(0.5, 0.5, 0.5), (-0.1, 0.6, 0.5), (1.0, 0.0)])
def test_bad_weights(weights, textured):
    with pytest.raises(BadWeights):
        score_frame_quality(textured, weights=weights)


def test_single_frame_video(textured):
    assert select_best_frame(VideoFrames((textured,)))[0] == 0


def test_identical_frames_tie_break(textured):
    assert select_best_frame(VideoFrames((textured,) * 5))[0] == 0


def test_sharp_frame_selected(textured):
    soft = blurred(textured, 2.0)
    totals = [score_frame_quality(f).total for f in (soft, textured, soft)]
    assert int(np.argmax(totals)) == 1
    assert select_best_frame([soft, textured, soft])[0] == 1


def test_empty_video():
    with pytest.raises(EmptyVideo):
        select_best_frame([])
    with pytest.raises(EmptyVideo):
        VideoFrames(())


def test_best_frame_stable_under_duplication(textured):
    frames = [blurred(textured, 1.0), textured, blurred(textured, 3.0)]
    idx, _ = select_best_frame(frames)
    assert select_best_frame(frames + frames)[0] == idx


@pytest.mark.parametrize("shape, box", [((100, 100), (25, 25, 75, 75)), ((4, 4), (1, 1, 3, 3))])
def test_default_locator(shape, box):
    b = locate_face(np.zeros(shape + (3,)))
    assert (b.row0, b.col0, b.row1, b.col1) == box and b.confidence == 1.0


def test_default_locator_deterministic(textured):
    assert locate_face(textured) == locate_face(textured.copy())


def test_external_adapter_rejects_degenerate_box(textured):
    with pytest.raises(BoxOutOfBounds):
        ExternalLocator(lambda f: (5, 2, 5, 8, 0.9))(textured)


def test_external_adapter_no_face(textured):
    loc = ExternalLocator(lambda f: None)
    with pytest.raises(NoFaceFound):
        loc(textured)
    assert score_frame_quality(textured, loc).face_presence == 0.0


def test_full_frame_identity(textured):
    view = extract_region(textured, locate_face(textured), RegionKind.FULL_FRAME, textured.shape[:2])
    assert np.array_equal(view.pixels, textured)


def test_background_with_full_box_is_neutral(textured):
    box = FaceBox(0, 0, 24, 20)
    view = extract_region(textured, box, RegionKind.BACKGROUND, (16, 16))
    assert np.all(view.pixels == 0.5)


def test_face_crop_pixel_exact():
    frame = np.random.default_rng(3).random((100, 100, 3))
    view = extract_region(frame, FaceBox(25, 25, 75, 75), RegionKind.FACE, (50, 50))
    for r in range(50):
        for c in range(50):
            assert np.array_equal(view.pixels[r, c], frame[25 + r, 25 + c])


def test_face_band_neutral_centre():
    frame = np.random.default_rng(5).random((40, 40, 3))
    box = FaceBox(10, 10, 30, 30)
    view = extract_region(frame, box, RegionKind.FACE_BAND, (30, 30), band_fraction=0.25)
    # dilated crop is rows/cols 5..35 (30 px), inner box maps to 5..25
    assert np.all(view.pixels[5:25, 5:25] == 0.5)
    assert np.array_equal(view.pixels[:5], frame[5:10, 5:35])


def test_bad_band_fraction(textured):
    with pytest.raises(BadBandFraction):
        extract_region(textured, locate_face(textured), RegionKind.FACE_BAND, band_fraction=0.6)


def test_box_out_of_bounds(textured):
    with pytest.raises(BoxOutOfBounds):
        extract_region(textured, FaceBox(0, 0, 30, 10), RegionKind.FACE)


def test_resize_identity_and_corners():
    img = np.random.default_rng(6).random((7, 9, 3))
    assert np.array_equal(resize_bilinear(img, (7, 9)), img)
    up = resize_bilinear(img, (13, 17))
    for r, c in [(0, 0), (0, -1), (-1, 0), (-1, -1)]:
        assert np.allclose(up[r, c], img[r, c])


boxes = st.integers(4, 30).flatmap(lambda h: st.integers(4, 30).flatmap(lambda w: st.tuples(
    st.just(h), st.just(w),
    st.integers(0, h - 1).flatmap(lambda r0: st.tuples(st.just(r0), st.integers(r0 + 1, h))),
    st.integers(0, w - 1).flatmap(lambda c0: st.tuples(st.just(c0), st.integers(c0 + 1, w))),
)))


@settings(max_examples=200, deadline=None)
@given(boxes, st.sampled_from(list(RegionKind)), st.integers(1, 40), st.integers(1, 40))
def test_output_dims_always_match(spec, kind, oh, ow):
    h, w, (r0, r1), (c0, c1) = spec
    frame = np.random.default_rng(h * 100 + w).random((h, w, 3))
    view = extract_region(frame, FaceBox(r0, c0, r1, c1), kind, (oh, ow))
    assert view.pixels.shape == (oh, ow, 3)


@settings(max_examples=200, deadline=None)
@given(boxes)
def test_face_and_background_partition_frame(spec):
    h, w, (r0, r1), (c0, c1) = spec
    box = FaceBox(r0, c0, r1, c1)
    face_mask = np.zeros((h, w), bool)
    face_mask[r0:r1, c0:c1] = True
    # background keeps exactly the pixels outside the box; marker frame has no 0.5 values
    frame = np.where(np.random.default_rng(1).random((h, w, 3)) < 0.5, 0.1, 0.9)
    bg = extract_region(frame, box, RegionKind.BACKGROUND, (h, w)).pixels
    kept = (bg != 0.5).all(axis=2)
    assert np.array_equal(kept, ~face_mask)
    face = extract_region(frame, box, RegionKind.FACE, (r1 - r0, c1 - c0)).pixels
    assert np.array_equal(face, frame[r0:r1, c0:c1])
    assert np.array_equal(bg[kept], frame[~face_mask])
