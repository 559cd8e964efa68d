from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mammoreg.image import Image, Mask, flip_horizontal
from mammoreg.segmentation import (
    SegmentationError,
    connected_components,
    estimate_background_stats,
    fill_holes,
    segment_breast,
    threshold_mask,
)


def flood_fill_labels(fg, radius):
    """Brute-force oracle: BFS over every pair within the disc."""
    h, w = fg.shape
    labels = np.zeros((h, w), dtype=int)
    pts = [(j, i) for j in range(h) for i in range(w) if fg[j, i]]
    nxt = 0
    for start in pts:
        if labels[start]:
            continue
        nxt += 1
        labels[start] = nxt
        queue = deque([start])
        while queue:
            j, i = queue.popleft()
            for (jj, ii) in pts:
                if not labels[jj, ii] and (jj - j) ** 2 + (ii - i) ** 2 <= radius * radius:
                    labels[jj, ii] = nxt
                    queue.append((jj, ii))
    return labels, nxt


def phantom(hole=False, tag=True, seed=0, size=(80, 100)):
    h, w = size
    rng = np.random.default_rng(seed)
    data = 0.05 + rng.normal(0, 0.005, size=size)
    y, x = np.mgrid[:h, :w]
    ellipse = ((x - 40) / 25.0) ** 2 + ((y - 40) / 22.0) ** 2 <= 1
    data[ellipse] = 0.6
    if hole:
        data[(x - 40) ** 2 + (y - 40) ** 2 <= 16] = 0.05
    if tag:
        data[15:22, 80:88] = 0.9
    return Image(np.clip(data, 0, 1), (1.0, 1.0)), ellipse


class TestBackgroundStats:
    def test_zero_image(self):
        assert estimate_background_stats(Image(np.zeros((5, 5))), 1) == (0.0, 0.0)

    def test_constant_frame(self):
        d = np.full((5, 5), 0.9)
        d[0, :] = d[-1, :] = d[:, 0] = d[:, -1] = 0.1
        mean, std = estimate_background_stats(Image(d), 1)
        assert mean == pytest.approx(0.1) and std == pytest.approx(0.0, abs=1e-15)

    def test_equal_counts_hand_value(self):
        d = np.zeros((4, 4))
        d[0, :] = 0.2
        d[1:3, 0] = 0.2
        # frame: top row (4) + two left = 6 at 0.2, six at 0
        mean, std = estimate_background_stats(Image(d), 1)
        assert mean == pytest.approx(0.1) and std == pytest.approx(0.1)

    def test_border_too_large(self):
        with pytest.raises(ValueError):
            estimate_background_stats(Image(np.zeros((10, 10))), 5)


class TestThreshold:
    def test_cases(self):
        im = Image(np.array([[0.1, 0.5]]))
        np.testing.assert_array_equal(threshold_mask(im, 0.3).data, [[False, True]])
        assert not threshold_mask(im, 1.0).data.any()
        assert threshold_mask(im, -1.0).data.all()


class TestConnectedComponents:
    def test_empty(self):
        lab = connected_components(Mask(np.zeros((4, 4), bool)))
        assert lab.count == 0 and not lab.labels.any()

    def test_single_pixel_image(self):
        # no neighbor offset fits inside a 1x1 image
        lab = connected_components(Mask(np.ones((1, 1), bool)), 3)
        assert lab.count == 1 and lab.labels[0, 0] == 1

    def test_two_px_apart_joined(self):
        m = np.zeros((1, 6), bool)
        m[0, [1, 3]] = True
        assert connected_components(Mask(m), 3).count == 1

    def test_five_px_apart_split(self):
        m = np.zeros((1, 8), bool)
        m[0, [1, 6]] = True
        lab = connected_components(Mask(m), 3)
        assert lab.count == 2 and lab.labels[0, 1] == 1 and lab.labels[0, 6] == 2

    def test_diagonal_on_disc_edge(self):
        # (2, 2) offset has length 2.83 <= 3; (3, 1) has 3.16 > 3
        m = np.zeros((6, 6), bool)
        m[0, 0] = m[2, 2] = True
        assert connected_components(Mask(m), 3).count == 1
        m = np.zeros((6, 6), bool)
        m[0, 0] = m[1, 3] = True
        assert connected_components(Mask(m), 3).count == 2

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.bool_, st.tuples(st.integers(1, 14), st.integers(1, 14)),
                  elements=st.booleans()).map(lambda a: a & (np.arange(a.size).reshape(a.shape) % 3 == 0)),
           st.integers(1, 4))
    def test_matches_flood_fill(self, fg, radius):
        lab = connected_components(Mask(fg), radius)
        ref, count = flood_fill_labels(fg, radius)
        assert lab.count == count
        np.testing.assert_array_equal(lab.labels, ref)

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            connected_components(Mask(np.ones((2, 2), bool)), 0)


class TestSegmentBreast:
    def test_ellipse_without_tag(self):
        im, ellipse = phantom()
        mask = segment_breast(im)
        np.testing.assert_array_equal(mask.data, ellipse)

    def test_hole_filled(self):
        im, ellipse = phantom(hole=True)
        np.testing.assert_array_equal(segment_breast(im).data, ellipse)

    def test_single_component(self):
        im, _ = phantom(seed=4)
        mask = segment_breast(im)
        assert connected_components(mask, 3).count == 1

    def test_all_dark(self):
        with pytest.raises(SegmentationError):
            segment_breast(Image(np.zeros((40, 40))))

    def test_too_small(self):
        with pytest.raises(ValueError):
            segment_breast(Image(np.zeros((20, 40))))

    def test_flip_invariance(self):
        im, _ = phantom(seed=2)
        assert segment_breast(flip_horizontal(im)) == flip_horizontal(segment_breast(im))

    def test_brighter_tissue_does_not_shrink_mask(self):
        im, _ = phantom(seed=3)
        brighter = im.with_data(np.where(im.data > 0.3, np.minimum(im.data + 0.2, 1.0), im.data))
        a, b = segment_breast(im).data, segment_breast(brighter).data
        assert np.all(b[a])

    def test_fill_holes_direct(self):
        m = np.ones((5, 5), bool)
        m[2, 2] = False
        assert fill_holes(Mask(m)).data.all()
        m[2, 0] = False  # on the border, so it stays background
        assert fill_holes(Mask(m)).data.sum() == 24
