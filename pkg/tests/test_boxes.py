import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stpp_mot.boxes import clip_box, iou, iou_matrix, pixel_mask
from stpp_mot.errors import RejectedInputError

box = st.tuples(
    st.floats(-20, 20), st.floats(-20, 20), st.floats(1, 10), st.floats(1, 10)
)


def test_iou_hand_cases():
    assert iou((0, 0, 10, 10), (5, 0, 10, 10)) == pytest.approx(1 / 3)
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert iou((0, 0, 10, 10), (10, 0, 10, 10)) == 0.0


def test_iou_of_a_box_with_itself_stays_in_unit_interval():
    a = (0.0, 7.0, 1.0, 1.234772682818508)
    assert iou(a, a) <= 1.0
    assert iou(a, a) == pytest.approx(1.0)
    matrix = iou_matrix(np.array([a]), np.array([a]))
    assert matrix[0, 0] <= 1.0
    assert matrix[0, 0] == pytest.approx(1.0)


@given(st.lists(box, min_size=1, max_size=4), st.lists(box, max_size=4))
def test_iou_matrix_agrees_with_pairwise(a, b):
    matrix = iou_matrix(np.array(a), np.array(b))
    assert matrix.shape == (len(a), len(b))
    for i, box_a in enumerate(a):
        for j, box_b in enumerate(b):
            assert matrix[i, j] == pytest.approx(iou(box_a, box_b), abs=1e-9)
            assert 0.0 <= matrix[i, j] <= 1.0


def test_pixel_mask_uses_pixel_centers():
    mask = pixel_mask((1.0, 0.5, 2.0, 1.0), height=3, width=4)
    expected = np.zeros((3, 4), dtype=bool)
    expected[0, 1:3] = True
    np.testing.assert_array_equal(mask, expected)
    with pytest.raises(RejectedInputError):
        pixel_mask((0, 0, 0, 2), 3, 3)


def test_clip_box_keeps_one_pixel():
    assert clip_box((-3, -3, 5, 5), 10, 10) == (0.0, 0.0, 2.0, 2.0)
    assert clip_box((12, 4, 3, 3), 10, 10) == (9.0, 4.0, 1.0, 3.0)
