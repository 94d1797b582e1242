import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tiae.autodiff import Var, backward, sq_l2
from tiae.rng import SplitMix64
from tiae.transforms import (
    ShiftParam,
    TransformGrid,
    apply_shift,
    best_shift,
    best_shift_batch,
    paper_grid,
    shift2d,
    shift_stack,
)

shifts = st.integers(-5, 5)


def interior_pattern(canvas=16, margin=5):
    """Pattern whose support keeps a `margin` border of zeros."""
    img = np.zeros((1, canvas, canvas))
    img[0, margin:margin + 4, margin:margin + 4] = \
        np.arange(16, dtype=float).reshape(4, 4) / 16.0 + 0.1
    return img


class TestApplyShift:
    def test_identity(self):
        img = interior_pattern()
        assert np.array_equal(apply_shift(img, ShiftParam(0, 0)), img)

    def test_hand_example(self):
        img = np.array([[[1., 2., 3.], [4., 5., 6.], [7., 8., 9.]]])
        out = apply_shift(img, ShiftParam(dx=1, dy=0))
        assert np.array_equal(out[0], [[2., 3., 0.], [5., 6., 0.],
                                       [8., 9., 0.]])

    @given(shifts, shifts)
    def test_inverse_on_interior(self, dx, dy):
        img = interior_pattern()
        there = apply_shift(img, ShiftParam(dx, dy))
        back = apply_shift(there, ShiftParam(-dx, -dy))
        assert np.array_equal(back, img)

    @given(shifts, shifts)
    def test_shape_preserved(self, dx, dy):
        img = interior_pattern(canvas=11, margin=3)
        assert apply_shift(img, ShiftParam(dx, dy)).shape == img.shape

    @given(st.integers(-2, 2), st.integers(-2, 2), st.integers(-2, 2),
           st.integers(-2, 2))
    def test_composition_on_interior(self, a, b, c, d):
        img = interior_pattern()
        two = apply_shift(apply_shift(img, ShiftParam(a, b)),
                          ShiftParam(c, d))
        one = apply_shift(img, ShiftParam(a + c, b + d))
        assert np.array_equal(two, one)

    @given(shifts, shifts)
    def test_mass_conserved_on_interior(self, dx, dy):
        img = interior_pattern()
        assert apply_shift(img, ShiftParam(dx, dy)).sum() == \
            pytest.approx(img.sum())

    def test_batched_leading_axes(self):
        batch = np.stack([interior_pattern(), interior_pattern() * 0.5])
        out = apply_shift(batch, ShiftParam(2, -1))
        for i in range(2):
            assert np.array_equal(
                out[i], apply_shift(batch[i], ShiftParam(2, -1)))


class TestGrid:
    def test_paper_grid_size(self):
        assert len(paper_grid()) == 81

    def test_paper_grid_contains_identity(self):
        assert paper_grid().contains_identity
        assert ShiftParam(0, 0) in paper_grid().params

    def test_paper_grid_corners(self):
        g = paper_grid()
        assert ShiftParam(-8, 8) in g.params
        assert ShiftParam(8, -8) in g.params

    def test_row_major_order(self):
        g = TransformGrid.from_axis([-1, 0, 1])
        assert g.to_pairs() == [[-1, -1], [0, -1], [1, -1],
                                [-1, 0], [0, 0], [1, 0],
                                [-1, 1], [0, 1], [1, 1]]

    def test_rejects_duplicates_and_empty(self):
        with pytest.raises(ValueError):
            TransformGrid.from_pairs([[0, 0], [0, 0]])
        with pytest.raises(ValueError):
            TransformGrid(())

    def test_pairs_round_trip(self):
        g = TransformGrid.from_pairs([[2, -1], [0, 0]])
        assert TransformGrid.from_pairs(g.to_pairs()) == g
        assert g.max_abs_shift == 2


class TestBestShift:
    grid = TransformGrid.from_axis([-4, -2, 0, 2, 4])

    def test_identical_images(self):
        img = interior_pattern()
        p, res = best_shift(img, img, self.grid)
        assert p == ShiftParam(0, 0)
        assert res == 0.0

    def test_round_trip_shift_recovered(self):
        img = interior_pattern()
        cand = apply_shift(img, ShiftParam(-2, 4))
        p, res = best_shift(img, cand, self.grid)
        assert res == 0.0
        assert np.array_equal(apply_shift(cand, p), img)
        assert p == ShiftParam(2, -4)

    def test_out_of_grid_shift_leaves_residual(self):
        rng = SplitMix64(3)
        img = rng.uniform_array(0, 1, 16 * 16).reshape(1, 16, 16)
        cand = apply_shift(img, ShiftParam(7, 0))  # outside +-4 grid
        _, res = best_shift(img, cand, self.grid)
        assert res > 0.0

    @given(shifts, shifts)
    def test_residual_bounded_by_identity(self, dx, dy):
        img = interior_pattern()
        cand = apply_shift(img, ShiftParam(dx, dy))
        _, res = best_shift(img, cand, self.grid)
        identity_res = float(np.sum((img - cand) ** 2))
        assert res <= identity_res + 1e-12

    def test_tie_breaks_to_earliest_index(self):
        # constant images: every shift that keeps the frame aligned ties;
        # all-zero images tie everywhere -> earliest grid element wins
        z = np.zeros((1, 8, 8))
        p, res = best_shift(z, z, self.grid)
        assert p == self.grid[0]
        assert res == 0.0

    def test_batch_matches_single(self):
        rng = SplitMix64(9)
        imgs = rng.uniform_array(0, 1, 3 * 16 * 16).reshape(3, 1, 16, 16)
        cands = np.stack([apply_shift(imgs[i], ShiftParam(2 * i - 2, 2))
                          for i in range(3)])
        idx, res = best_shift_batch(imgs, cands, self.grid)
        for i in range(3):
            p_single, r_single = best_shift(imgs[i], cands[i], self.grid)
            assert self.grid[int(idx[i])] == p_single
            assert res[i] == pytest.approx(r_single)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            best_shift(np.zeros((1, 4, 4)), np.zeros((1, 5, 5)), self.grid)


class TestShiftNode:
    def test_forward_matches_apply_shift(self):
        img = interior_pattern()
        x = Var(img[None])
        node = shift2d(x, ShiftParam(3, -2))
        assert np.array_equal(node.value[0],
                              apply_shift(img, ShiftParam(3, -2)))

    @given(shifts, shifts)
    def test_gradient_is_adjoint_shift(self, dx, dy):
        img = interior_pattern()
        x = Var(img[None])
        node = shift2d(x, ShiftParam(dx, dy))
        grads = backward(sq_l2(node))
        expected = apply_shift(2.0 * node.value, ShiftParam(-dx, -dy))
        assert np.array_equal(grads[x], expected)

    def test_shift_stack_layout(self):
        grid = TransformGrid.from_axis([0, 2])
        imgs = np.stack([interior_pattern(), interior_pattern() * 0.3])
        stack = shift_stack(imgs, grid)
        assert stack.shape == (4, 2, 1, 16, 16)
        for i, p in enumerate(grid):
            assert np.array_equal(stack[i], apply_shift(imgs, p))
