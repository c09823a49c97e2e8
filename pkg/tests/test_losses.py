import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sparsedepth import autodiff as ad
from sparsedepth.autodiff import Tensor
from sparsedepth.errors import EvaluationError, UsageError
from sparsedepth.losses import (
    LossWeights,
    MetricsRecord,
    abs_inv,
    abs_rel,
    append_metrics_csv,
    compute_metrics,
    loss_depth,
    loss_smooth,
    loss_total,
    mean_metrics,
    read_metrics_csv,
    s_rmse,
)
from sparsedepth.scene import SparseLabelSet

from _oracles import gradcheck, ref_abs_inv, ref_abs_rel, ref_s_rmse

positive_maps = hnp.arrays(np.float64, (4, 5), elements=st.floats(0.05, 50.0))


def labels(xs, ys, z):
    return SparseLabelSet(np.array(xs), np.array(ys), np.array(z, dtype=float))


# -- depth loss --------------------------------------------------------------


def test_depth_loss_examples():
    z = np.zeros((3, 4))
    z[1, 2] = 0.5
    assert loss_depth(z, labels([2], [1], [0.25])).item() == 0.25
    z = np.ones((2, 2))
    assert loss_depth(z, labels([0, 1], [0, 0], [0.5, 1.0])).item() == 0.25
    z = np.random.default_rng(0).uniform(0.1, 1, size=(5, 6))
    lab = labels([1, 4, 5], [0, 3, 2], [z[0, 1], z[3, 4], z[2, 5]])
    assert loss_depth(z, lab).item() == 0.0


def test_depth_loss_batch_is_mean_of_per_image_means():
    rng = np.random.default_rng(1)
    z = rng.uniform(0.1, 1, size=(2, 1, 4, 4))
    a = labels([0], [0], [0.3])
    b = labels([1, 2, 3], [1, 2, 3], [0.1, 0.2, 0.9])
    per = [loss_depth(z[0, 0], a).item(), loss_depth(z[1, 0], b).item()]
    assert loss_depth(z, [a, b]).item() == pytest.approx(np.mean(per), rel=1e-15)


def test_depth_loss_errors():
    with pytest.raises(UsageError):
        loss_depth(np.ones((2, 2)), labels([], [], []))
    with pytest.raises(UsageError):
        loss_depth(np.ones((1, 1, 2, 2)), [labels([0], [0], [1.0])] * 2)


# -- smoothness ----------------------------------------------------------------


def test_smooth_constant_is_zero():
    I = np.random.default_rng(2).uniform(size=(6, 7))
    assert loss_smooth(np.full((6, 7), 0.4), I).item() == 0.0


def test_smooth_ramp_with_flat_image():
    h, w = 5, 6
    z = np.tile(np.arange(w, dtype=float), (h, 1))
    # |dx z| = 1 on the h*(w-1) pixels that have a right neighbour, 0 on the last column
    expected = h * (w - 1) / (h * w)
    assert loss_smooth(z, np.zeros((h, w))).item() == pytest.approx(expected, rel=1e-15)


def test_smooth_matches_direct_sum():
    rng = np.random.default_rng(3)
    z, I = rng.normal(size=(4, 5)), rng.uniform(size=(4, 5))
    total = 0.0
    for y in range(4):
        for x in range(5):
            if x + 1 < 5:
                total += abs(z[y, x + 1] - z[y, x]) * math.exp(-abs(I[y, x + 1] - I[y, x]))
            if y + 1 < 4:
                total += abs(z[y + 1, x] - z[y, x]) * math.exp(-abs(I[y + 1, x] - I[y, x]))
    assert loss_smooth(z, I).item() == pytest.approx(total / 20, rel=1e-13)


def test_smooth_edge_damping():
    z = np.zeros((1, 4))
    z[0, 2:] = 1.0
    flat = loss_smooth(z, np.zeros((1, 4))).item()
    edge_img = np.zeros((1, 4))
    edge_img[0, 2:] = 3.0
    assert loss_smooth(z, edge_img).item() == pytest.approx(flat * math.exp(-3.0), rel=1e-14)


def test_smooth_multichannel_uses_channel_mean():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(1, 1, 4, 4))
    I = rng.uniform(size=(1, 3, 4, 4))
    gray = I.mean(axis=1)
    # mean of |dI| over channels differs from |d mean(I)| in general
    a = loss_smooth(z, I).item()
    dx = np.abs(np.diff(I, axis=3)).mean(axis=1)
    dy = np.abs(np.diff(I, axis=2)).mean(axis=1)
    ref = (np.sum(np.abs(np.diff(z[:, 0], axis=2)) * np.exp(-dx)) + np.sum(np.abs(np.diff(z[:, 0], axis=1)) * np.exp(-dy))) / 16
    assert a == pytest.approx(ref, rel=1e-13)
    assert a != pytest.approx(loss_smooth(z, gray).item(), rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-5, 5)), hnp.arrays(np.float64, (3, 4), elements=st.floats(0, 1)))
def test_smooth_nonnegative(z, I):
    assert loss_smooth(z, I).item() >= 0.0


# -- total -------------------------------------------------------------------


def test_total_weighting():
    rng = np.random.default_rng(5)
    z = rng.uniform(0.1, 1, size=(4, 4))
    I = rng.uniform(size=(4, 4))
    lab = labels([0, 3], [1, 2], [0.5, 0.2])
    d, s = loss_depth(z, lab).item(), loss_smooth(z, I).item()
    assert loss_total(z, lab, I).item() == pytest.approx(5 * d + 2 * s, rel=1e-15)
    assert loss_total(z, lab, I, LossWeights(5.0, 0.0)).item() == pytest.approx(5 * d, rel=1e-15)
    assert 5.0 * 0.1 + 2.0 * 0.05 == pytest.approx(0.6, rel=1e-15)
    zz = np.full((4, 4), 0.5)
    assert loss_total(zz, labels([0], [0], [0.5]), I).item() == 0.0


# -- gradients ---------------------------------------------------------------


@pytest.mark.parametrize("seed", range(20))
def test_loss_gradients(seed):
    rng = np.random.default_rng(seed)
    z = Tensor(rng.uniform(0.1, 1.0, size=(2, 1, 5, 6)), requires_grad=True)
    I = rng.uniform(size=(2, 1, 5, 6))
    sets = [labels(rng.choice(6, 3), rng.choice(5, 3), rng.uniform(0.1, 1.0, 3)) for _ in range(2)]
    assert gradcheck(lambda z: loss_depth(z, sets), [z]) < 1e-5
    assert gradcheck(lambda z: loss_smooth(z, I), [z]) < 1e-5
    assert gradcheck(lambda z: loss_total(z, sets, I), [z]) < 1e-5


def test_l1_subgradient_at_kink_is_zero():
    z = Tensor(np.full((1, 1, 2, 2), 0.5), requires_grad=True)
    with ad.Tape() as tape:
        tape.backward(loss_depth(z, labels([0], [0], [0.5])))
    assert not z.grad.any()


# -- metrics ----------------------------------------------------------------


def test_metric_worked_examples():
    assert abs_inv([1.0, 2.0], [2.0, 4.0]) == 0.375
    assert abs_rel([1.0, 2.0], [2.0, 1.0]) == 0.75
    assert s_rmse([1.0, 4.0], [2.0, 2.0]) == pytest.approx(math.log(2.0), abs=1e-15)
    d = np.array([1.5, 2.5, 7.0])
    assert abs_inv(d, d) == 0 and abs_rel(d, d) == 0 and s_rmse(d, d) == 0


@pytest.mark.parametrize("seed", range(100))
def test_metrics_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(1, 12, size=2))
    d = rng.uniform(0.2, 20.0, size=shape)
    dh = rng.uniform(0.2, 20.0, size=shape)
    assert abs(abs_inv(d, dh) - ref_abs_inv(d, dh)) < 1e-12
    assert abs(abs_rel(d, dh) - ref_abs_rel(d, dh)) < 1e-12
    assert abs(s_rmse(d, dh) - ref_s_rmse(d, dh)) < 1e-12


def test_mask_selects_pixels():
    d = np.array([[1.0, 2.0], [4.0, -1.0]])
    dh = np.array([[2.0, 2.0], [4.0, 0.0]])
    m = np.array([[True, True], [True, False]])
    assert abs_inv(d, dh, m) == pytest.approx(ref_abs_inv([1, 2, 4], [2, 2, 4]), abs=1e-15)
    rec = compute_metrics(d, dh, m)
    assert rec.n_pixels == 3


def test_metric_errors():
    with pytest.raises(EvaluationError):
        abs_inv([1.0, 0.0], [1.0, 1.0])
    with pytest.raises(EvaluationError):
        abs_rel([1.0], [np.nan])
    with pytest.raises(EvaluationError):
        s_rmse([1.0], [1.0], np.array([False]))


@settings(max_examples=60, deadline=None)
@given(positive_maps, positive_maps, st.sampled_from([0.1, 1.0, 10.0]))
def test_s_rmse_scale_invariance(d, dh, c):
    assert abs(s_rmse(d, c * dh) - s_rmse(d, dh)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(positive_maps, positive_maps, st.floats(0.1, 10.0))
def test_joint_scaling(d, dh, c):
    # absolute differences cancel, so the floor is a few ulp of the operands
    ulp = 8 * np.finfo(np.float64).eps
    inv_scale = max(np.max(1.0 / d), np.max(1.0 / dh)) / c
    assert abs_rel(c * d, c * dh) == pytest.approx(abs_rel(d, dh), rel=1e-12, abs=ulp)
    assert abs_inv(c * d, c * dh) == pytest.approx(abs_inv(d, dh) / c, rel=1e-12, abs=ulp * inv_scale)


@settings(max_examples=30, deadline=None)
@given(positive_maps, positive_maps, st.randoms(use_true_random=False))
def test_metrics_permutation_invariant(d, dh, rnd):
    perm = list(range(d.size))
    rnd.shuffle(perm)
    a, b = d.ravel()[perm], dh.ravel()[perm]
    assert abs_inv(a, b) == pytest.approx(abs_inv(d, dh), rel=1e-12)
    assert s_rmse(a, b) == pytest.approx(s_rmse(d, dh), rel=1e-9, abs=1e-12)


def test_mean_metrics_and_csv(tmp_path):
    r1, r2 = MetricsRecord(0.1, 0.2, 0.3, 10), MetricsRecord(0.3, 0.4, 0.5, 5)
    m = mean_metrics([r1, r2])
    assert (m.abs_inv, m.n_pixels) == (pytest.approx(0.2), 15)
    path = tmp_path / "metrics.csv"
    append_metrics_csv(path, "run", "test", 1, r1)
    append_metrics_csv(path, "run", "test", "dense", r2)
    lines = path.read_text().splitlines()
    assert lines[0] == "run_id,split,n_labels,abs_inv,abs_rel,s_rmse,n_pixels"
    rows = read_metrics_csv(path)
    assert rows[0]["abs_inv"] == 0.1 and rows[1]["n_labels"] == "dense" and rows[1]["n_pixels"] == 5
    with pytest.raises(EvaluationError):
        mean_metrics([])
