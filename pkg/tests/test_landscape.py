import hashlib

import numpy as np
import pytest

from bsner.landscape import (
    alpha_grid, landscape_1d, landscape_csv, parse_landscape_csv, sample_direction,
)
from bsner.smoothing import TargetMode
from bsner.training import mean_loss
from conftest import TINY_ITEMS, tiny_model


def params_hash(model):
    h = hashlib.sha256()
    for k, p in model.params.items():
        h.update(k.encode())
        h.update(p.data.tobytes())
    return h.hexdigest()


def test_per_weight_magnitudes():
    d = sample_direction({"w": np.array([2.0, -3.0, 0.0])}, seed=5)
    np.testing.assert_array_equal(np.abs(d.arrays["w"]), [2.0, 3.0, 0.0])
    m = tiny_model()
    d = sample_direction(m.state_dict(), seed=1)
    for k, p in m.params.items():
        assert np.array_equal(np.abs(d.arrays[k]), np.abs(p.data.astype(np.float64)))


def test_per_tensor_norms():
    m = tiny_model()
    d = sample_direction(m.state_dict(), seed=1, mode="per_tensor")
    for k, p in m.params.items():
        assert np.linalg.norm(d.arrays[k]) == pytest.approx(np.linalg.norm(p.data.astype(np.float64)), rel=1e-6)


def test_direction_is_seeded():
    state = tiny_model().state_dict()
    a, b = sample_direction(state, 3), sample_direction(state, 3)
    assert all(np.array_equal(a.arrays[k], b.arrays[k]) for k in state)
    c = sample_direction(state, 4)
    assert any(not np.array_equal(a.arrays[k], c.arrays[k]) for k in state)
    with pytest.raises(ValueError):
        sample_direction(state, 0, mode="filter")


def test_alpha_grid():
    g = alpha_grid(51)
    assert len(g) == 51 and g[0] == -1.0 and g[25] == 0.0 and g[-1] == 1.0
    np.testing.assert_allclose(np.diff(g), 0.04, atol=1e-12)
    assert list(alpha_grid(3)) == [-1.0, 0.0, 1.0]
    for bad in (1, 2, 50):
        with pytest.raises(ValueError):
            alpha_grid(bad)


@pytest.mark.parametrize("mode", [TargetMode(), TargetMode("boundary_smooth", epsilon=0.1, D=1)], ids=["ce", "bs"])
def test_center_point_is_plain_eval_loss_bitwise(mode):
    m = tiny_model()
    plain = mean_loss(m, TINY_ITEMS, mode)
    for seed in (0, 1):
        for dmode in ("per_weight", "per_tensor"):
            d = sample_direction(m.state_dict(), seed, dmode)
            curve = landscape_1d(m, d, TINY_ITEMS, mode, n_points=5)
            assert curve[2][0] == 0.0
            assert curve[2][1] == plain


def test_model_untouched_and_zero_direction_flat():
    m = tiny_model()
    before = params_hash(m)
    d = sample_direction(m.state_dict(), 0)
    landscape_1d(m, d, TINY_ITEMS, TargetMode(), n_points=7)
    assert params_hash(m) == before
    d.arrays = {k: np.zeros_like(v) for k, v in d.arrays.items()}
    losses = [loss for _, loss in landscape_1d(m, d, TINY_ITEMS, TargetMode(), n_points=5)]
    assert len(set(losses)) == 1


def test_non_finite_point_recorded():
    m = tiny_model()
    d = sample_direction(m.state_dict(), 0)
    d.arrays = {k: v * 1e38 for k, v in d.arrays.items()}
    curve = landscape_1d(m, d, TINY_ITEMS, TargetMode(), n_points=3)
    assert np.isnan(curve[0][1]) or not np.isfinite(curve[0][1])
    assert np.isfinite(curve[1][1])


def test_csv_rows_sorted_and_round_trip():
    curves = {
        "train": [(a, float(a) ** 2) for a in alpha_grid(51)],
        "test": [(a, 1.0 + a) for a in alpha_grid(51)],
        "dev": [(a, 2.0 - a) for a in alpha_grid(51)],
    }
    text = landscape_csv(curves)
    rows = text.strip().splitlines()
    assert rows[0] == "alpha,split,loss" and len(rows) == 154
    keys = [(r.split(",")[1], float(r.split(",")[0])) for r in rows[1:]]
    assert keys == sorted(keys)
    back = parse_landscape_csv(text)
    assert back == {k: sorted(v) for k, v in curves.items()}
