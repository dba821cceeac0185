import itertools

import numpy as np
import pytest

from cyclecl.exceptions import ConfigError, ContractError, DimensionError
from cyclecl.head import (
    HeadConfig, adam_step, calibrate_init, head_backward, head_forward, init_adam, init_params,
    l2_normalize, load_checkpoint, save_checkpoint, update_running_stats,
)
from gradcheck import small_config, worst_error


@pytest.mark.parametrize("bn,pool,l2", list(itertools.product([True, False], ["max", "mean"], [True, False])))
def test_gradients_match_finite_differences(bn, pool, l2):
    cfg = small_config(bn, pool, l2)
    assert max(worst_error(cfg, i) for i in range(3)) < 1e-4


def test_output_shape_and_unit_norm(rng):
    cfg = HeadConfig()
    emb, _ = head_forward(rng.normal(size=(3, 20, 8, 12)), init_params(cfg, 0), cfg)
    assert emb.shape == (3, 20, 16)
    np.testing.assert_allclose(np.linalg.norm(emb, axis=-1), 1.0, atol=1e-12)


def test_single_clip_promoted(rng):
    cfg = HeadConfig()
    x = rng.normal(size=(10, 8, 12))
    a, _ = head_forward(x, init_params(cfg, 1), cfg)
    b, _ = head_forward(x[None], init_params(cfg, 1), cfg)
    np.testing.assert_array_equal(a, b)


def test_l2_degenerate_zero_vector():
    out, deg = l2_normalize(np.array([[0.0, 0.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(out[0], [0.0, 0.0])
    np.testing.assert_allclose(out[1], [0.6, 0.8])
    assert deg.tolist() == [True, False]


def test_eval_forward_pure_and_deterministic(rng):
    cfg = HeadConfig()
    params = init_params(cfg, 0)
    before = {k: v.copy() for k, v in params.arrays().items()}
    x = rng.normal(size=(2, 12, 8, 12))
    a, _ = head_forward(x, params, cfg, "train")
    b, _ = head_forward(x, params, cfg, "eval")
    c, _ = head_forward(x, params, cfg, "eval")
    np.testing.assert_array_equal(b, c)
    for k, v in params.arrays().items():
        np.testing.assert_array_equal(v, before[k])


def test_eval_is_framewise_causal_window(rng):
    # with kernel 3 an eval-mode embedding depends only on frames t-1..t+1
    cfg = HeadConfig()
    params = init_params(cfg, 0)
    x = rng.normal(size=(1, 20, 8, 12))
    y = x.copy()
    y[0, 15:] += 1.0
    a, _ = head_forward(x, params, cfg)
    b, _ = head_forward(y, params, cfg)
    np.testing.assert_array_equal(a[0, :14], b[0, :14])
    assert not np.allclose(a[0, 14], b[0, 14])


def test_kernel_one_ignores_neighbours(rng):
    cfg = HeadConfig(kernel_size=1)
    params = init_params(cfg, 0)
    x = rng.normal(size=(1, 10, 8, 12))
    full, _ = head_forward(x, params, cfg)
    single, _ = head_forward(x[:, 4:5], params, cfg)
    np.testing.assert_allclose(full[0, 4], single[0, 0], atol=1e-14)


def test_mean_pooling_region_permutation_invariant(rng):
    for pool in ("max", "mean"):
        cfg = HeadConfig(pooling=pool)
        params = init_params(cfg, 0)
        x = rng.normal(size=(1, 10, 8, 12))
        a, _ = head_forward(x, params, cfg)
        b, _ = head_forward(x[:, :, ::-1], params, cfg)
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_backward_requires_train_cache(rng):
    cfg = HeadConfig()
    params = init_params(cfg, 0)
    emb, cache = head_forward(rng.normal(size=(1, 5, 8, 12)), params, cfg, "eval")
    with pytest.raises(ContractError):
        head_backward(np.zeros_like(emb), cache, params, cfg)


def test_dimension_errors(rng):
    cfg = HeadConfig()
    with pytest.raises(DimensionError):
        head_forward(rng.normal(size=(1, 5, 8, 7)), init_params(cfg, 0), cfg)
    with pytest.raises(ConfigError):
        HeadConfig(kernel_size=2).validate()
    with pytest.raises(ConfigError):
        HeadConfig(pooling="median").validate()


def test_running_stats_update(rng):
    cfg = HeadConfig()
    params = init_params(cfg, 0)
    _, cache = head_forward(rng.normal(size=(2, 6, 8, 12)), params, cfg, "train")
    new = update_running_stats(params, cache, cfg)
    np.testing.assert_allclose(new.bn_running_mean, 0.1 * cache.batch_mean)
    np.testing.assert_allclose(new.bn_running_var, 0.9 + 0.1 * cache.batch_var)


def test_calibrated_init_centres_outputs(rng):
    cfg = HeadConfig()
    clips = rng.normal(size=(4, 30, 8, 12))
    params = calibrate_init(init_params(cfg, 0), clips, cfg)
    _, cache = head_forward(clips, params, cfg, "eval")
    np.testing.assert_allclose(cache.out.reshape(-1, 16).mean(axis=0), 0.0, atol=1e-12)


def test_adam_step_matches_reference():
    cfg = small_config(True, "max", True)
    params = init_params(cfg, 0)
    state = init_adam(params, lr=1e-3, weight_decay=1e-2)
    grads = {k: np.full_like(getattr(params, k), 0.5) for k in state.m}
    new, st = adam_step(params, grads, state)
    g = 0.5 + 1e-2 * params.fc_w
    m_hat = (0.1 * g) / 0.1
    v_hat = (0.001 * g * g) / 0.001
    np.testing.assert_allclose(new.fc_w, params.fc_w - 1e-3 * m_hat / (np.sqrt(v_hat) + 1e-8))
    assert st.t == 1
    # inputs untouched
    assert not np.array_equal(new.fc_w, params.fc_w)
    np.testing.assert_array_equal(state.m["fc_w"], 0.0)


def test_checkpoint_round_trip(tmp_path, rng):
    cfg = HeadConfig(out_dim=8, pooling="mean")
    params = init_params(cfg, 3)
    state = init_adam(params)
    _, state = adam_step(params, {k: rng.normal(size=v.shape) for k, v in state.m.items()}, state)
    path = tmp_path / "ck.json"
    save_checkpoint(path, params, cfg, state, seed=3, extra={"note": 1})
    p2, cfg2, st2, seed, extra = load_checkpoint(path)
    assert cfg2 == cfg and seed == 3 and extra == {"note": 1} and st2.t == 1
    for k, v in params.arrays().items():
        np.testing.assert_array_equal(getattr(p2, k), v)
    for k in state.m:
        np.testing.assert_array_equal(st2.m[k], state.m[k])
