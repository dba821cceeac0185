import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cyclecl.exceptions import ConfigError, DimensionError
from cyclecl.head import HeadConfig
from cyclecl.training import (
    TrainConfig, _role_views, embed_dataset, embed_sequence, train, triplet_loss,
)
from conftest import unit_rows


def _unit(*v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def test_triplet_loss_examples():
    a = _unit(1, 0)
    assert triplet_loss(a, a, _unit(0, 1))[0] == 0.0
    assert triplet_loss(a, a, a)[0] == pytest.approx(0.5)
    p = _unit(0.5, np.sqrt(0.75))
    n = _unit(0.8, 0.6)
    assert triplet_loss(a, p, n)[0] == pytest.approx(1.1)


def test_triplet_loss_gradients_match_fd(rng):
    a, p, n = (unit_rows(rng.normal(size=(6, 4))) for _ in range(3))
    loss, ga, gp, gn = triplet_loss(a, p, n)
    h = 1e-6
    for arr, g in ((a, ga), (p, gp), (n, gn)):
        for idx in np.ndindex(arr.shape):
            arr[idx] += h
            up = triplet_loss(a, p, n)[0]
            arr[idx] -= 2 * h
            down = triplet_loss(a, p, n)[0]
            arr[idx] += h
            assert (up - down) / (2 * h) == pytest.approx(g[idx], abs=1e-6)


vec = arrays(float, (5, 3), elements=st.floats(-1, 1, allow_nan=False))


@settings(max_examples=100, deadline=None)
@given(vec, vec, vec)
def test_loss_nonnegative_and_zero_iff_satisfied(a, p, n):
    loss, *_ = triplet_loss(a, p, n, 0.5)
    assert loss >= 0
    satisfied = ((a - p) ** 2).sum(1) + 0.5 <= ((a - n) ** 2).sum(1)
    assert (loss == 0) == bool(satisfied.all())


def test_triplet_loss_inactive_branch_zero_gradient():
    a = _unit(1, 0)
    loss, ga, gp, gn = triplet_loss(a[None], a[None], _unit(-1, 0)[None])
    assert loss == 0 and not ga.any() and not gp.any() and not gn.any()


def test_constant_sequences_skip_every_iteration(caplog):
    feats = [np.full((220, 4, 12), 0.3) for _ in range(2)]
    cfg = TrainConfig(epochs_max=2, clip_length=20, temporal_stride=2)
    with caplog.at_level(logging.WARNING):
        params, report = train(feats, cfg)
    assert report.stop_reason == "max_epochs"
    assert report.skipped_count == report.iterations == 2 * report.iterations_per_epoch
    assert "skipped" in caplog.text


def test_training_deterministic(small_benchmark):
    cfg = TrainConfig(epochs_max=1, clip_length=40)
    p1, r1 = train(small_benchmark, cfg)
    p2, r2 = train(small_benchmark, cfg)
    assert r1.loss_history == r2.loss_history
    for k, v in p1.arrays().items():
        np.testing.assert_array_equal(v, getattr(p2, k))


def test_report_and_log(small_benchmark, tmp_path):
    cfg = TrainConfig(epochs_max=2, clip_length=40)
    _, report = train(small_benchmark, cfg)
    total = sum(len(s) for s in small_benchmark)
    assert report.iterations_per_epoch == int(np.ceil(total / (4 * 40)))
    assert all(v >= 0 for v in report.loss_history)
    path = tmp_path / "log.csv"
    report.write_log(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,epoch,loss,triplet_count,skipped"
    assert len(lines) == report.iterations + 1


def test_training_errors(small_benchmark):
    with pytest.raises(ConfigError):
        train([], TrainConfig())
    with pytest.raises(ConfigError):
        train(small_benchmark, TrainConfig(clip_length=200))  # 200 * 2 > 240 frames
    with pytest.raises(ConfigError):
        TrainConfig(margin=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(clip_length=2).validate()
    with pytest.raises(DimensionError):
        train([np.zeros((300, 4, 5))], TrainConfig())


def test_role_views():
    views, owners = _role_views("none")
    assert set(views.values()) == {0} and owners == [None]
    views, owners = _role_views("positives_only")
    assert views == {"anchor": 0, "positive": 1, "negative": 0}
    views, owners = _role_views("all")
    assert len(set(views.values())) == 3


def test_embed_lengths_and_chunking(rng):
    cfg = HeadConfig()
    from cyclecl.head import init_params

    params = init_params(cfg, 0)
    x = rng.normal(size=(150, 8, 12))
    emb = embed_sequence(x, params, cfg)
    assert emb.shape == (150, 16)
    np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0)
    from cyclecl.head import head_forward

    head_part, _ = head_forward(x[128:], params, cfg)
    np.testing.assert_array_equal(emb[128:], head_part[0])
    np.testing.assert_array_equal(embed_sequence(x, params, cfg), emb)


def test_embed_dataset_keeps_ids(small_benchmark):
    from cyclecl.head import init_params

    cfg = HeadConfig()
    out = embed_dataset(small_benchmark, init_params(cfg, 0), cfg)
    assert [e.video_id for e in out] == [s.video_id for s in small_benchmark]
    assert all(len(e) == len(s) for e, s in zip(out, small_benchmark))
