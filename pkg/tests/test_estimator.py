import numpy as np
import pytest
from sklearn.base import clone

from cyclecl import CycleCL
from cyclecl.seqdata import FeatureSequence


@pytest.fixture(scope="module")
def feats():
    r = np.random.default_rng(11)
    t = np.arange(90)[:, None, None]
    base = np.sin(2 * np.pi * t / 9 + r.normal(size=(1, 3, 5)))
    return [base + 0.05 * r.normal(size=(90, 3, 5)) for _ in range(3)]


def small(**kw):
    args = dict(clip_length=30, epochs_max=2, batch_clips=2, hidden_channels=6, out_dim=4, random_state=2)
    args.update(kw)
    return CycleCL(**args)


def test_fit_transform_shapes(feats):
    est = small().fit(feats)
    assert est.n_features_in_ == 5
    out = est.transform(feats)
    assert len(out) == 3 and out[0].shape == (90, 4)
    np.testing.assert_allclose(np.linalg.norm(out[0], axis=1), 1.0, atol=1e-9)
    single = est.transform(feats[1])
    np.testing.assert_array_equal(single, out[1])


def test_refit_is_deterministic(feats):
    a = small().fit(feats).transform(feats[0])
    b = clone(small()).fit(feats).transform(feats[0])
    np.testing.assert_array_equal(a, b)
    c = small(random_state=3).fit(feats).transform(feats[0])
    assert not np.array_equal(a, c)


def test_params_roundtrip():
    est = small(strategy="topk", pooling="mean")
    p = est.get_params()
    assert p["strategy"] == "topk" and p["pooling"] == "mean"
    assert clone(est).get_params() == p


def test_feature_sequence_input(feats):
    est = small().fit(feats)
    seq = FeatureSequence("v", feats[0], np.zeros(90, dtype=int), 9.0, 0)
    np.testing.assert_array_equal(est.transform(seq), est.transform(feats[0]))


def test_invalid_config_raises(feats):
    with pytest.raises(ValueError):
        small(strategy="nope").fit(feats)
