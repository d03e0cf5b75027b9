"""sklearn facade: constructor contract, fit/predict, validation."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fuseseg.errors import DimensionError
from fuseseg.estimator import MultimodalSegmenter


def tiny_estimator(**kw):
    args = dict(modalities=2, classes=2, stages=2, base_channels=2,
                appearance_dim=4, patch=8, max_epoch=2, learning_rate=1e-3,
                seed=7)
    args.update(kw)
    return MultimodalSegmenter(**args)


def tiny_data(n=2, edge=8, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2, edge, edge, edge)).astype(np.float32)
    y = np.zeros((n, edge, edge, edge), dtype=np.uint8)
    y[:, 2:5, 2:5, 2:5] = 1
    # make the foreground separable so two epochs move the loss
    X[:, :, 2:5, 2:5, 2:5] += 3.0
    return X, y


class TestSklearnContract:
    def test_get_params_round_trip(self):
        est = tiny_estimator()
        params = est.get_params()
        assert params["modalities"] == 2
        assert params["fusion_mode"] == "gated"
        rebuilt = MultimodalSegmenter(**params)
        assert rebuilt.get_params() == params

    def test_set_params(self):
        est = tiny_estimator()
        est.set_params(max_epoch=5, lam=0.25)
        assert est.max_epoch == 5
        assert est.lam == 0.25

    def test_clone_preserves_params(self):
        est = tiny_estimator(dropout_prob=0.3)
        twin = clone(est)
        assert twin.get_params() == est.get_params()

    def test_unfitted_predict_raises(self):
        X, _ = tiny_data()
        with pytest.raises(NotFittedError):
            tiny_estimator().predict(X)


class TestFitPredict:
    def test_fit_predict_shapes(self):
        X, y = tiny_data()
        est = tiny_estimator().fit(X, y)
        assert est.n_iter_ == 4
        assert np.isfinite(est.final_loss_)
        pred = est.predict(X)
        assert pred.shape == y.shape
        assert pred.dtype == np.uint8
        assert pred.max() < 2

    def test_predict_with_modality_subset(self):
        X, y = tiny_data()
        est = tiny_estimator().fit(X, y)
        pred = est.predict(X, modalities=(0,))
        assert pred.shape == y.shape

    def test_brain_mask_zeroes_outside(self):
        X, y = tiny_data()
        mask = np.zeros(y.shape, dtype=bool)
        mask[:, 1:7, 1:7, 1:7] = True
        est = tiny_estimator().fit(X, y, brain_mask=mask)
        pred = est.predict(X, brain_mask=mask)
        assert np.all(pred[~mask] == 0)

    def test_same_seed_same_predictions(self):
        X, y = tiny_data()
        a = tiny_estimator().fit(X, y).predict(X)
        b = tiny_estimator().fit(X, y).predict(X)
        assert np.array_equal(a, b)

    def test_score_bounds(self):
        X, y = tiny_data()
        est = tiny_estimator().fit(X, y)
        s = est.score(X, y)
        assert isinstance(s, float)
        assert 0.0 <= s <= 1.0


class TestValidation:
    def test_wrong_rank_rejected(self):
        est = tiny_estimator()
        with pytest.raises(DimensionError, match="must be"):
            est.fit(np.zeros((2, 8, 8, 8), dtype=np.float32),
                    np.zeros((2, 8, 8, 8), dtype=np.uint8))

    def test_wrong_modality_count_rejected(self):
        est = tiny_estimator()
        with pytest.raises(DimensionError):
            est.fit(np.zeros((1, 3, 8, 8, 8), dtype=np.float32),
                    np.zeros((1, 8, 8, 8), dtype=np.uint8))

    def test_mismatched_labels_rejected(self):
        est = tiny_estimator()
        X, _ = tiny_data()
        with pytest.raises(DimensionError, match="y must be"):
            est.fit(X, np.zeros((2, 4, 4, 4), dtype=np.uint8))
