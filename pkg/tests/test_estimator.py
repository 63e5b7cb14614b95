import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from causal_seq2seq import CausalSummarizer
from causal_seq2seq.config import ConfigError
from causal_seq2seq.estimator import document_seed
from causal_seq2seq.toy import make_toy_corpus

SMALL = {"d_h": 16, "d_ff": 32, "n_enc_layers": 1, "n_dec_layers": 1, "lda_iters": 5, "lda_fold_iters": 5}


@pytest.fixture(scope="module")
def fitted():
    records = make_toy_corpus(40, seed=2)
    X = [r["document"] for r in records]
    y = [r["summary"] for r in records]
    est = CausalSummarizer(steps=3, batch_size=8, n_candidates=2, opt_steps=1, d_h=16, config=SMALL)
    return est.fit(X, y), X, y


def test_params_roundtrip():
    est = CausalSummarizer(steps=7, cr=0.3)
    assert est.get_params()["steps"] == 7
    assert clone(est).get_params() == est.get_params()
    assert est.set_params(lr=0.01).lr == 0.01


def test_unfitted_and_bad_input():
    est = CausalSummarizer()
    with pytest.raises(NotFittedError):
        est.predict(["a b"])
    with pytest.raises(TypeError):
        est.fit("a b", ["x"])
    with pytest.raises(ValueError):
        est.fit(["a"], ["x", "y"])
    with pytest.raises(ConfigError):
        CausalSummarizer(config={"nope": 1}).resolved_config()


def test_fit_predict_transform_score(fitted):
    est, X, y = fitted
    preds = est.predict(X[:3], cr=0.2)
    assert len(preds) == 3 and all(isinstance(p, str) for p in preds)
    assert preds == est.predict(X[:3], cr=0.2)
    Z = est.transform(X[:4])
    assert Z.shape == (4, est.d_cc) and np.isfinite(Z).all()
    assert 0.0 <= est.score(X[:3], y[:3]) <= 1.0
    assert len(est.loss_log_) == 3 and 0 < est.mean_cr_ <= 1


def test_document_seed_distinct():
    assert document_seed(0, 1) == document_seed(0, 1)
    assert len({document_seed(0, i) for i in range(50)}) == 50
