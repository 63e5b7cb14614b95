import numpy as np
import pytest
import torch

from causal_seq2seq.corpus import build_vocabulary, encode_corpus
from causal_seq2seq.model import ModelConfig
from causal_seq2seq.toy import make_toy_corpus
from causal_seq2seq.topics import fit_topic_model
from causal_seq2seq.training import TopicArtifacts, TrainConfig, train

torch.set_num_threads(1)

# filled by tests/test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def toy_setup():
    """Small toy corpus with vocabulary, encoded pairs and topic model."""
    records = make_toy_corpus(400, seed=0)
    raw = [(r["document"], r["summary"]) for r in records]
    vocab = build_vocabulary(raw, 1000)
    pairs = encode_corpus(raw, vocab, 64, 32)
    lda = fit_topic_model([p.doc_tokens for p in pairs], 5, vocab_size=len(vocab), n_iters=50, max_df=0.5)
    topics = TopicArtifacts.from_model(lda, pairs)
    return records, vocab, pairs, lda, topics


@pytest.fixture(scope="session")
def small_cfg(toy_setup):
    _, vocab, *_ = toy_setup
    return ModelConfig(d_v=len(vocab), d_h=32, d_u=4, d_cc=8, d_sc=8, d_ds=8, d_ss=8, n_heads=4, d_ff=64,
                       n_enc_layers=1, n_dec_layers=1)


@pytest.fixture(scope="session")
def small_checkpoint(toy_setup, small_cfg):
    _, vocab, pairs, lda, topics = toy_setup
    ckpt, _ = train(TrainConfig(steps=60, batch_size=16, seed=0), pairs, vocab, lda, small_cfg, topics=topics)
    return ckpt


@pytest.fixture
def rng():
    return np.random.default_rng(0)
