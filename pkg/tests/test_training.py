import csv

import numpy as np
import pytest
import torch

from causal_seq2seq import training
from causal_seq2seq.model import Ablations, CausalSeq2SeqNet, GaussianPosterior
from causal_seq2seq.training import (LOG_COLUMNS, Checkpoint, PaddedCorpus, TrainConfig, TrainingDivergedError,
                                     kl_diag_gaussians, kl_standard_normal, loss_components, train)

# total loss of the small config after a 4000-step run (tests/conftest.py setup, seed 0); frozen
LOSS_FLOOR = 5.65


def _posterior(mu, logvar, dims=(2, 3, 2)):
    parts_mu = torch.split(mu, dims, dim=-1)
    parts_lv = torch.split(logvar, dims, dim=-1)
    return GaussianPosterior(*parts_mu, *parts_lv)


def test_kl_zero_for_standard_normal():
    post = _posterior(torch.zeros(4, 7), torch.zeros(4, 7))
    assert torch.equal(kl_standard_normal(post), torch.zeros(4))


def test_kl_single_dimension_value():
    assert kl_diag_gaussians(torch.tensor([1.0]), torch.tensor([0.0])).item() == 0.5


def test_kl_against_other_gaussian():
    mu_q, lv_q, mu_p, lv_p = torch.tensor([0.3]), torch.tensor([-0.2]), torch.tensor([1.0]), torch.tensor([0.4])
    q = torch.distributions.Normal(mu_q, torch.exp(0.5 * lv_q))
    p = torch.distributions.Normal(mu_p, torch.exp(0.5 * lv_p))
    assert kl_diag_gaussians(mu_q, lv_q, mu_p, lv_p).item() == pytest.approx(torch.distributions.kl_divergence(q, p).item())


def _batch(toy_setup, n=8):
    _, _, pairs, _, topics = toy_setup
    return PaddedCorpus(pairs, topics).batch(np.arange(n))


def _model(small_cfg, ablations=None, seed=0):
    torch.manual_seed(seed)
    return CausalSeq2SeqNet(small_cfg, ablations)


def test_loss_breakdown_sum_and_signs(toy_setup, small_cfg):
    m = _model(small_cfg)
    lb = loss_components(m, _batch(toy_setup), torch.Generator().manual_seed(0), 0.7, 0.3)
    assert lb.L_KL >= 0 and lb.L_LDA >= 0
    assert torch.allclose(lb.total, lb.L_R + lb.L_P + 0.7 * lb.L_KL + 0.3 * lb.L_LDA)


def test_zero_weights_give_reconstruction_plus_prediction(toy_setup, small_cfg):
    m = _model(small_cfg)
    lb = loss_components(m, _batch(toy_setup), torch.Generator().manual_seed(0), 0.0, 0.0)
    assert lb.total.item() == (lb.L_R + lb.L_P).item()


def test_lda_loss_zero_when_latents_equal_guidance(toy_setup, small_cfg):
    m = _model(small_cfg)
    b = _batch(toy_setup)
    g_cc, g_sc = m.guidance_targets(b.p_ct, b.p_st)
    with torch.no_grad():
        m.W_mu.weight.zero_()
        m.W_mu.bias.zero_()
    # with zero means and no sampling, pin the guidance to zero too
    with torch.no_grad():
        m.G_cc.weight.zero_()
        m.G_sc.weight.zero_()
    bundle = m.encode(b.doc, b.tid, sample=False)
    g_cc, g_sc = m.guidance_targets(b.p_ct, b.p_st)
    assert torch.equal(bundle.h_cc, g_cc) and torch.equal(bundle.h_sc, g_sc)


def test_no_content_guidance_zeroes_lda(toy_setup, small_cfg):
    m = _model(small_cfg, Ablations(no_content_guidance=True))
    lb = loss_components(m, _batch(toy_setup), torch.Generator().manual_seed(0))
    assert lb.L_LDA.item() == 0.0


def test_own_head_style_ablation_adds_kl_block(toy_setup, small_cfg):
    b = _batch(toy_setup)
    m = _model(small_cfg, Ablations(no_style_guidance=True))
    post = m.encode(b.doc, b.tid, sample=False).posterior
    assert len(list(post.blocks())) == 4
    assert len(list(_model(small_cfg).encode(b.doc, b.tid, sample=False).posterior.blocks())) == 3


def test_empty_batch_rejected(toy_setup, small_cfg):
    _, _, pairs, _, topics = toy_setup
    with pytest.raises(ValueError):
        loss_components(_model(small_cfg), PaddedCorpus(pairs, topics).batch(np.arange(0)))


def test_empty_corpus_rejected(toy_setup, small_cfg):
    _, vocab, _, lda, _ = toy_setup
    with pytest.raises(ValueError):
        train(TrainConfig(steps=1), [], vocab, lda, small_cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lambda_kl=-1)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    cfg = TrainConfig(ablations={"no_addition": True})
    assert cfg.ablations.no_addition and TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_same_seed_same_losses(toy_setup, small_cfg, tmp_path):
    _, vocab, pairs, lda, topics = toy_setup
    _, a = train(TrainConfig(steps=3, batch_size=8, seed=2), pairs, vocab, lda, small_cfg, topics=topics,
                 log_path=tmp_path / "a.csv")
    _, b = train(TrainConfig(steps=3, batch_size=8, seed=2), pairs, vocab, lda, small_cfg, topics=topics,
                 log_path=tmp_path / "b.csv")
    assert a[0]["total"] == b[0]["total"]
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    with open(tmp_path / "a.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == LOG_COLUMNS == ("step", "L_R", "L_P", "L_KL", "L_LDA", "total") and len(rows) == 4


def test_loss_decreases_toward_floor(toy_setup, small_cfg):
    _, vocab, pairs, lda, topics = toy_setup
    _, log = train(TrainConfig(steps=300, batch_size=16, seed=0), pairs, vocab, lda, small_cfg, topics=topics)
    init = log[0]["total"]
    late = np.mean([r["total"] for r in log[-20:]])
    assert init - late >= 0.5 * (init - LOSS_FLOOR)


def test_divergence_aborts(toy_setup, small_cfg, monkeypatch):
    _, vocab, pairs, lda, topics = toy_setup
    real = training.loss_components

    def poisoned(*args, **kwargs):
        out = real(*args, **kwargs)
        out.total = out.total * float("nan")
        return out

    monkeypatch.setattr(training, "loss_components", poisoned)
    with pytest.raises(TrainingDivergedError, match="step 0"):
        train(TrainConfig(steps=2, batch_size=4), pairs, vocab, lda, small_cfg, topics=topics)


def test_checkpoint_roundtrip_and_intervals(toy_setup, small_cfg, tmp_path):
    _, vocab, pairs, lda, topics = toy_setup
    ckpt, _ = train(TrainConfig(steps=4, batch_size=4, checkpoint_interval=2), pairs, vocab, lda, small_cfg,
                    topics=topics, checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["final", "step_2", "step_4"]
    loaded = Checkpoint.load(tmp_path / "final")
    man = loaded.manifest()
    assert man == ckpt.manifest()
    for key in ("model_config", "vocab_hash", "topic_model_hash", "train_config", "seed", "step", "mean_cr"):
        assert key in man
    assert man["step"] == 4 and 0 < man["mean_cr"] <= 1
    assert np.array_equal(loaded.topic_model.topic_word_counts_, lda.topic_word_counts_)


def test_checkpoint_float64_roundtrip(toy_setup, small_cfg, tmp_path):
    _, vocab, pairs, lda, topics = toy_setup
    ckpt, _ = train(TrainConfig(steps=1, batch_size=4), pairs, vocab, lda, small_cfg, topics=topics,
                    dtype=torch.float64)
    ckpt.save(tmp_path / "c")
    loaded = Checkpoint.load(tmp_path / "c")
    assert next(loaded.model.parameters()).dtype == torch.float64
    assert loaded.params_digest() == ckpt.params_digest()


def test_checkpoint_detects_vocab_tamper(small_checkpoint, tmp_path):
    small_checkpoint.save(tmp_path / "c")
    path = tmp_path / "c" / "vocab.txt"
    path.write_text(path.read_text().replace("more", "mOre"))
    with pytest.raises(ValueError, match="vocabulary"):
        Checkpoint.load(tmp_path / "c")
