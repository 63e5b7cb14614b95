"""End-to-end pipeline and a scikit-learn style summarizer estimator."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import config as config_mod
from .corpus import build_vocabulary, encode_corpus, encode_document, tokenize
from .evaluation import mean_rouge, strip_special
from .inference import controlled_summarize
from .topics import LDATopicModel, confounder_id
from .training import Checkpoint, TopicArtifacts, train


def document_seed(seed: int, index: int) -> int:
    """Per-document inference seed derived from the run seed."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def torch_dtype(name: str):
    return {"float32": torch.float32, "float64": torch.float64}[name]


def prepare_corpus(raw_pairs, cfg: dict, vocab=None, topic_model=None):
    """Vocabulary, encoded pairs and fitted topic model for a raw (document, summary) list."""
    if not raw_pairs:
        raise ValueError("empty corpus")
    vocab = vocab or build_vocabulary(raw_pairs, cfg["vocab_size"])
    pairs = encode_corpus(raw_pairs, vocab, cfg["max_doc_len"], cfg["max_sum_len"])
    if topic_model is None:
        topic_model = LDATopicModel(**config_mod.lda_params(cfg)).fit([p.doc_tokens for p in pairs],
                                                                     vocab_size=len(vocab))
    return vocab, pairs, topic_model


def train_from_config(raw_pairs, cfg: dict, log_path=None, checkpoint_dir=None, vocab=None, topic_model=None):
    vocab, pairs, topic_model = prepare_corpus(raw_pairs, cfg, vocab, topic_model)
    tcfg = config_mod.train_config(cfg)
    topics = TopicArtifacts.from_model(topic_model, pairs, tcfg.th)
    return train(tcfg, pairs, vocab, topic_model, config_mod.model_config(cfg, len(vocab)), log_path=log_path,
                  checkpoint_dir=checkpoint_dir, topics=topics, dtype=torch_dtype(cfg["dtype"]))


def summarize_documents(checkpoint: Checkpoint, documents, cfg: dict, cr=None, return_latents=False):
    """Token-id summaries for raw documents; each document gets its own seeded generator."""
    icfg = config_mod.infer_config(cfg)
    cr = icfg.cr if cr is None else cr
    max_doc_len = checkpoint.model_config.max_doc_len
    out = []
    for i, text in enumerate(documents):
        doc = encode_document(text, checkpoint.vocab, max_doc_len)
        res = controlled_summarize(checkpoint.model, doc, cr, icfg, rng=document_seed(cfg["seed"], i),
                                   mean_cr=checkpoint.mean_cr, return_latents=return_latents)
        out.append(res)
    return out


class CausalSummarizer(BaseEstimator):
    """Causally structured VAE summarizer with compression-rate control.

    ``fit(documents, summaries)`` builds the vocabulary, fits the topic model
    that supplies confounder ids and content guidance, and trains the
    network. ``predict(documents)`` infers latents per document at test time
    and decodes summaries at the requested compression rate ``cr``.
    Any key of the run configuration not exposed as a parameter can be given
    through ``config``.
    """

    def __init__(self, k_u=5, steps=5000, batch_size=32, lr=1e-3, lambda_kl=1.0, lambda_lda=1.0,
                 d_h=64, d_cc=16, d_sc=32, d_ds=16, vocab_size=1000, max_doc_len=64, max_sum_len=32,
                 lda_max_df=1.0, n_candidates=10, opt_steps=50, cr="auto", seed=0, config=None):
        self.k_u = k_u
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.lambda_kl = lambda_kl
        self.lambda_lda = lambda_lda
        self.d_h = d_h
        self.d_cc = d_cc
        self.d_sc = d_sc
        self.d_ds = d_ds
        self.vocab_size = vocab_size
        self.max_doc_len = max_doc_len
        self.max_sum_len = max_sum_len
        self.lda_max_df = lda_max_df
        self.n_candidates = n_candidates
        self.opt_steps = opt_steps
        self.cr = cr
        self.seed = seed
        self.config = config

    def resolved_config(self) -> dict:
        cfg = config_mod.defaults()
        cfg.update({k: v for k, v in self.get_params().items() if k in cfg})
        for key, value in (self.config or {}).items():
            if key not in cfg:
                raise config_mod.ConfigError(f"unknown config key {key!r}")
            cfg[key] = value
        config_mod.check(cfg)
        return cfg

    @staticmethod
    def _check_texts(X, name="X"):
        if isinstance(X, str) or not all(isinstance(x, str) for x in X):
            raise TypeError(f"{name} must be a sequence of strings")
        return list(X)

    def fit(self, X, y):
        X = self._check_texts(X)
        y = self._check_texts(y, "y")
        if len(X) != len(y):
            raise ValueError(f"{len(X)} documents but {len(y)} summaries")
        cfg = self.resolved_config()
        self.checkpoint_, self.loss_log_ = train_from_config(list(zip(X, y)), cfg)
        self.vocab_ = self.checkpoint_.vocab
        self.topic_model_ = self.checkpoint_.topic_model
        self.mean_cr_ = self.checkpoint_.mean_cr
        return self

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, **params) -> "CausalSummarizer":
        est = cls(**params)
        est.checkpoint_ = checkpoint
        est.loss_log_ = []
        est.vocab_ = checkpoint.vocab
        est.topic_model_ = checkpoint.topic_model
        est.mean_cr_ = checkpoint.mean_cr
        return est

    def predict_tokens(self, X, cr=None) -> list[list[int]]:
        check_is_fitted(self, "checkpoint_")
        X = self._check_texts(X)
        return [strip_special(t) for t in summarize_documents(self.checkpoint_, X, self.resolved_config(), cr)]

    def predict(self, X, cr=None) -> list[str]:
        return [" ".join(self.vocab_.decode(t)) for t in self.predict_tokens(X, cr)]

    def transform(self, X) -> np.ndarray:
        """Posterior-mean core-content vectors, one row per document."""
        check_is_fitted(self, "checkpoint_")
        X = self._check_texts(X)
        model = self.checkpoint_.model.eval()
        rows = []
        for text in X:
            doc = encode_document(text, self.vocab_, model.cfg.max_doc_len)
            tid = confounder_id(self.topic_model_.distribution(doc)) if self.topic_model_ is not None else 0
            with torch.no_grad():
                b = model.encode(torch.as_tensor(doc).unsqueeze(0), [tid], sample=False)
            rows.append(b.h_cc[0].double().numpy())
        return np.stack(rows) if rows else np.zeros((0, model.cfg.d_cc))

    def score(self, X, y, cr=None) -> float:
        """Mean ROUGE-1 F1 of predicted summaries against ``y``."""
        y = self._check_texts(y, "y")
        preds = self.predict(X, cr)
        return mean_rouge([tokenize(p) for p in preds], [tokenize(r) for r in y])["r1"]["f1"]
