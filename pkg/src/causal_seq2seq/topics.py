"""LDA topic model (collapsed Gibbs sampling) and the content-guidance targets derived from it.

The fitted model supplies two things to the summarizer: the confounder id of a
document (its most probable topic) and the core/side topic split used to build
the guidance vectors ``h_ct`` and ``h_st``.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_min_int, check_open_unit, check_positive, check_probability_vector
from .corpus import N_SPECIAL


@njit(cache=True)
def _gibbs_sweep(words, docs, z, nkw, nk, ndk, alpha, beta, vbeta, uniforms):
    n_topics = nk.shape[0]
    p = np.empty(n_topics)
    for i in range(words.shape[0]):
        w = words[i]
        d = docs[i]
        k = z[i]
        nkw[k, w] -= 1
        nk[k] -= 1
        ndk[d, k] -= 1
        total = 0.0
        for t in range(n_topics):
            total += (ndk[d, t] + alpha) * (nkw[t, w] + beta) / (nk[t] + vbeta)
            p[t] = total
        u = uniforms[i] * total
        k = n_topics - 1
        for t in range(n_topics):
            if u < p[t]:
                k = t
                break
        z[i] = k
        nkw[k, w] += 1
        nk[k] += 1
        ndk[d, k] += 1


@njit(cache=True)
def _fold_in_sweep(words, z, phi, nd, alpha, uniforms):
    n_topics = nd.shape[0]
    p = np.empty(n_topics)
    for i in range(words.shape[0]):
        w = words[i]
        nd[z[i]] -= 1
        total = 0.0
        for t in range(n_topics):
            total += (nd[t] + alpha) * phi[t, w]
            p[t] = total
        u = uniforms[i] * total
        k = n_topics - 1
        for t in range(n_topics):
            if u < p[t]:
                k = t
                break
        z[i] = k
        nd[k] += 1


@dataclass
class TopicDistribution:
    probs: np.ndarray
    degenerate: bool = False  # True when the document had no usable tokens


@dataclass
class CoreSideSplit:
    g: np.ndarray
    p_ct: np.ndarray
    p_st: np.ndarray
    fallback: str | None = None


class LDATopicModel(BaseEstimator, TransformerMixin):
    """Latent Dirichlet allocation fitted by collapsed Gibbs sampling.

    Parameters
    ----------
    n_topics : int
        Number of topics ``k_u``.
    alpha : float or None
        Symmetric document-topic prior; ``None`` means ``50 / n_topics``.
    beta : float
        Symmetric topic-word prior.
    n_iters : int
        Full Gibbs sweeps over the training corpus.
    n_fold_iters : int
        Sweeps used when folding in an unseen document; the second half is averaged.
    max_df : float
        Token ids occurring in more than this fraction of training documents are
        ignored by the model (``1.0`` keeps everything).
    seed : int
        Seed for initial assignments and all sampling.

    Attributes
    ----------
    topic_word_counts_ : ndarray of shape (n_topics, vocab_size)
    doc_topic_counts_ : ndarray of shape (n_docs, n_topics)
    alpha_ : float
    vocab_size_ : int
    ignored_ids_ : ndarray of int
    """

    def __init__(self, n_topics=5, alpha=None, beta=0.01, n_iters=200,
                 n_fold_iters=50, max_df=1.0, seed=0):
        self.n_topics = n_topics
        self.alpha = alpha
        self.beta = beta
        self.n_iters = n_iters
        self.n_fold_iters = n_fold_iters
        self.max_df = max_df
        self.seed = seed

    def _usable(self, doc) -> np.ndarray:
        doc = np.asarray(doc, dtype=np.int64)
        keep = (doc >= N_SPECIAL) & (doc < self.vocab_size_)
        if self.ignored_ids_.size:
            keep &= ~np.isin(doc, self.ignored_ids_)
        return doc[keep]

    def fit(self, X, y=None, vocab_size=None):
        """Fit on ``X``, a list of token-id sequences."""
        check_min_int(self.n_topics, "n_topics", 1)
        check_min_int(self.n_iters, "n_iters", 1)
        check_positive(self.beta, "beta")
        docs = [np.asarray(d, dtype=np.int64) for d in X]
        if not docs:
            raise ValueError("cannot fit a topic model on an empty corpus")
        if vocab_size is None:
            vocab_size = int(max((d.max() for d in docs if d.size), default=N_SPECIAL - 1)) + 1
        self.vocab_size_ = int(vocab_size)
        self.alpha_ = 50.0 / self.n_topics if self.alpha is None else check_positive(self.alpha, "alpha")

        df = np.zeros(self.vocab_size_, dtype=np.int64)
        for d in docs:
            df[np.unique(d[(d >= 0) & (d < self.vocab_size_)])] += 1
        self.ignored_ids_ = np.flatnonzero(df > self.max_df * len(docs)).astype(np.int64)

        usable = [self._usable(d) for d in docs]
        words = np.concatenate(usable) if usable else np.zeros(0, dtype=np.int64)
        doc_index = np.repeat(np.arange(len(usable)), [u.size for u in usable]).astype(np.int64)

        rng = np.random.default_rng(self.seed)
        k = self.n_topics
        z = rng.integers(0, k, size=words.size).astype(np.int64)
        nkw = np.zeros((k, self.vocab_size_), dtype=np.int64)
        ndk = np.zeros((len(usable), k), dtype=np.int64)
        np.add.at(nkw, (z, words), 1)
        np.add.at(ndk, (doc_index, z), 1)
        nk = nkw.sum(axis=1)
        vbeta = self.vocab_size_ * self.beta
        for _ in range(self.n_iters):
            _gibbs_sweep(words, doc_index, z, nkw, nk, ndk, self.alpha_, float(self.beta), vbeta,
                         rng.random(words.size))
        self.topic_word_counts_ = nkw
        self.doc_topic_counts_ = ndk
        self.n_docs_ = len(usable)
        return self

    @property
    def topic_word_(self) -> np.ndarray:
        """Smoothed topic-word distributions; each row sums to 1."""
        check_is_fitted(self, "topic_word_counts_")
        counts = self.topic_word_counts_ + self.beta
        return counts / counts.sum(axis=1, keepdims=True)

    def training_distributions(self) -> np.ndarray:
        """Topic distributions of the training documents from the final Gibbs state."""
        check_is_fitted(self, "doc_topic_counts_")
        counts = self.doc_topic_counts_ + self.alpha_
        return counts / counts.sum(axis=1, keepdims=True)

    def distribution(self, doc) -> TopicDistribution:
        check_is_fitted(self, "topic_word_counts_")
        k = self.n_topics
        words = self._usable(doc)
        if words.size == 0:
            return TopicDistribution(np.full(k, 1.0 / k), degenerate=True)
        rng = np.random.default_rng([int(self.seed), zlib.crc32(words.tobytes())])
        phi = self.topic_word_
        z = rng.integers(0, k, size=words.size).astype(np.int64)
        nd = np.bincount(z, minlength=k).astype(np.int64)
        n_iters = max(int(self.n_fold_iters), 2)
        burn = n_iters // 2
        acc = np.zeros(k)
        for it in range(n_iters):
            _fold_in_sweep(words, z, phi, nd, self.alpha_, rng.random(words.size))
            if it >= burn:
                acc += nd
        acc /= n_iters - burn
        probs = (acc + self.alpha_) / (words.size + k * self.alpha_)
        return TopicDistribution(probs / probs.sum())

    def transform(self, X):
        return np.stack([self.distribution(d).probs for d in X])

    # persistence

    def save(self, directory, vocab_hash: str = "") -> None:
        check_is_fitted(self, "topic_word_counts_")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        np.savez(directory / "topics.npz", topic_word_counts=self.topic_word_counts_,
                 doc_topic_counts=self.doc_topic_counts_, ignored_ids=self.ignored_ids_)
        manifest = {
            "k_u": self.n_topics, "alpha": self.alpha_, "beta": self.beta, "seed": self.seed,
            "n_iters": self.n_iters, "n_fold_iters": self.n_fold_iters, "max_df": self.max_df,
            "vocab_size": self.vocab_size_, "vocab_hash": vocab_hash,
        }
        (directory / "topics.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "LDATopicModel":
        directory = Path(directory)
        manifest = json.loads((directory / "topics.json").read_text())
        model = cls(n_topics=manifest["k_u"], alpha=manifest["alpha"], beta=manifest["beta"],
                    n_iters=manifest["n_iters"], n_fold_iters=manifest["n_fold_iters"],
                    max_df=manifest["max_df"], seed=manifest["seed"])
        arrays = np.load(directory / "topics.npz")
        model.topic_word_counts_ = arrays["topic_word_counts"]
        model.doc_topic_counts_ = arrays["doc_topic_counts"]
        model.ignored_ids_ = arrays["ignored_ids"]
        model.alpha_ = float(manifest["alpha"])
        model.vocab_size_ = int(manifest["vocab_size"])
        model.n_docs_ = model.doc_topic_counts_.shape[0]
        model.vocab_hash_ = manifest.get("vocab_hash", "")
        return model


def fit_topic_model(docs, k_u: int, alpha: float | None = None, beta: float = 0.01,
                    n_iters: int = 200, seed: int = 0, vocab_size: int | None = None,
                    max_df: float = 1.0) -> LDATopicModel:
    return LDATopicModel(n_topics=k_u, alpha=alpha, beta=beta, n_iters=n_iters,
                         max_df=max_df, seed=seed).fit(docs, vocab_size=vocab_size)


def topic_distribution(model: LDATopicModel, doc) -> TopicDistribution:
    return model.distribution(doc)


def confounder_id(dist) -> int:
    probs = dist.probs if isinstance(dist, TopicDistribution) else dist
    return int(np.argmax(np.asarray(probs)))


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / v.sum()


def core_side_split(dist, th: float = 0.25) -> CoreSideSplit:
    """Split topics into core (prob > th) and side ones and renormalize each part.

    If no topic clears the threshold the most probable one is promoted to core;
    if all do, the least probable is demoted. A part with zero mass becomes
    uniform over its own support.
    """
    probs = check_probability_vector(dist.probs if isinstance(dist, TopicDistribution) else dist)
    check_open_unit(th, "th")
    k = probs.size
    if k == 1:
        one = np.ones(1)
        return CoreSideSplit(np.ones(1, dtype=np.int64), one, one.copy(), fallback="single_topic")
    g = (probs > th).astype(np.int64)
    fallback = None
    if g.sum() == 0:
        g[int(np.argmax(probs))] = 1
        fallback = "promoted_argmax"
    elif g.sum() == k:
        g[int(np.argmin(probs))] = 0
        fallback = "demoted_argmin"
    core = probs * g
    side = probs * (1 - g)
    if side.sum() <= 0:
        side = (1 - g).astype(np.float64)
        fallback = fallback or "uniform_side"
    return CoreSideSplit(g, _normalize(core), _normalize(side), fallback)


def guidance_vectors(E_t, p_ct, p_st):
    """Probability-weighted combinations of topic-embedding rows."""
    if E_t.shape[0] != len(p_ct) or E_t.shape[0] != len(p_st):
        raise ValueError(f"embedding table has {E_t.shape[0]} rows, distributions have {len(p_ct)}/{len(p_st)}")
    return p_ct @ E_t, p_st @ E_t
