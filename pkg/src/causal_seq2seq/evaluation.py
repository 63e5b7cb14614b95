"""ROUGE, attention and latent dumps, and the identifiability experiment driver."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import BOS, EOS, tokenize
from .cvae import ConditionalVAE
from .scm_synth import (BLOCKS, IdentifiabilityReport, check_variety, evaluate_identifiability,
                        generate_scm_dataset, sample_scm)
from .topics import confounder_id

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: int, n_candidate: int, n_reference: int) -> "PRF":
        p = overlap / n_candidate if n_candidate else 0.0
        r = overlap / n_reference if n_reference else 0.0
        return cls(p, r, 2 * p * r / (p + r) if p + r > 0 else 0.0)


@dataclass(frozen=True)
class RougeScores:
    r1: PRF
    r2: PRF
    rl: PRF

    def to_dict(self) -> dict:
        return {name: {"p": s.precision, "r": s.recall, "f1": s.f1}
                for name, s in (("r1", self.r1), ("r2", self.r2), ("rl", self.rl))}


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def lcs_length(a, b) -> int:
    # single-row dynamic program
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_n(candidate, reference, n: int) -> PRF:
    c, r = _ngrams(candidate, n), _ngrams(reference, n)
    overlap = sum((c & r).values())
    return PRF.from_counts(overlap, sum(c.values()), sum(r.values()))


def rouge_scores(candidate, reference) -> RougeScores:
    """ROUGE-1/2/L on token sequences; strings are lowercased and split on whitespace."""
    candidate = tokenize(candidate) if isinstance(candidate, str) else list(candidate)
    reference = tokenize(reference) if isinstance(reference, str) else list(reference)
    lcs = lcs_length(candidate, reference)
    return RougeScores(rouge_n(candidate, reference, 1), rouge_n(candidate, reference, 2),
                       PRF.from_counts(lcs, len(candidate), len(reference)))


def mean_rouge(candidates, references) -> dict:
    """Average of per-pair scores, in the JSON layout {r1, r2, rl} x {p, r, f1}."""
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    rows = [rouge_scores(c, r).to_dict() for c, r in zip(candidates, references)]
    if not rows:
        return {m: {k: 0.0 for k in ("p", "r", "f1")} for m in ("r1", "r2", "rl")}
    return {m: {k: float(np.mean([row[m][k] for row in rows])) for k in ("p", "r", "f1")} for m in rows[0]}


# interpretability

def _document_latents(checkpoint, doc_tokens, cr=None):
    """Posterior means for one document, with its LDA confounder id."""
    model = checkpoint.model.eval()
    doc = torch.as_tensor(np.asarray(doc_tokens), dtype=torch.long).unsqueeze(0)
    tid = 0
    if checkpoint.topic_model is not None and not model.ablations.no_confounder:
        tid = confounder_id(checkpoint.topic_model.distribution(doc_tokens))
    with torch.no_grad():
        bundle = model.encode(doc, [tid], sample=False)
        cr = checkpoint.mean_cr if cr is None else cr
        model.summary_style(bundle, torch.tensor([cr], dtype=bundle.h_ds.dtype), sample=False)
    return bundle


def attention_matrix(checkpoint, doc_tokens, generated, latents=None, cr=None) -> np.ndarray:
    """Prediction-decoder cross-attention, averaged over layers and heads.

    Row ``i`` is the distribution over document positions at the decoding
    step that emits ``generated[i]``. ``latents`` optionally supplies
    ``(l_cc, l_ss)``; otherwise the encoder's posterior means are used.
    """
    model = checkpoint.model.eval()
    bundle = _document_latents(checkpoint, doc_tokens, cr)
    if latents is not None:
        h_cc, h_ss = (torch.as_tensor(v, dtype=bundle.h_cc.dtype).reshape(1, -1) for v in latents)
    else:
        h_cc, h_ss = bundle.h_cc, bundle.h_ss
    gen = [int(t) for t in generated]
    prefix = torch.tensor([[BOS] + gen[:-1]], dtype=torch.long) if gen else torch.tensor([[BOS]])
    with torch.no_grad():
        _, attns = model.decode_prediction(h_cc, h_ss, prefix, bundle.memory, bundle.memory_mask,
                                           return_attention=True)
    weights = torch.stack(attns).mean(dim=(0, 2))[0]
    return weights[: len(gen)].double().numpy()


def attention_topk(checkpoint, doc_tokens, generated, k: int = 3, latents=None, cr=None):
    """For every generated token, the ``k`` most attended document tokens as (token, weight) pairs."""
    if k < 1:
        raise ValueError("k must be >= 1")
    weights = attention_matrix(checkpoint, doc_tokens, generated, latents, cr)
    itos = checkpoint.vocab.itos
    doc = np.asarray(doc_tokens)
    out = []
    for row in weights:
        order = np.argsort(-row, kind="stable")[: min(k, row.shape[0])]
        out.append([(itos[int(doc[j])], float(row[j])) for j in order])
    return out


EXPORT_HEADER = ("doc_id", "vector_kind", "components")


def export_latents(checkpoint, docs, path, doc_ids=None) -> Path:
    """Write h_doc, h_cc and h_sc (posterior means) per document as CSV rows."""
    path = Path(path)
    doc_ids = list(range(len(docs))) if doc_ids is None else list(doc_ids)
    if len(doc_ids) != len(docs):
        raise ValueError("doc_ids and docs differ in length")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EXPORT_HEADER)
        for doc_id, doc in zip(doc_ids, docs):
            b = _document_latents(checkpoint, doc)
            for kind, vec in (("doc", b.h_doc), ("cc", b.h_cc), ("sc", b.h_sc)):
                writer.writerow([doc_id, kind, " ".join(repr(float(x)) for x in vec[0])])
    return path


def strip_special(tokens) -> list[int]:
    out = []
    for t in tokens:
        if t == EOS:
            break
        out.append(int(t))
    return out


# identifiability

@dataclass
class ArmResult:
    k_u: int
    reports: list[IdentifiabilityReport]
    seeds: list[int]
    variety_ok: list[bool]

    @property
    def mccs(self) -> np.ndarray:
        return np.array([r.mcc for r in self.reports])

    def summary(self) -> dict:
        m = self.mccs
        return {
            "k_u": self.k_u,
            "label": "variety holds" if all(self.variety_ok) else "variety violated",
            "variety_ok": self.variety_ok,
            "seeds": self.seeds,
            "mcc": m.tolist(),
            "mcc_mean": float(m.mean()) if m.size else float("nan"),
            "mcc_std": float(m.std(ddof=1)) if m.size > 1 else 0.0,
            "per_seed": [r.to_dict() for r in self.reports],
        }


@dataclass
class IdentifiabilityExperiment:
    arms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {str(k): arm.summary() for k, arm in self.arms.items()}


def run_identifiability_experiment(scm_config: dict | None = None, fit_config: dict | None = None,
                                   seeds=range(5), k_u_arms=(5, 1), n_per_u: int = 10000
                                   ) -> IdentifiabilityExperiment:
    """Generate SCM data, fit the conditional VAE and score recovery, for every arm and seed.

    ``scm_config`` is passed to :func:`sample_scm` (``k_u`` is set per arm)
    and ``fit_config`` to :class:`ConditionalVAE`.
    """
    scm_config = dict(scm_config or {})
    scm_config.pop("k_u", None)
    fit_config = dict(fit_config or {})
    result = IdentifiabilityExperiment()
    for k_u in k_u_arms:
        reports, variety = [], []
        for seed in seeds:
            params = sample_scm(k_u=k_u, seed=seed, **scm_config)
            check = check_variety(params)
            data = generate_scm_dataset(params, n_per_u, seed)
            dims = tuple(params.dims[b] for b in BLOCKS)
            vae = ConditionalVAE(latent_dims=dims, seed=seed, k_u=k_u, **fit_config)
            vae.fit(data.observation_matrix(), data.u)
            learned = vae.transform_blocks(data.observation_matrix(), data.u)
            report = evaluate_identifiability(learned, data.latents, BLOCKS, check)
            logger.info("k_u=%d seed=%d variety=%s mcc=%.4f", k_u, seed, check.passed, report.mcc)
            reports.append(report)
            variety.append(bool(check.passed))
        result.arms[k_u] = ArmResult(k_u, reports, list(seeds), variety)
    return result
