"""Losses, batching and the seeded training loop."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from torch.nn import functional as F

from .corpus import BOS, PAD, DocumentSummaryPair, Vocabulary
from .model import Ablations, CausalSeq2SeqNet, ModelConfig
from .topics import LDATopicModel, confounder_id, core_side_split

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "L_R", "L_P", "L_KL", "L_LDA", "total")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lambda_kl: float = 1.0
    lambda_lda: float = 1.0
    lr: float = 1e-3
    batch_size: int = 32
    steps: int = 5000
    seed: int = 0
    th: float = 0.25
    grad_clip: float = 1.0
    warmup_steps: int = 0        # linear learning-rate warmup
    kl_warmup_steps: int = 0     # linear KL annealing; 0 disables it
    checkpoint_interval: int = 0
    ablations: Ablations = field(default_factory=Ablations)

    def __post_init__(self):
        if isinstance(self.ablations, dict):
            self.ablations = Ablations(**self.ablations)
        if self.lambda_kl < 0 or self.lambda_lda < 0:
            raise ValueError("loss weights must be >= 0")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class LossBreakdown:
    L_R: torch.Tensor
    L_P: torch.Tensor
    L_KL: torch.Tensor
    L_LDA: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in ("L_R", "L_P", "L_KL", "L_LDA", "total")}


@dataclass
class Batch:
    doc: torch.Tensor
    tid: torch.Tensor
    cr: torch.Tensor
    rec_in: torch.Tensor
    rec_tgt: torch.Tensor
    pred_in: torch.Tensor
    pred_tgt: torch.Tensor
    p_ct: torch.Tensor
    p_st: torch.Tensor

    def __len__(self):
        return self.doc.shape[0]


@dataclass
class TopicArtifacts:
    """Per-pair confounder ids and core/side topic distributions."""

    tid: np.ndarray
    p_ct: np.ndarray
    p_st: np.ndarray

    @classmethod
    def from_model(cls, topic_model: LDATopicModel, pairs, th: float = 0.25) -> "TopicArtifacts":
        dists = topic_model.transform([p.doc_tokens for p in pairs])
        splits = [core_side_split(d, th) for d in dists]
        return cls(np.array([confounder_id(d) for d in dists], dtype=np.int64),
                   np.stack([s.p_ct for s in splits]), np.stack([s.p_st for s in splits]))

    @classmethod
    def uniform(cls, n: int, k_u: int) -> "TopicArtifacts":
        p = np.full((n, k_u), 1.0 / k_u)
        return cls(np.zeros(n, dtype=np.int64), p, p.copy())


def _pad(seqs, value=PAD) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), value, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.as_tensor(s, dtype=torch.long)
    return out


class PaddedCorpus:
    """All teacher-forcing tensors padded once; batches are row selections."""

    def __init__(self, pairs: list[DocumentSummaryPair], topics: TopicArtifacts, dtype=torch.float32):
        docs = [p.doc_tokens for p in pairs]
        self.doc = _pad(docs)
        self.rec_in = _pad([np.concatenate([[BOS], d[1:-1]]) for d in docs])
        self.rec_tgt = _pad([d[1:] for d in docs])
        self.pred_in = _pad([np.concatenate([[BOS], p.sum_tokens[:-1]]) for p in pairs])
        self.pred_tgt = _pad([p.sum_tokens for p in pairs])
        self.cr = torch.tensor([p.cr for p in pairs], dtype=dtype)
        self.tid = torch.as_tensor(topics.tid, dtype=torch.long)
        self.p_ct = torch.as_tensor(topics.p_ct, dtype=dtype)
        self.p_st = torch.as_tensor(topics.p_st, dtype=dtype)

    def __len__(self):
        return self.doc.shape[0]

    @staticmethod
    def _trim(x):
        width = int((x != PAD).any(dim=0).nonzero().max()) + 1 if x.numel() else 0
        return x[:, :width]

    def batch(self, index) -> Batch:
        index = torch.as_tensor(np.asarray(index), dtype=torch.long)
        return Batch(
            doc=self._trim(self.doc[index]), tid=self.tid[index], cr=self.cr[index],
            rec_in=self._trim(self.rec_in[index]), rec_tgt=self._trim(self.rec_tgt[index]),
            pred_in=self._trim(self.pred_in[index]), pred_tgt=self._trim(self.pred_tgt[index]),
            p_ct=self.p_ct[index], p_st=self.p_st[index],
        )


def collate(pairs: list[DocumentSummaryPair], topics: TopicArtifacts, index, dtype=torch.float32) -> Batch:
    """Teacher-forcing tensors; position 0 of each decoder input is the latent slot (BOS id)."""
    index = np.asarray(index)
    sub = TopicArtifacts(topics.tid[index], topics.p_ct[index], topics.p_st[index])
    return PaddedCorpus([pairs[i] for i in index], sub, dtype).batch(np.arange(index.size))


def kl_diag_gaussians(mu_q, logvar_q, mu_p=None, logvar_p=None):
    """Elementwise KL(N(mu_q, e^logvar_q) || N(mu_p, e^logvar_p)); the prior defaults to N(0, 1)."""
    if mu_p is None and logvar_p is None:
        return 0.5 * (torch.exp(logvar_q) + mu_q ** 2 - 1.0 - logvar_q)
    mu_p = torch.zeros_like(mu_q) if mu_p is None else mu_p
    logvar_p = torch.zeros_like(logvar_q) if logvar_p is None else logvar_p
    return 0.5 * (logvar_p - logvar_q + (torch.exp(logvar_q) + (mu_q - mu_p) ** 2) / torch.exp(logvar_p) - 1.0)


def kl_standard_normal(posterior) -> torch.Tensor:
    """Per-example KL to N(0, I), summed over every posterior block."""
    total = 0.0
    for mu, logvar in posterior.blocks():
        total = total + kl_diag_gaussians(mu, logvar).sum(dim=-1)
    return total


def token_nll(logits, target) -> torch.Tensor:
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), target.reshape(-1), ignore_index=PAD)


def loss_components(model: CausalSeq2SeqNet, batch: Batch, generator=None, lambda_kl: float = 1.0,
                    lambda_lda: float = 1.0) -> LossBreakdown:
    if len(batch) == 0:
        raise ValueError("empty batch")
    bundle = model.encode(batch.doc, batch.tid, generator=generator, sample=True)
    h_ss = model.summary_style(bundle, batch.cr, generator=generator, sample=True)
    rec_logits = model.decode_reconstruction(bundle.h_cc, bundle.h_sc, bundle.h_ds, batch.rec_in,
                                             bundle.memory, bundle.memory_mask)
    pred_logits = model.decode_prediction(bundle.h_cc, h_ss, batch.pred_in, bundle.memory, bundle.memory_mask)
    L_R = token_nll(rec_logits, batch.rec_tgt)
    L_P = token_nll(pred_logits, batch.pred_tgt)
    L_KL = kl_standard_normal(bundle.posterior).mean()
    if model.ablations.no_content_guidance:
        L_LDA = torch.zeros((), dtype=L_R.dtype)
    else:
        g_cc, g_sc = model.guidance_targets(batch.p_ct, batch.p_st)
        L_LDA = (torch.linalg.vector_norm(bundle.h_cc - g_cc, dim=-1)
                 + torch.linalg.vector_norm(bundle.h_sc - g_sc, dim=-1)).mean()
    total = L_R + L_P + lambda_kl * L_KL + lambda_lda * L_LDA
    return LossBreakdown(L_R, L_P, L_KL, L_LDA, total)


@dataclass
class Checkpoint:
    model: CausalSeq2SeqNet
    vocab: Vocabulary
    train_config: TrainConfig
    topic_model: LDATopicModel | None = None
    mean_cr: float = 1.0
    step: int = 0

    @property
    def model_config(self) -> ModelConfig:
        return self.model.cfg

    def params_digest(self) -> str:
        h = hashlib.sha256()
        for name, tensor in sorted(self.model.state_dict().items()):
            h.update(name.encode())
            h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    def manifest(self) -> dict:
        topic_hash = ""
        if self.topic_model is not None:
            topic_hash = hashlib.sha256(self.topic_model.topic_word_counts_.tobytes()).hexdigest()
        return {
            "model_config": self.model.cfg.to_dict(),
            "ablations": asdict(self.model.ablations),
            "train_config": self.train_config.to_dict(),
            "vocab_hash": self.vocab.digest(),
            "topic_model_hash": topic_hash,
            "seed": self.train_config.seed,
            "step": self.step,
            "mean_cr": self.mean_cr,
            "params_sha256": self.params_digest(),
        }

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.model.state_dict(), directory / "params.pt")
        self.vocab.save(directory / "vocab.txt")
        if self.topic_model is not None:
            self.topic_model.save(directory / "topics", vocab_hash=self.vocab.digest())
        (directory / "manifest.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True))
        return directory

    @classmethod
    def load(cls, directory) -> "Checkpoint":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        vocab = Vocabulary.load(directory / "vocab.txt")
        if vocab.digest() != manifest["vocab_hash"]:
            raise ValueError(f"{directory}: vocabulary does not match manifest hash")
        cfg = ModelConfig.from_dict(manifest["model_config"])
        state = torch.load(directory / "params.pt", weights_only=True)
        dtype = next(v.dtype for v in state.values() if v.is_floating_point())
        model = CausalSeq2SeqNet(cfg, Ablations(**manifest["ablations"])).to(dtype)
        model.load_state_dict(state)
        model.eval()
        topic_model = LDATopicModel.load(directory / "topics") if (directory / "topics").exists() else None
        return cls(model, vocab, TrainConfig.from_dict(manifest["train_config"]), topic_model,
                   manifest["mean_cr"], manifest["step"])


def mean_compression_rate(pairs) -> float:
    crs = [p.cr for p in pairs if not p.cr_flagged]
    return float(np.mean(crs)) if crs else 1.0


def _format_row(step: int, parts: dict) -> list[str]:
    return [str(step)] + [repr(parts[k]) for k in LOG_COLUMNS[1:]]


def train(config: TrainConfig, pairs: list[DocumentSummaryPair], vocab: Vocabulary,
          topic_model: LDATopicModel | None, model_config: ModelConfig, log_path=None,
          checkpoint_dir=None, topics: TopicArtifacts | None = None,
          dtype=torch.float32) -> tuple[Checkpoint, list[dict]]:
    """Train from scratch; returns the final checkpoint and the per-step loss log.

    The log is also streamed as CSV to ``log_path`` when given. Interval
    checkpoints go to ``checkpoint_dir/step_<n>``.
    """
    if not pairs:
        raise ValueError("cannot train on an empty corpus")
    if topics is None:
        if topic_model is None:
            topics = TopicArtifacts.uniform(len(pairs), model_config.k_u)
        else:
            topics = TopicArtifacts.from_model(topic_model, pairs, config.th)

    corpus = PaddedCorpus(pairs, topics, dtype)
    torch.manual_seed(config.seed)
    model = CausalSeq2SeqNet(model_config, config.ablations).to(dtype)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    generator = torch.Generator().manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    ckpt = Checkpoint(model, vocab, config, topic_model, mean_compression_rate(pairs))

    log: list[dict] = []
    writer = fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)

    order = np.zeros(0, dtype=np.int64)
    cursor = 0
    try:
        for step in range(config.steps):
            if cursor >= order.size:
                order, cursor = rng.permutation(len(pairs)), 0
            index = order[cursor: cursor + config.batch_size]
            cursor += config.batch_size
            batch = corpus.batch(index)

            lr_scale = min(1.0, (step + 1) / config.warmup_steps) if config.warmup_steps else 1.0
            for group in optimizer.param_groups:
                group["lr"] = config.lr * lr_scale
            kl_scale = min(1.0, (step + 1) / config.kl_warmup_steps) if config.kl_warmup_steps else 1.0

            losses = loss_components(model, batch, generator, config.lambda_kl * kl_scale, config.lambda_lda)
            if not torch.isfinite(losses.total):
                raise TrainingDivergedError(f"non-finite loss at step {step}: {losses.as_floats()}")
            optimizer.zero_grad()
            losses.total.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()

            parts = losses.as_floats()
            log.append({"step": step, **parts})
            if writer is not None:
                writer.writerow(_format_row(step, parts))
            if step % 500 == 0:
                logger.info("step %d total %.4f (R %.4f P %.4f KL %.4f LDA %.4f)", step, parts["total"],
                            parts["L_R"], parts["L_P"], parts["L_KL"], parts["L_LDA"])
            ckpt.step = step + 1
            if checkpoint_dir and config.checkpoint_interval and ckpt.step % config.checkpoint_interval == 0:
                model.eval()
                ckpt.save(Path(checkpoint_dir) / f"step_{ckpt.step}")
                model.train()
    finally:
        if fh is not None:
            fh.close()
    model.eval()
    if checkpoint_dir:
        ckpt.save(Path(checkpoint_dir) / "final")
    return ckpt, log


def log_to_csv(log: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(LOG_COLUMNS)
    for row in log:
        writer.writerow(_format_row(row["step"], row))
    return buf.getvalue()
