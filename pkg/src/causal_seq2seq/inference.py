"""Test-time latent optimization and compression-rate-controlled generation.

Latents are not taken from the encoder at test time. Candidates are drawn
from N(0, I), scored by the penalized reconstruction log-likelihood of the
document, and the best one is refined by gradient ascent whose step is
halved until the objective does not decrease.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .corpus import BOS, PAD
from .model import CausalSeq2SeqNet


@dataclass
class InferConfig:
    n_candidates: int = 10
    opt_steps: int = 50
    lambda_cc: float = 0.01
    lambda_sc: float = 0.01
    # the style block is weakly tied to the document, so a strong pull would send it to the origin
    lambda_ds: float = 0.001
    step_size: float = 1.0
    max_halvings: int = 10
    cr: float | str = "auto"
    # adds the norm terms instead of subtracting them (unbounded; for comparison only)
    literal_sign: bool = False
    max_len: int | None = None
    strategy: str = "greedy"
    beam_size: int = 1

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        if self.opt_steps < 0:
            raise ValueError("opt_steps must be >= 0")
        if min(self.lambda_cc, self.lambda_sc, self.lambda_ds) < 0:
            raise ValueError("penalty weights must be >= 0")


@dataclass
class OptimizedLatents:
    l_cc: torch.Tensor
    l_sc: torch.Tensor
    l_ds: torch.Tensor
    trace: list[float]
    log_likelihood: float
    candidate_objectives: np.ndarray
    candidate_log_likelihoods: np.ndarray
    best_candidate: int
    accepted_steps: int = 0


@dataclass
class DocumentContext:
    """Encoder states and teacher-forcing tensors for one document."""

    memory: torch.Tensor
    memory_mask: torch.Tensor
    rec_in: torch.Tensor
    rec_tgt: torch.Tensor

    @classmethod
    def build(cls, model: CausalSeq2SeqNet, doc_tokens) -> "DocumentContext":
        doc = torch.as_tensor(np.asarray(doc_tokens), dtype=torch.long).unsqueeze(0)
        with torch.no_grad():
            memory, memory_mask = model.encode_memory(doc)
        rec_in = torch.cat([torch.tensor([[BOS]]), doc[:, 1:-1]], dim=1)
        return cls(memory, memory_mask, rec_in, doc[:, 1:])

    def expand(self, n: int):
        return (self.memory.expand(n, -1, -1), self.memory_mask.expand(n, -1),
                self.rec_in.expand(n, -1), self.rec_tgt.expand(n, -1))


def reconstruction_log_likelihood(model: CausalSeq2SeqNet, ctx: DocumentContext, l_cc, l_sc, l_ds):
    """Teacher-forced log p(x | l) of the document, one value per latent row."""
    n = l_cc.shape[0]
    memory, memory_mask, rec_in, rec_tgt = ctx.expand(n)
    logits = model.decode_reconstruction(l_cc, l_sc, l_ds, rec_in, memory, memory_mask)
    logp = torch.log_softmax(logits, dim=-1).gather(-1, rec_tgt.unsqueeze(-1)).squeeze(-1)
    return (logp * (rec_tgt != PAD)).sum(dim=-1)


def penalized_objective(model, ctx, l_cc, l_sc, l_ds, cfg: InferConfig):
    """Returns (objective, log-likelihood) per latent row."""
    ll = reconstruction_log_likelihood(model, ctx, l_cc, l_sc, l_ds)
    penalty = (cfg.lambda_cc * l_cc.pow(2).sum(-1) + cfg.lambda_sc * l_sc.pow(2).sum(-1)
               + cfg.lambda_ds * l_ds.pow(2).sum(-1))
    return (ll + penalty if cfg.literal_sign else ll - penalty), ll


def _as_generator(rng) -> torch.Generator:
    if isinstance(rng, torch.Generator):
        return rng
    return torch.Generator().manual_seed(int(rng))


def infer_document_latents(model: CausalSeq2SeqNet, doc_tokens, cfg: InferConfig, rng=0,
                           ctx: DocumentContext | None = None) -> OptimizedLatents:
    model.eval()
    gen = _as_generator(rng)
    ctx = ctx or DocumentContext.build(model, doc_tokens)
    c = model.cfg
    dtype = ctx.memory.dtype
    n = cfg.n_candidates
    cands = [torch.randn((n, d), generator=gen, dtype=dtype) for d in (c.d_cc, c.d_sc, c.d_ds)]
    with torch.no_grad():
        cand_j, cand_ll = penalized_objective(model, ctx, *cands, cfg)
    finite = torch.isfinite(cand_j)
    if not bool(finite.any()):
        raise FloatingPointError("every candidate produced a non-finite objective")
    best = int(torch.where(finite, cand_j, torch.full_like(cand_j, -torch.inf)).argmax())
    latents = [x[best:best + 1].clone() for x in cands]
    current = float(cand_j[best])
    current_ll = float(cand_ll[best])
    trace = [current]
    accepted = 0
    for _ in range(cfg.opt_steps):
        params = [x.clone().requires_grad_(True) for x in latents]
        j, _ = penalized_objective(model, ctx, *params, cfg)
        grads = torch.autograd.grad(j.sum(), params)
        if not all(bool(torch.isfinite(g).all()) for g in grads):
            trace.append(current)
            continue
        step = cfg.step_size
        moved = False
        with torch.no_grad():
            for _ in range(cfg.max_halvings + 1):
                trial = [x + step * g for x, g in zip(latents, grads)]
                tj, tll = penalized_objective(model, ctx, *trial, cfg)
                if torch.isfinite(tj) and float(tj) >= current:
                    latents, current, current_ll, moved = trial, float(tj), float(tll), True
                    break
                step *= 0.5
        accepted += moved
        trace.append(current)
    return OptimizedLatents(latents[0][0].detach(), latents[1][0].detach(), latents[2][0].detach(), trace,
                            current_ll, cand_j.numpy().astype(np.float64), cand_ll.numpy().astype(np.float64),
                            best, accepted)


def resolve_cr(cr, mean_cr: float) -> float:
    if isinstance(cr, str):
        if cr != "auto":
            raise ValueError(f"cr must be a positive number or 'auto', got {cr!r}")
        return float(mean_cr)
    cr = float(cr)
    if not cr > 0:
        raise ValueError(f"cr must be > 0, got {cr}")
    return cr


def generate_from_latents(model: CausalSeq2SeqNet, ctx: DocumentContext, l_cc, l_ds, cr: float,
                          cfg: InferConfig) -> list[int]:
    h_ss = (l_ds * cr).unsqueeze(0)
    max_len = cfg.max_len or model.cfg.max_sum_len
    return model.generate(l_cc.unsqueeze(0), h_ss, ctx.memory, ctx.memory_mask, max_len,
                          strategy=cfg.strategy, beam_size=cfg.beam_size)[0]


def controlled_summarize(model: CausalSeq2SeqNet, doc_tokens, cr, cfg: InferConfig, rng=0,
                         mean_cr: float = 1.0, return_latents: bool = False):
    """Infer latents for one document and generate a summary at compression rate ``cr``."""
    cr = resolve_cr(cr, mean_cr)
    ctx = DocumentContext.build(model, doc_tokens)
    latents = infer_document_latents(model, doc_tokens, cfg, rng, ctx=ctx)
    tokens = generate_from_latents(model, ctx, latents.l_cc, latents.l_ds, cr, cfg)
    return (tokens, latents) if return_latents else tokens
