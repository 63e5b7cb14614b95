"""Confounder-aware variational encoder with reconstruction and prediction decoders.

The encoder turns a ``[CLS]``-prefixed document and its confounder id into
Gaussian posteriors over core-content, side-content and document-style
latents. Each decoder is a small pre-norm transformer whose first input slot
is replaced by a fused latent vector, which is also added to every output
hidden state before the vocabulary projection.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import torch
from torch import nn
from torch.nn import functional as F

from .corpus import BOS, EOS, PAD


@dataclass
class Ablations:
    no_addition: bool = False
    no_replacement: bool = False
    no_confounder: bool = False
    no_content_guidance: bool = False
    no_style_guidance: bool = False
    # how h_ss is drawn under no_style_guidance: its own posterior head, or an
    # independent draw from the document-style posterior
    style_ablation_mode: str = "own_head"

    def __post_init__(self):
        if self.style_ablation_mode not in ("own_head", "copy_ds_posterior"):
            raise ValueError(f"unknown style_ablation_mode {self.style_ablation_mode!r}")


@dataclass
class ModelConfig:
    d_v: int
    d_h: int = 64
    d_u: int = 8
    d_cc: int = 16
    d_sc: int = 32
    d_ds: int = 16
    d_ss: int = 16
    k_u: int = 5
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_doc_len: int = 64
    max_sum_len: int = 32
    dropout: float = 0.0
    # the latent slot at position 0 may still read the encoder through cross-attention
    latent_slot_cross_attention: bool = True

    def __post_init__(self):
        if self.d_ss != self.d_ds:
            raise ValueError(f"d_ss ({self.d_ss}) must equal d_ds ({self.d_ds})")
        if self.d_h % self.n_heads:
            raise ValueError("d_h must be divisible by n_heads")
        if self.k_u < 1:
            raise ValueError("k_u must be >= 1")

    @classmethod
    def full_scale(cls, d_v: int) -> "ModelConfig":
        """Full-size dimensions (hidden 1024, latents 128/256/128, confounder 16x5)."""
        return cls(d_v=d_v, d_h=1024, d_u=16, d_cc=128, d_sc=256, d_ds=128, d_ss=128, k_u=5,
                   n_enc_layers=12, n_dec_layers=12, n_heads=16, d_ff=4096,
                   max_doc_len=512, max_sum_len=64)

    @classmethod
    def toy(cls, d_v: int, **overrides) -> "ModelConfig":
        return cls(d_v=d_v, **overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class GaussianPosterior:
    mu_cc: torch.Tensor
    mu_sc: torch.Tensor
    mu_ds: torch.Tensor
    logvar_cc: torch.Tensor
    logvar_sc: torch.Tensor
    logvar_ds: torch.Tensor
    mu_ss: torch.Tensor | None = None       # only under the own-head style ablation
    logvar_ss: torch.Tensor | None = None

    def blocks(self):
        out = [(self.mu_cc, self.logvar_cc), (self.mu_sc, self.logvar_sc), (self.mu_ds, self.logvar_ds)]
        if self.mu_ss is not None:
            out.append((self.mu_ss, self.logvar_ss))
        return out


@dataclass
class LatentBundle:
    h_doc: torch.Tensor
    h_u: torch.Tensor
    h_cc: torch.Tensor
    h_sc: torch.Tensor
    h_ds: torch.Tensor
    posterior: GaussianPosterior
    memory: torch.Tensor
    memory_mask: torch.Tensor
    h_ss: torch.Tensor | None = None
    cr: torch.Tensor | None = None


def derive_summary_style(h_ds, cr):
    """h_ss = cr * h_ds; ``cr`` is a scalar or one value per batch row."""
    if not torch.is_tensor(cr):
        return h_ds * cr
    if cr.dim() == 0:
        return h_ds * cr
    return h_ds * cr.to(h_ds.dtype).unsqueeze(-1)


def reparameterize(mu, logvar, generator=None):
    eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
    return mu + torch.exp(0.5 * logvar) * eps


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x):
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.d_head).transpose(1, 2)

    def forward(self, query, key_value, allowed):
        """``allowed`` broadcasts to (batch, heads, T_q, T_k); False entries are masked."""
        q, k, v = self._split(self.q(query)), self._split(self.k(key_value)), self._split(self.v(key_value))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        scores = scores.masked_fill(~allowed, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = self.dropout(weights) @ v
        b, _, t, _ = out.shape
        return self.o(out.transpose(1, 2).reshape(b, t, -1)), weights


class FeedForward(nn.Sequential):
    def __init__(self, d_model: int, d_ff: int, dropout: float = 0.0):
        super().__init__(nn.Linear(d_model, d_ff), nn.GELU(), nn.Dropout(dropout), nn.Linear(d_ff, d_model))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_h)
        self.attn = MultiHeadAttention(cfg.d_h, cfg.n_heads, cfg.dropout)
        self.ln2 = nn.LayerNorm(cfg.d_h)
        self.ff = FeedForward(cfg.d_h, cfg.d_ff, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, key_allowed):
        a, _ = self.attn(self.ln1(x), self.ln1(x), key_allowed)
        x = x + self.drop(a)
        return x + self.drop(self.ff(self.ln2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_h)
        self.self_attn = MultiHeadAttention(cfg.d_h, cfg.n_heads, cfg.dropout)
        self.ln2 = nn.LayerNorm(cfg.d_h)
        self.cross_attn = MultiHeadAttention(cfg.d_h, cfg.n_heads, cfg.dropout)
        self.ln3 = nn.LayerNorm(cfg.d_h)
        self.ff = FeedForward(cfg.d_h, cfg.d_ff, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, self_allowed, memory, cross_allowed, cross_gate):
        h = self.ln1(x)
        a, _ = self.self_attn(h, h, self_allowed)
        x = x + self.drop(a)
        c, w = self.cross_attn(self.ln2(x), memory, cross_allowed)
        x = x + self.drop(c) * cross_gate
        return x + self.drop(self.ff(self.ln3(x))), w


def decoder_self_mask(length: int, device=None) -> torch.Tensor:
    """Causal mask whose first row additionally admits only the diagonal."""
    allowed = torch.tril(torch.ones(length, length, dtype=torch.bool, device=device))
    allowed[0, 1:] = False
    return allowed


class LatentDecoder(nn.Module):
    """Transformer decoder whose position-0 input and output offset come from a latent vector."""

    def __init__(self, cfg: ModelConfig, token_emb: nn.Embedding, pos_emb: nn.Embedding, ablations: Ablations):
        super().__init__()
        self.cfg = cfg
        self.ablations = ablations
        self.token_emb = token_emb
        self.pos_emb = pos_emb
        self.layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_dec_layers))
        self.ln_f = nn.LayerNorm(cfg.d_h)
        self.vocab = nn.Linear(cfg.d_h, cfg.d_v)

    def forward(self, h_latent, prefix, memory, memory_mask, return_attention=False, return_hidden=False):
        b, t = prefix.shape
        pos = torch.arange(t, device=prefix.device)
        x = self.token_emb(prefix)
        if not self.ablations.no_replacement:
            x = torch.cat([h_latent.unsqueeze(1), x[:, 1:]], dim=1)
        x = x + self.pos_emb(pos)
        self_allowed = decoder_self_mask(t, prefix.device)
        cross_allowed = memory_mask[:, None, None, :]
        gate = torch.ones(t, 1, dtype=x.dtype, device=x.device)
        if not self.cfg.latent_slot_cross_attention:
            gate[0] = 0.0
        attns = []
        for layer in self.layers:
            x, w = layer(x, self_allowed, memory, cross_allowed, gate)
            attns.append(w)
        hidden = self.ln_f(x)
        out = hidden if self.ablations.no_addition else hidden + h_latent.unsqueeze(1)
        logits = self.vocab(out)
        extras = []
        if return_attention:
            extras.append(attns)
        if return_hidden:
            extras.append(hidden)
        return (logits, *extras) if extras else logits


class CausalSeq2SeqNet(nn.Module):
    """The full network: shared token embeddings, encoder, posterior heads and two decoders."""

    def __init__(self, cfg: ModelConfig, ablations: Ablations | None = None):
        super().__init__()
        self.cfg = cfg
        self.ablations = ablations or Ablations()
        d_lat = cfg.d_cc + cfg.d_sc + cfg.d_ds
        self.token_emb = nn.Embedding(cfg.d_v, cfg.d_h)
        self.pos_emb = nn.Embedding(max(cfg.max_doc_len, cfg.max_sum_len) + 1, cfg.d_h)
        self.enc_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_enc_layers))
        self.enc_ln = nn.LayerNorm(cfg.d_h)
        self.E_u = nn.Embedding(cfg.k_u, cfg.d_u)
        self.E_t = nn.Parameter(torch.empty(cfg.k_u, cfg.d_h))
        self.W_mu = nn.Linear(cfg.d_h + cfg.d_u, d_lat)
        self.W_logvar = nn.Linear(cfg.d_h + cfg.d_u, d_lat)
        if self.ablations.no_style_guidance and self.ablations.style_ablation_mode == "own_head":
            self.W_mu_ss = nn.Linear(cfg.d_h + cfg.d_u, cfg.d_ss)
            self.W_logvar_ss = nn.Linear(cfg.d_h + cfg.d_u, cfg.d_ss)
        # topic embeddings live in d_h; these map them into the cc / sc latent spaces
        self.G_cc = nn.Linear(cfg.d_h, cfg.d_cc, bias=False)
        self.G_sc = nn.Linear(cfg.d_h, cfg.d_sc, bias=False)
        self.FC_x = nn.Linear(d_lat, cfg.d_h)
        self.FC_y = nn.Linear(cfg.d_cc + cfg.d_ss, cfg.d_h)
        self.rec_decoder = LatentDecoder(cfg, self.token_emb, self.pos_emb, self.ablations)
        self.pred_decoder = LatentDecoder(cfg, self.token_emb, self.pos_emb, self.ablations)
        self._reset_parameters()

    def _reset_parameters(self):
        nn.init.normal_(self.token_emb.weight, std=0.02)
        nn.init.normal_(self.pos_emb.weight, std=0.02)
        nn.init.normal_(self.E_u.weight, std=0.02)
        nn.init.normal_(self.E_t, std=0.02)

    # encoder side

    def encode_memory(self, doc_tokens):
        memory_mask = doc_tokens != PAD
        t = doc_tokens.shape[1]
        if t > self.cfg.max_doc_len:
            raise ValueError(f"document length {t} exceeds max_doc_len {self.cfg.max_doc_len}")
        x = self.token_emb(doc_tokens) + self.pos_emb(torch.arange(t, device=doc_tokens.device))
        allowed = memory_mask[:, None, None, :]
        for layer in self.enc_layers:
            x = layer(x, allowed)
        return self.enc_ln(x), memory_mask

    def encode(self, doc_tokens, tid, generator=None, sample=None) -> LatentBundle:
        """Batched encoder. ``sample=None`` follows ``self.training``."""
        tid = torch.as_tensor(tid, dtype=torch.long, device=doc_tokens.device)
        if tid.numel() and (tid.min() < 0 or tid.max() >= self.cfg.k_u):
            raise ValueError(f"confounder id out of range [0, {self.cfg.k_u})")
        if self.ablations.no_confounder:
            tid = torch.zeros_like(tid)
        sample = self.training if sample is None else sample
        memory, memory_mask = self.encode_memory(doc_tokens)
        h_doc = memory[:, 0]
        h_u = self.E_u(tid)
        joint = torch.cat([h_doc, h_u], dim=-1)
        c = self.cfg
        mu_cc, mu_sc, mu_ds = torch.split(self.W_mu(joint), [c.d_cc, c.d_sc, c.d_ds], dim=-1)
        lv_cc, lv_sc, lv_ds = torch.split(self.W_logvar(joint), [c.d_cc, c.d_sc, c.d_ds], dim=-1)
        post = GaussianPosterior(mu_cc, mu_sc, mu_ds, lv_cc, lv_sc, lv_ds)
        if hasattr(self, "W_mu_ss"):
            post.mu_ss, post.logvar_ss = self.W_mu_ss(joint), self.W_logvar_ss(joint)
        if sample:
            h_cc = reparameterize(mu_cc, lv_cc, generator)
            h_sc = reparameterize(mu_sc, lv_sc, generator)
            h_ds = reparameterize(mu_ds, lv_ds, generator)
        else:
            h_cc, h_sc, h_ds = mu_cc, mu_sc, mu_ds
        return LatentBundle(h_doc, h_u, h_cc, h_sc, h_ds, post, memory, memory_mask)

    def summary_style(self, bundle: LatentBundle, cr, generator=None, sample=None):
        """Fill ``bundle.h_ss`` from the compression rate (or the ablated alternative)."""
        sample = self.training if sample is None else sample
        bundle.cr = cr
        if not self.ablations.no_style_guidance:
            bundle.h_ss = derive_summary_style(bundle.h_ds, cr)
        elif self.ablations.style_ablation_mode == "own_head":
            post = bundle.posterior
            bundle.h_ss = reparameterize(post.mu_ss, post.logvar_ss, generator) if sample else post.mu_ss
        else:
            post = bundle.posterior
            bundle.h_ss = reparameterize(post.mu_ds, post.logvar_ds, generator) if sample else post.mu_ds
        return bundle.h_ss

    # decoders

    def fuse_x(self, h_cc, h_sc, h_ds):
        return self.FC_x(torch.cat([h_cc, h_sc, h_ds], dim=-1))

    def fuse_y(self, h_cc, h_ss):
        return self.FC_y(torch.cat([h_cc, h_ss], dim=-1))

    def decode_reconstruction(self, h_cc, h_sc, h_ds, prefix, memory, memory_mask, **kw):
        if prefix.shape[1] > self.cfg.max_doc_len:
            raise ValueError(f"prefix length {prefix.shape[1]} exceeds max_doc_len {self.cfg.max_doc_len}")
        return self.rec_decoder(self.fuse_x(h_cc, h_sc, h_ds), prefix, memory, memory_mask, **kw)

    def decode_prediction(self, h_cc, h_ss, prefix, memory, memory_mask, **kw):
        if prefix.shape[1] > self.cfg.max_sum_len:
            raise ValueError(f"prefix length {prefix.shape[1]} exceeds max_sum_len {self.cfg.max_sum_len}")
        return self.pred_decoder(self.fuse_y(h_cc, h_ss), prefix, memory, memory_mask, **kw)

    def guidance_targets(self, p_ct, p_st):
        """Guidance vectors mapped into the cc / sc latent spaces."""
        h_ct, h_st = p_ct @ self.E_t, p_st @ self.E_t
        return self.G_cc(h_ct), self.G_sc(h_st)

    # generation

    @torch.no_grad()
    def generate(self, h_cc, h_ss, memory, memory_mask, max_len: int, strategy: str = "greedy",
                 beam_size: int = 1) -> list[list[int]]:
        """Autoregressive decoding for a batch; returns token ids without the trailing EOS."""
        max_len = min(int(max_len), self.cfg.max_sum_len)
        if strategy == "greedy":
            return self._greedy(h_cc, h_ss, memory, memory_mask, max_len)
        if strategy == "beam":
            return [self._beam(h_cc[i:i + 1], h_ss[i:i + 1], memory[i:i + 1], memory_mask[i:i + 1],
                               max_len, beam_size) for i in range(h_cc.shape[0])]
        raise ValueError(f"unknown decoding strategy {strategy!r}")

    def _greedy(self, h_cc, h_ss, memory, memory_mask, max_len):
        b = h_cc.shape[0]
        seq = torch.full((b, 1), BOS, dtype=torch.long, device=h_cc.device)
        done = torch.zeros(b, dtype=torch.bool, device=h_cc.device)
        outputs = [[] for _ in range(b)]
        for _ in range(max_len):
            logits = self.decode_prediction(h_cc, h_ss, seq, memory, memory_mask)
            nxt = logits[:, -1].argmax(dim=-1)
            for i in range(b):
                if not done[i]:
                    if nxt[i].item() == EOS:
                        done[i] = True
                    else:
                        outputs[i].append(int(nxt[i]))
            if bool(done.all()):
                break
            seq = torch.cat([seq, nxt.unsqueeze(1)], dim=1)
        return outputs

    def _beam(self, h_cc, h_ss, memory, memory_mask, max_len, k):
        if k < 1:
            raise ValueError("beam_size must be >= 1")
        beams = [([BOS], 0.0)]
        finished: list[tuple[list[int], float]] = []
        for _ in range(max_len):
            if not beams:
                break
            seq = torch.tensor([b[0] for b in beams], dtype=torch.long, device=h_cc.device)
            n = seq.shape[0]
            logits = self.decode_prediction(h_cc.expand(n, -1), h_ss.expand(n, -1), seq,
                                            memory.expand(n, -1, -1), memory_mask.expand(n, -1))
            logp = F.log_softmax(logits[:, -1], dim=-1)
            cand = []
            for bi, (toks, score) in enumerate(beams):
                top = torch.topk(logp[bi], k)
                for lp, tok in zip(top.values.tolist(), top.indices.tolist()):
                    cand.append((toks + [tok], score + lp))
            cand.sort(key=lambda c: -c[1])
            beams = []
            for toks, score in cand:
                if toks[-1] == EOS:
                    finished.append((toks, score))
                else:
                    beams.append((toks, score))
                    if len(beams) == k:
                        break
            # log-probs only decrease, so no live beam can overtake the best finished one
            if finished and (not beams or max(f[1] for f in finished) >= beams[0][1]):
                break
        pool = finished + beams
        best = max(pool, key=lambda c: c[1])[0]
        return [t for t in best[1:] if t != EOS]


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
