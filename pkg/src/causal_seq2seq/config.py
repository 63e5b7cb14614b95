"""Flat ``key = value`` run configuration shared by every CLI subcommand.

Lines starting with ``#`` are comments. Unknown keys are rejected so that a
typo cannot silently fall back to a default. Every run writes the fully
resolved configuration next to its outputs.
"""

from __future__ import annotations

from pathlib import Path

from .inference import InferConfig
from .model import Ablations, ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _cr(text: str):
    text = text.strip()
    return text if text == "auto" else float(text)


# name -> (parser, default, description)
KEYS = {
    "seed": (int, 0, "seed for every random draw of the run"),
    "dtype": (str, "float32", "float32 or float64"),
    # data
    "vocab_size": (int, 1000, "vocabulary size including the five special tokens"),
    "max_doc_len": (int, 64, "document length cap including [CLS] and EOS"),
    "max_sum_len": (int, 32, "summary length cap including EOS"),
    # topic model
    "k_u": (int, 5, "number of LDA topics, i.e. confounder values"),
    "lda_alpha": (float, -1.0, "document-topic prior; negative means 50 / k_u"),
    "lda_beta": (float, 0.01, "topic-word prior"),
    "lda_iters": (int, 200, "Gibbs sweeps"),
    "lda_fold_iters": (int, 50, "Gibbs sweeps when folding in a document"),
    "lda_max_df": (float, 1.0, "drop tokens in more than this fraction of documents"),
    "th": (float, 0.25, "core/side topic probability threshold"),
    # model
    "d_h": (int, 64, "transformer width"),
    "d_u": (int, 8, "confounder embedding size"),
    "d_cc": (int, 16, "core-content latent size"),
    "d_sc": (int, 32, "side-content latent size"),
    "d_ds": (int, 16, "document-style latent size (summary style has the same size)"),
    "n_enc_layers": (int, 2, "encoder layers"),
    "n_dec_layers": (int, 2, "layers per decoder"),
    "n_heads": (int, 4, "attention heads"),
    "d_ff": (int, 256, "feed-forward width"),
    "dropout": (float, 0.0, "dropout rate"),
    "latent_slot_cross_attention": (_bool, True, "let decoder position 0 attend to the encoder"),
    # ablations
    "no_addition": (_bool, False, "skip adding the latent to decoder outputs"),
    "no_replacement": (_bool, False, "keep BOS at position 0 instead of the latent"),
    "no_confounder": (_bool, False, "use one shared confounder embedding"),
    "no_content_guidance": (_bool, False, "drop the topic guidance loss"),
    "no_style_guidance": (_bool, False, "draw summary style without the compression rate"),
    "style_ablation_mode": (str, "own_head", "own_head or copy_ds_posterior"),
    # training
    "lambda_kl": (float, 1.0, "KL weight"),
    "lambda_lda": (float, 1.0, "topic guidance weight"),
    "lr": (float, 1e-3, "Adam learning rate"),
    "batch_size": (int, 32, "pairs per step"),
    "steps": (int, 5000, "optimizer steps"),
    "grad_clip": (float, 1.0, "global gradient norm cap; 0 disables"),
    "warmup_steps": (int, 0, "linear learning-rate warmup steps"),
    "kl_warmup_steps": (int, 0, "linear KL annealing steps"),
    "checkpoint_interval": (int, 0, "save a checkpoint every n steps; 0 disables"),
    # inference
    "n_candidates": (int, 10, "latent candidates drawn from N(0, I)"),
    "opt_steps": (int, 50, "gradient ascent steps"),
    "lambda_cc": (float, 0.01, "core-content norm penalty"),
    "lambda_sc": (float, 0.01, "side-content norm penalty"),
    "lambda_ds": (float, 0.001, "document-style norm penalty"),
    "step_size": (float, 1.0, "initial gradient step of each ascent iteration"),
    "max_halvings": (int, 10, "backtracking halvings per step"),
    "cr": (_cr, "auto", "compression rate, or auto for the training mean"),
    "literal_sign": (_bool, False, "add the norm terms instead of subtracting them"),
    "strategy": (str, "greedy", "greedy or beam"),
    "beam_size": (int, 1, "beam width"),
    # identifiability
    "scm_dim": (int, 4, "latent size of every SCM block"),
    "scm_noise": (float, 0.05, "observation noise standard deviation"),
    "n_per_u": (int, 10000, "samples per confounder value"),
    "cvae_steps": (int, 8000, "conditional VAE optimizer steps"),
    "cvae_hidden": (int, 64, "conditional VAE hidden width"),
    "cvae_batch_size": (int, 256, "conditional VAE batch size"),
    "cvae_lr": (float, 1e-3, "conditional VAE learning rate"),
    "cvae_obs_var": (float, 0.01, "decoder noise variance on standardized observations"),
    "cvae_restarts": (int, 3, "random restarts, best ELBO kept"),
}


def defaults() -> dict:
    return {k: v[1] for k, v in KEYS.items()}


def _set(cfg: dict, key: str, raw: str, where: str):
    key = key.strip()
    if key not in KEYS:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    try:
        cfg[key] = KEYS[key][0](raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    cfg = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        _set(cfg, key, value, f"{source}:{lineno}")
    return cfg


def resolve(path=None, overrides=()) -> dict:
    """Defaults, then the file at ``path``, then ``key=value`` overrides."""
    cfg = defaults()
    if path is not None:
        cfg.update(parse_config_text(Path(path).read_text(), str(path)))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        _set(cfg, key, value, "--set")
    check(cfg)
    return cfg


def check(cfg: dict):
    if cfg["dtype"] not in ("float32", "float64"):
        raise ConfigError("dtype must be float32 or float64")
    if cfg["strategy"] not in ("greedy", "beam"):
        raise ConfigError("strategy must be greedy or beam")
    if cfg["style_ablation_mode"] not in ("own_head", "copy_ds_posterior"):
        raise ConfigError("style_ablation_mode must be own_head or copy_ds_posterior")
    if cfg["vocab_size"] < 6:
        raise ConfigError("vocab_size must leave room for at least one ordinary token")


def format_config(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        lines.append(f"{key} = {str(value).lower() if isinstance(value, bool) else value}")
    return "\n".join(lines) + "\n"


def write_snapshot(cfg: dict, directory, name: str = "config.resolved") -> Path:
    path = Path(directory) / name
    path.write_text(format_config(cfg))
    return path


def ablations(cfg: dict) -> Ablations:
    return Ablations(cfg["no_addition"], cfg["no_replacement"], cfg["no_confounder"],
                     cfg["no_content_guidance"], cfg["no_style_guidance"], cfg["style_ablation_mode"])


def model_config(cfg: dict, d_v: int) -> ModelConfig:
    return ModelConfig(d_v=d_v, d_h=cfg["d_h"], d_u=cfg["d_u"], d_cc=cfg["d_cc"], d_sc=cfg["d_sc"],
                       d_ds=cfg["d_ds"], d_ss=cfg["d_ds"], k_u=cfg["k_u"], n_enc_layers=cfg["n_enc_layers"],
                       n_dec_layers=cfg["n_dec_layers"], n_heads=cfg["n_heads"], d_ff=cfg["d_ff"],
                       max_doc_len=cfg["max_doc_len"], max_sum_len=cfg["max_sum_len"], dropout=cfg["dropout"],
                       latent_slot_cross_attention=cfg["latent_slot_cross_attention"])


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(lambda_kl=cfg["lambda_kl"], lambda_lda=cfg["lambda_lda"], lr=cfg["lr"],
                       batch_size=cfg["batch_size"], steps=cfg["steps"], seed=cfg["seed"], th=cfg["th"],
                       grad_clip=cfg["grad_clip"], warmup_steps=cfg["warmup_steps"],
                       kl_warmup_steps=cfg["kl_warmup_steps"], checkpoint_interval=cfg["checkpoint_interval"],
                       ablations=ablations(cfg))


def infer_config(cfg: dict) -> InferConfig:
    return InferConfig(n_candidates=cfg["n_candidates"], opt_steps=cfg["opt_steps"], lambda_cc=cfg["lambda_cc"],
                       lambda_sc=cfg["lambda_sc"], lambda_ds=cfg["lambda_ds"], step_size=cfg["step_size"],
                       max_halvings=cfg["max_halvings"], cr=cfg["cr"], literal_sign=cfg["literal_sign"],
                       max_len=None, strategy=cfg["strategy"], beam_size=cfg["beam_size"])


def lda_params(cfg: dict) -> dict:
    return {"n_topics": cfg["k_u"], "alpha": None if cfg["lda_alpha"] < 0 else cfg["lda_alpha"],
            "beta": cfg["lda_beta"], "n_iters": cfg["lda_iters"], "n_fold_iters": cfg["lda_fold_iters"],
            "max_df": cfg["lda_max_df"], "seed": cfg["seed"]}


def cvae_params(cfg: dict) -> dict:
    return {"hidden": cfg["cvae_hidden"], "n_steps": cfg["cvae_steps"], "batch_size": cfg["cvae_batch_size"],
            "lr": cfg["cvae_lr"], "obs_var": cfg["cvae_obs_var"], "n_restarts": cfg["cvae_restarts"]}
