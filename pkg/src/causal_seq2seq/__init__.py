"""Causally structured variational seq2seq summarization at desk scale."""

from .corpus import DocumentSummaryPair, Vocabulary, build_vocabulary, encode_corpus, load_corpus
from .cvae import ConditionalVAE
from .estimator import CausalSummarizer
from .evaluation import attention_topk, export_latents, rouge_scores, run_identifiability_experiment
from .inference import InferConfig, OptimizedLatents, controlled_summarize, infer_document_latents
from .model import Ablations, CausalSeq2SeqNet, ModelConfig
from .scm_synth import SCMDataset, SCMParams, check_variety, evaluate_identifiability, generate_scm_dataset, sample_scm
from .topics import LDATopicModel, confounder_id, core_side_split, fit_topic_model, topic_distribution
from .training import Checkpoint, LossBreakdown, TrainConfig, loss_components, train

__version__ = "0.1.0"

__all__ = [
    "Ablations", "CausalSeq2SeqNet", "CausalSummarizer", "Checkpoint", "ConditionalVAE", "DocumentSummaryPair",
    "InferConfig", "LDATopicModel", "LossBreakdown", "ModelConfig", "OptimizedLatents", "SCMDataset",
    "SCMParams", "TrainConfig", "Vocabulary", "attention_topk", "build_vocabulary", "check_variety",
    "confounder_id", "controlled_summarize", "core_side_split", "encode_corpus", "evaluate_identifiability",
    "export_latents", "fit_topic_model", "generate_scm_dataset", "infer_document_latents", "load_corpus",
    "loss_components", "rouge_scores", "run_identifiability_experiment", "sample_scm", "topic_distribution",
    "train",
]
