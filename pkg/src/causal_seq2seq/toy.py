"""Synthetic separation corpus with known core/side content and controllable summary style.

Each document is eight segments. A segment holds one core token (from the
vocabulary tied to the document's topic) and one side token (from a shared
side vocabulary) in random order, followed by document-style filler. The
summary lists the core tokens in document order; its verbosity level ``s``
appends ``s`` copies of a summary-style token after every core token, so the
compression rate determines the summary length.

Run ``python -m causal_seq2seq.toy OUT.jsonl --n 4000 --seed 0`` to write a corpus.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass

import numpy as np

from .corpus import write_jsonl


@dataclass(frozen=True)
class ToyCorpusSpec:
    n_topics: int = 5
    core_per_topic: int = 12
    n_side: int = 40
    n_filler: int = 4
    n_segments: int = 8
    filler_per_segment: int = 2
    style_levels: tuple = (0, 1, 2)
    style_token: str = "more"


def core_word(topic: int, j: int) -> str:
    return f"t{topic}c{j}"


def is_core_word(word: str) -> bool:
    return len(word) > 1 and word[0] == "t" and "c" in word[1:]


def make_toy_corpus(n: int, seed: int = 0, spec: ToyCorpusSpec = ToyCorpusSpec()) -> list[dict]:
    """Return ``n`` records with keys document, summary, topic, core, style."""
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(n):
        topic = int(rng.integers(spec.n_topics))
        core = [core_word(topic, int(j)) for j in rng.choice(spec.core_per_topic, spec.n_segments, replace=False)]
        side = [f"s{int(j)}" for j in rng.choice(spec.n_side, spec.n_segments, replace=False)]
        style = int(rng.choice(spec.style_levels))
        words = []
        for c, s in zip(core, side):
            pair = [c, s] if rng.random() < 0.5 else [s, c]
            filler = [f"f{int(j)}" for j in rng.integers(spec.n_filler, size=spec.filler_per_segment)]
            words.extend(pair + filler)
        summary = []
        for c in core:
            summary.extend([c] + [spec.style_token] * style)
        records.append({"document": " ".join(words), "summary": " ".join(summary),
                        "topic": topic, "core": core, "style": style})
    return records


def core_recall(generated_words, core_words) -> float:
    """Fraction of reference core tokens present in the generated summary."""
    if not core_words:
        return 0.0
    gen = set(generated_words)
    return sum(1 for c in core_words if c in gen) / len(core_words)


def main(argv=None):
    parser = argparse.ArgumentParser(description="Write a toy separation corpus as JSONL")
    parser.add_argument("out")
    parser.add_argument("--n", type=int, default=4000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    write_jsonl(args.out, make_toy_corpus(args.n, args.seed))


if __name__ == "__main__":
    main()
