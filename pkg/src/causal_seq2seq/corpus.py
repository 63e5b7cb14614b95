"""Document/summary corpus ingestion, vocabulary and encoding."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ._validation import DegenerateInputError, check_min_int

PAD, UNK, BOS, EOS, CLS = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>", "[CLS]")
N_SPECIAL = len(SPECIAL_TOKENS)


class CorpusParseError(ValueError):
    """A corpus line could not be parsed; ``lineno`` is 1-based."""

    def __init__(self, path, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.path = path
        self.lineno = lineno


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class Vocabulary:
    """Bidirectional token/id map. Specials occupy ids 0..4."""

    itos: list[str] = field(default_factory=lambda: list(SPECIAL_TOKENS))

    def __post_init__(self):
        if tuple(self.itos[:N_SPECIAL]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    @property
    def size(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], skip_special: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if skip_special and i != UNK and i < N_SPECIAL:
                continue
            out.append(self.itos[i])
        return out

    def to_text(self) -> str:
        return "".join(f"{tok}\t{i}\n" for i, tok in enumerate(self.itos))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        rows = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            tok, idx = line.rsplit("\t", 1)
            rows.append((int(idx), tok))
        rows.sort()
        if [i for i, _ in rows] != list(range(len(rows))):
            raise ValueError(f"{path}: ids are not contiguous from 0")
        return cls([tok for _, tok in rows])


@dataclass
class DocumentSummaryPair:
    doc_text: str
    sum_text: str
    doc_tokens: np.ndarray
    sum_tokens: np.ndarray
    cr: float

    @property
    def cr_flagged(self) -> bool:
        """True when the summary is longer than the document (cr > 1)."""
        return self.cr > 1.0


def load_corpus(path, limit: int | None = None) -> list[tuple[str, str]]:
    """Read a JSONL file of ``{"document": ..., "summary": ...}`` objects."""
    path = Path(path)
    pairs: list[tuple[str, str]] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if limit is not None and len(pairs) >= limit:
                break
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(path, lineno, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusParseError(path, lineno, "expected a JSON object")
            for key in ("document", "summary"):
                if not isinstance(obj.get(key), str):
                    raise CorpusParseError(path, lineno, f"missing or non-string key {key!r}")
            pairs.append((obj["document"], obj["summary"]))
    return pairs


def load_documents(path) -> list[str]:
    """Read a JSONL file of documents; only the ``document`` key is required."""
    path = Path(path)
    docs = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(path, lineno, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or not isinstance(obj.get("document"), str):
                raise CorpusParseError(path, lineno, "missing or non-string key 'document'")
            docs.append(obj["document"])
    return docs


def build_vocabulary(pairs, max_size: int) -> Vocabulary:
    """Keep the ``max_size - 5`` most frequent tokens; ties go to the lexicographically smaller."""
    check_min_int(max_size, "max_size", N_SPECIAL + 1)
    counts: Counter[str] = Counter()
    for doc, summ in pairs:
        counts.update(tokenize(doc))
        counts.update(tokenize(summ))
    for tok in SPECIAL_TOKENS:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: max_size - N_SPECIAL]]
    return Vocabulary(list(SPECIAL_TOKENS) + kept)


def encode_pair(doc_text: str, sum_text: str, vocab: Vocabulary,
                max_doc_len: int, max_sum_len: int) -> DocumentSummaryPair:
    check_min_int(max_doc_len, "max_doc_len", 3)
    check_min_int(max_sum_len, "max_sum_len", 2)
    doc_words = tokenize(doc_text)
    sum_words = tokenize(sum_text)
    if not doc_words:
        raise DegenerateInputError("document is empty after tokenization")
    if not sum_words:
        raise DegenerateInputError("summary is empty after tokenization")
    doc_ids = vocab.encode(doc_words)[: max_doc_len - 2]
    sum_ids = vocab.encode(sum_words)[: max_sum_len - 1]
    # cr counts content tokens only: CLS and EOS are excluded on both sides
    cr = len(sum_ids) / len(doc_ids)
    return DocumentSummaryPair(
        doc_text=doc_text,
        sum_text=sum_text,
        doc_tokens=np.array([CLS] + doc_ids + [EOS], dtype=np.int64),
        sum_tokens=np.array(sum_ids + [EOS], dtype=np.int64),
        cr=cr,
    )


def encode_document(doc_text: str, vocab: Vocabulary, max_doc_len: int) -> np.ndarray:
    words = tokenize(doc_text)
    if not words:
        raise DegenerateInputError("document is empty after tokenization")
    ids = vocab.encode(words)[: max_doc_len - 2]
    return np.array([CLS] + ids + [EOS], dtype=np.int64)


def decode(ids, vocab: Vocabulary) -> str:
    return " ".join(vocab.decode(ids))


def encode_corpus(pairs, vocab: Vocabulary, max_doc_len: int, max_sum_len: int) -> list[DocumentSummaryPair]:
    return [encode_pair(d, s, vocab, max_doc_len, max_sum_len) for d, s in pairs]


def write_jsonl(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
