"""Knowledge-based word relation tagging.

Every pair of words in a dialogue gets a recurrence tag (0/1) and a relation
tag from the knowledge base.  The two K x K matrices are summed into an
importance matrix whose row means weight the word-level text features.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from emocues.corpus import is_speaker_token
from emocues.knowledge import RELATION_ORDER, KnowledgeBase
from emocues.nn import tensor as T
from emocues.nn.tensor import Tensor

RELATION_CAP = 3


@dataclass(frozen=True)
class WordEntry:
    surface: str
    is_content: bool
    utterance_index: int
    token_span: range


@dataclass(frozen=True)
class ImportanceMatrices:
    m_rec: np.ndarray
    m_rel: np.ndarray
    m: np.ndarray
    words: tuple[WordEntry, ...]

    @property
    def k(self) -> int:
        return len(self.words)


def load_lexicon(path: str | Path | None = None) -> frozenset[str]:
    """Function-word lexicon, one word per line; ``None`` loads the bundled English list."""
    if path is None:
        text = resources.files("emocues.data").joinpath("function_words.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    words = (ln.strip().lower() for ln in text.splitlines())
    return frozenset(w for w in words if w and not w.startswith("#"))


def classify_words(tokens: Sequence[str], function_lexicon: frozenset[str] | set[str]) -> list[WordEntry]:
    words = []
    utt = -1
    for i, tok in enumerate(tokens):
        if is_speaker_token(tok):
            utt += 1
            continue
        words.append(WordEntry(tok, tok not in function_lexicon, max(utt, 0), range(i, i + 1)))
    return words


def build_recurrence_matrix(words: Sequence[WordEntry]) -> np.ndarray:
    k = len(words)
    surfaces = np.array([w.surface for w in words], dtype=object)
    content = np.array([w.is_content for w in words], dtype=bool)
    if k == 0:
        return np.zeros((0, 0), dtype=np.int64)
    same = surfaces[:, None] == surfaces[None, :]
    mask = same & content[:, None] & content[None, :]
    np.fill_diagonal(mask, False)
    return mask.astype(np.int64)


def build_relation_matrix(words: Sequence[WordEntry], kb: KnowledgeBase) -> np.ndarray:
    k = len(words)
    m = np.zeros((k, k), dtype=np.int64)
    content = [i for i, w in enumerate(words) if w.is_content]
    for a_pos, i in enumerate(content):
        for j in content[a_pos + 1:]:
            n = min(RELATION_CAP, len(kb.query(words[i].surface, words[j].surface)))
            m[i, j] = m[j, i] = n
    return m


def combine_matrices(m_rec: np.ndarray, m_rel: np.ndarray,
                     words: Sequence[WordEntry] = ()) -> ImportanceMatrices:
    if m_rec.shape != m_rel.shape or m_rec.ndim != 2 or m_rec.shape[0] != m_rec.shape[1]:
        raise ValueError(f"matrix shapes differ or are not square: {m_rec.shape} vs {m_rel.shape}")
    if words and len(words) != m_rec.shape[0]:
        raise ValueError(f"{len(words)} words for a {m_rec.shape[0]}x{m_rec.shape[0]} matrix")
    return ImportanceMatrices(m_rec, m_rel, m_rec + m_rel, tuple(words))


def importance_matrices(tokens: Sequence[str], lexicon, kb: KnowledgeBase) -> ImportanceMatrices:
    words = classify_words(tokens, lexicon)
    return combine_matrices(build_recurrence_matrix(words), build_relation_matrix(words, kb), words)


def squeeze_importance(mats: ImportanceMatrices) -> np.ndarray:
    """Row mean of the importance matrix: one score per word."""
    k = mats.m.shape[0]
    if k == 0:
        return np.zeros(0)
    return mats.m.sum(axis=1) / k


def tag_matrix(mats: ImportanceMatrices, kb: KnowledgeBase) -> list[list[str]]:
    """Pairwise tags such as ``"1/H"``: recurrence flag, then relation codes or ``N``."""
    words = mats.words
    tags = []
    for i, wi in enumerate(words):
        row = []
        for j, wj in enumerate(words):
            codes = ""
            if i != j and wi.is_content and wj.is_content:
                rels = kb.query(wi.surface, wj.surface)
                codes = "".join(r.code for r in RELATION_ORDER if r in rels)
            row.append(f"{mats.m_rec[i, j]}/{codes or 'N'}")
        tags.append(row)
    return tags


def token_scores(n_tokens: int, words: Sequence[WordEntry], scores: np.ndarray) -> np.ndarray:
    """Spread word scores back onto token positions; speaker tokens score 0."""
    out = np.zeros(n_tokens)
    for w, s in zip(words, scores):
        out[w.token_span.start:w.token_span.stop] = s
    return out


def word_pooling_matrix(n_tokens: int, words: Sequence[WordEntry]) -> np.ndarray:
    """(K, n_tokens) matrix averaging each word's token span."""
    pool = np.zeros((len(words), n_tokens))
    for k, w in enumerate(words):
        pool[k, w.token_span.start:w.token_span.stop] = 1.0 / len(w.token_span)
    return pool


def scale_text_features(h_words: Tensor, scores: np.ndarray, weight: Tensor, bias: Tensor) -> Tensor:
    """Scale row k of ``h_words`` (K, d) by ``weight * scores[k] + bias``."""
    scores = np.asarray(scores, dtype=np.float64)
    if h_words.shape[0] != scores.shape[0]:
        raise ValueError(f"{h_words.shape[0]} feature rows but {scores.shape[0]} scores")
    gate = T.Tensor(scores[:, None]) * weight + bias
    return h_words * gate
