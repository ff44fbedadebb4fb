"""Offset-preserving tokenization, sentence splitting and sentence-aligned chunking.

The tokenizer is word level: maximal runs of letters/digits, or a single
punctuation/symbol character. Whitespace never belongs to a token. The same
tokenizer is used for counting, labeling and scoring so metrics stay
self-consistent.
"""

from __future__ import annotations

import bisect
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from radeid.corpus import PhiCategory, PhiSpan, Provenance

DEFAULT_MAX_LEN = 512

# [^\W_] is "letter or digit"; underscore is treated as punctuation.
_TOKEN_RE = re.compile(r"[^\W_]+|[^\w\s]|_")
_SENTENCE_END_RE = re.compile(r"[.!?](?=\s|\Z)|\n")

TokenLabels = list[PhiCategory]


@dataclass(frozen=True)
class Token:
    start: int
    end: int
    text: str


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[Token, ...]
    source_length: int

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    def __iter__(self):
        return iter(self.tokens)


@dataclass(frozen=True)
class Chunk:
    """A half-open token range ``[start, end)`` plus its character extent.

    ``hard_split`` is set when the chunk ends inside a sentence because that
    sentence alone exceeded the token budget.
    """

    start: int
    end: int
    char_start: int
    char_end: int
    hard_split: bool = False

    def __len__(self) -> int:
        return self.end - self.start


def tokenize(text: str) -> TokenSeq:
    tokens = tuple(Token(m.start(), m.end(), m.group()) for m in _TOKEN_RE.finditer(text))
    return TokenSeq(tokens, len(text))


def split_sentences(text: str) -> list[int]:
    """Return sentence-end offsets (exclusive), strictly increasing, ending at ``len(text)``.

    A sentence ends right after ``.``, ``!`` or ``?`` when followed by
    whitespace or end of text, and right after every newline.
    """
    ends = [m.end() for m in _SENTENCE_END_RE.finditer(text)]
    if not ends or ends[-1] != len(text):
        ends.append(len(text))
    return ends


def sentence_token_boundaries(tokens: TokenSeq, sentence_ends: Iterable[int]) -> list[int]:
    """Map character sentence ends to token indices (number of tokens ending at or before each)."""
    token_ends = [t.end for t in tokens]
    out: list[int] = []
    for offset in sentence_ends:
        b = bisect.bisect_right(token_ends, offset)
        if b > 0 and (not out or b > out[-1]):
            out.append(b)
    if len(tokens) and (not out or out[-1] != len(tokens)):
        out.append(len(tokens))
    return out


def _make_chunk(tokens: TokenSeq, start: int, end: int, hard_split: bool = False) -> Chunk:
    return Chunk(start, end, tokens[start].start, tokens[end - 1].end, hard_split)


def chunk_tokens(tokens: TokenSeq, sentence_ends: Sequence[int], max_len: int = DEFAULT_MAX_LEN) -> list[Chunk]:
    """Greedily pack whole sentences into chunks of at most ``max_len`` tokens.

    A sentence longer than ``max_len`` is hard-split every ``max_len`` tokens;
    its remainder opens a new chunk that later sentences may join.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    chunks: list[Chunk] = []
    cur_start = cur_end = 0
    for sent_end in sentence_token_boundaries(tokens, sentence_ends):
        if sent_end - cur_start <= max_len:
            cur_end = sent_end
            continue
        if cur_end > cur_start:
            chunks.append(_make_chunk(tokens, cur_start, cur_end))
            cur_start = cur_end
        while sent_end - cur_start > max_len:
            chunks.append(_make_chunk(tokens, cur_start, cur_start + max_len, hard_split=True))
            cur_start += max_len
        cur_end = sent_end
    if cur_end > cur_start:
        chunks.append(_make_chunk(tokens, cur_start, cur_end))
    return chunks


def chunk_text(text: str, max_len: int = DEFAULT_MAX_LEN) -> tuple[TokenSeq, list[Chunk]]:
    tokens = tokenize(text)
    return tokens, chunk_tokens(tokens, split_sentences(text), max_len)


def reconstruct_labels(chunks: Sequence[Chunk], per_chunk_labels: Sequence[Sequence[PhiCategory]]) -> TokenLabels:
    """Concatenate per-chunk labels back into one document-level sequence."""
    if len(chunks) != len(per_chunk_labels):
        raise ValueError(f"got {len(per_chunk_labels)} label lists for {len(chunks)} chunks")
    out: TokenLabels = []
    expected_start = 0
    for i, (chunk, labels) in enumerate(zip(chunks, per_chunk_labels)):
        if chunk.start != expected_start:
            raise ValueError(f"chunk {i} starts at token {chunk.start}, expected {expected_start}")
        if len(labels) != len(chunk):
            raise ValueError(f"chunk {i}: {len(labels)} labels for {len(chunk)} tokens")
        out.extend(labels)
        expected_start = chunk.end
    return out


def spans_to_token_labels(spans: Iterable[PhiSpan], tokens: TokenSeq) -> TokenLabels:
    """Label each token with the category of the span it intersects, else ``O``.

    Raises:
        ValueError: two spans overlap.
    """
    labels = [PhiCategory.O] * len(tokens)
    starts = [t.start for t in tokens]
    prev: PhiSpan | None = None
    for span in sorted(spans, key=lambda s: (s.start, s.end)):
        if prev is not None and prev.end > span.start:
            raise ValueError(f"overlapping spans {prev} and {span}")
        prev = span
        # tokens whose start < span.end and end > span.start
        i = bisect.bisect_right(starts, span.start) - 1
        if i < 0 or tokens[i].end <= span.start:
            i += 1
        while i < len(tokens) and tokens[i].start < span.end:
            labels[i] = span.category
            i += 1
    return labels


def token_labels_to_spans(
    labels: Sequence[PhiCategory],
    tokens: TokenSeq,
    provenance: Provenance = Provenance.PREDICTED,
) -> list[PhiSpan]:
    """Merge maximal runs of one non-O label into spans from first token start to last token end."""
    if len(labels) != len(tokens):
        raise ValueError(f"{len(labels)} labels for {len(tokens)} tokens")
    spans: list[PhiSpan] = []
    run_start = None
    for i, label in enumerate(labels):
        if run_start is not None and label != labels[run_start]:
            spans.append(PhiSpan(tokens[run_start].start, tokens[i - 1].end, labels[run_start], provenance))
            run_start = None
        if run_start is None and label != PhiCategory.O:
            run_start = i
    if run_start is not None:
        spans.append(PhiSpan(tokens[run_start].start, tokens[-1].end, labels[run_start], provenance))
    return spans
