"""Byte-level tokenizer with reserved section identifier tokens.

Ids 0..255 are raw bytes (UTF-8). The five section markers each get a
single reserved id, plus an end-of-text id used between documents during
language-model training and a sentence-terminal id appended before feature
extraction. Round-trips are exact: decode(encode(text)) == text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError

SECTION_TOKENS = (
    "[QUESTION]",
    "[SOLUTION]",
    "[CLASS_STATEMENT]",
    "[DEF_STATEMENT]",
    "[IMPORT_STATEMENT]",
)

NEWLINE_ID = 10  # byte value of "\n"


class ByteTokenizer:
    """Fixed vocabulary: 256 bytes + 5 section ids + EOT + sentence EOS."""

    def __init__(self):
        self.section_ids = {tok: 256 + i for i, tok in enumerate(SECTION_TOKENS)}
        self.eot_id = 256 + len(SECTION_TOKENS)
        self.sentence_eos_id = self.eot_id + 1
        self.vocab_size = self.sentence_eos_id + 1
        self._special_re = re.compile("|".join(re.escape(t) for t in SECTION_TOKENS))
        self._id_to_special = {v: k for k, v in self.section_ids.items()}

    @property
    def newline_id(self) -> int:
        return NEWLINE_ID

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        pos = 0
        for m in self._special_re.finditer(text):
            ids.extend(text[pos:m.start()].encode("utf-8"))
            ids.append(self.section_ids[m.group()])
            pos = m.end()
        ids.extend(text[pos:].encode("utf-8"))
        return ids

    def decode(self, ids) -> str:
        out: list[str] = []
        byte_run: list[int] = []

        def flush():
            if byte_run:
                out.append(bytes(byte_run).decode("utf-8"))
                byte_run.clear()

        for i in ids:
            i = int(i)
            if i < 256:
                byte_run.append(i)
            elif i in self._id_to_special:
                flush()
                out.append(self._id_to_special[i])
            elif i in (self.eot_id, self.sentence_eos_id):
                flush()
            else:
                raise DomainError(f"unknown token id {i}")
        flush()
        return "".join(out)


@dataclass
class TokenizedDocument:
    """Token ids with line-level sentence structure.

    sentence_spans[i] = (start, end) token range of sentence i, end
    exclusive; spans are contiguous, non-overlapping, and cover all tokens.
    sentence_of_token maps every token position to its sentence index.
    """

    tokens: np.ndarray
    sentence_spans: list[tuple[int, int]]
    sentence_of_token: np.ndarray = field(repr=False)
    doc_id: str = ""

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.sentence_of_token = np.asarray(self.sentence_of_token, dtype=np.int64)
        w = len(self.tokens)
        if len(self.sentence_of_token) != w:
            raise DimensionError("sentence_of_token length != token count")
        expect = 0
        for i, (s, e) in enumerate(self.sentence_spans):
            if s != expect or e <= s:
                raise DomainError(f"sentence span {i} is not contiguous: ({s}, {e})")
            if not np.all(self.sentence_of_token[s:e] == i):
                raise DomainError(f"sentence_of_token inconsistent within span {i}")
            expect = e
        if expect != w:
            raise DomainError("sentence spans do not cover all tokens")

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    @property
    def n_sentences(self) -> int:
        return len(self.sentence_spans)

    def sentence_tokens(self, i: int) -> np.ndarray:
        s, e = self.sentence_spans[i]
        return self.tokens[s:e]


def tokenize_text(text: str, tokenizer: ByteTokenizer, doc_id: str = "") -> TokenizedDocument:
    """Tokenize and split into newline-delimited sentences.

    Each sentence owns its trailing newline token; a final line without a
    newline is still a sentence.
    """
    if not text:
        raise DomainError("cannot tokenize empty text")
    ids = np.array(tokenizer.encode(text), dtype=np.int64)
    newlines = np.nonzero(ids == NEWLINE_ID)[0]
    spans: list[tuple[int, int]] = []
    start = 0
    for nl in newlines:
        spans.append((start, int(nl) + 1))
        start = int(nl) + 1
    if start < len(ids):
        spans.append((start, len(ids)))
    sent_of_tok = np.empty(len(ids), dtype=np.int64)
    for i, (s, e) in enumerate(spans):
        sent_of_tok[s:e] = i
    return TokenizedDocument(tokens=ids, sentence_spans=spans,
                             sentence_of_token=sent_of_tok, doc_id=doc_id)
