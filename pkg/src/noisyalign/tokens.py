"""Hash tokenizer shared by the text encoder and the confidence scorer."""
from __future__ import annotations

import re
import zlib
from dataclasses import dataclass

from .exceptions import DomainError, VocabularyError

CLS_ID = 0
PAD_ID = 1
MASK_ID = 2
OOV_ID = 3
N_SPECIAL = 4
DEFAULT_VOCAB_SIZE = 256

_WORD = re.compile(r"[^\W_]+", re.UNICODE)


def word_id(word: str, vocab_size: int = DEFAULT_VOCAB_SIZE) -> int:
    """Map a lowercase word to its vocabulary id; non-ASCII words fall into the OOV bucket."""
    if vocab_size <= N_SPECIAL:
        raise VocabularyError(f"vocabulary of size {vocab_size} leaves no room for words")
    if not word.isascii():
        return OOV_ID
    return N_SPECIAL + zlib.crc32(word.encode("ascii")) % (vocab_size - N_SPECIAL)


def split_words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


@dataclass(frozen=True)
class TokenSequence:
    """Token ids with the sentence-summary token at position 0.

    ``len()`` counts only the word tokens, not the summary token.
    """

    ids: tuple[int, ...]
    vocab_size: int = DEFAULT_VOCAB_SIZE

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if len(self.ids) < 2 or self.ids[0] != CLS_ID:
            raise DomainError("a token sequence needs the summary token followed by at least one word")
        bad = [i for i in self.ids if not 0 <= i < self.vocab_size]
        if bad:
            raise VocabularyError(f"token ids {bad} outside vocabulary of size {self.vocab_size}")

    @classmethod
    def from_words(cls, words, vocab_size: int = DEFAULT_VOCAB_SIZE) -> TokenSequence:
        return cls((CLS_ID, *(word_id(w, vocab_size) for w in words)), vocab_size)

    @classmethod
    def from_ids(cls, word_ids, vocab_size: int = DEFAULT_VOCAB_SIZE) -> TokenSequence:
        return cls((CLS_ID, *word_ids), vocab_size)

    @property
    def words(self) -> tuple[int, ...]:
        return self.ids[1:]

    def __len__(self) -> int:
        return len(self.ids) - 1

    def masked(self, k: int) -> TokenSequence:
        """Copy with word position ``k`` (0-based, summary token excluded) replaced by the mask id."""
        ids = list(self.ids)
        ids[k + 1] = MASK_ID
        return TokenSequence(tuple(ids), self.vocab_size)


def tokenize(text: str, vocab_size: int = DEFAULT_VOCAB_SIZE) -> TokenSequence:
    words = split_words(text)
    if not words:
        raise DomainError(f"no tokens in {text!r}")
    return TokenSequence.from_words(words, vocab_size)
