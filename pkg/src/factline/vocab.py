from __future__ import annotations

from collections import Counter
from typing import Iterable

from factline.text import tokenize

PAD, UNK, CLS, BOS, EOS = "[PAD]", "[UNK]", "[CLS]", "[BOS]", "[EOS]"
SPECIALS = (PAD, UNK, CLS, BOS, EOS)


class Vocab:
    """Token <-> id table; ids 0..4 are the special tokens."""

    def __init__(self, tokens: Iterable[str]):
        self.itos: list[str] = list(SPECIALS)
        for tok in tokens:
            if tok not in SPECIALS:
                self.itos.append(tok)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, texts: Iterable[str], min_freq: int = 1, extra: Iterable[str] = ()) -> "Vocab":
        counts = Counter(tok for text in texts for tok in tokenize(text))
        words = sorted(t for t, c in counts.items() if c >= min_freq)
        return cls(list(extra) + [w for w in words if w not in set(extra)])

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def pad_id(self) -> int:
        return 0

    def id(self, token: str) -> int:
        return self.stoi.get(token, 1)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, 1) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]
