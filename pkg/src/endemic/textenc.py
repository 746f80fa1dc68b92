"""Tweet text to per-token BiLSTM states."""

from __future__ import annotations

import math
import re
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import torch
from torch import nn

PAD = "<pad>"
UNK = "<unk>"
URL = "<url>"
MENTION = "<user>"

_URL_RE = re.compile(r"https?://\S+|www\.\S+")
_MENTION_RE = re.compile(r"@\w+")
_SPLIT_RE = re.compile(r"<url>|<user>|[a-z0-9#']+")


def tokenize(text: str) -> list[str]:
    text = text.lower()
    text = _URL_RE.sub(" <url> ", text)
    text = _MENTION_RE.sub(" <user> ", text)
    return _SPLIT_RE.findall(text)


class Vocabulary:
    """Dense token index with ``PAD = 0`` and ``UNK = 1``."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = [PAD, UNK]
        self.stoi: dict[str, int] = {PAD: 0, UNK: 1}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            idx = len(self.itos)
            self.stoi[token] = idx
            self.itos.append(token)
        return idx

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token) -> bool:
        return token in self.stoi

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1, max_size: int | None = None) -> "Vocabulary":
        counts = Counter(tok for text in texts for tok in tokenize(text))
        ranked = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        if max_size is not None:
            ranked = ranked[: max(0, max_size - 2)]
        return cls(ranked)

    def ids(self, text: str, length: int) -> list[int]:
        """Token ids truncated or right-padded with PAD to ``length``."""
        ids = [self.stoi.get(tok, 1) for tok in tokenize(text)[:length]]
        return ids + [0] * (length - len(ids))

    def save(self, path) -> None:
        Path(path).write_text("".join(tok + "\n" for tok in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if lines[:2] != [PAD, UNK]:
            raise ValueError(f"{path}: first two entries must be {PAD!r} and {UNK!r}")
        vocab = cls()
        for tok in lines[2:]:
            vocab.add(tok)
        return vocab


def encode_ids(texts: Sequence[str], vocab: Vocabulary, length: int) -> torch.Tensor:
    return torch.tensor([vocab.ids(t, length) for t in texts], dtype=torch.long).reshape(len(texts), length)


class BiLstmEncoder(nn.Module):
    """Embedding lookup followed by a bidirectional LSTM.

    The output row ``t`` is ``[forward_h_t, backward_h_t]``, so the width is
    ``dim`` with ``dim // 2`` per direction. Embeddings are standardised
    (per-dimension zero mean, unit variance over the vocabulary) before the
    LSTM, which gives adversarial perturbation radii a fixed scale.
    """

    def __init__(self, vocab_size: int, embed_dim: int = 300, dim: int = 512, normalize: bool = True):
        super().__init__()
        if dim % 2:
            raise ValueError(f"output dim must be even, got {dim}")
        self.dim = dim
        self.embed_dim = embed_dim
        self.normalize = normalize
        self.embedding = nn.Embedding(vocab_size, embed_dim)
        self.lstm = nn.LSTM(embed_dim, dim // 2, batch_first=True, bidirectional=True)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        nn.init.uniform_(self.embedding.weight, -1.0, 1.0)
        bound = 1.0 / math.sqrt(self.dim // 2)
        for p in self.lstm.parameters():
            nn.init.uniform_(p, -bound, bound)

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        table = self.embedding.weight
        if self.normalize and table.shape[0] > 1:
            mean = table.mean(dim=0, keepdim=True)
            var = table.var(dim=0, unbiased=False, keepdim=True)
            table = (table - mean) / torch.sqrt(var + 1e-6)
        return table[ids]

    def encode_embedded(self, emb: torch.Tensor) -> torch.Tensor:
        out, _ = self.lstm(emb)
        return out

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        return self.encode_embedded(self.embed(ids))


def encode_text(text: str, vocab: Vocabulary, encoder: BiLstmEncoder, length: int) -> torch.Tensor:
    """``(length, dim)`` per-token representation of one text."""
    if length < 1:
        raise ValueError("length must be >= 1")
    ids = encode_ids([text], vocab, length)
    with torch.no_grad():
        return encoder(ids)[0]
