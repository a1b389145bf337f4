"""Token + relative-position input encoding.

Token vectors come either from a trainable table or from a frozen sidecar
file of precomputed contextual vectors (one row per token).
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch import nn

UNK = "<unk>"


class SidecarError(ValueError):
    pass


def relative_positions(n: int, target_span: tuple[int, int]) -> list[int]:
    """Offset of each token from the target span (0 inside the span)."""
    s, e = target_span
    return [i - s if i < s else (i - e if i > e else 0) for i in range(n)]


class Vocab:
    def __init__(self, tokens: Sequence[str] = ()):
        self.itos = [UNK]
        self.stoi = {UNK: 0}
        for tok in tokens:
            self.add(tok)

    def add(self, tok: str) -> int:
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        return self.stoi[tok]

    def __len__(self):
        return len(self.itos)

    def __getitem__(self, tok: str) -> int:
        return self.stoi.get(tok, 0)

    @classmethod
    def build(cls, sentences) -> "Vocab":
        v = cls()
        for s in sentences:
            for tok in s.tokens:
                v.add(tok)
        return v


class SentenceEncoder(nn.Module):
    """x_i = [token_vec(w_i); pos_vec(r_i)].

    With ``tok_dim`` set and ``use_table=False`` the token part must be
    supplied by the caller (sidecar vectors) and the table is not created.
    """

    def __init__(self, vocab_size: int, tok_dim: int, pos_dim: int = 30,
                 max_rel: int = 100, use_table: bool = True):
        super().__init__()
        self.tok_dim = tok_dim
        self.pos_dim = pos_dim
        self.max_rel = max_rel
        self.tokens = nn.Embedding(vocab_size, tok_dim) if use_table else None
        self.positions = nn.Embedding(2 * max_rel + 1, pos_dim)
        with torch.no_grad():
            if self.tokens is not None:
                self.tokens.weight.uniform_(-0.1, 0.1)
            self.positions.weight.uniform_(-0.1, 0.1)

    @property
    def out_dim(self) -> int:
        return self.tok_dim + self.pos_dim

    def position_index(self, rel: torch.Tensor) -> torch.Tensor:
        return rel.clamp(-self.max_rel, self.max_rel) + self.max_rel

    def forward(self, token_ids: torch.Tensor, rel: torch.Tensor,
                vectors: torch.Tensor | None = None) -> torch.Tensor:
        if vectors is None:
            if self.tokens is None:
                raise ValueError("encoder has no token table; pass precomputed vectors")
            tok = self.tokens(token_ids)
        else:
            if vectors.shape[:-1] != token_ids.shape:
                raise SidecarError(
                    f"sidecar vectors shape {tuple(vectors.shape)} does not match "
                    f"{tuple(token_ids.shape)} tokens")
            tok = vectors.to(self.positions.weight.dtype)
        return torch.cat([tok, self.positions(self.position_index(rel))], dim=-1)


def encode_sentence(sentence, encoder: SentenceEncoder, vocab: Vocab,
                    vectors=None) -> torch.Tensor:
    """Input vectors ``N x (tok_dim + pos_dim)`` for one sentence."""
    ids = torch.tensor([vocab[t] for t in sentence.tokens])
    rel = torch.tensor(relative_positions(sentence.n, sentence.target_span))
    if vectors is not None:
        vectors = torch.as_tensor(np.asarray(vectors))
        if vectors.shape[0] != sentence.n:
            raise SidecarError(
                f"sidecar has {vectors.shape[0]} vectors for a {sentence.n}-token sentence")
    return encoder(ids, rel, vectors)


def read_sidecar(path) -> list[np.ndarray]:
    with open(path, encoding="utf-8") as f:
        return parse_sidecar(f.read())


def parse_sidecar(text: str) -> list[np.ndarray]:
    """Parse ``N_EXAMPLES D`` then ``EXAMPLE i N`` blocks of N float rows."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise SidecarError("empty sidecar")
    try:
        n_examples, dim = (int(x) for x in lines[0].split())
    except ValueError:
        raise SidecarError("bad sidecar header") from None
    out = []
    pos = 1
    for k in range(n_examples):
        if pos >= len(lines):
            raise SidecarError(f"sidecar truncated before example {k}")
        head = lines[pos].split()
        if len(head) != 3 or head[0] != "EXAMPLE" or int(head[1]) != k:
            raise SidecarError(f"expected 'EXAMPLE {k} N', got {lines[pos]!r}")
        n = int(head[2])
        rows = lines[pos + 1:pos + 1 + n]
        if len(rows) != n:
            raise SidecarError(f"example {k}: expected {n} vector rows")
        mat = np.array([[float(x) for x in r.split()] for r in rows], dtype=np.float64)
        if mat.shape != (n, dim):
            raise SidecarError(f"example {k}: rows must have {dim} values")
        out.append(mat)
        pos += 1 + n
    return out


def format_sidecar(vectors: Sequence[np.ndarray]) -> str:
    dim = vectors[0].shape[1] if vectors else 0
    parts = [f"{len(vectors)} {dim}"]
    for k, mat in enumerate(vectors):
        parts.append(f"EXAMPLE {k} {len(mat)}")
        parts.extend(" ".join(repr(float(x)) for x in row) for row in mat)
    return "\n".join(parts) + "\n"
