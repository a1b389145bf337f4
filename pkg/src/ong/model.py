"""The full tagger: encoder -> (ON-)LSTM -> adjacency + GCN -> head, with batching."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .corpus import LABEL_INDEX, Sentence
from .encoder import SentenceEncoder, Vocab, relative_positions
from .gcn import EdgeScorer, Gcn, combine_adjacency, direct_adjacency, target_importance_matrix
from .objective import (AblationMask, Head, LossBreakdown, head_features, kl_from_log_probs,
                        masked_max, nll_from_log_probs, total_loss, triplet_loss)
from .onlstm import OnLstm, masked_log_softmax
from .syntax import dep_adjacency, pruning_mask, tree_distances

DTYPE = torch.float64


@dataclass
class Example:
    """A sentence with every tree-derived quantity precomputed."""

    sentence: Sentence
    token_ids: list[int]
    rel: list[int]
    dist: list[int]
    adj: np.ndarray
    labels: list[int]
    anchor: int
    opn: list[int]
    oth: list[int]
    keep_opn: np.ndarray
    keep_oth: np.ndarray
    vectors: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.sentence.n


def make_example(sent: Sentence, vocab: Vocab, vectors=None) -> Example:
    tree = sent.tree
    anchor = sent.anchor
    opn, oth = sent.opinion_indices(), sent.other_indices()
    if vectors is not None:
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.shape[0] != sent.n:
            from .encoder import SidecarError
            raise SidecarError(
                f"sidecar has {vectors.shape[0]} vectors for a {sent.n}-token sentence")
    return Example(
        sentence=sent,
        token_ids=[vocab[t] for t in sent.tokens],
        rel=relative_positions(sent.n, sent.target_span),
        dist=tree_distances(tree, sent.target_span),
        adj=dep_adjacency(tree),
        labels=[LABEL_INDEX[lab] for lab in sent.labels()],
        anchor=anchor,
        opn=opn,
        oth=oth,
        keep_opn=pruning_mask(tree, (anchor, anchor), opn),
        keep_oth=pruning_mask(tree, (anchor, anchor), oth),
        vectors=vectors,
    )


def make_examples(sentences: Sequence[Sentence], vocab: Vocab, vectors=None) -> list[Example]:
    if vectors is not None and len(vectors) != len(sentences):
        from .encoder import SidecarError
        raise SidecarError(f"sidecar has {len(vectors)} examples for {len(sentences)} sentences")
    return [make_example(s, vocab, None if vectors is None else vectors[k])
            for k, s in enumerate(sentences)]


@dataclass
class Batch:
    token_ids: torch.Tensor
    rel: torch.Tensor
    mask: torch.Tensor
    dist: torch.Tensor
    adj: torch.Tensor
    labels: torch.Tensor
    anchor: torch.Tensor
    opn: torch.Tensor
    oth: torch.Tensor
    keep_opn: torch.Tensor
    keep_oth: torch.Tensor
    vectors: torch.Tensor | None

    def __len__(self):
        return self.token_ids.shape[0]


def collate(examples: Sequence[Example], dtype=DTYPE) -> Batch:
    """Pad to the longest example; padded slots are masked out everywhere."""
    B = len(examples)
    N = max(ex.n for ex in examples)
    ids = torch.zeros(B, N, dtype=torch.long)
    rel = torch.zeros(B, N, dtype=torch.long)
    mask = torch.zeros(B, N, dtype=torch.bool)
    dist = torch.zeros(B, N, dtype=dtype)
    adj = torch.zeros(B, N, N, dtype=dtype)
    labels = torch.full((B, N), LABEL_INDEX["O"], dtype=torch.long)
    opn = torch.zeros(B, N, dtype=torch.bool)
    oth = torch.zeros(B, N, dtype=torch.bool)
    keep_opn = torch.zeros(B, N, dtype=torch.bool)
    keep_oth = torch.zeros(B, N, dtype=torch.bool)
    has_vec = examples[0].vectors is not None
    vectors = torch.zeros(B, N, examples[0].vectors.shape[1], dtype=dtype) if has_vec else None
    for b, ex in enumerate(examples):
        n = ex.n
        ids[b, :n] = torch.tensor(ex.token_ids)
        rel[b, :n] = torch.tensor(ex.rel)
        mask[b, :n] = True
        dist[b, :n] = torch.tensor(ex.dist, dtype=dtype)
        adj[b, :n, :n] = torch.from_numpy(ex.adj)
        labels[b, :n] = torch.tensor(ex.labels)
        opn[b, ex.opn] = True
        oth[b, ex.oth] = True
        keep_opn[b, :n] = torch.from_numpy(ex.keep_opn)
        keep_oth[b, :n] = torch.from_numpy(ex.keep_oth)
        if has_vec:
            vectors[b, :n] = torch.from_numpy(ex.vectors)
    anchor = torch.tensor([ex.anchor for ex in examples])
    return Batch(ids, rel, mask, dist, adj, labels, anchor, opn, oth, keep_opn, keep_oth, vectors)


@dataclass
class Forward:
    logp: torch.Tensor
    H: torch.Tensor
    Hbar: torch.Tensor | None
    imp: torch.Tensor | None
    A: torch.Tensor | None


class OngModel(nn.Module):
    def __init__(self, vocab_size: int, tok_dim: int = 100, pos_dim: int = 30,
                 hidden: int = 300, gcn_dim: int = 200, gcn_layers: int = 2,
                 head_dim: int = 200, gamma: float = 0.2, alpha: float = 0.1,
                 beta: float = 0.1, mask: AblationMask = AblationMask(),
                 max_rel: int = 100, edge_layers: int = 1, direct_adj: bool = False,
                 separate_reg_gcn: bool = False, use_table: bool = True):
        super().__init__()
        self.mask = mask
        self.gamma, self.alpha, self.beta = gamma, alpha, beta
        self.direct_adj = direct_adj
        self.encoder = SentenceEncoder(vocab_size, tok_dim, pos_dim, max_rel, use_table)
        d_in = self.encoder.out_dim
        if mask.use_onlstm or mask.use_plain_lstm:
            self.rnn = OnLstm(d_in, hidden, master=mask.use_onlstm)
            h_dim = hidden
        else:
            self.rnn = None
            h_dim = d_in
        self.edge_scorer = self.gcn = self.reg_gcn = None
        feat_dim = h_dim
        if mask.use_gcn:
            if direct_adj:
                self.edge_scorer = EdgeScorer(edge_layers, head_dim, n_features=6)
            elif mask.use_at:
                self.edge_scorer = EdgeScorer(edge_layers, head_dim)
            self.gcn = Gcn(h_dim, gcn_dim, gcn_layers)
            if separate_reg_gcn and mask.use_reg and mask.effective_pool == "graph":
                self.reg_gcn = Gcn(h_dim, gcn_dim, gcn_layers)
            feat_dim += gcn_dim
        self.head = Head(feat_dim, head_dim)
        self.to(DTYPE)

    def adjacency(self, batch: Batch) -> torch.Tensor:
        pair = (batch.mask.unsqueeze(-1) & batch.mask.unsqueeze(-2)).to(batch.adj.dtype)
        if self.direct_adj:
            return direct_adjacency(batch.adj, batch.dist, self.edge_scorer) * pair
        if not self.mask.use_at:
            return batch.adj
        at = target_importance_matrix(batch.dist, self.edge_scorer) * pair
        if not self.mask.use_ad:
            return at
        return combine_adjacency(batch.adj, at, self.gamma)

    def forward(self, batch: Batch) -> Forward:
        X = self.encoder(batch.token_ids, batch.rel, batch.vectors)
        imp = None
        if self.rnn is not None:
            out = self.rnn(X)
            H, imp = out.H, out.imp
        else:
            H = X
        Hbar = A = None
        if self.gcn is not None:
            A = self.adjacency(batch)
            Hbar = self.gcn(H, A)
        logits = self.head(head_features(H, Hbar, self.mask))
        return Forward(torch.log_softmax(logits, dim=-1), H, Hbar, imp, A)

    def regularizer(self, batch: Batch, fw: Forward) -> torch.Tensor:
        rows = torch.arange(len(batch))
        src = fw.Hbar if self.mask.use_gcn else fw.H
        r_tar = src[rows, batch.anchor]
        if self.mask.effective_pool == "graph":
            gcn = self.reg_gcn or self.gcn
            dtype = fw.A.dtype
            a_opn = fw.A * (batch.keep_opn.unsqueeze(-1) & batch.keep_opn.unsqueeze(-2)).to(dtype)
            a_oth = fw.A * (batch.keep_oth.unsqueeze(-1) & batch.keep_oth.unsqueeze(-2)).to(dtype)
            r_opn = gcn(fw.H, a_opn)[rows, batch.anchor]
            r_oth = gcn(fw.H, a_oth)[rows, batch.anchor]
        else:
            r_opn = masked_max(src, batch.opn)
            r_oth = masked_max(src, batch.oth)
        return triplet_loss(r_tar, r_opn, r_oth, batch.opn.any(-1), batch.oth.any(-1))

    def loss(self, batch: Batch, fw: Forward | None = None) -> LossBreakdown:
        fw = fw if fw is not None else self(batch)
        maskf = batch.mask.to(fw.logp.dtype)
        pred = nll_from_log_probs(fw.logp, batch.labels, maskf).mean()
        kl = reg = None
        if self.mask.use_kl:
            log_model = masked_log_softmax(fw.imp, batch.mask)
            log_syn = masked_log_softmax(-batch.dist, batch.mask)
            kl = kl_from_log_probs(log_model, log_syn, maskf).mean()
        if self.mask.use_reg:
            reg = self.regularizer(batch, fw).mean()
        return total_loss(pred, kl, reg, self.alpha, self.beta, self.mask)

    @torch.no_grad()
    def predict_labels(self, batch: Batch) -> list[list[int]]:
        logp = self(batch).logp
        best = logp.argmax(-1)
        lengths = batch.mask.sum(-1).tolist()
        return [best[b, :n].tolist() for b, n in enumerate(lengths)]
