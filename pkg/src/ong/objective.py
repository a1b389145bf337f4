"""Prediction head, loss terms, the pruned-tree triplet regularizer and ablations."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .corpus import LABEL_INDEX
from .syntax import pruned_adjacency

COS_EPS = 1e-12


@dataclass(frozen=True)
class AblationMask:
    use_kl: bool = True
    use_reg: bool = True
    use_gcn: bool = True
    use_onlstm: bool = True
    use_plain_lstm: bool = False
    use_ad: bool = True
    use_at: bool = True
    reg_pool: str = "graph"

    def __post_init__(self):
        if self.use_onlstm and self.use_plain_lstm:
            raise ValueError("use_onlstm and use_plain_lstm are mutually exclusive")
        if self.use_kl and not self.use_onlstm:
            raise ValueError("use_kl requires the ON-LSTM (master gates give the model scores)")
        if self.use_gcn and not (self.use_ad or self.use_at):
            raise ValueError("the GCN needs at least one of A^d and A^t")
        if self.reg_pool not in ("graph", "maxpool"):
            raise ValueError(f"reg_pool must be 'graph' or 'maxpool', got {self.reg_pool!r}")

    @property
    def effective_pool(self) -> str:
        # without a GCN only max-pooling over the recurrent states is possible
        return self.reg_pool if self.use_gcn else "maxpool"

    def to_dict(self) -> dict:
        return asdict(self)


VARIANTS: dict[str, AblationMask] = {
    "ong": AblationMask(),
    "ong-kl": AblationMask(use_kl=False),
    "ong-onlstm": AblationMask(use_kl=False, use_onlstm=False),
    "ong-wlstm": AblationMask(use_kl=False, use_onlstm=False, use_plain_lstm=True),
    "ong-ad": AblationMask(use_ad=False),
    "ong-at": AblationMask(use_at=False),
    "ong-reg": AblationMask(use_reg=False),
    "ong-mp-gcn": AblationMask(reg_pool="maxpool"),
    "ong-gcn": AblationMask(use_gcn=False, reg_pool="maxpool"),
    "ong-gcn-reg": AblationMask(use_gcn=False, use_reg=False),
}
ABLATIONS = [k for k in VARIANTS if k != "ong"]


class Head(nn.Module):
    """Two-layer feed-forward classifier over V_i, producing B/I/O logits."""

    def __init__(self, d_in: int, width: int = 200, n_labels: int = 3):
        super().__init__()
        self.d_in = d_in
        self.hidden = nn.Linear(d_in, width)
        self.out = nn.Linear(width, n_labels)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        return self.out(torch.relu(self.hidden(v)))


def head_features(H: torch.Tensor, Hbar: torch.Tensor | None, mask: AblationMask) -> torch.Tensor:
    return torch.cat([H, Hbar], dim=-1) if mask.use_gcn else H


def predict_distributions(H, Hbar, p: Head, mask: AblationMask) -> torch.Tensor:
    v = head_features(H, Hbar, mask)
    if v.shape[-1] != p.d_in:
        raise ValueError(f"feature width {v.shape[-1]} does not match head input {p.d_in}")
    return torch.softmax(p(v), dim=-1)


def _gold_tensor(gold, like: torch.Tensor) -> torch.Tensor:
    if isinstance(gold, torch.Tensor):
        return gold
    return torch.tensor([LABEL_INDEX[g] if isinstance(g, str) else int(g) for g in gold],
                        device=like.device)


def nll_from_log_probs(logp: torch.Tensor, gold: torch.Tensor,
                       mask: torch.Tensor | None = None) -> torch.Tensor:
    """Per-sentence token-mean negative log-likelihood, shape ``logp.shape[:-2]``."""
    nll = -logp.gather(-1, gold.unsqueeze(-1)).squeeze(-1)
    if mask is None:
        return nll.mean(-1)
    nll = nll * mask
    return nll.sum(-1) / mask.sum(-1)


def loss_pred(dists: torch.Tensor, gold) -> torch.Tensor:
    """Token-averaged negative log-likelihood of the gold labels."""
    gold = _gold_tensor(gold, dists)
    if dists.shape[-2] != gold.shape[-1]:
        raise ValueError("prediction and gold lengths differ")
    return nll_from_log_probs(dists.log(), gold)


def kl_from_log_probs(log_model: torch.Tensor, log_syn: torch.Tensor,
                      mask: torch.Tensor | None = None) -> torch.Tensor:
    terms = log_model.exp() * (log_model - log_syn)
    if mask is not None:
        terms = terms * mask
    return terms.sum(-1)


def loss_kl(model: torch.Tensor, syn: torch.Tensor) -> torch.Tensor:
    """KL(model || syn) for strictly positive distributions."""
    model = torch.as_tensor(model, dtype=torch.float64)
    syn = torch.as_tensor(syn, dtype=model.dtype)
    return kl_from_log_probs(model.log(), syn.log())


def cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity over the last axis; 0 when either norm is below 1e-12."""
    sa = (a * a).sum(-1)
    sb = (b * b).sum(-1)
    ok = (sa >= COS_EPS ** 2) & (sb >= COS_EPS ** 2)
    denom = torch.sqrt(torch.where(ok, sa, torch.ones_like(sa)) * torch.where(ok, sb, torch.ones_like(sb)))
    return torch.where(ok, (a * b).sum(-1) / denom, torch.zeros_like(denom))


def triplet_loss(r_tar, r_opn, r_oth, has_opn=None, has_oth=None) -> torch.Tensor:
    """1 - cos(tar, opn) + cos(tar, oth); a term with an empty word set is dropped."""
    pos = cosine(r_tar, r_opn)
    neg = cosine(r_tar, r_oth)
    if has_opn is not None:
        pos = pos * has_opn.to(pos.dtype)
    if has_oth is not None:
        neg = neg * has_oth.to(neg.dtype)
    return 1.0 - pos + neg


def masked_max(h: torch.Tensor, members: torch.Tensor) -> torch.Tensor:
    """Elementwise max over rows of ``h`` where ``members`` is set (zeros if none)."""
    filled = h.masked_fill(~members.unsqueeze(-1), float("-inf"))
    out = filled.max(dim=-2).values
    return torch.where(members.any(-1, keepdim=True), out, torch.zeros_like(out))


def regularize(H, Hbar, a, tree, target_span, opinion_set, other_set, gcn_params,
               mask: AblationMask, anchor: int | None = None) -> torch.Tensor:
    """Triplet regularizer for one sentence.

    ``anchor`` is the target position read out of every GCN pass; it
    defaults to the start of ``target_span``.  Pruned trees are grown from
    the anchor so that it always lies on them.
    """
    t = target_span[0] if anchor is None else anchor
    opinion_set, other_set = list(opinion_set), list(other_set)
    has_opn = torch.tensor(bool(opinion_set))
    has_oth = torch.tensor(bool(other_set))
    if not mask.use_gcn:
        Hbar = H
    r_tar = Hbar[..., t, :]
    if mask.effective_pool == "graph":
        a_opn = pruned_adjacency(a, tree, (t, t), opinion_set)
        a_oth = pruned_adjacency(a, tree, (t, t), other_set)
        r_opn = gcn_params(H, a_opn)[..., t, :]
        r_oth = gcn_params(H, a_oth)[..., t, :]
    else:
        n = Hbar.shape[-2]
        members = torch.zeros(n, dtype=torch.bool)
        members[opinion_set] = True
        r_opn = masked_max(Hbar, members)
        members = torch.zeros(n, dtype=torch.bool)
        members[other_set] = True
        r_oth = masked_max(Hbar, members)
    return triplet_loss(r_tar, r_opn, r_oth, has_opn, has_oth)


@dataclass
class LossBreakdown:
    pred: torch.Tensor | float
    kl: torch.Tensor | float
    reg: torch.Tensor | float
    total: torch.Tensor | float

    def to_dict(self) -> dict:
        out = {}
        for k in ("pred", "kl", "reg", "total"):
            v = getattr(self, k)
            out[k] = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        return out


def total_loss(pred, kl=None, reg=None, alpha: float = 0.1, beta: float = 0.1,
               mask: AblationMask = AblationMask()) -> LossBreakdown:
    """Weighted sum of the active terms; masked terms are reported as 0."""
    total = pred
    kl_val = reg_val = 0.0
    if mask.use_kl and kl is not None:
        total = total + alpha * kl
        kl_val = kl
    if mask.use_reg and reg is not None:
        total = total + beta * reg
        reg_val = reg
    return LossBreakdown(pred, kl_val, reg_val, total)
