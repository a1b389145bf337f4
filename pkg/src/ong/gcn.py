"""Target-importance adjacency and the row-normalized GCN stack."""
from __future__ import annotations

import torch
from torch import nn


def distance_features(d: torch.Tensor) -> torch.Tensor:
    """Pairwise ``[d_i, d_j, d_i+d_j, |d_i-d_j|, d_i*d_j]`` of shape (..., N, N, 5)."""
    di = d.unsqueeze(-1).expand(*d.shape, d.shape[-1])
    dj = d.unsqueeze(-2).expand(*d.shape, d.shape[-1])
    return torch.stack([di, dj, di + dj, (di - dj).abs(), di * dj], dim=-1)


class EdgeScorer(nn.Module):
    """Feed-forward map from pairwise distance features to one logit.

    ``layers=1`` is a single linear map; ``layers=2`` adds a ReLU hidden
    layer of width ``width``.  ``n_features=6`` is used when the binary
    adjacency entry is prepended to the distance features.
    """

    def __init__(self, layers: int = 1, width: int = 200, n_features: int = 5):
        super().__init__()
        if layers == 1:
            self.ff = nn.Linear(n_features, 1)
        elif layers == 2:
            self.ff = nn.Sequential(nn.Linear(n_features, width), nn.ReLU(), nn.Linear(width, 1))
        else:
            raise ValueError(f"edge scorer supports 1 or 2 layers, got {layers}")

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.ff(feats).squeeze(-1))


def target_importance_matrix(d: torch.Tensor, p: EdgeScorer) -> torch.Tensor:
    """a_ij = sigmoid(FF(features(d_i, d_j))) from raw tree distances."""
    return p(distance_features(d.to(next(p.parameters()).dtype)))


def direct_adjacency(ad: torch.Tensor, d: torch.Tensor, p: EdgeScorer) -> torch.Tensor:
    """Alternative A learned from ``[a^d_ij, distance features]`` in one map."""
    feats = distance_features(d.to(ad.dtype))
    return p(torch.cat([ad.unsqueeze(-1), feats], dim=-1))


def combine_adjacency(ad: torch.Tensor, at: torch.Tensor, gamma: float = 0.2) -> torch.Tensor:
    if ad.shape != at.shape:
        raise ValueError(f"adjacency shapes differ: {tuple(ad.shape)} vs {tuple(at.shape)}")
    return gamma * ad + (1.0 - gamma) * at


class Gcn(nn.Module):
    def __init__(self, d_in: int, width: int = 200, layers: int = 2):
        super().__init__()
        dims = [d_in] + [width] * layers
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims, dims[1:]))

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_features

    def forward(self, h: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        deg = a.sum(-1, keepdim=True)
        live = deg > 0
        deg = torch.where(live, deg, torch.ones_like(deg))
        for lin in self.layers:
            # rows with no neighbours (pruned away) come out as zero vectors
            h = torch.relu(torch.where(live, a @ lin(h) / deg, torch.zeros_like(deg)))
        return h


def gcn_forward(h0: torch.Tensor, a: torch.Tensor, p: Gcn) -> torch.Tensor:
    return p(h0, a)
