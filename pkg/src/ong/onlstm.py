"""Ordered-neuron LSTM with master forget/input gates.

All recurrences run left to right over ``(..., N, d_in)`` inputs and start
from zero hidden and cell states.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

GATES = ("f", "i", "o", "c", "mf", "mi")


def cummax(v: torch.Tensor) -> torch.Tensor:
    """cumsum(softmax(v)) over the last dimension."""
    return torch.cumsum(torch.softmax(v, dim=-1), dim=-1)


@dataclass
class OnLstmOutput:
    H: torch.Tensor
    imp: torch.Tensor | None
    master_f: torch.Tensor | None


class OnLstm(nn.Module):
    """One ON-LSTM layer; ``master=False`` gives a plain LSTM.

    Input projections of all gates are fused into ``W`` (with the biases) and
    recurrent projections into ``U``; ``gate_params`` slices them back out.
    """

    def __init__(self, d_in: int, hidden: int = 300, master: bool = True):
        super().__init__()
        self.d_in = d_in
        self.hidden = hidden
        self.master = master
        self.n_gates = 6 if master else 4
        self.W = nn.Linear(d_in, self.n_gates * hidden)
        self.U = nn.Linear(hidden, self.n_gates * hidden, bias=False)
        bound = 1.0 / math.sqrt(hidden)
        with torch.no_grad():
            for p in self.parameters():
                p.uniform_(-bound, bound)

    def gate_params(self, gate: str) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        k = GATES.index(gate)
        if k >= self.n_gates:
            raise KeyError(f"plain LSTM has no {gate!r} gate")
        rows = slice(k * self.hidden, (k + 1) * self.hidden)
        return self.W.weight[rows], self.U.weight[rows], self.W.bias[rows]

    def cell(self, xw: torch.Tensor, h_prev: torch.Tensor, c_prev: torch.Tensor):
        """One step given the precomputed input projection ``xw = W x + b``."""
        z = xw + self.U(h_prev)
        D = self.hidden
        f = torch.sigmoid(z[..., :D])
        i = torch.sigmoid(z[..., D:2 * D])
        o = torch.sigmoid(z[..., 2 * D:3 * D])
        c_hat = torch.tanh(z[..., 3 * D:4 * D])
        if not self.master:
            c = f * c_prev + i * c_hat
            return o * torch.tanh(c), c, None
        mf = cummax(z[..., 4 * D:5 * D])
        mi = 1.0 - cummax(z[..., 5 * D:])
        f_bar = mf * (f * mi + 1.0 - mi)
        i_bar = mi * (i * mf + 1.0 - mf)
        c = f_bar * c_prev + i_bar * c_hat
        return o * torch.tanh(c), c, mf

    def step(self, x, h_prev, c_prev):
        if x.shape[-1] != self.d_in or h_prev.shape[-1] != self.hidden or c_prev.shape != h_prev.shape:
            raise ValueError(
                f"shape mismatch: x {tuple(x.shape)}, h {tuple(h_prev.shape)}, "
                f"c {tuple(c_prev.shape)} for d_in={self.d_in}, hidden={self.hidden}")
        return self.cell(self.W(x), h_prev, c_prev)

    def forward(self, X: torch.Tensor) -> OnLstmOutput:
        if X.shape[-2] < 1:
            raise ValueError("empty sequence")
        xw = self.W(X)
        h = X.new_zeros(*X.shape[:-2], self.hidden)
        c = torch.zeros_like(h)
        hs, mfs = [], []
        for t in range(X.shape[-2]):
            h, c, mf = self.cell(xw[..., t, :], h, c)
            hs.append(h)
            mfs.append(mf)
        H = torch.stack(hs, dim=-2)
        if not self.master:
            return OnLstmOutput(H, None, None)
        master_f = torch.stack(mfs, dim=-2)
        return OnLstmOutput(H, 1.0 - master_f.sum(-1), master_f)


def onlstm_step(x, h_prev, c_prev, p: OnLstm):
    """Returns ``(h, c, master_f)``."""
    return p.step(x, h_prev, c_prev)


def onlstm_run(X, p: OnLstm) -> OnLstmOutput:
    return p(X)


def masked_log_softmax(x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    if mask is None:
        return torch.log_softmax(x, dim=-1)
    x = x.masked_fill(~mask, float("-inf"))
    out = torch.log_softmax(x, dim=-1)
    # padded slots: keep a finite value so downstream products stay NaN-free
    return out.masked_fill(~mask, 0.0)


def model_scores(imp: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Softmax over informativeness scores; padded slots get probability 0."""
    p = masked_log_softmax(imp, mask).exp()
    return p if mask is None else p * mask
