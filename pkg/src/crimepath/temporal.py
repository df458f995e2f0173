"""Recurrent temporal encoder turning a region's last M days of crime into an embedding."""

from __future__ import annotations

import math
from typing import NamedTuple

import torch
from torch import nn

GATES = ("f", "i", "c", "o")


class HiddenState(NamedTuple):
    h: torch.Tensor
    c: torch.Tensor


class LstmParams(nn.Module):
    """One LSTM layer: input weights (d_s, d_y), recurrent weights (d_s, d_s), one bias per gate."""

    def __init__(self, input_dim: int, state_dim: int, dtype=torch.float32):
        super().__init__()
        self.input_dim = input_dim
        self.state_dim = state_dim
        for g in GATES:
            setattr(self, f"W_x{g}", nn.Parameter(torch.empty(state_dim, input_dim, dtype=dtype)))
            setattr(self, f"W_h{g}", nn.Parameter(torch.empty(state_dim, state_dim, dtype=dtype)))
            setattr(self, f"b_{g}", nn.Parameter(torch.zeros(state_dim, dtype=dtype)))
        self.reset_parameters()

    def reset_parameters(self, generator: torch.Generator | None = None):
        bound = 1.0 / math.sqrt(self.state_dim)
        with torch.no_grad():
            for g in GATES:
                getattr(self, f"W_x{g}").uniform_(-bound, bound, generator=generator)
                getattr(self, f"W_h{g}").uniform_(-bound, bound, generator=generator)
                getattr(self, f"b_{g}").zero_()

    def zero_state(self, batch: int) -> HiddenState:
        z = torch.zeros(batch, self.state_dim, dtype=self.W_xf.dtype)
        return HiddenState(z, z.clone())


def _cell(x: torch.Tensor, state: HiddenState, p: LstmParams) -> HiddenState:
    h, c = state
    f = torch.sigmoid(x @ p.W_xf.T + h @ p.W_hf.T + p.b_f)
    i = torch.sigmoid(x @ p.W_xi.T + h @ p.W_hi.T + p.b_i)
    c_tilde = torch.tanh(x @ p.W_xc.T + h @ p.W_hc.T + p.b_c)
    o = torch.sigmoid(x @ p.W_xo.T + h @ p.W_ho.T + p.b_o)
    c_new = f * c + i * c_tilde
    h_new = o * torch.tanh(c_new)
    return HiddenState(h_new, c_new)


def lstm_cell(x: torch.Tensor, state: HiddenState, params: LstmParams) -> HiddenState:
    """Single LSTM step. ``x`` is (d_y,) or (B, d_y); state tensors match on the leading dim."""
    if x.shape[-1] != params.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, layer expects {params.input_dim}")
    for name, t in zip(("h", "c"), state):
        if t.shape[-1] != params.state_dim or t.shape[:-1] != x.shape[:-1]:
            raise ValueError(f"state {name} has shape {tuple(t.shape)}, expected {(*x.shape[:-1], params.state_dim)}")
    out = _cell(x, state, params)
    if not (torch.isfinite(out.h).all() and torch.isfinite(out.c).all()):
        raise FloatingPointError("LSTM step produced non-finite state")
    return out


class TemporalEncoder(nn.Module):
    """Stacked LSTM shared by all regions; returns the top layer's final hidden state."""

    def __init__(self, input_dim: int, state_dim: int = 128, n_layers: int = 2,
                 log_input: bool = True, dtype=torch.float32):
        super().__init__()
        self.input_dim = input_dim
        self.state_dim = state_dim
        self.log_input = log_input
        dims = [input_dim] + [state_dim] * n_layers
        self.layers = nn.ModuleList(LstmParams(dims[k], state_dim, dtype) for k in range(n_layers))

    def reset_parameters(self, generator: torch.Generator | None = None):
        for layer in self.layers:
            layer.reset_parameters(generator)

    def forward(self, series: torch.Tensor) -> torch.Tensor:
        return encode_window(series, self, normalize=self.log_input)


def encode_window(series: torch.Tensor, params: TemporalEncoder, normalize: bool = True) -> torch.Tensor:
    """Run the stacked LSTM over (M, C) or (B, M, C) counts and return (d_s,) or (B, d_s)."""
    squeeze = series.dim() == 2
    x = series.unsqueeze(0) if squeeze else series
    if x.dim() != 3:
        raise ValueError(f"expected (M, C) or (B, M, C) series, got shape {tuple(series.shape)}")
    B, M, C = x.shape
    if M < 1:
        raise ValueError("window length must be at least 1")
    if C != params.input_dim:
        raise ValueError(f"series has {C} categories, encoder expects {params.input_dim}")
    x = x.to(params.layers[0].W_xf.dtype)
    if normalize:
        x = torch.log1p(x)
    seq = [x[:, t] for t in range(M)]
    for layer in params.layers:
        state = layer.zero_state(B)
        out = []
        for xt in seq:
            state = _cell(xt, state, layer)
            out.append(state.h)
        seq = out
    h = seq[-1]
    if not torch.isfinite(h).all():
        raise FloatingPointError("temporal embedding is non-finite")
    return h[0] if squeeze else h
