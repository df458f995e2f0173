"""Meta-path instance encoding, similarity-weighted aggregation, type attention and prediction head."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .features import FactorKind, RegionProfile
from .hin import HIN, instance_mask
from .similarity import SimilarityMatrix
from .temporal import TemporalEncoder


def encode_instance(h_i, m_i, m_j, h_j, W_p: torch.Tensor) -> torch.Tensor:
    """Linear projection of the concatenated path features [h_i; m_i; m_j; h_j]."""
    x = torch.cat([h_i, m_i, m_j, h_j], dim=-1)
    if x.shape[-1] != W_p.shape[1]:
        raise ValueError(f"concatenated instance has {x.shape[-1]} features, projection expects {W_p.shape[1]}")
    return x @ W_p.T


def aggregate_intra(h_i, m_i, candidates: Sequence[tuple], W_p: torch.Tensor) -> torch.Tensor:
    """Weighted sum of encoded instances ending at one region.

    ``candidates`` holds ``(h_j, m_j, s_ij)`` per instance (the self-instance
    included by the caller with s = 1). No candidates gives the zero vector.
    """
    out = torch.zeros(W_p.shape[0], dtype=W_p.dtype)
    for h_j, m_j, s in candidates:
        out = out + s * encode_instance(h_i, m_i, m_j, h_j, W_p)
    return out


def aggregate_all(H: torch.Tensor, F: torch.Tensor, S: torch.Tensor, W_p: torch.Tensor) -> torch.Tensor:
    """``aggregate_intra`` for every region at once.

    H: (..., I, d_s) temporal embeddings; F: (I, f) factor features; S: (I, I)
    instance weights, zero where no instance exists. Uses linearity of the
    projection: sum_j s_ij W [h_i; m_i; m_j; h_j] splits into four blocks.
    """
    d_s, f = H.shape[-1], F.shape[-1]
    W1, W2, W3, W4 = torch.split(W_p, [d_s, f, f, d_s], dim=1)
    rows = S.sum(dim=1, keepdim=True)
    own = H @ W1.T + F @ W2.T
    return rows * own + (S @ F) @ W3.T + (S @ H) @ W4.T


def type_summary(h_type: torch.Tensor, M_u: torch.Tensor, b_u: torch.Tensor) -> torch.Tensor:
    """Mean over regions of tanh(M_u h + b_u); ``h_type`` is (..., I, d_e)."""
    if h_type.shape[-2] == 0:
        raise ValueError("type summary over an empty region set")
    return torch.tanh(h_type @ M_u.T + b_u).mean(dim=-2)


def attention_fuse(summaries: torch.Tensor, h_types: torch.Tensor, q: torch.Tensor):
    """Softmax over meta-path types of q . u, then the beta-weighted sum per region.

    summaries: (..., A, d_a); h_types: (..., A, I, d_e). Returns fused
    (..., I, d_e) and beta (..., A). Beta is shared by all regions of a day.
    """
    scores = summaries @ q
    if not torch.isfinite(scores).all():
        raise FloatingPointError("non-finite attention score")
    beta = torch.softmax(scores, dim=-1)
    fused = (beta[..., :, None, None] * h_types).sum(dim=-3)
    return fused, beta


def predict_head(fused: torch.Tensor, W: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(fused @ W.T + b)


@dataclass
class GraphInputs:
    """Per meta-path type: scaled factor features (I, f) and instance weights (I, I)."""

    kinds: list[FactorKind]
    features: dict[FactorKind, torch.Tensor]
    weights: dict[FactorKind, torch.Tensor]

    def to(self, dtype) -> "GraphInputs":
        return GraphInputs(
            self.kinds,
            {k: v.to(dtype) for k, v in self.features.items()},
            {k: v.to(dtype) for k, v in self.weights.items()},
        )

    def permute(self, perm: Sequence[int]) -> "GraphInputs":
        p = torch.as_tensor(perm)
        feats = {}
        for k, v in self.features.items():
            v = v[p]
            if k is FactorKind.GEOGRAPHIC:
                v = v[:, p]
            feats[k] = v
        return GraphInputs(self.kinds, feats, {k: v[p][:, p] for k, v in self.weights.items()})


def scale_features(x: np.ndarray) -> np.ndarray:
    """Column max-abs scaling to [0, 1]; all-zero columns stay zero."""
    x = np.asarray(x, dtype=float)
    top = np.abs(x).max(axis=0, keepdims=True)
    return np.divide(x, top, out=np.zeros_like(x), where=top > 0)


def instance_weights(sim: np.ndarray, mask: np.ndarray, top_k: int | None = None,
                     include_self: bool = True) -> np.ndarray:
    """Similarity weights over existing instances, self weight 1, optionally capped to the top-K peers."""
    w = np.where(mask, sim, 0.0)
    n = w.shape[0]
    has_self = np.diag(mask).copy() if include_self else np.zeros(n, dtype=bool)
    np.fill_diagonal(w, 0.0)
    if top_k is not None:
        for i in range(n):
            peers = np.flatnonzero(mask[i] & (np.arange(n) != i))
            if peers.size > top_k:
                # stable order: highest similarity first, ties by region index
                keep = peers[np.lexsort((peers, -w[i, peers]))[:top_k]]
                drop = np.setdiff1d(peers, keep)
                w[i, drop] = 0.0
    w[np.arange(n), np.arange(n)] = has_self.astype(float)
    return w


def build_graph_inputs(
    hin: HIN,
    sims: Mapping[FactorKind, SimilarityMatrix],
    profiles: Sequence[RegionProfile],
    adjacency: np.ndarray | None = None,
    top_k: int | None = 20,
    include_self: bool = True,
    kinds: Sequence[FactorKind] | None = None,
) -> GraphInputs:
    kinds = list(kinds) if kinds is not None else [k for k in FactorKind if k in sims]
    features, weights = {}, {}
    for kind in kinds:
        if kind is FactorKind.GEOGRAPHIC:
            if adjacency is None:
                raise ValueError("Geographic features need the adjacency matrix")
            raw = np.asarray(adjacency, dtype=float)
        else:
            raw = np.stack([np.asarray(p.vectors[kind], dtype=float) for p in profiles])
        features[kind] = torch.as_tensor(scale_features(raw))
        mask = instance_mask(hin, kind, include_self)
        weights[kind] = torch.as_tensor(instance_weights(sims[kind].values, mask, top_k, include_self))
    return GraphInputs(kinds, features, weights)


def _uniform_(t: torch.Tensor, fan_in: int, generator):
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    with torch.no_grad():
        t.uniform_(-bound, bound, generator=generator)


class MetaPathModel(nn.Module):
    """Full predictor: temporal encoder -> per-type instance aggregation -> type attention -> head."""

    def __init__(
        self,
        n_categories: int,
        feature_dims: Mapping[FactorKind, int],
        state_dim: int = 128,
        n_layers: int = 2,
        instance_dim: int = 64,
        attention_dim: int = 128,
        log_input: bool = True,
        dtype=torch.float32,
    ):
        super().__init__()
        self.kinds = [k for k in FactorKind if k in feature_dims]
        self.feature_dims = {k: int(feature_dims[k]) for k in self.kinds}
        self.encoder = TemporalEncoder(n_categories, state_dim, n_layers, log_input, dtype)
        self.W_p = nn.ParameterDict({
            k.metapath: nn.Parameter(torch.empty(instance_dim, 2 * state_dim + 2 * self.feature_dims[k], dtype=dtype))
            for k in self.kinds
        })
        self.M_u = nn.Parameter(torch.empty(attention_dim, instance_dim, dtype=dtype))
        self.b_u = nn.Parameter(torch.zeros(attention_dim, dtype=dtype))
        self.q = nn.Parameter(torch.empty(attention_dim, dtype=dtype))
        self.head_W = nn.Parameter(torch.empty(n_categories, instance_dim, dtype=dtype))
        self.head_b = nn.Parameter(torch.zeros(n_categories, dtype=dtype))
        self.reset_parameters()

    def reset_parameters(self, generator: torch.Generator | None = None):
        self.encoder.reset_parameters(generator)
        for w in self.W_p.values():
            _uniform_(w, w.shape[1], generator)
        _uniform_(self.M_u, self.M_u.shape[1], generator)
        _uniform_(self.q, self.q.shape[0], generator)
        _uniform_(self.head_W, self.head_W.shape[1], generator)
        with torch.no_grad():
            self.b_u.zero_()
            self.head_b.zero_()

    @property
    def dtype(self):
        return self.M_u.dtype

    def type_embeddings(self, windows: torch.Tensor, graph: GraphInputs) -> torch.Tensor:
        """(B, A, I, d_e) aggregated representation per meta-path type."""
        B, I, M, C = windows.shape
        H = self.encoder(windows.reshape(B * I, M, C)).reshape(B, I, -1)
        g = graph.to(self.dtype)
        return torch.stack(
            [aggregate_all(H, g.features[k], g.weights[k], self.W_p[k.metapath]) for k in self.kinds],
            dim=1,
        )

    def forward(self, windows: torch.Tensor, graph: GraphInputs):
        """windows: (B, I, M, C) counts for B days. Returns probabilities (B, I, C) and beta (B, A)."""
        h_types = self.type_embeddings(windows, graph)
        summaries = type_summary(h_types, self.M_u, self.b_u)
        fused, beta = attention_fuse(summaries, h_types, self.q)
        return predict_head(fused, self.head_W, self.head_b), beta


class LstmOnlyModel(nn.Module):
    """Ablation: temporal embedding fed straight to the prediction head."""

    kinds: list[FactorKind] = []

    def __init__(self, n_categories: int, state_dim: int = 128, n_layers: int = 2,
                 log_input: bool = True, dtype=torch.float32):
        super().__init__()
        self.encoder = TemporalEncoder(n_categories, state_dim, n_layers, log_input, dtype)
        self.head_W = nn.Parameter(torch.empty(n_categories, state_dim, dtype=dtype))
        self.head_b = nn.Parameter(torch.zeros(n_categories, dtype=dtype))
        self.reset_parameters()

    def reset_parameters(self, generator: torch.Generator | None = None):
        self.encoder.reset_parameters(generator)
        _uniform_(self.head_W, self.head_W.shape[1], generator)
        with torch.no_grad():
            self.head_b.zero_()

    @property
    def dtype(self):
        return self.head_W.dtype

    def forward(self, windows: torch.Tensor, graph: GraphInputs | None = None):
        B, I, M, C = windows.shape
        H = self.encoder(windows.reshape(B * I, M, C)).reshape(B, I, -1)
        return predict_head(H, self.head_W, self.head_b), None
