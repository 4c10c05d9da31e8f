"""Fuse retrieved entity embeddings into contextual token states.

Each token attends over its own retrieved entities twice: once with a query
derived from the token itself (local) and once with a query derived from the
[CLS] state (global). A gated loop then rescales the token state ``L`` times by
``sigmoid(tanh(W_gate [h, e_local, e_global]))``. Tokens with no retrieved
entities skip fusion and keep their state.

All functions are rank-generic: leading dimensions are treated as batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor

__all__ = [
    "GATE_MODES",
    "FusionConfig",
    "FusionOutputs",
    "init_fusion_params",
    "entity_attention",
    "local_attention",
    "global_attention",
    "gated_loop",
    "fuse",
]

GATE_MODES = ("sigmoid-tanh", "sigmoid")


@dataclass
class FusionConfig:
    loops: int = 2
    gate: str = "sigmoid-tanh"
    tie_weights: bool = False
    use_local: bool = True
    use_global: bool = True

    def __post_init__(self):
        if self.loops < 0:
            raise ValueError("loop count must be non-negative")
        if self.gate not in GATE_MODES:
            raise ValueError(f"gate must be one of {GATE_MODES}")


@dataclass
class FusionOutputs:
    alpha: Tensor
    e_local: Tensor
    beta: Tensor
    e_global: Tensor
    fused: Tensor
    bypass: np.ndarray
    gates: list[Tensor] = field(default_factory=list)


def init_fusion_params(d1: int, d2: int, rng: np.random.Generator, tie_weights: bool = False,
                       prefix: str = "fusion.") -> ParameterSet:
    ps = ParameterSet()
    ps.add(prefix + "W_local", rng.normal(0, 1.0 / np.sqrt(d1), (d2, d1)))
    if not tie_weights:
        ps.add(prefix + "W_global", rng.normal(0, 1.0 / np.sqrt(d1), (d2, d1)))
    ps.add(prefix + "W_gate", rng.normal(0, 1.0 / np.sqrt(d1 + 2 * d2), (d1, d1 + 2 * d2)))
    return ps


def entity_attention(query: Tensor, entities: Tensor, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Softmax over ``entities (..., K, d2)`` of ``e_k . query`` and the
    resulting convex combination. ``query`` has shape ``(..., d2)``."""
    if entities.shape[-2] == 0:
        raise ValueError("attention over an empty entity set")
    q = query.unsqueeze(-2).expand(entities.shape)
    scores = (entities * q).sum(-1)
    weights = ad.softmax(scores, axis=-1, mask=mask)
    pooled = (weights.unsqueeze(-1).expand(entities.shape) * entities).sum(-2)
    return weights, pooled


def local_attention(h: Tensor, entities: Tensor, W_local: Tensor,
                    mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Token-query attention: ``alpha_j = softmax_j(e_j^T W_local h)``."""
    return entity_attention(ad.matmul(h, W_local.T), entities, mask)


def global_attention(h_cls: Tensor, entities: Tensor, W_global: Tensor,
                     mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """[CLS]-query attention over each token's own entity set.

    ``h_cls`` has shape ``(*B, d1)``; ``entities`` has shape ``(*B, *T, K, d2)``
    for any number of token axes ``T`` (zero for a single token).
    """
    q = ad.matmul(h_cls, W_global.T)
    extra = entities.ndim - 2 - (q.ndim - 1)
    if extra < 0:
        raise ad.ShapeError(f"h_cls {h_cls.shape} has more batch axes than entities {entities.shape}")
    if extra:
        q = q.reshape(q.shape[:-1] + (1,) * extra + q.shape[-1:]).expand(entities.shape[:-2] + q.shape[-1:])
    return entity_attention(q, entities, mask)


def gated_loop(h: Tensor, e_local: Tensor, e_global: Tensor, W_gate: Tensor, loops: int,
               gate: str = "sigmoid-tanh", gates_out: list | None = None) -> Tensor:
    """``h^{l+1} = G^l * h^l`` with ``G^l = sigmoid(tanh(W_gate [h^l, e_local, e_global]))``."""
    if loops < 0:
        raise ValueError("loop count must be non-negative")
    state = h
    for _ in range(loops):
        pre = ad.matmul(ad.concat([state, e_local, e_global], axis=-1), W_gate.T)
        g = ad.sigmoid(ad.tanh(pre) if gate == "sigmoid-tanh" else pre)
        if gates_out is not None:
            gates_out.append(g)
        state = g * state
    return state


def fuse(H: Tensor, entities: Tensor, entity_mask: np.ndarray, params: ParameterSet, cfg: FusionConfig,
         prefix: str = "fusion.") -> FusionOutputs:
    """Batched fusion over token states ``H (B, T, d1)`` and padded entity
    vectors ``entities (B, T, K, d2)`` with validity ``entity_mask (B, T, K)``."""
    entity_mask = np.asarray(entity_mask, dtype=bool)
    W_local = params[prefix + "W_local"]
    W_global = params[prefix + "W_local" if cfg.tie_weights else prefix + "W_global"]
    if entities.shape[-2] == 0:
        entities = Tensor(np.zeros(entities.shape[:-2] + (1, entities.shape[-1]), dtype=H.dtype))
        entity_mask = np.zeros(entities.shape[:-1], dtype=bool)
    alpha, e_local = local_attention(H, entities, W_local, entity_mask)
    h_cls = H[:, 0]
    beta, e_global = global_attention(h_cls, entities, W_global, entity_mask)
    zeros = Tensor(np.zeros(e_local.shape, dtype=H.dtype))
    gates: list[Tensor] = []
    fused = gated_loop(
        H,
        e_local if cfg.use_local else zeros,
        e_global if cfg.use_global else zeros,
        params[prefix + "W_gate"],
        cfg.loops,
        cfg.gate,
        gates,
    )
    bypass = ~entity_mask.any(-1)
    if bypass.any():
        fused = ad.where(bypass[..., None], H, fused)
    return FusionOutputs(alpha, e_local, beta, e_global, fused, bypass, gates)
