"""Answer-span and support-sentence heads, their losses, and the dynamic
coefficient that weights the support loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor

logger = logging.getLogger(__name__)

__all__ = [
    "PROB_CLAMP",
    "TaskOutputs",
    "LambdaOutputs",
    "LossReport",
    "init_head_params",
    "token_outputs",
    "answer_loss",
    "support_loss",
    "pool_region",
    "pooled_reps",
    "dynamic_lambda",
    "total_loss",
]

PROB_CLAMP = 1e-7
_NORM_EPS = 1e-12


@dataclass
class TaskOutputs:
    o: Tensor
    p_support: Tensor
    log_p_start: Tensor
    log_p_end: Tensor
    passage_mask: np.ndarray

    @property
    def p_start(self) -> np.ndarray:
        return np.where(self.passage_mask, np.exp(self.log_p_start.data), 0.0)

    @property
    def p_end(self) -> np.ndarray:
        return np.where(self.passage_mask, np.exp(self.log_p_end.data), 0.0)


@dataclass
class LambdaOutputs:
    gamma_st: Tensor
    gamma_ed: Tensor
    gamma_sp: Tensor
    H_A: Tensor
    lam: Tensor


@dataclass
class LossReport:
    answer: float
    support: float
    lam: float
    total: float
    batch_size: int
    seq_len: int

    def as_dict(self) -> dict:
        return {"L_A": self.answer, "L_S": self.support, "lambda": self.lam, "L": self.total,
                "N": self.batch_size, "M": self.seq_len}


def init_head_params(d1: int, rng: np.random.Generator, d_o: int | None = None,
                     prefix: str = "heads.") -> ParameterSet:
    d_o = d1 if d_o is None else d_o
    ps = ParameterSet()
    ps.add(prefix + "W_out", rng.normal(0, 1.0 / np.sqrt(2 * d1), (d_o, 2 * d1)))
    for name in ("w_sup", "w1", "w2", "v_pool"):
        ps.add(prefix + name, rng.normal(0, 1.0 / np.sqrt(d_o), (d_o,)))
    ps.add(prefix + "W_H", rng.normal(0, 1.0 / np.sqrt(3 * d_o), (d_o, 3 * d_o)))
    return ps


def token_outputs(H: Tensor, H_fused: Tensor, params: ParameterSet, passage_mask: np.ndarray,
                  prefix: str = "heads.") -> TaskOutputs:
    """``o_i = sigmoid(W_out [h_i, h_i^L])``; support probability and masked
    start/end distributions over the passage positions."""
    if H.shape != H_fused.shape:
        raise ad.ShapeError(f"token states {H.shape} vs fused states {H_fused.shape}")
    passage_mask = np.asarray(passage_mask, dtype=bool)
    if passage_mask.shape != H.shape[:-1]:
        raise ad.ShapeError(f"passage mask {passage_mask.shape} does not match {H.shape[:-1]}")
    if not passage_mask.any(-1).all():
        raise ValueError("every sequence needs at least one passage position")
    o = ad.sigmoid(ad.matmul(ad.concat([H, H_fused], axis=-1), params[prefix + "W_out"].T))
    p_support = ad.sigmoid(ad.matmul(o, params[prefix + "w_sup"]))
    log_p_start = ad.log_softmax(ad.matmul(o, params[prefix + "w1"]), axis=-1, mask=passage_mask)
    log_p_end = ad.log_softmax(ad.matmul(o, params[prefix + "w2"]), axis=-1, mask=passage_mask)
    return TaskOutputs(o, p_support, log_p_start, log_p_end, passage_mask)


def _as_batch(t: Tensor, n_axes: int) -> Tensor:
    return t.unsqueeze(0) if t.ndim == n_axes else t


def answer_loss(log_p_start: Tensor, log_p_end: Tensor, starts, ends,
                passage_mask: np.ndarray | None = None, per_example: bool = False) -> Tensor:
    """Mean over examples of ``-(log p_start[y_start] + log p_end[y_end])``.

    Inputs are ``(T,)`` for one example or ``(N, T)`` for a batch.
    """
    ls, le = _as_batch(log_p_start, 1), _as_batch(log_p_end, 1)
    starts = np.atleast_1d(np.asarray(starts, dtype=np.int64))
    ends = np.atleast_1d(np.asarray(ends, dtype=np.int64))
    N = ls.shape[0]
    if starts.shape != (N,) or ends.shape != (N,):
        raise ad.ShapeError("one gold start and end per example")
    if passage_mask is not None:
        pm = np.asarray(passage_mask, dtype=bool).reshape(N, -1)
        rows = np.arange(N)
        if not (pm[rows, starts].all() and pm[rows, ends].all()):
            raise ValueError("gold answer position outside the passage")
    rows = np.arange(N)
    nll = -(ls[rows, starts] + le[rows, ends])
    return nll if per_example else nll.mean()


def support_loss(p_support: Tensor, labels, valid_mask: np.ndarray | None = None,
                 per_example: bool = False) -> Tensor:
    """Binary cross-entropy with probabilities clamped to ``[1e-7, 1 - 1e-7]``;
    token mean within each example, then mean over examples."""
    p = _as_batch(p_support, 1)
    y = np.asarray(labels, dtype=p.dtype).reshape(p.shape)
    if valid_mask is None:
        valid = np.ones(p.shape, dtype=p.dtype)
    else:
        valid = np.asarray(valid_mask, dtype=p.dtype).reshape(p.shape)
    counts = valid.sum(-1)
    if np.any(counts == 0):
        raise ValueError("support loss over an example with no valid tokens")
    pc = ad.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    bce = -(ad.log(pc) * Tensor(y) + ad.log(1.0 - pc) * Tensor(1.0 - y))
    per = (bce * Tensor(valid)).sum(-1) * Tensor(1.0 / counts)
    return per if per_example else per.mean()


def pool_region(o: Tensor, region: np.ndarray, v_pool: Tensor) -> Tensor:
    """Average of self-attentive pooling and mean pooling over ``region``.

    ``o`` is ``(..., T, d)``; ``region`` is a boolean ``(..., T)`` mask.
    """
    region = np.asarray(region, dtype=bool)
    if not region.any(-1).all():
        raise ValueError("pooling over an empty region")
    scores = ad.matmul(o, v_pool)
    weights = ad.softmax(scores, axis=-1, mask=region)
    attentive = (weights.unsqueeze(-1).expand(o.shape) * o).sum(-2)
    rf = region.astype(o.dtype)
    mean = (o * Tensor(np.broadcast_to(rf[..., None], o.shape))).sum(-2)
    mean = mean * Tensor(np.broadcast_to(1.0 / rf.sum(-1, keepdims=True), mean.shape))
    return (attentive + mean) * 0.5


def pooled_reps(o: Tensor, support_region: np.ndarray, answer_region: np.ndarray, starts, ends,
                v_pool: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """``(h_su, o_sp, o_st, o_ed)`` for ``o`` of shape ``(T, d)`` or ``(N, T, d)``."""
    single = o.ndim == 2
    ob = _as_batch(o, 2)
    N = ob.shape[0]
    sr = np.asarray(support_region, dtype=bool).reshape(N, -1)
    ar = np.asarray(answer_region, dtype=bool).reshape(N, -1)
    rows = np.arange(N)
    starts = np.atleast_1d(np.asarray(starts, dtype=np.int64))
    ends = np.atleast_1d(np.asarray(ends, dtype=np.int64))
    h_su = pool_region(ob, sr, v_pool)
    o_sp = pool_region(ob, ar, v_pool)
    o_st = ob[rows, starts]
    o_ed = ob[rows, ends]
    if single:
        return h_su[0], o_sp[0], o_st[0], o_ed[0]
    return h_su, o_sp, o_st, o_ed


def dynamic_lambda(h_su: Tensor, o_st: Tensor, o_ed: Tensor, o_sp: Tensor, W_H: Tensor,
                   detach: bool = False) -> LambdaOutputs:
    """Support-loss coefficient ``max(0, cos(H_A, h_su))``.

    ``gamma_x = h_su . o_x`` and ``H_A = sigmoid(W_H [g_st o_st, g_ed o_ed, g_sp o_sp])``.
    Rows where either vector is numerically zero get a coefficient of 0.
    """
    def gamma(x):
        return (h_su * x).sum(-1)

    g_st, g_ed, g_sp = gamma(o_st), gamma(o_ed), gamma(o_sp)

    def scaled(g, x):
        return g.unsqueeze(-1).expand(x.shape) * x

    feats = ad.concat([scaled(g_st, o_st), scaled(g_ed, o_ed), scaled(g_sp, o_sp)], axis=-1)
    H_A = ad.sigmoid(ad.matmul(feats, W_H.T))
    na = np.linalg.norm(H_A.data, axis=-1)
    nh = np.linalg.norm(h_su.data, axis=-1)
    bad = (na <= _NORM_EPS) | (nh <= _NORM_EPS)
    if np.any(bad):
        logger.warning("degenerate vector in dynamic lambda; coefficient set to 0 for %d row(s)", int(np.sum(bad)))
        fill = np.ones(H_A.shape, dtype=H_A.dtype)
        safe_a = ad.where(bad[..., None], Tensor(fill), H_A)
        safe_h = ad.where(bad[..., None], Tensor(fill), h_su)
        cos = ad.cosine(safe_a, safe_h)
        cos = ad.where(bad, Tensor(np.zeros(cos.shape, dtype=cos.dtype)), cos)
    else:
        cos = ad.cosine(H_A, h_su)
    lam = ad.relu(cos)
    if detach:
        lam = lam.detach()
    return LambdaOutputs(g_st, g_ed, g_sp, H_A, lam)


def total_loss(L_A, L_S, lam):
    """``L_A + lam * L_S``; works on floats or tensors (per-example tensors are
    combined row-wise and averaged)."""
    if isinstance(L_A, Tensor) or isinstance(L_S, Tensor) or isinstance(lam, Tensor):
        out = L_A + lam * L_S
        return out.mean() if out.ndim else out
    return L_A + lam * L_S
