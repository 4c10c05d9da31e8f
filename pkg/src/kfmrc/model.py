"""The full knowledge-fused reader: encoder, fusion, heads, losses."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .encoder import EncoderConfig, Vocabulary, encode_batch, init_encoder_params
from .features import Batch
from .fusion import FusionConfig, FusionOutputs, fuse, init_fusion_params
from .heads import (LossReport, TaskOutputs, answer_loss, dynamic_lambda, init_head_params, pooled_reps,
                    support_loss, token_outputs)

__all__ = ["ABLATIONS", "ModelConfig", "ForwardResult", "KnowledgeMRC"]

ABLATIONS = ("no-local", "no-global", "no-lambda")


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    d2: int = 64
    fusion: FusionConfig = field(default_factory=FusionConfig)
    d_o: int | None = None
    ablate: tuple[str, ...] = ()
    detach_lambda: bool = False
    finetune_entities: bool = False

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if isinstance(self.fusion, dict):
            self.fusion = FusionConfig(**self.fusion)
        self.ablate = tuple(sorted(set(self.ablate)))
        bad = set(self.ablate) - set(ABLATIONS)
        if bad:
            raise ValueError(f"unknown ablation(s) {sorted(bad)}; choose from {ABLATIONS}")
        self.fusion.use_local = "no-local" not in self.ablate
        self.fusion.use_global = "no-global" not in self.ablate

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablate"] = list(self.ablate)
        return d


@dataclass
class ForwardResult:
    H: Tensor
    fusion: FusionOutputs
    outputs: TaskOutputs


class KnowledgeMRC:
    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, entity_vectors: np.ndarray | None = None,
                 seed: int = 0, params: ParameterSet | None = None):
        self.cfg = cfg
        self.vocab = vocab
        if params is None:
            rng = np.random.default_rng(seed)
            params = ParameterSet()
            params.update(init_encoder_params(cfg.encoder, len(vocab), rng))
            params.update(init_fusion_params(cfg.encoder.d1, cfg.d2, rng, cfg.fusion.tie_weights))
            params.update(init_head_params(cfg.encoder.d1, rng, cfg.d_o))
            table = np.zeros((1, cfg.d2)) if entity_vectors is None else np.array(entity_vectors, dtype=float)
            if table.ndim != 2 or table.shape[1] != cfg.d2:
                raise ad.ShapeError(f"entity table {table.shape} does not have d2={cfg.d2} columns")
            params.add("kb.entities", table, requires_grad=cfg.finetune_entities)
        self.params = params

    @property
    def entity_table(self) -> Tensor:
        return self.params["kb.entities"]

    def forward(self, batch: Batch, training: bool = False, rng: np.random.Generator | None = None) -> ForwardResult:
        H = encode_batch(batch.ids, batch.segment_ids, batch.pad_mask, self.params, self.cfg.encoder,
                         training=training, rng=rng)
        # unit-norm KG rows have coordinates ~1/sqrt(d2); rescale to the
        # order of the layer-normed token states before fusing
        ents = ad.take_rows(self.entity_table, batch.entity_ids) * float(np.sqrt(self.cfg.d2))
        fused = fuse(H, ents, batch.entity_mask, self.params, self.cfg.fusion)
        out = token_outputs(H, fused.fused, self.params, batch.passage_mask)
        return ForwardResult(H, fused, out)

    def loss(self, batch: Batch, fwd: ForwardResult) -> tuple[Tensor, LossReport, np.ndarray]:
        """Total loss ``mean_n(L_A,n + lam_n * L_S,n)`` with per-example
        coefficients; returns the scalar, a report of batch means, and the
        coefficient of every example."""
        out = fwd.outputs
        la = answer_loss(out.log_p_start, out.log_p_end, batch.starts, batch.ends, batch.passage_mask,
                         per_example=True)
        ls = support_loss(out.p_support, batch.support_labels, batch.pad_mask, per_example=True)
        if "no-lambda" in self.cfg.ablate:
            lam = Tensor(np.ones(batch.size, dtype=la.dtype))
        else:
            h_su, o_sp, o_st, o_ed = pooled_reps(out.o, batch.support_region, batch.answer_region,
                                                 batch.starts, batch.ends, self.params["heads.v_pool"])
            lam = dynamic_lambda(h_su, o_st, o_ed, o_sp, self.params["heads.W_H"],
                                 detach=self.cfg.detach_lambda).lam
        total = (la + lam * ls).mean()
        report = LossReport(
            answer=float(la.data.mean()),
            support=float(ls.data.mean()),
            lam=float(lam.data.mean()),
            total=float(total.data),
            batch_size=batch.size,
            seq_len=batch.seq_len,
        )
        return total, report, lam.data.copy()
