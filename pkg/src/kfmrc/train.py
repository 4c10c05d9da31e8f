"""Training loop, evaluation and single-example prediction."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import QuadRecord
from .decode import Prediction, decode_answer, decode_support
from .encoder import EncoderConfig, Vocabulary
from .features import Example, collate, featurize
from .fusion import FusionConfig
from .kg import KnowledgeBase
from .metrics import MetricReport, classify_error, em_score, f1_score
from .model import KnowledgeMRC, ModelConfig
from .retrieval import RetrievalConfig

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "Adam",
    "TrainingDiverged",
    "TrainResult",
    "build_vocab",
    "train",
    "save_model",
    "load_model",
    "evaluate",
    "predict",
]


@dataclass
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 16
    epochs: int = 2
    steps: int | None = None
    max_seq_len: int = 512
    seed: int = 0
    d1: int = 64
    d2: int = 64
    layers: int = 2
    heads: int = 4
    ff: int = 128
    dropout: float = 0.0
    loops: int = 2
    gate: str = "sigmoid-tanh"
    tie_weights: bool = False
    edit_threshold: int = 2
    overlap_ratio: float = 0.5
    kmax: int = 8
    ablate: tuple[str, ...] = ()
    detach_lambda: bool = False
    finetune_entities: bool = False
    enforce_containment: bool = False
    max_answer_len: int = 40
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dtype: str = "float64"

    def __post_init__(self):
        self.ablate = tuple(sorted(set(self.ablate)))
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0 or (self.steps is not None and self.steps < 0):
            raise ValueError("lr, epochs and steps must be non-negative and batch_size positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            encoder=EncoderConfig(self.d1, self.layers, self.heads, self.ff, self.dropout, self.max_seq_len),
            d2=self.d2,
            fusion=FusionConfig(self.loops, self.gate, self.tie_weights),
            ablate=self.ablate,
            detach_lambda=self.detach_lambda,
            finetune_entities=self.finetune_entities,
        )

    def retrieval_config(self) -> RetrievalConfig:
        return RetrievalConfig(self.edit_threshold, self.overlap_ratio, self.kmax)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablate"] = list(self.ablate)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: (tuple(v) if k == "ablate" else v) for k, v in d.items() if k in known})


class Adam:
    def __init__(self, params: ParameterSet, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.trainable()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.trainable()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.trainable():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, last_good: dict[str, np.ndarray], message: str):
        super().__init__(f"loss became non-finite at step {step}: {message}")
        self.step = step
        self.last_good = last_good


@dataclass
class TrainResult:
    model: KnowledgeMRC
    config: TrainConfig
    kb: KnowledgeBase | None
    log: list[dict] = field(default_factory=list)
    step: int = 0


def build_vocab(records: Iterable[QuadRecord]) -> Vocabulary:
    texts = []
    for r in records:
        texts += [r.question, r.passage]
    return Vocabulary.from_texts(texts)


def _features(records: Sequence[QuadRecord], vocab: Vocabulary, kb: KnowledgeBase | None,
              cfg: TrainConfig) -> list[Example]:
    rcfg = cfg.retrieval_config()
    return [featurize(r, vocab, kb, rcfg, cfg.max_seq_len) for r in records]


def train(records: Sequence[QuadRecord], kb: KnowledgeBase | None, entity_vectors: np.ndarray | None,
          cfg: TrainConfig, vocab: Vocabulary | None = None, checkpoint_dir=None) -> TrainResult:
    """Mini-batch Adam on ``L_A + lambda * L_S``.

    Runs ``cfg.steps`` optimizer steps if set, else ``cfg.epochs`` passes.
    Examples whose answer falls outside the truncated passage are skipped.
    """
    ad.set_default_dtype(cfg.dtype)
    vocab = vocab or build_vocab(records)
    examples = [ex for ex in _features(records, vocab, kb, cfg) if ex.has_gold]
    if not examples:
        raise ValueError("no trainable examples")
    vectors = None if entity_vectors is None else np.asarray(entity_vectors, dtype=cfg.dtype)
    model = KnowledgeMRC(cfg.model_config(), vocab, vectors, seed=cfg.seed)
    for t in model.params.values():
        t.data = t.data.astype(cfg.dtype)
    opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    drop_rng = np.random.default_rng([cfg.seed, 7])
    n_batches = -(-len(examples) // cfg.batch_size)
    total_steps = cfg.steps if cfg.steps is not None else cfg.epochs * n_batches
    result = TrainResult(model, cfg, kb)
    step = 0
    while step < total_steps:
        order = rng.permutation(len(examples))
        for b in range(n_batches):
            if step >= total_steps:
                break
            batch = collate([examples[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]])
            last_good = model.params.snapshot()
            try:
                model.params.zero_grad()
                fwd = model.forward(batch, training=True, rng=drop_rng)
                loss, report, lam = model.loss(batch, fwd)
                ad.backward(loss)
            except FloatingPointError as exc:
                for name, arr in last_good.items():
                    model.params[name].data = arr
                if checkpoint_dir is not None:
                    save_model(checkpoint_dir, TrainResult(model, cfg, kb, result.log, step))
                raise TrainingDiverged(step + 1, last_good, str(exc)) from exc
            opt.step()
            step += 1
            entry = {"step": step, **report.as_dict()}
            result.log.append(entry)
            logger.debug("step %d L_A=%.4f L_S=%.4f lambda=%.4f", step, report.answer, report.support, report.lam)
    result.step = step
    if checkpoint_dir is not None:
        save_model(checkpoint_dir, result)
    return result


def _kb_names(kb: KnowledgeBase | None) -> dict:
    if kb is None:
        return {"entities": [], "relations": []}
    return {"entities": kb.entity_names(), "relations": kb.relation_names()}


def save_model(path, result: TrainResult):
    params = result.model.params
    return save_checkpoint(
        path,
        {k: v.data for k, v in params.items()},
        result.config.to_dict(),
        step=result.step,
        vocab=result.model.vocab,
        trainable={k: v.requires_grad for k, v in params.items()},
        extra={"kb": _kb_names(result.kb), "kind": "reader"},
    )


def load_model(path) -> TrainResult:
    ckpt = load_checkpoint(path)
    if ckpt.extra.get("kind") != "reader":
        raise CheckpointError(f"{path} is not a reader checkpoint")
    cfg = TrainConfig.from_dict(ckpt.config)
    ad.set_default_dtype(cfg.dtype)
    params = ParameterSet()
    for name, arr in ckpt.arrays.items():
        params.add(name, arr.copy(), requires_grad=ckpt.trainable.get(name, True))
    model = KnowledgeMRC(cfg.model_config(), ckpt.vocab, params=params)
    names = ckpt.extra.get("kb", {})
    kb = None
    if names.get("entities"):
        kb = KnowledgeBase(entities={n: i for i, n in enumerate(names["entities"])},
                           relations={n: i for i, n in enumerate(names.get("relations", []))})
    return TrainResult(model, cfg, kb, step=ckpt.step)


def _decode(ex: Example, p_start: np.ndarray, p_end: np.ndarray, p_support: np.ndarray,
            cfg: TrainConfig) -> Prediction:
    i, j, score = decode_answer(p_start, p_end, ex.seq.passage_range, cfg.max_answer_len)
    p0, p1 = ex.seq.passage_range
    k, s_score = decode_support(p_support[p0:p1], ex.sentences, (i - p0, j - p0), cfg.enforce_containment)
    return Prediction(i, j, ex.passage_tokens_to_text(i, j), score, k, ex.sentence_packed_range(k),
                      ex.sentence_text(k), s_score)


def _run(model: KnowledgeMRC, examples: list[Example], cfg: TrainConfig, batch_size: int = 32) -> list[Prediction]:
    preds = []
    with ad.no_grad():
        for b in range(0, len(examples), batch_size):
            chunk = examples[b:b + batch_size]
            out = model.forward(collate(chunk, with_gold=False)).outputs
            ps, pe, psup = out.p_start, out.p_end, out.p_support.data
            for n, ex in enumerate(chunk):
                T = len(ex.seq)
                preds.append(_decode(ex, ps[n, :T], pe[n, :T], psup[n, :T], cfg))
    return preds


def _incl(rng: tuple[int, int]) -> tuple[int, int]:
    return rng[0], rng[1] - 1


def evaluate(result: TrainResult, records: Sequence[QuadRecord]) -> MetricReport:
    cfg = result.config
    examples = _features(records, result.model.vocab, result.kb, cfg)
    rows = []
    for ex, pred in zip(examples, _run(result.model, examples, cfg)):
        rec = ex.record
        gold_support = rec.support_text()
        if ex.start is not None:
            error = classify_error((pred.start, pred.end), (ex.start, ex.end))
        else:
            error = "other"
        if ex.support_sentence is not None:
            s_err = classify_error(_incl(pred.support_range), _incl(ex.sentence_packed_range(ex.support_sentence)))
        else:
            s_err = "other"
        rows.append({
            "id": rec.id,
            "prediction": pred.answer,
            "support_prediction": pred.support,
            "answer_em": em_score(pred.answer, rec.references),
            "answer_f1": f1_score(pred.answer, rec.references),
            "support_em": em_score(pred.support, [gold_support]),
            "support_f1": f1_score(pred.support, [gold_support]),
            "error": error,
            "support_error": s_err,
        })
    return MetricReport.from_rows(rows)


def predict(result: TrainResult, question: str, passage: str) -> Prediction:
    rec = QuadRecord(id="query", question=question, passage=passage, answer_text="", answer_start=0,
                     answer_end=0, support_index=0)
    ex = featurize(rec, result.model.vocab, result.kb, result.config.retrieval_config(), result.config.max_seq_len)
    return _run(result.model, [ex], result.config)[0]

