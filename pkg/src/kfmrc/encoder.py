"""Character tokenizer, question/passage packing and a small transformer encoder."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor

__all__ = [
    "CLS", "SEP", "PAD", "UNK", "RESERVED",
    "Vocabulary",
    "split_tokens",
    "tokenize",
    "EncodedSequence",
    "EncoderConfig",
    "pack",
    "init_encoder_params",
    "encode_batch",
    "encode",
]

CLS, SEP, PAD, UNK = 0, 1, 2, 3
RESERVED = ("[CLS]", "[SEP]", "[PAD]", "[UNK]")


def _is_ascii_alnum(ch: str) -> bool:
    return ch.isascii() and ch.isalnum()


def split_tokens(text: str) -> list[tuple[str, int, int]]:
    """Split into ``(token, char_start, char_end)``.

    Each non-space character is its own token, except that runs of ASCII
    letters and digits form a single token. Whitespace produces no token.
    """
    out = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif _is_ascii_alnum(ch):
            j = i + 1
            while j < n and _is_ascii_alnum(text[j]):
                j += 1
            out.append((text[i:j], i, j))
            i = j
        else:
            out.append((ch, i, i + 1))
            i += 1
    return out


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            idx = self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return idx

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        vocab = cls()
        for text in texts:
            for tok, _, _ in split_tokens(text):
                vocab.add(tok)
        return vocab

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for tok in self.itos[len(RESERVED):]:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return [vocab.id(tok) for tok, _, _ in split_tokens(text)]


@dataclass
class EncoderConfig:
    d1: int = 64
    layers: int = 2
    heads: int = 4
    ff: int = 128
    dropout: float = 0.0
    max_seq_len: int = 512

    def __post_init__(self):
        if self.d1 % self.heads:
            raise ValueError(f"d1={self.d1} not divisible by heads={self.heads}")
        if self.max_seq_len < 8:
            raise ValueError("max_seq_len must be at least 8")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class EncodedSequence:
    ids: np.ndarray
    segment_ids: np.ndarray
    positions: np.ndarray
    question_range: tuple[int, int]
    passage_range: tuple[int, int]
    truncated: int = 0
    hidden: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def h_cls(self) -> np.ndarray:
        if self.hidden is None:
            raise ValueError("sequence has not been encoded")
        return self.hidden[0]


def pack(question_ids: Sequence[int], passage_ids: Sequence[int], max_seq_len: int = 512) -> EncodedSequence:
    """Lay out ``[CLS] Q [SEP] P [SEP]``, cutting the passage tail if needed."""
    n, m = len(question_ids), len(passage_ids)
    if n < 1 or m < 1:
        raise ValueError("question and passage must each hold at least one token")
    room = max_seq_len - n - 3
    if room < 1:
        raise ValueError(f"question of {n} tokens leaves no passage room within max_seq_len={max_seq_len}")
    kept = min(m, room)
    ids = np.asarray([CLS, *question_ids, SEP, *passage_ids[:kept], SEP], dtype=np.int64)
    seg = np.ones(len(ids), dtype=np.int64)
    seg[: n + 2] = 0
    return EncodedSequence(
        ids=ids,
        segment_ids=seg,
        positions=np.arange(len(ids), dtype=np.int64),
        question_range=(1, n + 1),
        passage_range=(n + 2, n + 2 + kept),
        truncated=m - kept,
    )


def init_encoder_params(cfg: EncoderConfig, vocab_size: int, rng: np.random.Generator,
                        prefix: str = "enc.") -> ParameterSet:
    d, f = cfg.d1, cfg.ff
    std = 0.02 if d >= 32 else 1.0 / np.sqrt(d)
    ps = ParameterSet()
    ps.add(prefix + "tok", rng.normal(0, std, (vocab_size, d)))
    ps.add(prefix + "pos", rng.normal(0, std, (cfg.max_seq_len, d)))
    ps.add(prefix + "seg", rng.normal(0, std, (2, d)))
    for layer in range(cfg.layers):
        p = f"{prefix}{layer}."
        for name in ("q", "k", "v", "o"):
            ps.add(p + "W" + name, rng.normal(0, 1.0 / np.sqrt(d), (d, d)))
            if name != "k":
                # a key bias shifts every score in a row equally, so softmax ignores it
                ps.add(p + "b" + name, np.zeros(d))
        ps.add(p + "ln1.g", np.ones(d))
        ps.add(p + "ln1.b", np.zeros(d))
        ps.add(p + "W1", rng.normal(0, 1.0 / np.sqrt(d), (d, f)))
        ps.add(p + "b1", np.zeros(f))
        ps.add(p + "W2", rng.normal(0, 1.0 / np.sqrt(f), (f, d)))
        ps.add(p + "b2", np.zeros(d))
        ps.add(p + "ln2.g", np.ones(d))
        ps.add(p + "ln2.b", np.zeros(d))
    return ps


def encode_batch(
    ids: np.ndarray,
    segment_ids: np.ndarray,
    pad_mask: np.ndarray,
    params: ParameterSet,
    cfg: EncoderConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    attn_log: list | None = None,
    prefix: str = "enc.",
) -> Tensor:
    """Hidden states ``(B, T, d1)`` for padded id arrays of shape ``(B, T)``.

    ``pad_mask`` is True on real tokens. Post-LN blocks; dropout only when
    ``training``. If ``attn_log`` is a list, per-layer attention weights are
    appended to it.
    """
    ids = np.asarray(ids)
    B, T = ids.shape
    if T > cfg.max_seq_len:
        raise ValueError(f"sequence length {T} exceeds max_seq_len={cfg.max_seq_len}")
    d, h = cfg.d1, cfg.heads
    dh = d // h
    x = (ad.take_rows(params[prefix + "tok"], ids)
         + ad.take_rows(params[prefix + "pos"], np.broadcast_to(np.arange(T), (B, T)))
         + ad.take_rows(params[prefix + "seg"], segment_ids))
    key_mask = np.asarray(pad_mask, dtype=bool)[:, None, None, :]
    scale = 1.0 / np.sqrt(dh)
    for layer in range(cfg.layers):
        p = f"{prefix}{layer}."

        def heads_of(name):
            y = ad.matmul(x, params[p + "W" + name])
            if name != "k":
                y = y + params[p + "b" + name]
            return y.reshape(B, T, h, dh).transpose(0, 2, 1, 3)

        q, k, v = heads_of("q"), heads_of("k"), heads_of("v")
        scores = ad.matmul(q, k.swapaxes(-1, -2)) * scale
        attn = ad.softmax(scores, axis=-1, mask=key_mask)
        if attn_log is not None:
            attn_log.append(attn.data)
        ctx = ad.matmul(attn, v).transpose(0, 2, 1, 3).reshape(B, T, d)
        out = ad.matmul(ctx, params[p + "Wo"]) + params[p + "bo"]
        out = ad.dropout(out, cfg.dropout, rng, training)
        x = ad.layer_norm(x + out, params[p + "ln1.g"], params[p + "ln1.b"])
        ff = ad.gelu(ad.matmul(x, params[p + "W1"]) + params[p + "b1"])
        ff = ad.matmul(ff, params[p + "W2"]) + params[p + "b2"]
        ff = ad.dropout(ff, cfg.dropout, rng, training)
        x = ad.layer_norm(x + ff, params[p + "ln2.g"], params[p + "ln2.b"])
    return x


def encode(seq: EncodedSequence, params: ParameterSet, cfg: EncoderConfig) -> EncodedSequence:
    """Eval-mode encoding of a single packed sequence."""
    with ad.no_grad():
        H = encode_batch(seq.ids[None], seq.segment_ids[None], np.ones((1, len(seq)), dtype=bool), params, cfg)
    seq.hidden = H.data[0]
    return seq
