"""Two-layer encoder-decoder Transformer on the autodiff core.

Post-norm residual blocks, sinusoidal positions, scaled embeddings, optional
tying of the decoder input embedding and the output projection (one shared
matrix), and loading of pretrained word vectors with an optional trainable
projection when their dimension differs from d_model.

The model operates on id matrices of shape [batch, time]; the per-sentence
entry points (encode_source on a 1-d array, decode_step) wrap batch size 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .corpus import Vocabulary
from .errors import ConfigError, ContractError, VectorParseError


@dataclass(frozen=True)
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    num_layers: int = 2
    d_model: int = 512
    num_heads: int = 8
    ffn_dim: int = 2048
    dropout: float = 0.1
    tie_decoder_embeddings: bool = False
    max_positions: int = 512

    def __post_init__(self):
        if self.d_model % self.num_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by num_heads {self.num_heads}"
            )
        for name in ("src_vocab_size", "tgt_vocab_size", "num_layers", "d_model",
                     "num_heads", "ffn_dim", "max_positions"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return {
            "src_vocab_size": self.src_vocab_size,
            "tgt_vocab_size": self.tgt_vocab_size,
            "num_layers": self.num_layers,
            "d_model": self.d_model,
            "num_heads": self.num_heads,
            "ffn_dim": self.ffn_dim,
            "dropout": self.dropout,
            "tie_decoder_embeddings": self.tie_decoder_embeddings,
            "max_positions": self.max_positions,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class AttentionTrace:
    """Cross-attention weights for one decoding step."""
    per_head: np.ndarray  # [heads, T_src]
    averaged: np.ndarray  # [T_src]


@dataclass
class EmbeddingCoverage:
    matched: int
    total: int
    vector_dim: int
    projected: bool

    @property
    def percent(self) -> float:
        return 100.0 * self.matched / self.total if self.total else 0.0


def positional_encoding(length: int, d_model: int, max_positions: int | None = None,
                        dtype=np.float32) -> np.ndarray:
    """Sinusoidal table: PE[p, 2i] = sin(p / 10000^(2i/d)), odd columns cos."""
    if max_positions is not None and length > max_positions:
        raise ContractError(f"sequence length {length} exceeds max_positions {max_positions}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    even = np.arange(0, d_model, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, even / d_model)
    pe = np.zeros((length, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : d_model // 2])
    return pe.astype(dtype)


def causal_mask(t: int) -> np.ndarray:
    return np.tril(np.ones((t, t), dtype=bool))


def multi_head_attention(params: dict, prefix: str, q_in, k_in, v_in, num_heads: int,
                         allowed=None, dropout_rate: float = 0.0, training: bool = False,
                         rng=None):
    """Scaled dot-product attention over ``num_heads`` heads.

    q_in/k_in/v_in are [B, T, d] tensors; ``allowed`` is a boolean mask
    broadcastable to [B, heads, T_q, T_k] where True marks attendable
    positions. Returns (output [B, T_q, d], weights ndarray [B, heads, T_q, T_k]).
    """
    d = q_in.shape[-1]
    dh = d // num_heads

    def heads(x, name):
        y = ad.add(ad.matmul(x, params[f"{prefix}.w{name}"]), params[f"{prefix}.b{name}"])
        y = ad.reshape(y, (y.shape[0], y.shape[1], num_heads, dh))
        return ad.transpose(y, (0, 2, 1, 3))  # [B, h, T, dh]

    q = heads(q_in, "q")
    k = heads(k_in, "k")
    v = heads(v_in, "v")
    scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
    if allowed is None:
        weights = ad.softmax(scores)
    else:
        weights = ad.masked_softmax(scores, allowed)
    attended = ad.dropout(weights, dropout_rate, training, rng)
    ctx = ad.matmul(attended, v)  # [B, h, Tq, dh]
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (ctx.shape[0], scores.shape[2], d))
    out = ad.add(ad.matmul(ctx, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])
    return out, weights.data


class TransformerModel:
    def __init__(self, config: ModelConfig, seed: int = 0, init: bool = True,
                 dtype=np.float32):
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.params: dict[str, ad.Tensor] = {}
        if init:
            self._initialize(np.random.Generator(np.random.Philox(seed)))

    # -- parameters ---------------------------------------------------------

    def _add(self, name: str, data: np.ndarray) -> None:
        self.params[name] = ad.Tensor(data.astype(self.dtype), requires_grad=True, name=name)

    def _xavier(self, rng, fan_in: int, fan_out: int) -> np.ndarray:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    def _initialize(self, rng) -> None:
        cfg = self.config
        d = cfg.d_model
        self._add("src_embed", rng.normal(0.0, d ** -0.5, size=(cfg.src_vocab_size, d)))
        self._add("tgt_embed", rng.normal(0.0, d ** -0.5, size=(cfg.tgt_vocab_size, d)))
        if not cfg.tie_decoder_embeddings:
            self._add("out_proj", self._xavier(rng, d, cfg.tgt_vocab_size))
        self._add("out_bias", np.zeros(cfg.tgt_vocab_size))
        for stack, blocks in (("enc", ("self",)), ("dec", ("self", "cross"))):
            for layer in range(cfg.num_layers):
                base = f"{stack}.{layer}"
                for block in blocks:
                    for mat in ("q", "k", "v", "o"):
                        self._add(f"{base}.{block}.w{mat}", self._xavier(rng, d, d))
                        self._add(f"{base}.{block}.b{mat}", np.zeros(d))
                self._add(f"{base}.ffn.w1", self._xavier(rng, d, cfg.ffn_dim))
                self._add(f"{base}.ffn.b1", np.zeros(cfg.ffn_dim))
                self._add(f"{base}.ffn.w2", self._xavier(rng, cfg.ffn_dim, d))
                self._add(f"{base}.ffn.b2", np.zeros(d))
                norms = 3 if stack == "dec" else 2
                for i in range(1, norms + 1):
                    self._add(f"{base}.ln{i}.gain", np.ones(d))
                    self._add(f"{base}.ln{i}.bias", np.zeros(d))

    def parameters(self) -> dict[str, ad.Tensor]:
        return self.params

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        self.params = {
            k: ad.Tensor(v.astype(self.dtype), requires_grad=True, name=k)
            for k, v in state.items()
        }

    # -- building blocks ----------------------------------------------------

    def _embed(self, table_name: str, ids: np.ndarray, training: bool, rng,
               scale: bool = True) -> ad.Tensor:
        cfg = self.config
        t = ids.shape[-1]
        if t > cfg.max_positions:
            raise ContractError(f"sequence length {t} exceeds max_positions {cfg.max_positions}")
        x = ad.embedding(self.params[table_name], ids)
        proj = self.params.get(f"{table_name}_proj")
        if proj is not None:
            x = ad.matmul(x, proj)
        if scale:
            x = x * math.sqrt(cfg.d_model)
        if t:
            x = x + ad.Tensor(positional_encoding(t, cfg.d_model, dtype=self.dtype))
        return ad.dropout(x, cfg.dropout, training, rng)

    def _sublayer(self, base: str, idx: int, x: ad.Tensor, out: ad.Tensor,
                  training: bool, rng) -> ad.Tensor:
        out = ad.dropout(out, self.config.dropout, training, rng)
        return ad.layer_norm(
            ad.add(x, out),
            self.params[f"{base}.ln{idx}.gain"],
            self.params[f"{base}.ln{idx}.bias"],
        )

    def _ffn(self, base: str, x: ad.Tensor) -> ad.Tensor:
        p = self.params
        h = ad.relu(ad.add(ad.matmul(x, p[f"{base}.ffn.w1"]), p[f"{base}.ffn.b1"]))
        return ad.add(ad.matmul(h, p[f"{base}.ffn.w2"]), p[f"{base}.ffn.b2"])

    # -- forward ------------------------------------------------------------

    def encode_source(self, src_ids: np.ndarray, src_allowed: np.ndarray | None = None,
                      training: bool = False, rng=None) -> ad.Tensor:
        """Encoder stack over [B, T_src] ids (or a single [T_src] sentence)."""
        src_ids = np.asarray(src_ids)
        single = src_ids.ndim == 1
        if single:
            src_ids = src_ids[None, :]
        if src_ids.shape[-1] == 0:
            raise ContractError("encode_source needs a non-empty source")
        x = self._embed("src_embed", src_ids, training, rng)
        attend = None
        if src_allowed is not None:
            attend = src_allowed[:, None, None, :]  # keys masked per batch row
        for layer in range(self.config.num_layers):
            base = f"enc.{layer}"
            out, _ = multi_head_attention(
                self.params, f"{base}.self", x, x, x, self.config.num_heads,
                allowed=attend, dropout_rate=self.config.dropout, training=training, rng=rng,
            )
            x = self._sublayer(base, 1, x, out, training, rng)
            x = self._sublayer(base, 2, x, self._ffn(base, x), training, rng)
        if single:
            return ad.reshape(x, x.shape[1:])
        return x

    def _output_logits(self, x: ad.Tensor) -> ad.Tensor:
        p = self.params
        if self.config.tie_decoder_embeddings:
            e = p["tgt_embed"]
            proj = p.get("tgt_embed_proj")
            if proj is not None:
                e = ad.matmul(e, proj)
            logits = ad.matmul(x, ad.transpose(e, (1, 0)))
        else:
            logits = ad.matmul(x, p["out_proj"])
        return ad.add(logits, p["out_bias"])

    def decode_logits(self, memory: ad.Tensor, tgt_ids: np.ndarray,
                      src_allowed: np.ndarray | None = None,
                      tgt_allowed: np.ndarray | None = None,
                      training: bool = False, rng=None):
        """Decoder stack over [B, T_tgt] prefix ids against [B, T_src, d] memory.

        Returns (logits [B, T_tgt, V], cross-attention weights of the final
        layer as an ndarray [B, heads, T_tgt, T_src]).
        """
        tgt_ids = np.asarray(tgt_ids)
        if memory.ndim == 2:
            memory = ad.reshape(memory, (1, *memory.shape))
        t = tgt_ids.shape[-1]
        x = self._embed("tgt_embed", tgt_ids, training, rng)
        self_allowed = causal_mask(t)[None, None, :, :]
        if tgt_allowed is not None:
            self_allowed = self_allowed & tgt_allowed[:, None, None, :]
        cross_allowed = None
        if src_allowed is not None:
            cross_allowed = src_allowed[:, None, None, :]
        cross_weights = None
        for layer in range(self.config.num_layers):
            base = f"dec.{layer}"
            out, _ = multi_head_attention(
                self.params, f"{base}.self", x, x, x, self.config.num_heads,
                allowed=self_allowed, dropout_rate=self.config.dropout,
                training=training, rng=rng,
            )
            x = self._sublayer(base, 1, x, out, training, rng)
            out, cross_weights = multi_head_attention(
                self.params, f"{base}.cross", x, memory, memory, self.config.num_heads,
                allowed=cross_allowed, dropout_rate=self.config.dropout,
                training=training, rng=rng,
            )
            x = self._sublayer(base, 2, x, out, training, rng)
            x = self._sublayer(base, 3, x, self._ffn(base, x), training, rng)
        return self._output_logits(x), cross_weights

    def decode_step(self, memory: ad.Tensor, prefix_ids, bos_id: int | None = None):
        """Next-token logits after a bos-led prefix, plus the final-layer
        cross-attention trace for that step (feeds unk replacement)."""
        prefix = np.asarray(prefix_ids)
        if prefix.ndim != 1 or prefix.size == 0:
            raise ContractError("decode_step needs a non-empty 1-d prefix")
        if bos_id is not None and prefix[0] != bos_id:
            raise ContractError("decoder prefix must begin with bos")
        if prefix.size > self.config.max_positions:
            raise ContractError(
                f"prefix length {prefix.size} exceeds max_positions {self.config.max_positions}"
            )
        logits, cross = self.decode_logits(memory, prefix[None, :])
        step_weights = cross[0, :, -1, :]
        trace = AttentionTrace(per_head=step_weights, averaged=step_weights.mean(axis=0))
        return ad.Tensor(logits.data[0, -1]), trace


def read_word_vectors(path):
    """Textual word2vec layout: optional ``count dim`` first line, then one
    ``word v1 .. vd`` line per entry. Returns (dict word -> ndarray, dim)."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            fields = line.rstrip("\n").split()
            if not fields:
                continue
            if lineno == 1 and len(fields) == 2:
                try:
                    int(fields[0]), int(fields[1])
                    continue  # header line
                except ValueError:
                    pass
            word, values = fields[0], fields[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim or dim == 0:
                raise VectorParseError(f"line {lineno}: expected {dim} values, got {len(values)}")
            try:
                vectors[word] = np.asarray([float(v) for v in values], dtype=np.float32)
            except ValueError as exc:
                raise VectorParseError(f"line {lineno}: non-numeric vector value") from exc
    if dim is None:
        raise VectorParseError("vector file holds no vectors")
    return vectors, dim


def load_pretrained_embeddings(model: TransformerModel, vectors_path, side: str,
                               vocab: Vocabulary) -> EmbeddingCoverage:
    """Overwrite embedding rows for vocabulary tokens found in the vector file.

    Matching is exact (case-sensitive). Unmatched rows keep their random
    initialization. When the vector dimension differs from d_model, the
    embedding table is rebuilt at the vector dimension and a trainable linear
    projection up to d_model is inserted after lookup.
    """
    if side not in ("encoder", "decoder"):
        raise ConfigError(f"side must be 'encoder' or 'decoder', got {side!r}")
    vectors, dim = read_word_vectors(vectors_path)
    table_name = "src_embed" if side == "encoder" else "tgt_embed"
    cfg = model.config
    vocab_size = cfg.src_vocab_size if side == "encoder" else cfg.tgt_vocab_size
    if len(vocab) != vocab_size:
        raise ConfigError(
            f"vocabulary size {len(vocab)} does not match model {side} size {vocab_size}"
        )

    projected = dim != cfg.d_model
    if projected:
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence([model.seed, 0 if side == "encoder" else 1, 97])
        ))
        table = rng.normal(0.0, dim ** -0.5, size=(vocab_size, dim)).astype(np.float32)
        model.params[table_name] = ad.Tensor(table, requires_grad=True, name=table_name)
        model._add(f"{table_name}_proj", model._xavier(rng, dim, cfg.d_model))
    table = model.params[table_name].data

    matched = 0
    total = 0
    for idx, token in enumerate(vocab.id_to_token):
        if idx < 4:
            continue  # specials never come from vector files
        total += 1
        vec = vectors.get(token)
        if vec is not None:
            table[idx] = vec
            matched += 1
    return EmbeddingCoverage(matched=matched, total=total, vector_dim=dim, projected=projected)
