"""Greedy, beam, and ensemble decoding with attention-based unk replacement.

Scoring is done in the probability domain: each member model's logits go
through softmax, ensembles average the member distributions elementwise, and
the step log-probability is the log of that (averaged) distribution. A single
model is the one-member case of the same code path, which makes an ensemble
of identical members decode bit-for-bit like the single model.

Beam search keeps the ``beam_width`` best candidates per step under the
length-normalized score; hypotheses that emit eos retire into a completed
pool, and anything still alive at ``max_length`` is truncated into the pool
so at least one hypothesis always comes back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .corpus import SentencePair, Vocabulary, decode
from .errors import ConfigError, ContractError
from .model import TransformerModel
from .training import EncodedExample, encode_examples


@dataclass(frozen=True)
class DecodeConfig:
    beam_width: int = 4
    max_length: int | None = None   # None: 1.5 * source length + 5, capped
    length_norm_alpha: float = 1.0  # score / length^alpha
    replace_unk: bool = True

    def __post_init__(self):
        if self.beam_width < 1:
            raise ConfigError("beam_width must be >= 1")
        if self.max_length is not None and self.max_length < 1:
            raise ConfigError("max_length must be >= 1")


@dataclass
class Hypothesis:
    ids: list[int]                            # bos-led token ids
    logprob: float
    attention: list[np.ndarray] = field(default_factory=list)  # one vector per generated token
    finished: bool = False

    def generated(self, eos_id: int = Vocabulary.eos_id) -> list[int]:
        out = self.ids[1:]
        if self.finished and out and out[-1] == eos_id:
            out = out[:-1]
        return out

    def length(self) -> int:
        return len(self.ids) - 1

    def normalized_score(self, alpha: float) -> float:
        return self.logprob / max(1, self.length()) ** alpha


@dataclass
class Ensemble:
    models: list[TransformerModel]

    def __post_init__(self):
        if not self.models:
            raise ConfigError("ensemble needs at least one model")
        sizes = {m.config.tgt_vocab_size for m in self.models}
        if len(sizes) != 1:
            raise ConfigError(f"ensemble members disagree on target vocab size: {sorted(sizes)}")


def _as_members(model_or_ensemble) -> list[TransformerModel]:
    if isinstance(model_or_ensemble, Ensemble):
        return model_or_ensemble.models
    return [model_or_ensemble]


def average_distributions(distributions: list[np.ndarray]) -> np.ndarray:
    """Elementwise arithmetic mean of probability arrays.

    Computed as ref + mean(deviation from ref) so identical members average
    to the reference bit-for-bit."""
    ref = distributions[0]
    if len(distributions) == 1:
        return ref
    dev = np.zeros_like(ref)
    for p in distributions[1:]:
        dev += p - ref
    return ref + dev / len(distributions)


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    return kernels.softmax_rows(np.ascontiguousarray(x))


class _Stepper:
    """Per-sentence decoding state: one memory per member model."""

    def __init__(self, model_or_ensemble, src_ids: np.ndarray):
        self.members = _as_members(model_or_ensemble)
        self.src_len = len(src_ids)
        with ad.no_grad():
            self.memories = [m.encode_source(np.asarray(src_ids)) for m in self.members]
        self.max_positions = min(m.config.max_positions for m in self.members)

    def step_batch(self, prefixes: np.ndarray):
        """Distribution over the next token for each prefix row.

        Returns (probs [W, V], attention [W, T_src]) where attention is the
        head-averaged final-layer cross-attention of the last position,
        averaged over ensemble members."""
        all_probs = []
        all_attn = []
        with ad.no_grad():
            for model, memory in zip(self.members, self.memories):
                mem3 = ad.reshape(memory, (1, *memory.shape))
                logits, cross = model.decode_logits(mem3, prefixes)
                all_probs.append(_softmax_rows(logits.data[:, -1, :]))
                all_attn.append(cross[:, :, -1, :].mean(axis=1))
        return average_distributions(all_probs), average_distributions(all_attn)


def ensemble_distribution(ensemble, memories: list, prefix: np.ndarray) -> np.ndarray:
    """Mean of the member models' next-token distributions for one prefix."""
    members = _as_members(ensemble)
    if len(memories) != len(members):
        raise ConfigError(f"{len(members)} models but {len(memories)} memories")
    probs = []
    with ad.no_grad():
        for model, memory in zip(members, memories):
            logits, _ = model.decode_step(memory, prefix)
            probs.append(_softmax_rows(logits.data[None, :])[0])
    return average_distributions(probs)


def _resolve_max_length(config: DecodeConfig, src_len: int, max_positions: int) -> int:
    if config.max_length is not None:
        length = config.max_length
    else:
        length = int(1.5 * src_len) + 5
    return max(1, min(length, max_positions - 1))


def greedy_decode(model_or_ensemble, src_ids, config: DecodeConfig = DecodeConfig()) -> Hypothesis:
    """Argmax token per step (ties to the lowest id) until eos or max_length."""
    stepper = _Stepper(model_or_ensemble, src_ids)
    max_length = _resolve_max_length(config, stepper.src_len, stepper.max_positions)
    hyp = Hypothesis(ids=[Vocabulary.bos_id], logprob=0.0)
    for _ in range(max_length):
        probs, attn = stepper.step_batch(np.asarray([hyp.ids], dtype=np.int64))
        token = int(np.argmax(probs[0]))
        hyp.ids.append(token)
        hyp.logprob += float(np.log(probs[0, token]))
        hyp.attention.append(attn[0])
        if token == Vocabulary.eos_id:
            hyp.finished = True
            break
    return hyp


def beam_search(model_or_ensemble, src_ids,
                config: DecodeConfig = DecodeConfig()) -> list[Hypothesis]:
    """Standard beam search over the full vocabulary, ranked by
    score / length^alpha; returns the completed pool, best first."""
    stepper = _Stepper(model_or_ensemble, src_ids)
    max_length = _resolve_max_length(config, stepper.src_len, stepper.max_positions)
    alpha = config.length_norm_alpha
    live = [Hypothesis(ids=[Vocabulary.bos_id], logprob=0.0)]
    pool: list[Hypothesis] = []
    for t in range(max_length):
        prefixes = np.asarray([h.ids for h in live], dtype=np.int64)
        probs, attn = stepper.step_batch(prefixes)
        with np.errstate(divide="ignore"):
            step_logp = np.log(probs)
        scores = np.asarray([h.logprob for h in live])[:, None] + step_logp
        normalized = scores / (t + 1) ** alpha
        flat = normalized.ravel()
        keep = min(config.beam_width, flat.size)
        chosen = np.lexsort((np.arange(flat.size), -flat))[:keep]
        vocab_size = probs.shape[1]
        next_live = []
        for idx in chosen:
            parent, token = divmod(int(idx), vocab_size)
            h = live[parent]
            child = Hypothesis(
                ids=h.ids + [token],
                logprob=h.logprob + float(step_logp[parent, token]),
                attention=h.attention + [attn[parent]],
                finished=token == Vocabulary.eos_id,
            )
            (pool if child.finished else next_live).append(child)
        live = next_live
        if not live:
            break
    pool.extend(live)  # length-capped leftovers guarantee a non-empty result
    pool.sort(key=lambda h: (-h.normalized_score(alpha), h.length(), tuple(h.ids)))
    return pool


def replace_unk(hypothesis: Hypothesis, source_tokens, tgt_vocab: Vocabulary,
                enabled: bool = True) -> list[str]:
    """Render a hypothesis as tokens, substituting each generated unk with the
    source token under the argmax of that step's cross-attention vector."""
    generated = hypothesis.generated()
    tokens = []
    for pos, token_id in enumerate(generated):
        if enabled and token_id == Vocabulary.unk_id:
            if pos >= len(hypothesis.attention):
                raise ContractError("hypothesis carries no attention trace for unk replacement")
            weights = hypothesis.attention[pos][: len(source_tokens)]
            tokens.append(source_tokens[int(np.argmax(weights))])
        else:
            tokens.append(tgt_vocab.token(token_id))
    return tokens


def translate_examples(model_or_ensemble, examples: list[EncodedExample],
                       src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                       config: DecodeConfig = DecodeConfig()) -> list[str]:
    """One detokenized hypothesis per example, order preserved."""
    out = []
    for ex in examples:
        best = beam_search(model_or_ensemble, ex.src_ids, config)[0]
        if config.replace_unk:
            tokens = replace_unk(best, ex.src_tokens, tgt_vocab)
        else:
            tokens = decode(best.generated(), tgt_vocab, strip_specials=True)
        out.append(" ".join(tokens))
    return out


def translate_corpus(model_or_ensemble, pairs: list[SentencePair], src_vocab: Vocabulary,
                     tgt_vocab: Vocabulary, config: DecodeConfig = DecodeConfig()) -> list[str]:
    return translate_examples(model_or_ensemble, encode_examples(pairs, src_vocab, tgt_vocab),
                              src_vocab, tgt_vocab, config)
