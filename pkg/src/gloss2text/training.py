"""Training loop: Adam with Noam warmup, label-smoothed loss, token batching,
half-epoch dev evaluation with early stopping, and multi-seed aggregation.

Dev BLEU-4 under greedy decoding is the early-stopping metric; the best
checkpoint by that metric is returned and written per improvement.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import kernels
from .corpus import SentencePair, Vocabulary, encode
from .errors import ConfigError, ContractError, NumericError
from .model import TransformerModel


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 0.5
    warmup_steps: int = 3000
    batch_tokens: int = 2048
    batch_sentences: int | None = None  # when set, batch by sentence count instead
    label_smoothing: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.998
    adam_eps: float = 1e-8
    patience: int = 5
    max_epochs: int = 100
    seed: int = 1

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_tokens < 1:
            raise ConfigError("batch_tokens must be >= 1")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must be in [0, 1)")


def noam_lr(step: int, initial_lr: float, d_model: int, warmup_steps: int) -> float:
    """Linear warmup to step == warmup_steps, then inverse-sqrt decay."""
    if step < 1:
        raise ContractError(f"schedule step must be >= 1, got {step}")
    return initial_lr * d_model ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


class Adam:
    """Standard bias-corrected Adam over a named parameter dict."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.998, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, params: dict[str, ad.Tensor], lr: float) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in params.items():
            grad = p.grad
            if grad is None:
                grad = np.zeros_like(p.data)
            elif not np.all(np.isfinite(grad)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            if name not in self.moments:
                self.moments[name] = (np.zeros_like(p.data, shape=p.size),
                                      np.zeros_like(p.data, shape=p.size))
            m, v = self.moments[name]
            kernels.adam_update(
                p.data.reshape(-1), np.ascontiguousarray(grad.reshape(-1)),
                m, v, lr, self.beta1, self.beta2, self.eps, bc1, bc2,
            )


@dataclass
class EncodedExample:
    id: int
    src_ids: np.ndarray     # no framing; glosses as-is
    tgt_ids: np.ndarray     # bos ... eos
    src_tokens: tuple[str, ...]
    tgt_tokens: tuple[str, ...]


def encode_examples(pairs: list[SentencePair], src_vocab: Vocabulary,
                    tgt_vocab: Vocabulary) -> list[EncodedExample]:
    out = []
    for pair in pairs:
        out.append(EncodedExample(
            id=pair.id,
            src_ids=np.asarray(encode(pair.source, src_vocab), dtype=np.int64),
            tgt_ids=np.asarray(encode(pair.target, tgt_vocab, add_bos_eos=True), dtype=np.int64),
            src_tokens=pair.source,
            tgt_tokens=pair.target,
        ))
    return out


@dataclass
class Batch:
    src: np.ndarray          # [B, T_src] padded with pad id
    tgt: np.ndarray          # [B, T_tgt] padded, bos-led, eos-terminated
    src_allowed: np.ndarray  # [B, T_src] True at real tokens
    ids: list[int]
    src_token_count: int     # unpadded source tokens
    tgt_token_count: int     # unpadded target tokens incl. bos/eos


def _pad_block(rows: list[np.ndarray], pad_id: int) -> np.ndarray:
    width = max(len(r) for r in rows)
    block = np.full((len(rows), width), pad_id, dtype=np.int64)
    for i, r in enumerate(rows):
        block[i, : len(r)] = r
    return block


def make_batches(examples: list[EncodedExample], batch_tokens: int, seed: int,
                 batch_sentences: int | None = None,
                 pad_id: int = Vocabulary.pad_id) -> list[Batch]:
    """Length-bucketed batches: every example appears exactly once, the padded
    target-token count of a batch never exceeds ``batch_tokens`` (or the batch
    holds at most ``batch_sentences`` sentences when that mode is on), and the
    batch order is shuffled by ``seed``."""
    if not examples:
        raise ConfigError("cannot batch an empty corpus")
    longest = max(len(ex.tgt_ids) for ex in examples)
    if batch_sentences is None and longest > batch_tokens:
        raise ContractError(
            f"a sentence of {longest} target tokens exceeds batch_tokens {batch_tokens}"
        )
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed])))
    order = list(rng.permutation(len(examples)))
    # stable sort: similar lengths group together, rng order breaks ties
    order.sort(key=lambda i: (len(examples[i].tgt_ids), len(examples[i].src_ids)))

    groups: list[list[EncodedExample]] = []
    current: list[EncodedExample] = []
    max_tgt = 0
    for i in order:
        ex = examples[i]
        if batch_sentences is not None:
            full = len(current) >= batch_sentences
        else:
            width = max(max_tgt, len(ex.tgt_ids))
            full = current and width * (len(current) + 1) > batch_tokens
        if full:
            groups.append(current)
            current, max_tgt = [], 0
        current.append(ex)
        max_tgt = max(max_tgt, len(ex.tgt_ids))
    if current:
        groups.append(current)
    rng.shuffle(groups)

    batches = []
    for group in groups:
        batches.append(Batch(
            src=_pad_block([ex.src_ids for ex in group], pad_id),
            tgt=_pad_block([ex.tgt_ids for ex in group], pad_id),
            src_allowed=_pad_block(
                [np.ones(len(ex.src_ids), dtype=np.int64) for ex in group], 0
            ).astype(bool),
            ids=[ex.id for ex in group],
            src_token_count=sum(len(ex.src_ids) for ex in group),
            tgt_token_count=sum(len(ex.tgt_ids) for ex in group),
        ))
    return batches


def batch_loss(model: TransformerModel, batch: Batch, label_smoothing: float,
               training: bool = False, rng=None,
               pad_id: int = Vocabulary.pad_id) -> ad.Tensor:
    """Mean label-smoothed cross-entropy per non-pad target position."""
    memory = model.encode_source(batch.src, src_allowed=batch.src_allowed,
                                 training=training, rng=rng)
    tgt_in = batch.tgt[:, :-1]
    gold = batch.tgt[:, 1:]
    logits, _ = model.decode_logits(
        memory, tgt_in,
        src_allowed=batch.src_allowed,
        tgt_allowed=tgt_in != pad_id,
        training=training, rng=rng,
    )
    flat = ad.reshape(logits, (-1, model.config.tgt_vocab_size))
    return ad.cross_entropy_label_smoothed(flat, gold.reshape(-1), label_smoothing, pad_id)


def token_accuracy(model: TransformerModel, batches: list[Batch],
                   pad_id: int = Vocabulary.pad_id) -> float:
    """Teacher-forced argmax accuracy over non-pad target positions."""
    hit = 0
    total = 0
    with ad.no_grad():
        for batch in batches:
            memory = model.encode_source(batch.src, src_allowed=batch.src_allowed)
            tgt_in = batch.tgt[:, :-1]
            gold = batch.tgt[:, 1:]
            logits, _ = model.decode_logits(
                memory, tgt_in, src_allowed=batch.src_allowed, tgt_allowed=tgt_in != pad_id
            )
            pred = logits.data.argmax(axis=-1)
            mask = gold != pad_id
            hit += int((pred[mask] == gold[mask]).sum())
            total += int(mask.sum())
    return hit / total if total else 0.0


@dataclass
class ValidationRecord:
    step: int
    lr: float
    dev_loss: float
    dev_bleu4: float


@dataclass
class TrainLog:
    records: list[ValidationRecord] = field(default_factory=list)
    best_index: int | None = None
    stop_reason: str = ""

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {"step": r.step, "lr": r.lr, "dev_loss": r.dev_loss, "dev_bleu4": r.dev_bleu4},
                sort_keys=True,
            )
            for r in self.records
        ]
        return "\n".join(lines) + ("\n" if lines else "")

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    log: TrainLog
    best_dev_bleu4: float
    checkpoint_paths: list[Path] = field(default_factory=list)


def train(model: TransformerModel, train_examples: list[EncodedExample],
          dev_examples: list[EncodedExample], src_vocab: Vocabulary,
          tgt_vocab: Vocabulary, config: TrainConfig, out_dir=None,
          dev_decode_config=None, quiet: bool = True) -> TrainResult:
    """Optimize the model, evaluating on dev every half-epoch; stop when dev
    BLEU-4 has not improved for ``config.patience`` consecutive evaluations."""
    from . import decoding  # local import: decoding is a consumer of models, not of training

    if not dev_examples:
        raise ConfigError("training requires a non-empty dev split")
    if dev_decode_config is None:
        dev_decode_config = decoding.DecodeConfig(beam_width=1)

    adam = Adam(config.adam_beta1, config.adam_beta2, config.adam_eps)
    drop_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([config.seed, 777])))
    dev_refs = [list(ex.tgt_tokens) for ex in dev_examples]

    log = TrainLog()
    result = TrainResult(best_state=model.state_arrays(), log=log, best_dev_bleu4=-1.0)
    step = 0
    evals_since_best = 0
    out_dir = Path(out_dir) if out_dir is not None else None

    def evaluate_now() -> tuple[float, float]:
        from .metrics import bleu

        dev_batches = make_batches(dev_examples, config.batch_tokens, seed=0,
                                   batch_sentences=config.batch_sentences)
        with ad.no_grad():
            losses = [
                (batch_loss(model, b, config.label_smoothing).item(), b.tgt_token_count)
                for b in dev_batches
            ]
        dev_loss = sum(l * n for l, n in losses) / sum(n for _, n in losses)
        hyps = decoding.translate_examples(model, dev_examples, src_vocab, tgt_vocab,
                                           dev_decode_config)
        score, _ = bleu([h.split() for h in hyps], dev_refs, max_n=4)
        return dev_loss, score

    for epoch in range(config.max_epochs):
        batches = make_batches(
            train_examples, config.batch_tokens,
            seed=int(np.random.SeedSequence([config.seed, epoch]).generate_state(1)[0]),
            batch_sentences=config.batch_sentences,
        )
        eval_points = {math.ceil(len(batches) / 2) - 1, len(batches) - 1}
        for bi, batch in enumerate(batches):
            step += 1
            lr = noam_lr(step, config.initial_lr, model.config.d_model, config.warmup_steps)
            model.zero_grads()
            loss = batch_loss(model, batch, config.label_smoothing, training=True, rng=drop_rng)
            loss.backward()
            adam.step(model.params, lr)

            if bi in eval_points:
                dev_loss, dev_bleu = evaluate_now()
                log.records.append(ValidationRecord(step, lr, dev_loss, dev_bleu))
                if not quiet:
                    print(f"step {step}  lr {lr:.3e}  dev_loss {dev_loss:.4f}  "
                          f"dev_bleu4 {dev_bleu:.2f}")
                if dev_bleu > result.best_dev_bleu4:
                    result.best_dev_bleu4 = dev_bleu
                    result.best_state = model.state_arrays()
                    log.best_index = len(log.records) - 1
                    evals_since_best = 0
                    if out_dir is not None:
                        from .checkpoint import save_checkpoint

                        path = out_dir / f"checkpoint_step{step:06d}_bleu{dev_bleu:.2f}.ckpt"
                        save_checkpoint(path, model, src_vocab, tgt_vocab,
                                        extra={"step": step, "dev_bleu4": dev_bleu})
                        result.checkpoint_paths.append(path)
                else:
                    evals_since_best += 1
                    if evals_since_best >= config.patience:
                        log.stop_reason = f"early_stopping(patience={config.patience})"
                        return result
    log.stop_reason = "max_epochs"
    return result


@dataclass
class MultiSeedReport:
    per_seed: dict[int, dict[str, float]]
    mean: dict[str, float]
    std: dict[str, float]

    def to_json(self) -> str:
        return json.dumps(
            {"per_seed": {str(k): v for k, v in self.per_seed.items()},
             "mean": self.mean, "std": self.std},
            sort_keys=True, indent=2,
        ) + "\n"


def multi_seed_run(seeds: list[int], run_one) -> MultiSeedReport:
    """Run ``run_one(seed) -> dict[str, float]`` per seed and aggregate."""
    if not seeds:
        raise ConfigError("seed list is empty")
    per_seed = {seed: run_one(seed) for seed in seeds}
    keys = sorted(next(iter(per_seed.values())))
    mean = {k: statistics.fmean(per_seed[s][k] for s in seeds) for k in keys}
    std = {
        k: (statistics.pstdev(per_seed[s][k] for s in seeds) if len(seeds) > 1 else 0.0)
        for k in keys
    }
    return MultiSeedReport(per_seed=per_seed, mean=mean, std=std)
