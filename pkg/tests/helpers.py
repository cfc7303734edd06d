"""Shared test utilities: finite-difference oracle and synthetic corpora.

The finite-difference gradient here is the independent oracle for every
backward implementation: it only ever calls the forward path.
"""

from __future__ import annotations

import numpy as np

from gloss2text import autodiff as ad
from gloss2text.corpus import ParallelCorpus, SentencePair
from gloss2text.model import ModelConfig, TransformerModel

# deterministic rule-based gloss/text generator in the style of rule-derived
# ASL gloss corpora: glosses are uppercased content words with pronoun (X-)
# and adjective (DESC-) prefix markers, dropped articles, uninflected verbs,
# and a kept sentence-final period
_PRONOUNS = ["i", "you", "we", "they"]
_SINGULAR = ["woman", "man", "child", "minister", "farmer", "student"]
_PLURAL = ["people", "women", "children", "farmers", "students", "ministers"]
_VERBS = ["need", "want", "see", "support", "make", "take", "find", "help"]
_ADJECTIVES = ["good", "great", "important", "strong", "simple", "clear", "new", "fair"]
_OBJECTS = ["water", "bread", "work", "peace", "money", "advice", "time", "music"]
_TIMES = ["today", "tomorrow", "now", "often", "soon"]


def _synthetic_pair(combo: int, pair_id: int) -> SentencePair:
    subjects = _PRONOUNS + _SINGULAR + _PLURAL
    combo, si = divmod(combo, len(subjects))
    combo, vi = divmod(combo, len(_VERBS))
    combo, ai = divmod(combo, len(_ADJECTIVES) * 2)  # half the sentences carry no adjective
    combo, oi = divmod(combo, len(_OBJECTS))
    combo, ti = divmod(combo, len(_TIMES))
    subject = subjects[si]
    verb = _VERBS[vi]
    adjective = _ADJECTIVES[ai] if ai < len(_ADJECTIVES) else None
    obj = _OBJECTS[oi]
    time = _TIMES[ti]

    if subject in _PRONOUNS:
        tgt_subject, src_subject, tgt_verb = [subject], ["X-" + subject.upper()], verb
    elif subject in _SINGULAR:
        tgt_subject, src_subject, tgt_verb = ["the", subject], [subject.upper()], verb + "s"
    else:
        tgt_subject, src_subject, tgt_verb = [subject], [subject.upper()], verb

    tgt_np = [adjective, obj] if adjective else [obj]
    if subject in _SINGULAR:
        tgt_np = ["the"] + tgt_np
    src_np = (["DESC-" + adjective.upper()] if adjective else []) + [obj.upper()]

    target = (*tgt_subject, tgt_verb, *tgt_np, time, ".")
    source = (*src_subject, verb.upper(), *src_np, time.upper(), ".")
    return SentencePair(source, target, pair_id)


def synthetic_corpus(n_train: int, n_dev: int = 0, n_test: int = 0,
                     seed: int = 0) -> ParallelCorpus:
    """Sample distinct rule-generated pairs into train/dev/test splits."""
    space = (len(_PRONOUNS) + len(_SINGULAR) + len(_PLURAL)) * len(_VERBS) \
        * len(_ADJECTIVES) * 2 * len(_OBJECTS) * len(_TIMES)
    total = n_train + n_dev + n_test
    if total > space:
        raise ValueError(f"requested {total} pairs but only {space} exist")
    rng = np.random.Generator(np.random.Philox(seed))
    combos = rng.choice(space, size=total, replace=False)
    corpus = ParallelCorpus()
    cursor = 0
    for name, count in (("train", n_train), ("dev", n_dev), ("test", n_test)):
        if count:
            corpus.splits[name] = [
                _synthetic_pair(int(combos[cursor + i]), i) for i in range(count)
            ]
            cursor += count
    return corpus


def finite_difference_grad(f, x: np.ndarray, h: float | None = None) -> np.ndarray:
    """Central-difference gradient of scalar f at x, elementwise."""
    if h is None:
        h = 1e-6 if x.dtype == np.float64 else 1e-3
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def check_grad(build_loss, params: dict[str, np.ndarray], rel_tol: float, h: float | None = None,
               sample: int | None = None, seed: int = 0) -> float:
    """Compare autodiff gradients of build_loss(tensors) against central
    differences. Returns the worst relative error seen.

    build_loss takes a dict name -> Tensor and must return a scalar Tensor.
    When ``sample`` is set, only that many randomly chosen coordinates per
    parameter are probed (the full analytic gradient is still exercised).
    """
    tensors = {k: ad.Tensor(v.copy(), requires_grad=True) for k, v in params.items()}
    loss = build_loss(tensors)
    loss.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, base in params.items():
        analytic = tensors[name].grad_array()
        # probe in float64 so the oracle itself is accurate even when the
        # gradients under test were computed in float32
        x = base.astype(np.float64)
        if h is None:
            step = 1e-6 if base.dtype == np.float64 else 1e-3
        else:
            step = h
        flat = x.reshape(-1)
        if sample is not None and flat.size > sample:
            coords = rng.choice(flat.size, size=sample, replace=False)
        else:
            coords = range(flat.size)

        def eval_at(arr):
            local = {k: ad.Tensor(v.astype(np.float64)) for k, v in params.items()}
            local[name] = ad.Tensor(arr.copy())
            return build_loss(local).item()

        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            fp = eval_at(x)
            flat[i] = orig - step
            fm = eval_at(x)
            flat[i] = orig
            num = (fp - fm) / (2 * step)
            ana = float(analytic.reshape(-1)[i])
            if abs(num) < 1e-6 and abs(ana) < 1e-6:
                continue  # structurally zero gradient vs finite-difference noise
            denom = max(abs(num), abs(ana), 1e-8 if base.dtype == np.float64 else 1e-4)
            err = abs(num - ana) / denom
            worst = max(worst, err)
            assert err < rel_tol, (
                f"grad mismatch for {name}[{i}]: analytic={ana:.8g} fd={num:.8g} rel={err:.3g}"
            )
    return worst


MINIATURE_CONFIG = dict(
    src_vocab_size=11, tgt_vocab_size=11, num_layers=2, d_model=16,
    num_heads=2, ffn_dim=24, dropout=0.0, max_positions=32,
)


def miniature_model_grad_check(dtype, rel_tol: float, h: float, n_coords: int = 20,
                               tied: bool = False, seed: int = 5) -> float:
    """End-to-end gradient check of the full encoder-decoder against central
    finite differences probed on a float64 twin of the model."""
    cfg = ModelConfig(**MINIATURE_CONFIG, tie_decoder_embeddings=tied)
    src = np.array([[4, 7, 5, 9]])
    tgt_in = np.array([[2, 6, 8, 10, 4]])
    gold = np.array([6, 8, 10, 4, 3])

    def loss_of(m: TransformerModel):
        memory = m.encode_source(src)
        logits, _ = m.decode_logits(memory, tgt_in)
        flat = ad.reshape(logits, (-1, cfg.tgt_vocab_size))
        return ad.cross_entropy_label_smoothed(flat, gold, 0.1, pad_id=0)

    model = TransformerModel(cfg, seed=seed, dtype=dtype)
    model.zero_grads()
    loss_of(model).backward()

    twin = TransformerModel(cfg, seed=seed, dtype=np.float64)
    for name, tensor in model.params.items():
        twin.params[name].data[...] = tensor.data

    rng = np.random.default_rng(12)
    names = sorted(model.params)
    worst = 0.0
    for _ in range(n_coords):
        name = names[rng.integers(len(names))]
        flat = twin.params[name].data.reshape(-1)
        i = int(rng.integers(flat.size))
        orig = flat[i]
        flat[i] = orig + h
        fp = loss_of(twin).item()
        flat[i] = orig - h
        fm = loss_of(twin).item()
        flat[i] = orig
        num = (fp - fm) / (2 * h)
        ana = float(model.params[name].grad_array().reshape(-1)[i])
        if abs(num) < 1e-6 and abs(ana) < 1e-6:
            continue  # e.g. key biases: a constant key shift cancels in softmax
        denom = max(abs(num), abs(ana), 1e-8 if dtype == np.float64 else 1e-4)
        err = abs(num - ana) / denom
        worst = max(worst, err)
        assert err < rel_tol, (
            f"model grad mismatch {name}[{i}]: analytic={ana:.8g} fd={num:.8g} rel={err:.3g}"
        )
    return worst
