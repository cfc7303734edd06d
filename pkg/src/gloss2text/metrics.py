"""Corpus evaluation metrics: cumulative BLEU-1..4, ROUGE-L F1, METEOR.

All functions take tokenized corpora: a list of hypothesis token sequences
and an equally long list of reference token sequences (single reference per
sentence). Scores are on the 0-100 scale.

BLEU is corpus-level with clipped n-gram precisions, brevity penalty
min(1, e^(1-r/c)) and no smoothing: a zero precision at any order zeroes the
score. A separately exposed sentence-level BLEU-4 applies add-one smoothing
on orders >= 2 so that short qualitative examples do not all collapse to 0.

ROUGE-L is the LCS-based F-measure, balanced F1 by default; pass ``beta`` for
the recall-weighted original.

METEOR uses two match stages (exact, then suffix-stem), harmonic mean with
recall weighted 9:1, and fragmentation penalty 0.5 * (chunks / matches)^3,
aggregated over summed corpus statistics. No synonym resource is used, so
absolute agreement with external METEOR tools is not guaranteed.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import AlignmentError


@dataclass
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l_f1: float
    meteor: float
    sentence_count: int
    brevity_penalty: float
    ngram_precisions: list[float]
    per_sentence_bleu4: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "bleu1": self.bleu1,
            "bleu2": self.bleu2,
            "bleu3": self.bleu3,
            "bleu4": self.bleu4,
            "rouge_l_f1": self.rouge_l_f1,
            "meteor": self.meteor,
            "sentence_count": self.sentence_count,
            "brevity_penalty": self.brevity_penalty,
            "ngram_precisions": self.ngram_precisions,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def render(self) -> str:
        lines = [
            f"sentences        {self.sentence_count}",
            f"BLEU-1           {self.bleu1:.2f}",
            f"BLEU-2           {self.bleu2:.2f}",
            f"BLEU-3           {self.bleu3:.2f}",
            f"BLEU-4           {self.bleu4:.2f}",
            f"ROUGE-L F1       {self.rouge_l_f1:.2f}",
            f"METEOR           {self.meteor:.2f}",
            f"brevity penalty  {self.brevity_penalty:.4f}",
            "precisions       " + " ".join(f"{p:.2f}" for p in self.ngram_precisions),
        ]
        return "\n".join(lines) + "\n"


def _check_aligned(hypotheses, references) -> None:
    if len(hypotheses) != len(references):
        raise AlignmentError(
            f"{len(hypotheses)} hypotheses against {len(references)} references"
        )


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references, max_n: int = 4):
    """Corpus-level cumulative BLEU-max_n.

    Returns (score, details) where details carries the per-order clipped
    precisions, the brevity penalty, and the length totals.
    """
    _check_aligned(hypotheses, references)
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hc = _ngrams(hyp, n)
            rc = _ngrams(ref, n)
            totals[n - 1] += sum(hc.values())
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    if hyp_len == 0:
        bp = 0.0
    else:
        bp = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    if min(precisions) > 0.0:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    else:
        score = 0.0
    details = {
        "precisions": precisions,
        "matches": matches,
        "totals": totals,
        "brevity_penalty": bp,
        "hypothesis_length": hyp_len,
        "reference_length": ref_len,
    }
    return score, details


def sentence_bleu4(hypothesis, reference) -> float:
    """Sentence-level BLEU-4 with add-one smoothing on orders 2..4."""
    ps = []
    for n in range(1, 5):
        hc = _ngrams(hypothesis, n)
        total = sum(hc.values())
        match = sum(min(c, _ngrams(reference, n)[g]) for g, c in hc.items())
        if n == 1:
            if total == 0 or match == 0:
                return 0.0
            ps.append(match / total)
        else:
            ps.append((match + 1) / (total + 1))
    bp = min(1.0, math.exp(1.0 - len(reference) / len(hypothesis)))
    return 100.0 * bp * math.exp(sum(math.log(p) for p in ps) / 4)


def lcs_length(a, b) -> int:
    """Longest-common-subsequence length of two token sequences."""
    if not a or not b:
        return 0
    ids: dict[str, int] = {}
    enc_a = np.fromiter((ids.setdefault(t, len(ids)) for t in a), dtype=np.int64, count=len(a))
    enc_b = np.fromiter((ids.setdefault(t, len(ids)) for t in b), dtype=np.int64, count=len(b))
    return int(kernels.lcs_len(enc_a, enc_b))


def rouge_l(hypotheses, references, beta: float | None = None) -> float:
    """Mean per-sentence ROUGE-L F-measure.

    ``beta=None`` gives balanced F1; otherwise the recall-weighted
    F = (1 + beta^2) P R / (R + beta^2 P).
    """
    _check_aligned(hypotheses, references)
    if not hypotheses:
        return 0.0
    total = 0.0
    for hyp, ref in zip(hypotheses, references):
        lcs = lcs_length(hyp, ref)
        if lcs == 0 or not hyp or not ref:
            continue
        p = lcs / len(hyp)
        r = lcs / len(ref)
        if beta is None:
            total += 2 * p * r / (p + r)
        else:
            total += (1 + beta * beta) * p * r / (r + beta * beta * p)
    return 100.0 * total / len(hypotheses)


_STEM_SUFFIXES = ("ation", "tion", "ness", "ment", "ing", "est", "ers", "ies",
                  "ed", "es", "er", "ly", "en", "s", "e", "n")


def _stem(token: str) -> str:
    t = token.lower()
    for suffix in _STEM_SUFFIXES:
        if t.endswith(suffix) and len(t) - len(suffix) >= 3:
            return t[: -len(suffix)]
    return t


def _align_meteor(hyp, ref) -> list[tuple[int, int]]:
    """Greedy in-order unigram alignment: exact stage first, stem stage on
    the leftovers. Returns matched (hyp_index, ref_index) pairs."""
    pairs: list[tuple[int, int]] = []
    hyp_free = [True] * len(hyp)
    ref_free = [True] * len(ref)
    for stage_key in (lambda t: t, _stem):
        for i, htok in enumerate(hyp):
            if not hyp_free[i]:
                continue
            want = stage_key(htok)
            for j, rtok in enumerate(ref):
                if ref_free[j] and stage_key(rtok) == want:
                    pairs.append((i, j))
                    hyp_free[i] = False
                    ref_free[j] = False
                    break
    pairs.sort()
    return pairs


def _count_chunks(pairs) -> int:
    if not pairs:
        return 0
    chunks = 1
    for (i1, j1), (i2, j2) in zip(pairs, pairs[1:]):
        if i2 != i1 + 1 or j2 != j1 + 1:
            chunks += 1
    return chunks


def meteor(hypotheses, references) -> float:
    """Corpus METEOR over summed match/length/chunk statistics."""
    _check_aligned(hypotheses, references)
    matches = 0
    hyp_len = 0
    ref_len = 0
    chunks = 0
    for hyp, ref in zip(hypotheses, references):
        pairs = _align_meteor(hyp, ref)
        matches += len(pairs)
        chunks += _count_chunks(pairs)
        hyp_len += len(hyp)
        ref_len += len(ref)
    if matches == 0 or hyp_len == 0 or ref_len == 0:
        return 0.0
    precision = matches / hyp_len
    recall = matches / ref_len
    fmean = 10.0 * precision * recall / (recall + 9.0 * precision)
    penalty = 0.5 * (chunks / matches) ** 3
    return 100.0 * fmean * (1.0 - penalty)


def evaluate(hypotheses, references, per_sentence: bool = True) -> MetricReport:
    """Full metric report over tokenized corpora."""
    _check_aligned(hypotheses, references)
    _, details = bleu(hypotheses, references, max_n=4)
    precisions = details["precisions"]
    bp = details["brevity_penalty"]
    scores = []
    for n in range(1, 5):
        head = precisions[:n]
        if min(head) > 0.0:
            scores.append(100.0 * bp * math.exp(sum(math.log(p) for p in head) / n))
        else:
            scores.append(0.0)
    report = MetricReport(
        bleu1=scores[0],
        bleu2=scores[1],
        bleu3=scores[2],
        bleu4=scores[3],
        rouge_l_f1=rouge_l(hypotheses, references),
        meteor=meteor(hypotheses, references),
        sentence_count=len(hypotheses),
        brevity_penalty=details["brevity_penalty"],
        ngram_precisions=[100.0 * p for p in details["precisions"]],
    )
    if per_sentence:
        report.per_sentence_bleu4 = [
            sentence_bleu4(h, r) for h, r in zip(hypotheses, references)
        ]
    return report


def read_token_file(path) -> list[list[str]]:
    return [line.split() for line in Path(path).read_text(encoding="utf-8").splitlines()]


def evaluate_files(hypothesis_path, reference_path, lowercase: bool = False,
                   per_sentence: bool = True) -> MetricReport:
    hyps = read_token_file(hypothesis_path)
    refs = read_token_file(reference_path)
    if len(hyps) != len(refs):
        raise AlignmentError(
            f"{hypothesis_path} has {len(hyps)} lines but {reference_path} has {len(refs)}"
        )
    if lowercase:
        hyps = [[t.lower() for t in h] for h in hyps]
        refs = [[t.lower() for t in r] for r in refs]
    return evaluate(hyps, refs, per_sentence=per_sentence)
