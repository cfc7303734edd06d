"""Parallel gloss/text corpora: loading, preprocessing, vocabularies, statistics.

File conventions: one sentence per line, UTF-8, whitespace tokenization.
Source files carry the ``.gloss`` suffix, target files ``.txt``. Glosses keep
their (conventionally uppercase) casing; target text is lowercased on load.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AlignmentError, ConfigError, EmptyCorpusError

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)

SPLITS = ("train", "dev", "test")

# prefix forms observed in ASL gloss data; longest match wins, applied once
DEFAULT_ASL_PREFIXES = ("X-", "DESC-")


@dataclass(frozen=True)
class SentencePair:
    source: tuple[str, ...]
    target: tuple[str, ...]
    id: int


@dataclass
class ParallelCorpus:
    splits: dict[str, list[SentencePair]] = field(default_factory=dict)
    source_lang: str = "gloss"
    target_lang: str = "text"

    def pairs(self, split: str) -> list[SentencePair]:
        return self.splits.get(split, [])

    def require_train(self) -> list[SentencePair]:
        if "train" not in self.splits:
            raise ConfigError("corpus has no train split")
        return self.splits["train"]

    def side_tokens(self, split: str, side: str):
        for pair in self.pairs(split):
            yield pair.source if side == "source" else pair.target


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: list[str]
    frequencies: dict[str, int]

    pad_id = 0
    unk_id = 1
    bos_id = 2
    eos_id = 3

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def save(self, path) -> None:
        """One ``token<TAB>frequency`` line per entry, in id order."""
        lines = [f"{tok}\t{self.frequencies.get(tok, 0)}" for tok in self.id_to_token]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        id_to_token = []
        frequencies = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            tok, _, freq = line.partition("\t")
            id_to_token.append(tok)
            frequencies[tok] = int(freq)
        if tuple(id_to_token[:4]) != SPECIAL_TOKENS:
            raise ConfigError(f"vocabulary file {path} is missing the special tokens")
        return cls({t: i for i, t in enumerate(id_to_token)}, id_to_token, frequencies)


@dataclass
class SplitStats:
    phrases: int
    vocab: int
    total_words: int
    oov_tokens: int | None  # total OOV occurrences vs train; None for train
    oov_types: int | None
    singletons: int | None  # train-frequency-1 types; None outside train


@dataclass
class CorpusStats:
    side: str
    per_split: dict[str, SplitStats]


def _read_lines(path) -> list[str]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise EmptyCorpusError(f"{path} is empty")
    return lines


def load_parallel(source_path, target_path, split: str) -> list[SentencePair]:
    """Load one split from aligned source/target files.

    Tokenization is whitespace splitting. Target text is lowercased; source
    casing is preserved. Raises AlignmentError on line-count mismatch and
    EmptyCorpusError on empty files or empty sentences.
    """
    src_lines = _read_lines(source_path)
    tgt_lines = _read_lines(target_path)
    if len(src_lines) != len(tgt_lines):
        raise AlignmentError(
            f"{source_path} has {len(src_lines)} lines but {target_path} has {len(tgt_lines)}"
        )
    pairs = []
    for i, (src, tgt) in enumerate(zip(src_lines, tgt_lines)):
        source = tuple(src.split())
        target = tuple(tgt.lower().split())
        if not source or not target:
            raise EmptyCorpusError(f"empty sentence at line {i + 1} of {split} split")
        pairs.append(SentencePair(source, target, i))
    return pairs


def load_corpus_dir(data_dir, source_suffix: str = "gloss", target_suffix: str = "txt",
                    required: tuple[str, ...] = ("train",)) -> ParallelCorpus:
    """Load ``{split}.{gloss,txt}`` pairs from a directory for every split present."""
    data_dir = Path(data_dir)
    corpus = ParallelCorpus()
    for split in SPLITS:
        src = data_dir / f"{split}.{source_suffix}"
        tgt = data_dir / f"{split}.{target_suffix}"
        if src.exists() and tgt.exists():
            corpus.splits[split] = load_parallel(src, tgt, split)
    for split in required:
        if split not in corpus.splits:
            raise ConfigError(f"missing required split files for '{split}' under {data_dir}")
    return corpus


def strip_asl_prefixes(sentence, prefixes=DEFAULT_ASL_PREFIXES) -> tuple[str, ...]:
    """Remove the first matching prefix (longest first) from each token, once.

    A removal that would empty a token is skipped and the token kept as is.
    """
    ordered = sorted(prefixes, key=len, reverse=True)
    out = []
    for token in sentence:
        stripped = token
        for prefix in ordered:
            if token.startswith(prefix) and len(token) > len(prefix):
                stripped = token[len(prefix):]
                break
        out.append(stripped)
    return tuple(out)


def strip_corpus_prefixes(corpus: ParallelCorpus, prefixes=DEFAULT_ASL_PREFIXES) -> ParallelCorpus:
    """Apply prefix stripping to the source side of every split."""
    out = ParallelCorpus({}, corpus.source_lang, corpus.target_lang)
    for split, pairs in corpus.splits.items():
        out.splits[split] = [
            SentencePair(strip_asl_prefixes(p.source, prefixes), p.target, p.id) for p in pairs
        ]
    return out


def train_frequencies(corpus: ParallelCorpus, side: str) -> collections.Counter:
    counts: collections.Counter = collections.Counter()
    corpus.require_train()
    for tokens in corpus.side_tokens("train", side):
        counts.update(tokens)
    return counts


def apply_min_freq_threshold(corpus: ParallelCorpus, side: str, threshold: int) -> ParallelCorpus:
    """Replace tokens whose train frequency is below ``threshold`` with the
    unk token, on one side, across all splits. Frequencies come from train only."""
    if threshold < 1:
        raise ConfigError(f"frequency threshold must be >= 1, got {threshold}")
    counts = train_frequencies(corpus, side)
    if threshold == 1:
        return corpus

    def convert(tokens):
        return tuple(t if counts.get(t, 0) >= threshold else UNK_TOKEN for t in tokens)

    out = ParallelCorpus({}, corpus.source_lang, corpus.target_lang)
    for split, pairs in corpus.splits.items():
        if side == "source":
            out.splits[split] = [SentencePair(convert(p.source), p.target, p.id) for p in pairs]
        else:
            out.splits[split] = [SentencePair(p.source, convert(p.target), p.id) for p in pairs]
    return out


def build_vocab(corpus: ParallelCorpus, side: str) -> Vocabulary:
    """Vocabulary over train tokens plus the four specials, ordered by
    descending frequency with lexicographic tie-breaking (deterministic)."""
    counts = train_frequencies(corpus, side)
    # unk may genuinely occur in train after thresholding
    unk_count = counts.get(UNK_TOKEN, 0)
    for special in SPECIAL_TOKENS:
        counts.pop(special, None)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    id_to_token = list(SPECIAL_TOKENS) + [tok for tok, _ in ordered]
    frequencies = {tok: 0 for tok in SPECIAL_TOKENS}
    frequencies[UNK_TOKEN] = unk_count
    frequencies.update(dict(ordered))
    return Vocabulary({t: i for i, t in enumerate(id_to_token)}, id_to_token, frequencies)


def encode(sentence, vocab: Vocabulary, add_bos_eos: bool = False) -> list[int]:
    ids = [vocab.lookup(t) for t in sentence]
    if add_bos_eos:
        return [vocab.bos_id, *ids, vocab.eos_id]
    return ids


def decode(ids, vocab: Vocabulary, strip_specials: bool = False) -> list[str]:
    tokens = [vocab.token(i) for i in ids]
    if strip_specials:
        tokens = [t for t in tokens if t not in (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN)]
    return tokens


def corpus_statistics(corpus: ParallelCorpus, side: str) -> CorpusStats:
    """Phrase/vocab/word counts per split, OOV occurrences of dev/test against
    the train vocabulary, and train singleton count."""
    train_counts = train_frequencies(corpus, side) if "train" in corpus.splits else collections.Counter()
    per_split = {}
    for split in SPLITS:
        if split not in corpus.splits:
            continue
        counts: collections.Counter = collections.Counter()
        for tokens in corpus.side_tokens(split, side):
            counts.update(tokens)
        total = sum(counts.values())
        if split == "train":
            per_split[split] = SplitStats(
                phrases=len(corpus.splits[split]),
                vocab=len(counts),
                total_words=total,
                oov_tokens=None,
                oov_types=None,
                singletons=sum(1 for c in counts.values() if c == 1),
            )
        else:
            oov = {t: c for t, c in counts.items() if t not in train_counts}
            per_split[split] = SplitStats(
                phrases=len(corpus.splits[split]),
                vocab=len(counts),
                total_words=total,
                oov_tokens=sum(oov.values()),
                oov_types=len(oov),
                singletons=None,
            )
    return CorpusStats(side=side, per_split=per_split)


def render_stats_table(source_stats: CorpusStats, target_stats: CorpusStats,
                       source_label: str = "Gloss", target_label: str = "Text") -> str:
    """Fixed-width report with one column group per side and one row per
    statistic (phrases, vocab, words, OOV occurrences, singletons)."""
    sides = [(source_label, source_stats), (target_label, target_stats)]
    splits = [s for s in SPLITS if any(s in st.per_split for _, st in sides)]

    def cell(value) -> str:
        return "-" if value is None else f"{value:,}"

    rows = [
        ("Phrases", lambda s: s.phrases),
        ("Vocab.", lambda s: s.vocab),
        ("tot. words", lambda s: s.total_words),
        ("tot. OOVs", lambda s: s.oov_tokens),
        ("singletons", lambda s: s.singletons),
    ]
    width = 10
    out = []
    header1 = f"{'':12}"
    header2 = f"{'':12}"
    for label, _ in sides:
        group = len(splits) * (width + 1) - 1
        header1 += f" {label:^{group}}"
        header2 += " " + " ".join(f"{s.capitalize():>{width}}" for s in splits)
    out.append(header1.rstrip())
    out.append(header2.rstrip())
    for name, get in rows:
        line = f"{name:12}"
        for _, stats in sides:
            line += " " + " ".join(
                f"{cell(get(stats.per_split[s]) if s in stats.per_split else None):>{width}}"
                for s in splits
            )
        out.append(line.rstrip())
    return "\n".join(out) + "\n"


def write_corpus_dir(corpus: ParallelCorpus, out_dir, source_suffix: str = "gloss",
                     target_suffix: str = "txt") -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for split, pairs in corpus.splits.items():
        src = "\n".join(" ".join(p.source) for p in pairs) + "\n"
        tgt = "\n".join(" ".join(p.target) for p in pairs) + "\n"
        (out_dir / f"{split}.{source_suffix}").write_text(src, encoding="utf-8")
        (out_dir / f"{split}.{target_suffix}").write_text(tgt, encoding="utf-8")
