"""
Corpus ingestion, vocabularies, embeddings, splits, batching and the
synthetic multi-view generator.

Corpus files hold one example per line, ``LABEL<TAB>tok1 tok2 ...``, and the
files of all views are aligned line by line. Tokenisation happens upstream.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .Configuration import SyntheticConfig
from .Logger import Logger
from .Numerics import FloatArray, IntArray, Tensor


PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
# Largest default filter window; every padded view is at least this long.
MIN_PADDED_LENGTH = 5


class CorpusFormatError(ValueError):
    pass


class CorpusAlignmentError(ValueError):
    pass


class LabelDisagreementError(ValueError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmbeddingFormatError(ValueError):
    pass


class SyntheticConfigError(ValueError):
    pass


# --- Types ---


@dataclass
class Vocabulary:
    view: str
    tokens: list[str]
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError(f"vocabulary for {self.view} must start with {PAD_TOKEN}, {UNK_TOKEN}")
        if not self.index:
            self.index = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def build(
        cls, view: str, sentences: Iterable[Sequence[str]], min_count: int = 1
    ) -> Vocabulary:
        """Ids ordered by descending count, ties alphabetically."""
        counts: Counter[str] = Counter()
        for sentence in sentences:
            counts.update(sentence)
        for special in (PAD_TOKEN, UNK_TOKEN):
            counts.pop(special, None)
        kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        return cls(view, [PAD_TOKEN, UNK_TOKEN, *kept])

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode(self, sentence: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.lookup(t) for t in sentence)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids if i != PAD_ID]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: object) -> bool:
        return token in self.index


@dataclass
class EmbeddingTable:
    view: str
    matrix: Tensor

    @property
    def d_word(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class MultiViewExample:
    label: int
    # One token-id sequence per view, original first.
    tokens: tuple[tuple[int, ...], ...]

    @property
    def n_views(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class ParallelCorpus:
    """Raw aligned sentences: ``sentences[view][example]`` is a token tuple."""

    view_names: tuple[str, ...]
    labels: tuple[int, ...]
    sentences: tuple[tuple[tuple[str, ...], ...], ...]

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return max(self.labels) + 1 if self.labels else 0

    def select_views(self, names: Sequence[str]) -> ParallelCorpus:
        missing = [n for n in names if n not in self.view_names]
        if missing:
            raise KeyError(f"corpus has no views {missing}")
        picked = [self.view_names.index(n) for n in names]
        return ParallelCorpus(
            tuple(names), self.labels, tuple(self.sentences[i] for i in picked)
        )

    def extend(self, other: ParallelCorpus) -> ParallelCorpus:
        if other.view_names != self.view_names:
            raise CorpusAlignmentError(
                f"cannot append views {other.view_names} to {self.view_names}"
            )
        return ParallelCorpus(
            self.view_names,
            self.labels + other.labels,
            tuple(a + b for a, b in zip(self.sentences, other.sentences, strict=True)),
        )


@dataclass
class DatasetSplit:
    train: list[int]
    dev: list[int]
    test: list[int]
    fold: int | None = None


@dataclass
class Batch:
    indices: IntArray
    labels: IntArray
    # Per view: (B, L_view) padded ids and the unpadded lengths.
    tokens: list[IntArray]
    lengths: list[IntArray]

    @property
    def size(self) -> int:
        return len(self.indices)


@dataclass
class SyntheticDataset:
    corpus: ParallelCorpus
    # view -> token -> vector; stands in for pre-trained word vectors.
    vectors: dict[str, dict[str, FloatArray]]


# --- Corpus files ---


def read_corpus_file(path: Path) -> tuple[list[int], list[tuple[str, ...]]]:
    labels: list[int] = []
    sentences: list[tuple[str, ...]] = []
    with path.open(encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            label, sep, text = line.partition("\t")
            if not sep:
                raise CorpusFormatError(f"{path}:{line_no}: expected LABEL<TAB>tokens")
            try:
                value = int(label)
            except ValueError as ex:
                raise CorpusFormatError(f"{path}:{line_no}: label {label!r} is not an integer") from ex
            if value < 0:
                raise CorpusFormatError(f"{path}:{line_no}: negative label {value}")
            labels.append(value)
            sentences.append(tuple(text.split()))
    return labels, sentences


def read_parallel_corpus(paths: Sequence[Path], view_names: Sequence[str]) -> ParallelCorpus:
    """
    Reads one aligned file per view.

    Raises:
        CorpusAlignmentError: if the files differ in line count.
        LabelDisagreementError: if a line carries different labels across views.
    """
    if len(paths) != len(view_names):
        raise CorpusAlignmentError(f"{len(paths)} files for {len(view_names)} views")
    per_view = [read_corpus_file(Path(p)) for p in paths]
    counts = {str(p): len(labels) for p, (labels, _) in zip(paths, per_view, strict=True)}
    if len(set(counts.values())) > 1:
        raise CorpusAlignmentError(f"corpus files are not aligned, line counts {counts}")
    labels = per_view[0][0]
    for (other, _), name in zip(per_view[1:], view_names[1:], strict=True):
        for i, (a, b) in enumerate(zip(labels, other, strict=True)):
            if a != b:
                raise LabelDisagreementError(
                    i + 1, f"label {a} in view {view_names[0]} but {b} in view {name}"
                )
    return ParallelCorpus(
        tuple(view_names), tuple(labels), tuple(tuple(s) for _, s in per_view)
    )


def write_parallel_corpus(corpus: ParallelCorpus, paths: Sequence[Path]) -> None:
    if len(paths) != len(corpus.view_names):
        raise CorpusAlignmentError(f"{len(paths)} files for {len(corpus.view_names)} views")
    for path, sentences in zip(paths, corpus.sentences, strict=True):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as f:
            for label, sentence in zip(corpus.labels, sentences, strict=True):
                f.write(f"{label}\t{' '.join(sentence)}\n")


def build_vocabularies(
    corpus: ParallelCorpus, train_indices: Sequence[int] | None = None, min_count: int = 1
) -> list[Vocabulary]:
    """One vocabulary per view, counted over the training examples only."""
    rows = range(len(corpus)) if train_indices is None else train_indices
    return [
        Vocabulary.build(name, (sentences[i] for i in rows), min_count)
        for name, sentences in zip(corpus.view_names, corpus.sentences, strict=True)
    ]


def encode_corpus(corpus: ParallelCorpus, vocabs: Sequence[Vocabulary]) -> list[MultiViewExample]:
    if [v.view for v in vocabs] != list(corpus.view_names):
        raise CorpusAlignmentError(
            f"vocabularies for {[v.view for v in vocabs]} do not match views {list(corpus.view_names)}"
        )
    return [
        MultiViewExample(
            label,
            tuple(vocab.encode(sentences[i]) for vocab, sentences in zip(vocabs, corpus.sentences, strict=True)),
        )
        for i, label in enumerate(corpus.labels)
    ]


def load_parallel_corpus(
    paths: Sequence[Path],
    view_names: Sequence[str],
    train_indices: Sequence[int] | None = None,
    min_count: int = 1,
) -> tuple[list[MultiViewExample], list[Vocabulary]]:
    corpus = read_parallel_corpus(paths, view_names)
    vocabs = build_vocabularies(corpus, train_indices, min_count)
    return encode_corpus(corpus, vocabs), vocabs


# --- Embeddings ---


def read_embedding_file(path: Path, d_word: int) -> dict[str, FloatArray]:
    """
    Parses a text embedding file, with or without a ``COUNT DIM`` header.

    Raises:
        EmbeddingFormatError: on inconsistent widths (with the line number) or
            a width different from ``d_word``.
    """
    vectors: dict[str, FloatArray] = {}
    width: int | None = None
    with path.open(encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if line_no == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                header_dim = int(parts[1])
                if header_dim != d_word:
                    raise EmbeddingFormatError(
                        f"{path}: header width {header_dim} does not match d_word {d_word}"
                    )
                width = header_dim
                continue
            token, raw = parts[0], parts[1:]
            if width is None:
                width = len(raw)
                if width != d_word:
                    raise EmbeddingFormatError(
                        f"{path}:{line_no}: width {width} does not match d_word {d_word}"
                    )
            elif len(raw) != width:
                raise EmbeddingFormatError(
                    f"{path}:{line_no}: expected {width} values, found {len(raw)}"
                )
            try:
                vectors[token] = np.asarray(raw, dtype=np.float64)
            except ValueError as ex:
                raise EmbeddingFormatError(f"{path}:{line_no}: not a number") from ex
    return vectors


def embeddings_from_vectors(
    vectors: Mapping[str, FloatArray],
    vocab: Vocabulary,
    d_word: int,
    rng: np.random.Generator,
    unknown_range: float = 0.25,
) -> tuple[EmbeddingTable, int]:
    """
    Builds a trainable table: known tokens take their vector, the rest
    U(-unknown_range, unknown_range). The PAD row is zero.

    The random block is drawn for the whole vocabulary before any lookup, so
    the same seed gives the same rows whatever the vector file contains.

    Returns:
        The table and the number of vocabulary tokens found in ``vectors``.
    """
    matrix = rng.uniform(-unknown_range, unknown_range, size=(len(vocab), d_word))
    found = 0
    for token, row in vocab.index.items():
        if row == PAD_ID:
            continue
        vec = vectors.get(token)
        if vec is not None:
            if vec.shape != (d_word,):
                raise EmbeddingFormatError(f"vector for {token!r} has shape {vec.shape}")
            matrix[row] = vec
            found += 1
    matrix[PAD_ID] = 0.0
    return EmbeddingTable(vocab.view, Tensor.parameter(matrix, f"emb.{vocab.view}")), found


def load_embeddings(
    path: Path,
    vocab: Vocabulary,
    d_word: int,
    rng: np.random.Generator,
    unknown_range: float = 0.25,
    log: Logger | None = None,
) -> EmbeddingTable:
    table, found = embeddings_from_vectors(
        read_embedding_file(path, d_word), vocab, d_word, rng, unknown_range
    )
    if log is not None:
        log.log(f"[{vocab.view}] {found}/{len(vocab) - 2} vocabulary tokens found in {path}")
    return table


def random_embeddings(
    vocab: Vocabulary, d_word: int, rng: np.random.Generator, unknown_range: float = 0.25
) -> EmbeddingTable:
    table, _ = embeddings_from_vectors({}, vocab, d_word, rng, unknown_range)
    return table


# --- Splits ---


def carve_dev(
    train: Sequence[int], fraction: float, rng: np.random.Generator
) -> tuple[list[int], list[int]]:
    """Moves a random ``fraction`` (at least one example) of ``train`` to dev."""
    if not train:
        return [], []
    n_dev = max(1, round(fraction * len(train)))
    perm = rng.permutation(np.asarray(train))
    return sorted(int(i) for i in perm[n_dev:]), sorted(int(i) for i in perm[:n_dev])


def make_folds(
    labels: Sequence[int],
    k: int,
    seed: int,
    dev_fraction: float = 0.10,
    log: Logger | None = None,
) -> list[DatasetSplit]:
    """
    Stratified k-fold partition; fold ``i`` is the test part of split ``i``.

    Each class is shuffled and dealt round-robin, continuing from where the
    previous class stopped, so fold sizes differ by at most one.
    """
    n = len(labels)
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    if n < k:
        raise ValueError(f"{n} examples cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    label_arr = np.asarray(labels)
    fold_of = np.empty(n, dtype=np.int64)
    cursor = 0
    for cls in np.unique(label_arr):
        members = np.flatnonzero(label_arr == cls)
        if len(members) < k and log is not None:
            log.log_warning(f"class {int(cls)} has {len(members)} examples for {k} folds")
        members = rng.permutation(members)
        fold_of[members] = (cursor + np.arange(len(members))) % k
        cursor = (cursor + len(members)) % k

    splits = []
    for fold in range(k):
        test = [int(i) for i in np.flatnonzero(fold_of == fold)]
        rest = [int(i) for i in np.flatnonzero(fold_of != fold)]
        train, dev = carve_dev(rest, dev_fraction, np.random.default_rng([seed, fold]))
        splits.append(DatasetSplit(train=train, dev=dev, test=test, fold=fold))
    return splits


def holdout_split(n_train: int, n_test: int, dev_fraction: float, seed: int) -> DatasetSplit:
    """The first ``n_train`` examples train (minus dev), the next ``n_test`` test."""
    train, dev = carve_dev(list(range(n_train)), dev_fraction, np.random.default_rng(seed))
    return DatasetSplit(train=train, dev=dev, test=list(range(n_train, n_train + n_test)))


# --- Batching ---


def make_batch(
    examples: Sequence[MultiViewExample],
    indices: Sequence[int],
    min_length: int = MIN_PADDED_LENGTH,
) -> Batch:
    chosen = [examples[i] for i in indices]
    n_views = chosen[0].n_views
    tokens, lengths = [], []
    for view in range(n_views):
        lens = np.array([len(ex.tokens[view]) for ex in chosen], dtype=np.int64)
        ids = np.full((len(chosen), max(int(lens.max()), min_length)), PAD_ID, dtype=np.int64)
        for row, ex in enumerate(chosen):
            ids[row, : lens[row]] = ex.tokens[view]
        tokens.append(ids)
        lengths.append(lens)
    return Batch(
        indices=np.asarray(indices, dtype=np.int64),
        labels=np.array([ex.label for ex in chosen], dtype=np.int64),
        tokens=tokens,
        lengths=lengths,
    )


def batch_iter(
    examples: Sequence[MultiViewExample],
    indices: Sequence[int],
    batch_size: int,
    seed: int = 0,
    epoch: int = 0,
    shuffle: bool = True,
    min_length: int = MIN_PADDED_LENGTH,
) -> Iterator[Batch]:
    """
    Yields padded batches; the order is a reshuffle keyed by ``(seed, epoch)``.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    order = np.asarray(indices, dtype=np.int64)
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(order)
    for start in range(0, len(order), batch_size):
        yield make_batch(examples, [int(i) for i in order[start : start + batch_size]], min_length)


# --- Synthetic data ---


def _informative_sets(cfg: SyntheticConfig) -> list[set[int]]:
    if cfg.informative:
        if len(cfg.informative) != cfg.n_views:
            raise SyntheticConfigError(
                f"informative lists {len(cfg.informative)} views, config has {cfg.n_views}"
            )
        sets = [set(classes) for classes in cfg.informative]
    else:
        sets = [{c for c in range(cfg.n_classes) if c % cfg.n_views == k} for k in range(cfg.n_views)]
    for classes in sets:
        bad = [c for c in classes if not 0 <= c < cfg.n_classes]
        if bad:
            raise SyntheticConfigError(f"informative classes {bad} out of range")
    uncovered = set(range(cfg.n_classes)) - set().union(*sets)
    if uncovered:
        raise SyntheticConfigError(f"classes {sorted(uncovered)} are informative in no view")
    return sets


def gen_synthetic(cfg: SyntheticConfig) -> SyntheticDataset:
    """
    Generates an aligned multi-view corpus where each view only carries a
    signal for its informative classes.

    A view emits, for an informative class, at least one of that class's
    signal tokens among filler tokens; for any other class it emits filler
    only. Each token is then replaced by a uniformly drawn token of the view
    with that view's noise rate. Word vectors cluster signal tokens around
    one prototype per class.
    """
    informative = _informative_sets(cfg)
    names = cfg.names()
    noise = cfg.noise_rates()
    rng = np.random.default_rng(cfg.seed)

    labels = rng.permutation(np.arange(cfg.n_examples) % cfg.n_classes)
    sentences: list[tuple[tuple[str, ...], ...]] = []
    vectors: dict[str, dict[str, FloatArray]] = {}
    for view, name in enumerate(names):
        signal = [[f"{name}_c{c}_{j}" for j in range(cfg.signal_tokens)] for c in range(cfg.n_classes)]
        filler = [f"{name}_w{j}" for j in range(cfg.filler_tokens)]
        every = [tok for group in signal for tok in group] + filler

        rows = []
        for label in labels:
            length = int(rng.integers(cfg.min_length, cfg.max_length + 1))
            words = [filler[int(j)] for j in rng.integers(0, len(filler), size=length)]
            if int(label) in informative[view]:
                hits = rng.random(length) < cfg.signal_rate
                if not hits.any():
                    hits[int(rng.integers(0, length))] = True
                for pos in np.flatnonzero(hits):
                    words[pos] = signal[int(label)][int(rng.integers(0, cfg.signal_tokens))]
            corrupt = rng.random(length) < noise[view]
            for pos in np.flatnonzero(corrupt):
                words[pos] = every[int(rng.integers(0, len(every)))]
            rows.append(tuple(words))
        sentences.append(tuple(rows))

        table: dict[str, FloatArray] = {}
        for group in signal:
            prototype = rng.uniform(-0.25, 0.25, size=cfg.d_word)
            for tok in group:
                table[tok] = prototype + rng.uniform(-0.05, 0.05, size=cfg.d_word)
        for tok in filler:
            table[tok] = rng.uniform(-0.25, 0.25, size=cfg.d_word)
        vectors[name] = table

    corpus = ParallelCorpus(tuple(names), tuple(int(y) for y in labels), tuple(sentences))
    return SyntheticDataset(corpus=corpus, vectors=vectors)


def write_embedding_file(vectors: Mapping[str, FloatArray], path: Path) -> None:
    """Writes vectors in the text format read by ``read_embedding_file``, with a header."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tokens = sorted(vectors)
    dim = len(vectors[tokens[0]]) if tokens else 0
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write(f"{len(tokens)} {dim}\n")
        for tok in tokens:
            f.write(tok + " " + " ".join(repr(float(x)) for x in vectors[tok]) + "\n")
