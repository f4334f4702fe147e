"""
Classifier assembly for the three modes, training, evaluation, ensembling
and the model file format.

- b1: the sentence vectors of all views are concatenated and classified.
- b2: as b1, with an L2 penalty on the classifier weights.
- mcfa: the sentence vectors are fixed by the attachment first.

Model file layout: the magic ``MCFA1``, an 8-byte little-endian header length,
a UTF-8 JSON header, then every tensor as little-endian float64, row-major, in
header order.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from .Attachment import FixReport, McfaParams, mcfa_forward
from .Configuration import Mode, ModelConfig, TrainConfig
from .Data import (
    MIN_PADDED_LENGTH,
    PAD_ID,
    Batch,
    DatasetSplit,
    EmbeddingTable,
    MultiViewExample,
    ParallelCorpus,
    Vocabulary,
    batch_iter,
    encode_corpus,
    make_batch,
)
from .Encoder import EncoderParams, encode
from .Logger import Logger
from .Numerics import (
    Adadelta,
    DimensionError,
    FloatArray,
    GradTape,
    NonFiniteError,
    Tensor,
    add,
    backward,
    broadcast_scale,
    concat,
    cross_entropy,
    dropout,
    make_dropout_mask,
    matmul,
    max_norm_rescale,
    softmax,
    squared_norm,
)


MAGIC = b"MCFA1"
HEADER_LENGTH_BYTES = 8


class ModelFormatError(ValueError):
    pass


class ModelCorruptionError(ValueError):
    pass


class IncompatibleModelsError(ValueError):
    pass


class EmptySplitError(ValueError):
    pass


class TrainingAbortedError(RuntimeError):
    def __init__(self, epoch: int, step: int, message: str) -> None:
        super().__init__(f"training aborted at epoch {epoch}, step {step}: {message}")
        self.epoch = epoch
        self.step = step


# --- Bundle ---


@dataclass
class ModelBundle:
    mode: Mode
    view_names: list[str]
    n_classes: int
    vocabs: list[Vocabulary]
    embeddings: list[EmbeddingTable]
    encoders: list[EncoderParams]
    mcfa: McfaParams | None
    W_c: Tensor  # ((n + 1) * d, c)
    b_c: Tensor  # (c,)
    model_config: ModelConfig
    train_config: TrainConfig

    @property
    def n_views(self) -> int:
        return len(self.view_names)

    @property
    def d(self) -> int:
        return self.encoders[0].output_width

    @property
    def min_length(self) -> int:
        return max(MIN_PADDED_LENGTH, *self.model_config.windows)

    def parameters(self) -> list[Tensor]:
        """Every tensor of the bundle, in the order of the model file."""
        params: list[Tensor] = []
        for emb, enc in zip(self.embeddings, self.encoders, strict=True):
            params.append(emb.matrix)
            params += enc.parameters()
        if self.mcfa is not None:
            params += self.mcfa.parameters()
        params += [self.W_c, self.b_c]
        return params

    def trainable(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def snapshot(self) -> dict[str, FloatArray]:
        return {p.name: p.values.copy() for p in self.parameters()}

    def restore(self, values: dict[str, FloatArray]) -> None:
        for p in self.parameters():
            p.values = values[p.name].copy()

    def encode_corpus(self, corpus: ParallelCorpus) -> list[MultiViewExample]:
        """Encodes a raw corpus with this bundle's views and vocabularies."""
        try:
            picked = corpus.select_views(self.view_names)
        except KeyError as ex:
            raise IncompatibleModelsError(
                f"model views {self.view_names} are not all in the data views {list(corpus.view_names)}"
            ) from ex
        return encode_corpus(picked, self.vocabs)


def init_bundle(
    mode: Mode,
    vocabs: Sequence[Vocabulary],
    embeddings: Sequence[EmbeddingTable],
    n_classes: int,
    model_config: ModelConfig,
    train_config: TrainConfig,
    rng: np.random.Generator,
) -> ModelBundle:
    """
    Fresh encoders (and attachment for mcfa) over prebuilt embedding tables.

    The classifier starts at zero, so an untrained bundle predicts the
    uniform distribution.
    """
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if len(vocabs) != len(embeddings) or not vocabs:
        raise DimensionError(f"{len(vocabs)} vocabularies for {len(embeddings)} embedding tables")
    views = [v.view for v in vocabs]
    if [e.view for e in embeddings] != views:
        raise DimensionError(f"embedding views {[e.view for e in embeddings]} differ from {views}")
    encoders = []
    for emb in embeddings:
        if emb.d_word != model_config.d_word:
            raise DimensionError(f"[{emb.view}] embedding width {emb.d_word} is not d_word {model_config.d_word}")
        if model_config.static_embeddings:
            emb.matrix.requires_grad = False
        encoders.append(
            EncoderParams.init(emb.view, model_config.d_word, model_config.n_maps, model_config.windows, rng)
        )
    d = encoders[0].output_width
    mcfa = McfaParams.init(views, d, rng) if mode is Mode.MCFA else None
    return ModelBundle(
        mode=mode,
        view_names=views,
        n_classes=n_classes,
        vocabs=list(vocabs),
        embeddings=list(embeddings),
        encoders=encoders,
        mcfa=mcfa,
        W_c=Tensor.parameter(np.zeros((len(views) * d, n_classes)), "clf.W"),
        b_c=Tensor.parameter(np.zeros(n_classes), "clf.b"),
        model_config=model_config.model_copy(update={"mode": mode}),
        train_config=train_config.model_copy(),
    )


# --- Forward & loss ---


@dataclass
class ForwardResult:
    probs: Tensor  # (B, c)
    features: Tensor  # classifier input before dropout
    vectors: list[Tensor]  # unaltered sentence vectors per view
    report: FixReport | None = None


def forward_batch(
    bundle: ModelBundle,
    batch: Batch,
    training: bool = False,
    rng: np.random.Generator | None = None,
    tape: GradTape | None = None,
    gate_override: float | None = None,
    dropout_rate: float | None = None,
) -> ForwardResult:
    """
    Class probabilities for a padded batch.

    When ``training`` is set, dropout masks are drawn from ``rng``. Mode mcfa
    drops the sentence vectors entering the attachment and the altered
    concatenation; b1 and b2 drop the classifier input once.
    """
    if len(batch.tokens) != bundle.n_views:
        raise DimensionError(f"batch has {len(batch.tokens)} views, model has {bundle.n_views}")
    rate = bundle.train_config.dropout_rate if dropout_rate is None else dropout_rate
    dropping = training and rate > 0.0
    if dropping and rng is None:
        raise ValueError("training forward needs an rng for dropout")

    vectors = []
    for k in range(bundle.n_views):
        mask = None
        if dropping and bundle.mode is Mode.MCFA:
            assert rng is not None
            rows = np.asarray(batch.tokens[k]).shape[:-1]
            mask = make_dropout_mask((*rows, bundle.encoders[k].output_width), rate, rng)
        vectors.append(
            encode(
                batch.tokens[k],
                bundle.embeddings[k],
                bundle.encoders[k],
                lengths=batch.lengths[k],
                dropout_mask=mask,
                tape=tape,
                min_length=bundle.min_length,
            ).vector
        )
    report = None
    if bundle.mode is Mode.MCFA:
        assert bundle.mcfa is not None
        report = mcfa_forward(vectors, bundle.mcfa, tape=tape, gate_override=gate_override)
        features = concat(report.altered, axis=-1, tape=tape)
    else:
        features = concat(vectors, axis=-1, tape=tape)

    hidden = features
    if dropping:
        assert rng is not None
        hidden = dropout(features, make_dropout_mask(features.shape, rate, rng), tape=tape)
    logits = add(matmul(hidden, bundle.W_c, tape=tape), bundle.b_c, tape=tape)
    return ForwardResult(softmax(logits, tape=tape), features, vectors, report)


def forward(
    bundle: ModelBundle,
    example: MultiViewExample,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> FloatArray:
    """Class probabilities ``(c,)`` for one example."""
    if example.n_views != bundle.n_views:
        raise DimensionError(f"example has {example.n_views} views, model has {bundle.n_views}")
    batch = make_batch([example], [0], bundle.min_length)
    return forward_batch(bundle, batch, training=training, rng=rng).probs.values[0]


def loss(
    probs: Tensor,
    labels: np.ndarray,
    bundle: ModelBundle,
    l2_lambda: float | None = None,
    tape: GradTape | None = None,
) -> Tensor:
    """Mean cross-entropy; mode b2 adds ``l2_lambda * ||W_c||^2``."""
    if len(labels) == 0:
        raise EmptySplitError("loss of an empty batch")
    value = cross_entropy(probs, labels, tape=tape)
    if bundle.mode is Mode.B2:
        lam = bundle.train_config.l2_lambda if l2_lambda is None else l2_lambda
        penalty = broadcast_scale(squared_norm(bundle.W_c, tape=tape), lam, tape=tape)
        value = add(value, penalty, tape=tape)
    return value


# --- Evaluation ---


@dataclass
class Evaluation:
    accuracy: float
    # index, label, predicted, p0..p{c-1}
    predictions: pd.DataFrame


def predict_proba(
    bundle: ModelBundle,
    examples: Sequence[MultiViewExample],
    indices: Sequence[int],
    batch_size: int | None = None,
) -> FloatArray:
    if len(indices) == 0:
        raise EmptySplitError("empty split")
    size = batch_size or bundle.train_config.eval_batch_size
    chunks = [
        forward_batch(bundle, batch).probs.values
        for batch in batch_iter(examples, indices, size, shuffle=False, min_length=bundle.min_length)
    ]
    return np.concatenate(chunks, axis=0)


def predictions_frame(
    indices: Sequence[int], labels: Sequence[int], probs: FloatArray
) -> pd.DataFrame:
    # np.argmax keeps the first maximum, so ties go to the lowest class id.
    frame = pd.DataFrame(
        {
            "index": np.asarray(indices, dtype=np.int64),
            "label": np.asarray(labels, dtype=np.int64),
            "predicted": np.argmax(probs, axis=1).astype(np.int64),
        }
    )
    for c in range(probs.shape[1]):
        frame[f"p{c}"] = probs[:, c]
    return frame


def evaluate(
    bundle: ModelBundle,
    examples: Sequence[MultiViewExample],
    indices: Sequence[int],
    batch_size: int | None = None,
) -> Evaluation:
    """Accuracy and per-example predictions, dropout off."""
    probs = predict_proba(bundle, examples, indices, batch_size)
    frame = predictions_frame(indices, [examples[i].label for i in indices], probs)
    accuracy = float((frame["predicted"] == frame["label"]).mean())
    return Evaluation(accuracy, frame)


def check_compatible(bundles: Sequence[ModelBundle]) -> None:
    if len(bundles) < 1:
        raise IncompatibleModelsError("no models to ensemble")
    first = bundles[0]
    for other in bundles[1:]:
        if other.n_classes != first.n_classes:
            raise IncompatibleModelsError(
                f"class counts differ: {first.n_classes} and {other.n_classes}"
            )


def ensemble_predict(
    bundles: Sequence[ModelBundle],
    corpus: ParallelCorpus,
    indices: Sequence[int],
    batch_size: int | None = None,
) -> FloatArray:
    """
    Mean of the members' class probabilities, ``(len(indices), c)``.

    Each member encodes the raw corpus with its own views and vocabularies,
    so models trained on different view subsets can be combined.
    """
    check_compatible(bundles)
    if corpus.labels and max(corpus.labels) >= bundles[0].n_classes:
        raise IncompatibleModelsError(
            f"data has {corpus.n_classes} classes, models have {bundles[0].n_classes}"
        )
    members = [
        predict_proba(b, b.encode_corpus(corpus), indices, batch_size) for b in bundles
    ]
    result: FloatArray = np.mean(np.stack(members, axis=0), axis=0)
    return result


# --- Training ---


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_acc: float


@dataclass
class TrainResult:
    bundle: ModelBundle
    records: list[EpochRecord]
    best_epoch: int
    best_dev_acc: float
    warnings: list[str] = field(default_factory=list)

    def log_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "epoch": [r.epoch for r in self.records],
                "train_loss": [r.train_loss for r in self.records],
                "dev_acc": [r.dev_acc for r in self.records],
            }
        )


class Trainer:
    """
    Mini-batch Adadelta training with a max-norm constraint on each class's
    weight vector and early stopping on dev accuracy.

    Batch order and dropout masks are drawn from generators keyed by
    ``(seed, epoch)``, so a configuration and seed fix the whole run.
    """

    def __init__(
        self,
        bundle: ModelBundle,
        cfg: TrainConfig | None = None,
        log: Logger | None = None,
        run: str = "train",
    ) -> None:
        self.bundle = bundle
        self.cfg = cfg or bundle.train_config
        self.bundle.train_config = self.cfg.model_copy()
        self.log = log
        self.run = run
        self.warnings: list[str] = []
        self.optimizer = Adadelta(
            {p.name: p for p in bundle.trainable()},
            rho=self.cfg.adadelta_rho,
            epsilon=self.cfg.adadelta_epsilon,
        )
        self._reported_missing = False

    def _warn(self, msg: str) -> None:
        self.warnings.append(msg)
        if self.log is not None:
            self.log.log_warning(msg)

    def step(
        self, batch: Batch, rng: np.random.Generator, epoch: int = 0, step: int = 0
    ) -> float:
        """One forward/backward/update on ``batch``; returns the batch loss."""
        bundle = self.bundle
        tape = GradTape()
        try:
            result = forward_batch(bundle, batch, training=True, rng=rng, tape=tape)
            value = loss(result.probs, batch.labels, bundle, self.cfg.l2_lambda, tape=tape)
        except NonFiniteError as ex:
            raise TrainingAbortedError(epoch, step, str(ex)) from ex

        grads = backward(tape, value, bundle.trainable())
        if grads.missing and not self._reported_missing:
            self._reported_missing = True
            self._warn(f"[{self.run}] no gradient reaches {grads.missing}")
        for emb in bundle.embeddings:
            if emb.matrix.requires_grad:
                grads.grads[emb.matrix.name][PAD_ID] = 0.0
        try:
            self.optimizer.step(grads.grads)
        except NonFiniteError as ex:
            raise TrainingAbortedError(epoch, step, str(ex)) from ex
        # Columns of W_c are the per-class weight vectors.
        bundle.W_c.values = np.ascontiguousarray(
            max_norm_rescale(bundle.W_c.values.T, self.cfg.max_norm_c).T
        )
        return value.item()

    def run_epoch(
        self, examples: Sequence[MultiViewExample], train_indices: Sequence[int], epoch: int
    ) -> float:
        rng = np.random.default_rng([self.cfg.seed, epoch, 1])
        total_loss, seen = 0.0, 0
        batches = batch_iter(
            examples,
            train_indices,
            self.cfg.batch_size,
            seed=self.cfg.seed,
            epoch=epoch,
            min_length=self.bundle.min_length,
        )
        for step, batch in enumerate(batches, start=1):
            total_loss += self.step(batch, rng, epoch, step) * batch.size
            seen += batch.size
        return total_loss / seen

    def fit(self, examples: Sequence[MultiViewExample], split: DatasetSplit) -> TrainResult:
        """
        Trains until dev accuracy has not improved for ``patience`` epochs or
        ``max_epochs`` is reached, then restores the best-dev snapshot.

        Raises:
            EmptySplitError: if the train or dev part is empty.
            TrainingAbortedError: if a loss or update turns non-finite.
        """
        if not split.train:
            raise EmptySplitError("empty training split")
        if not split.dev:
            raise EmptySplitError("empty dev split")
        records: list[EpochRecord] = []
        best_acc, best_epoch = -1.0, 0
        best = self.bundle.snapshot()
        stale = 0
        for epoch in range(1, self.cfg.max_epochs + 1):
            train_loss = self.run_epoch(examples, split.train, epoch)
            dev_acc = evaluate(self.bundle, examples, split.dev, self.cfg.eval_batch_size).accuracy
            records.append(EpochRecord(epoch, train_loss, dev_acc))
            if self.log is not None:
                self.log.epoch(self.run, epoch, train_loss, dev_acc)
            if dev_acc > best_acc:
                best_acc, best_epoch, stale = dev_acc, epoch, 0
                best = self.bundle.snapshot()
            else:
                stale += 1
                if stale >= self.cfg.patience:
                    break
        self.bundle.restore(best)
        if self.log is not None:
            self.log.log(f"[{self.run}] best dev accuracy {best_acc:.4f} at epoch {best_epoch}")
        return TrainResult(self.bundle, records, best_epoch, best_acc, list(self.warnings))


def train(
    bundle: ModelBundle,
    examples: Sequence[MultiViewExample],
    split: DatasetSplit,
    cfg: TrainConfig | None = None,
    log: Logger | None = None,
    run: str = "train",
) -> TrainResult:
    return Trainer(bundle, cfg, log, run).fit(examples, split)


# --- Persistence ---


class TensorEntry(BaseModel):
    name: str
    shape: list[int]


class ModelHeader(BaseModel):
    mode: Mode
    views: list[str]
    n_classes: int
    vocabularies: dict[str, list[str]]
    tensors: list[TensorEntry]
    model: ModelConfig
    train: TrainConfig


def save(bundle: ModelBundle, path: Path) -> Path:
    params = bundle.parameters()
    header = ModelHeader(
        mode=bundle.mode,
        views=bundle.view_names,
        n_classes=bundle.n_classes,
        vocabularies={v.view: v.tokens for v in bundle.vocabs},
        tensors=[TensorEntry(name=p.name, shape=list(p.shape)) for p in params],
        model=bundle.model_config,
        train=bundle.train_config,
    )
    raw_header = header.model_dump_json().encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(MAGIC)
        f.write(len(raw_header).to_bytes(HEADER_LENGTH_BYTES, "little"))
        f.write(raw_header)
        for p in params:
            f.write(np.ascontiguousarray(p.values, dtype="<f8").tobytes())
    return path


def _read_header(data: bytes, path: Path) -> tuple[ModelHeader, int]:
    tag = data[: len(MAGIC)]
    if tag != MAGIC:
        if tag.startswith(b"MCFA") and len(tag) == len(MAGIC):
            raise ModelFormatError(f"{path}: unsupported format {tag.decode(errors='replace')}, expected {MAGIC.decode()}")
        raise ModelFormatError(f"{path}: not a model file, expected magic {MAGIC.decode()}")
    start = len(MAGIC) + HEADER_LENGTH_BYTES
    if len(data) < start:
        raise ModelCorruptionError(f"{path}: truncated before the header")
    size = int.from_bytes(data[len(MAGIC) : start], "little")
    if len(data) < start + size:
        raise ModelCorruptionError(f"{path}: truncated header")
    try:
        header = ModelHeader.model_validate_json(data[start : start + size])
    except ValidationError as ex:
        raise ModelCorruptionError(f"{path}: unreadable header ({ex.error_count()} errors)") from ex
    return header, start + size


def load(path: Path) -> ModelBundle:
    """
    Reads a model file written by ``save``.

    Raises:
        ModelFormatError: if the magic or version is wrong.
        ModelCorruptionError: if the file is truncated or the tensors
            disagree with the header.
    """
    data = Path(path).read_bytes()
    header, offset = _read_header(data, path)
    expected = sum(int(np.prod(t.shape)) for t in header.tensors) * 8
    if len(data) - offset != expected:
        raise ModelCorruptionError(
            f"{path}: {len(data) - offset} tensor bytes, header describes {expected}"
        )
    values: dict[str, FloatArray] = {}
    for entry in header.tensors:
        count = int(np.prod(entry.shape))
        chunk = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        values[entry.name] = chunk.astype(np.float64).reshape(entry.shape)
        offset += count * 8

    try:
        vocabs = [Vocabulary(view, header.vocabularies[view]) for view in header.views]
    except (KeyError, ValueError) as ex:
        raise ModelCorruptionError(f"{path}: vocabulary missing or malformed ({ex})") from ex

    # Rebuild the structure with throwaway values, then fill in the stored ones.
    rng = np.random.default_rng(0)
    embeddings = [
        EmbeddingTable(v.view, Tensor.parameter(np.zeros((len(v), header.model.d_word)), f"emb.{v.view}"))
        for v in vocabs
    ]
    bundle = init_bundle(header.mode, vocabs, embeddings, header.n_classes, header.model, header.train, rng)
    params = bundle.parameters()
    if [p.name for p in params] != [t.name for t in header.tensors]:
        raise ModelCorruptionError(f"{path}: tensor table does not match a {header.mode.value} model")
    for p in params:
        stored = values[p.name]
        if stored.shape != p.shape:
            raise ModelCorruptionError(f"{path}: tensor {p.name} has shape {stored.shape}, expected {p.shape}")
        p.values = stored
    return bundle
