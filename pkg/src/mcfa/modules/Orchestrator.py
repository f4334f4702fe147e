"""
Command implementations: each ``mcfa`` subcommand is one method of
``RunOrchestrator``, which owns the configuration, the logger and the output
directory of a run.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd

from . import Analysis, Model
from .Configuration import ConfigError, DataSource, Mode, RunConfig, load_config
from .Data import (
    DatasetSplit,
    MultiViewExample,
    ParallelCorpus,
    build_vocabularies,
    embeddings_from_vectors,
    encode_corpus,
    gen_synthetic,
    holdout_split,
    make_folds,
    random_embeddings,
    read_embedding_file,
    read_parallel_corpus,
    write_embedding_file,
    write_parallel_corpus,
)
from .Logger import Logger
from .Numerics import FloatArray
from .Utils import format_accuracy, write_csv


class UsageError(ValueError):
    pass


class AnalysisKind(str, Enum):
    PCA = "pca"
    SEPARATION = "separation"
    NEIGHBORS = "neighbors"
    DIAGNOSTICS = "diagnostics"
    USABILITY = "usability"


class SplitPart(str, Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


@dataclass
class LoadedData:
    # All configured views; training runs pick their own subset.
    corpus: ParallelCorpus
    splits: list[DatasetSplit]
    # view -> token -> vector, for views with pre-trained vectors
    vectors: dict[str, dict[str, FloatArray]] = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return self.corpus.n_classes


@dataclass
class FoldOutcome:
    name: str
    split: DatasetSplit
    result: Model.TrainResult
    test: Model.Evaluation

    @property
    def bundle(self) -> Model.ModelBundle:
        return self.result.bundle


@dataclass
class RunSummary:
    mode: Mode
    n_views: int
    accuracies: list[float]

    @property
    def mean_acc(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std_acc(self) -> float:
        return float(np.std(self.accuracies))

    def line(self) -> str:
        return f"{self.mode.value},{self.n_views},{self.mean_acc:.6f},{self.std_acc:.6f}"


class RunOrchestrator:
    def __init__(
        self,
        config_path: str | Path | None,
        overrides: dict[str, str] | None = None,
        quiet: bool = False,
    ):
        self.config_path = Path(config_path) if isinstance(config_path, str) else config_path
        self.overrides = dict(overrides or {})
        self.quiet = quiet

        self.config: RunConfig | None = None
        self.log: Logger | None = None
        self.out_dir: Path = Path("runs")
        self._data: LoadedData | None = None

    def initialize(self) -> None:
        """
        Loads the configuration and opens the run logger.

        Raises:
            ConfigError: if the file is missing or any key is invalid.
        """
        try:
            self.config = load_config(self.config_path, self.overrides)
        except FileNotFoundError as ex:
            raise ConfigError("config", str(ex)) from ex
        self.out_dir = self.config.output.dir
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.log = Logger(
            json_file=self.out_dir / "run_log.json",
            json_log_size=self.config.output.json_log_size,
            quiet=self.quiet,
        )

    def _ready(self) -> tuple[RunConfig, Logger]:
        assert self.config is not None, "initialize() first"
        assert self.log is not None
        return self.config, self.log

    # --- data ---

    def load_data(self) -> LoadedData:
        if self._data is not None:
            return self._data
        cfg, log = self._ready()
        data = cfg.data
        vectors: dict[str, dict[str, FloatArray]] = {}
        if data.source is DataSource.SYNTHETIC:
            dataset = gen_synthetic(cfg.synthetic)
            corpus = dataset.corpus
            vectors.update(dataset.vectors)
            n_test = cfg.synthetic.n_test
            splits = [holdout_split(len(corpus) - n_test, n_test, cfg.train.dev_fraction, cfg.train.seed)]
            log.log(f"Generated {len(corpus)} synthetic examples over views {list(corpus.view_names)}")
        elif data.source is DataSource.FIXED:
            train_part = read_parallel_corpus(data.corpus, data.views)
            test_part = read_parallel_corpus(data.test_corpus, data.views)
            corpus = train_part.extend(test_part)
            splits = [holdout_split(len(train_part), len(test_part), cfg.train.dev_fraction, cfg.train.seed)]
            log.log(f"Read {len(train_part)} training and {len(test_part)} test examples")
        else:
            corpus = read_parallel_corpus(data.corpus, data.views)
            splits = make_folds(corpus.labels, data.cv_folds, cfg.train.seed, cfg.train.dev_fraction, log)
            log.log(f"Read {len(corpus)} examples for {data.cv_folds}-fold cross-validation")

        for view, path in data.embeddings.items():
            vectors[view] = read_embedding_file(path, cfg.model.d_word)
        self._data = LoadedData(corpus, splits, vectors)
        return self._data

    def _split(self, data: LoadedData) -> DatasetSplit:
        cfg, _ = self._ready()
        if cfg.data.source is DataSource.CV:
            return data.splits[cfg.data.fold]
        return data.splits[0]

    def _indices(self, data: LoadedData, part: SplitPart) -> list[int]:
        split = self._split(data)
        return {SplitPart.TRAIN: split.train, SplitPart.DEV: split.dev, SplitPart.TEST: split.test}[part]

    def build_bundle(
        self,
        data: LoadedData,
        split: DatasetSplit,
        views: list[str],
        mode: Mode,
        seed: int,
    ) -> tuple[Model.ModelBundle, list[MultiViewExample]]:
        """Vocabularies from the training part, embeddings, fresh parameters."""
        cfg, log = self._ready()
        corpus = data.corpus.select_views(views)
        vocabs = build_vocabularies(corpus, split.train, cfg.data.min_count)
        rng = np.random.default_rng(seed)
        tables = []
        for vocab in vocabs:
            if vocab.view in data.vectors:
                table, found = embeddings_from_vectors(
                    data.vectors[vocab.view], vocab, cfg.model.d_word, rng, cfg.model.unknown_range
                )
                log.log(f"[{vocab.view}] {found}/{len(vocab) - 2} vocabulary tokens have vectors")
            else:
                table = random_embeddings(vocab, cfg.model.d_word, rng, cfg.model.unknown_range)
            tables.append(table)
        bundle = Model.init_bundle(mode, vocabs, tables, data.n_classes, cfg.model, cfg.train, rng)
        return bundle, encode_corpus(corpus, vocabs)

    # --- training ---

    def _train_one(
        self, data: LoadedData, split: DatasetSplit, views: list[str], mode: Mode, name: str
    ) -> FoldOutcome:
        cfg, log = self._ready()
        seed = cfg.train.seed + (split.fold or 0)
        train_cfg = cfg.train.model_copy(update={"seed": seed})
        bundle, examples = self.build_bundle(data, split, views, mode, seed)
        result = Model.Trainer(bundle, train_cfg, log, run=name).fit(examples, split)
        test = Model.evaluate(bundle, examples, split.test, train_cfg.eval_batch_size)
        log.log(f"[{name}] test accuracy {format_accuracy(test.accuracy)}")
        return FoldOutcome(name, split, result, test)

    def train_views(self, views: list[str], mode: Mode) -> list[FoldOutcome]:
        """Trains one model per split (every fold under CV) on ``views``."""
        cfg, _ = self._ready()
        data = self.load_data()
        named = [
            (f"fold{s.fold}" if s.fold is not None else "holdout", s) for s in data.splits
        ]
        if cfg.output.jobs > 1 and len(named) > 1:
            with ThreadPoolExecutor(max_workers=cfg.output.jobs) as pool:
                futures = [
                    pool.submit(self._train_one, data, split, views, mode, name)
                    for name, split in named
                ]
                return [f.result() for f in futures]
        return [self._train_one(data, split, views, mode, name) for name, split in named]

    def train(self) -> RunSummary:
        """
        ``mcfa train``: trains every split, writes one model, training log and
        predictions file per split plus ``summary.csv``.
        """
        cfg, log = self._ready()
        views = cfg.active_views()
        mode = cfg.model.mode
        log.log(f"Training {mode.value} on views {views}")
        outcomes = self.train_views(views, mode)
        for outcome in outcomes:
            Model.save(outcome.bundle, self.out_dir / f"{outcome.name}.model")
            write_csv(outcome.result.log_frame(), self.out_dir / f"training_log_{outcome.name}.csv")
            write_csv(outcome.test.predictions, self.out_dir / f"predictions_{outcome.name}.csv")
        summary = RunSummary(mode, len(views), [o.test.accuracy for o in outcomes])
        write_csv(
            pd.DataFrame(
                [{"mode": mode.value, "n_views": len(views), "mean_acc": summary.mean_acc, "std_acc": summary.std_acc}]
            ),
            self.out_dir / "summary.csv",
        )
        log.log(f"{mode.value} mean accuracy {format_accuracy(summary.mean_acc)} over {len(outcomes)} run(s)")
        log.persistStatus()
        print(summary.line())
        return summary

    def sweep(self) -> pd.DataFrame:
        """
        ``mcfa sweep``: one model per translation on the original view plus
        that translation, ranked by mean test accuracy.

        The translation with the best mean dev accuracy has its first model
        saved as ``best_n1.model``.
        """
        cfg, log = self._ready()
        views = cfg.active_views()
        if len(views) < 2:
            raise UsageError("sweep needs the original view and at least one translation")
        mode = cfg.model.mode
        original = views[0]
        rows = []
        best_dev, best_bundle = -1.0, None
        for view in views[1:]:
            outcomes = self.train_views([original, view], mode)
            accs = [o.test.accuracy for o in outcomes]
            rows.append(
                {"view": view, "mode": mode.value, "mean_acc": float(np.mean(accs)), "std_acc": float(np.std(accs))}
            )
            dev = float(np.mean([o.result.best_dev_acc for o in outcomes]))
            if dev > best_dev:
                best_dev, best_bundle = dev, outcomes[0].bundle
        frame = pd.DataFrame(rows, columns=["view", "mode", "mean_acc", "std_acc"])
        ranks = frame["mean_acc"].rank(method="first", ascending=False).astype(np.int64)
        frame["rank"] = ranks
        write_csv(frame, self.out_dir / "sweep.csv")
        assert best_bundle is not None
        Model.save(best_bundle, self.out_dir / "best_n1.model")
        worst = frame.loc[frame["mean_acc"].idxmin()]
        log.log(
            f"Single-translation {mode.value}: best {best_bundle.view_names[1]} by dev, "
            f"worst {worst['view']} at {format_accuracy(worst['mean_acc'])}"
        )
        log.persistStatus()
        return frame

    # --- evaluation ---

    def _load_models(self, paths: list[Path]) -> list[Model.ModelBundle]:
        _, log = self._ready()
        bundles = []
        for path in paths:
            bundle = Model.load(path)
            log.log(f"Loaded {bundle.mode.value} model on views {bundle.view_names} from {path}")
            bundles.append(bundle)
        return bundles

    def evaluate(self, model_path: Path, part: SplitPart = SplitPart.TEST) -> float:
        """``mcfa eval``: prints ``accuracy=<float>`` and writes per-example predictions."""
        _, log = self._ready()
        (bundle,) = self._load_models([model_path])
        data = self.load_data()
        indices = self._indices(data, part)
        if not indices:
            raise Model.EmptySplitError("empty split")
        examples = bundle.encode_corpus(data.corpus)
        evaluation = Model.evaluate(bundle, examples, indices)
        write_csv(evaluation.predictions, self.out_dir / "eval_predictions.csv")
        log.log(f"{part.value} accuracy {format_accuracy(evaluation.accuracy)}")
        log.persistStatus()
        print(f"accuracy={evaluation.accuracy:.6f}")
        return evaluation.accuracy

    def ensemble(self, model_paths: list[Path], part: SplitPart = SplitPart.TEST) -> float:
        """``mcfa ensemble``: averages the members' class probabilities."""
        _, log = self._ready()
        if len(model_paths) < 2:
            raise UsageError("ensemble needs at least two models")
        bundles = self._load_models(model_paths)
        Model.check_compatible(bundles)
        data = self.load_data()
        indices = self._indices(data, part)
        if not indices:
            raise Model.EmptySplitError("empty split")
        probs = Model.ensemble_predict(bundles, data.corpus, indices)
        frame = Model.predictions_frame(indices, [data.corpus.labels[i] for i in indices], probs)
        accuracy = float((frame["predicted"] == frame["label"]).mean())
        write_csv(frame, self.out_dir / "ensemble_predictions.csv")
        log.log(f"ensemble of {len(bundles)} models: {format_accuracy(accuracy)}")
        log.persistStatus()
        print(f"accuracy={accuracy:.6f}")
        return accuracy

    # --- analysis ---

    def analyze(
        self,
        model_path: Path,
        kind: AnalysisKind,
        part: SplitPart = SplitPart.TEST,
        components: int = 2,
        query: int | None = None,
        neighbors: int = 5,
    ) -> list[Path]:
        """
        ``mcfa analyze``: writes the requested tables for the unaltered space
        and, for mcfa models, the altered space. Returns the written paths.
        """
        _, log = self._ready()
        (bundle,) = self._load_models([model_path])
        if kind in (AnalysisKind.DIAGNOSTICS, AnalysisKind.USABILITY) and bundle.mode is not Mode.MCFA:
            raise Analysis.AnalysisError(f"{kind.value} needs an mcfa model, got {bundle.mode.value}")
        data = self.load_data()
        examples = bundle.encode_corpus(data.corpus)
        collected = Analysis.collect_vectors(bundle, examples, self._indices(data, part))

        written: list[Path] = []
        if kind is AnalysisKind.PCA:
            for space in collected.space_names():
                frame = Analysis.projection_frame(collected, space, components)
                written.append(write_csv(frame, self.out_dir / f"projection_{space}.csv"))
        elif kind is AnalysisKind.SEPARATION:
            written.append(write_csv(Analysis.separation_report(collected, log), self.out_dir / "separation.csv"))
        elif kind is AnalysisKind.NEIGHBORS:
            target = int(collected.indices[0]) if query is None else query
            frame = Analysis.neighbors_frame(collected, target, neighbors, log)
            written.append(write_csv(frame, self.out_dir / "neighbors.csv"))
        elif kind is AnalysisKind.DIAGNOSTICS:
            main, vectors = Analysis.dump_diagnostics(collected)
            written.append(write_csv(main, self.out_dir / "diagnostics.csv"))
            written.append(write_csv(vectors, self.out_dir / "diagnostics_vectors.csv"))
        else:
            written.append(write_csv(Analysis.usability_summary(collected), self.out_dir / "usability.csv"))
        for path in written:
            log.log(f"Wrote {path}")
        log.persistStatus()
        return written

    # --- synthetic data ---

    def gen_synthetic(self, out_dir: Path | None = None) -> list[Path]:
        """
        ``mcfa gen-synthetic``: writes the synthetic corpus as per-view
        ``<view>.train.txt`` / ``<view>.test.txt`` files and ``<view>.vec``
        word vectors, ready for the fixed source.
        """
        cfg, log = self._ready()
        target = out_dir or self.out_dir
        dataset = gen_synthetic(cfg.synthetic)
        corpus = dataset.corpus
        n_train = len(corpus) - cfg.synthetic.n_test
        train_part = _slice(corpus, 0, n_train)
        test_part = _slice(corpus, n_train, len(corpus))
        names = list(corpus.view_names)
        train_paths = [target / f"{v}.train.txt" for v in names]
        test_paths = [target / f"{v}.test.txt" for v in names]
        vec_paths = [target / f"{v}.vec" for v in names]
        write_parallel_corpus(train_part, train_paths)
        write_parallel_corpus(test_part, test_paths)
        for view, path in zip(names, vec_paths, strict=True):
            write_embedding_file(dataset.vectors[view], path)
        log.log(f"Wrote {n_train} training and {len(test_part)} test examples for views {names} to {target}")
        log.persistStatus()
        return [*train_paths, *test_paths, *vec_paths]


def _slice(corpus: ParallelCorpus, start: int, stop: int) -> ParallelCorpus:
    return ParallelCorpus(
        corpus.view_names,
        corpus.labels[start:stop],
        tuple(sentences[start:stop] for sentences in corpus.sentences),
    )
