"""
Pytest configuration and fixtures for integration tests.

Integration tests train desk-scale models on the synthetic multi-view task
and take several minutes:
- 3 views, 4 classes, 2000 training and 500 test examples
- the first two views each carry the signal for two classes
- the third view carries no class signal and half of its tokens are noise
- 5 seeds per claim

Run with: pytest --run-integration tests/integration/
"""

from dataclasses import dataclass

import numpy as np
import pytest

from mcfa.modules.Configuration import Mode, ModelConfig, SyntheticConfig, TrainConfig
from mcfa.modules.Data import (
    build_vocabularies,
    embeddings_from_vectors,
    encode_corpus,
    gen_synthetic,
    holdout_split,
)
from mcfa.modules.Logger import Logger
from mcfa.modules.Model import ModelBundle, evaluate, init_bundle, train


SEEDS = [0, 1, 2, 3, 4]
ALL_VIEWS = ("orig", "t1", "t2")
NOISY_VIEW = "t2"


@dataclass
class AcceptanceRun:
    bundle: ModelBundle
    test_accuracy: float
    examples: list
    test: list[int]


class AcceptanceRuns:
    """Trains each (seed, mode, views) combination once and caches it."""

    def __init__(self, logger: Logger) -> None:
        self.log = logger
        self.model_config = ModelConfig(windows=[3, 4, 5], n_maps=10, d_word=16)
        self._datasets: dict = {}
        self._runs: dict = {}

    def dataset(self, seed: int):
        if seed not in self._datasets:
            cfg = SyntheticConfig(
                n_views=3,
                d_word=16,
                n_classes=4,
                n_examples=2500,
                n_test=500,
                informative=[[0, 1], [2, 3], []],
                view_noise_rates=[0.0, 0.0, 0.5],
                seed=seed,
            )
            self._datasets[seed] = gen_synthetic(cfg)
        return self._datasets[seed]

    def get(self, seed: int, mode: Mode, views: tuple[str, ...] = ALL_VIEWS) -> AcceptanceRun:
        key = (seed, mode, views)
        if key not in self._runs:
            dataset = self.dataset(seed)
            corpus = dataset.corpus.select_views(list(views))
            train_cfg = TrainConfig(max_epochs=10, patience=3, seed=seed)
            split = holdout_split(2000, 500, train_cfg.dev_fraction, seed)
            vocabs = build_vocabularies(corpus, split.train)
            rng = np.random.default_rng(seed)
            tables = [
                embeddings_from_vectors(dataset.vectors[v.view], v, self.model_config.d_word, rng)[0]
                for v in vocabs
            ]
            bundle = init_bundle(mode, vocabs, tables, corpus.n_classes, self.model_config, train_cfg, rng)
            examples = encode_corpus(corpus, vocabs)
            run = f"{mode.value}-{'+'.join(views)}-seed{seed}"
            train(bundle, examples, split, log=self.log, run=run)
            accuracy = evaluate(bundle, examples, split.test).accuracy
            self.log.log(f"[{run}] test accuracy {accuracy:.4f}")
            self._runs[key] = AcceptanceRun(bundle, accuracy, examples, split.test)
        return self._runs[key]


@pytest.fixture(scope="session")
def acceptance_runs():
    return AcceptanceRuns(Logger(quiet=True))
