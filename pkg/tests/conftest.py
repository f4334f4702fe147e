"""
Global pytest configuration and fixtures for mcfa tests.

This conftest.py provides:
- Custom pytest markers for test categorization
- Automatic integration test skipping (unless --run-integration is passed)
- Tiny configurations, corpora and bundles shared by the unit tests
"""

import sys
from pathlib import Path

import numpy as np
import pytest


# Add src to Python path for imports
src_path = Path(__file__).parent.parent / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from mcfa.modules.Configuration import Mode, ModelConfig, SyntheticConfig, TrainConfig  # noqa: E402
from mcfa.modules.Data import (  # noqa: E402
    build_vocabularies,
    embeddings_from_vectors,
    encode_corpus,
    gen_synthetic,
    holdout_split,
)
from mcfa.modules.Logger import Logger  # noqa: E402
from mcfa.modules.Model import init_bundle  # noqa: E402


def pytest_addoption(parser):
    """Add custom command-line options for pytest.

    Options:
    --run-integration: Enable integration tests (disabled by default)
    """
    parser.addoption(
        "--run-integration",
        action="store_true",
        default=False,
        help="Run integration tests (disabled by default)",
    )


def pytest_configure(config):
    """Configure pytest with custom markers.

    Markers:
    - unit: Fast, isolated tests on tiny models
    - integration: Desk-scale training runs (minutes)
    - slow: Tests that take more than 1 second to run
    """
    config.addinivalue_line("markers", "unit: Unit tests (fast, isolated, tiny models)")
    config.addinivalue_line(
        "markers", "integration: Integration tests (desk-scale training, minutes)"
    )
    config.addinivalue_line("markers", "slow: Slow-running tests (take > 1 second)")


def pytest_collection_modifyitems(config, items):
    """Marks tests under tests/integration/ and skips them unless --run-integration is passed."""
    run_integration = config.getoption("--run-integration")

    for item in items:
        if "integration" in str(item.fspath):
            item.add_marker("integration")
            item.add_marker("slow")

        if item.get_closest_marker("integration") and not run_integration:
            item.add_marker(
                pytest.mark.skipif(
                    not run_integration,
                    reason="Integration tests skipped. Use --run-integration to run.",
                )
            )


@pytest.fixture
def quiet_logger():
    return Logger(quiet=True)


@pytest.fixture
def tiny_model_config():
    return ModelConfig(windows=[2, 3], n_maps=2, d_word=4)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(batch_size=8, max_epochs=3, patience=2, eval_batch_size=16, seed=3)


@pytest.fixture
def tiny_synthetic_config():
    return SyntheticConfig(
        n_views=3,
        d_word=4,
        n_classes=3,
        n_examples=60,
        n_test=12,
        filler_tokens=6,
        signal_tokens=2,
        min_length=2,
        max_length=7,
        seed=11,
    )


@pytest.fixture
def tiny_dataset(tiny_synthetic_config):
    return gen_synthetic(tiny_synthetic_config)


@pytest.fixture
def make_bundle(tiny_dataset, tiny_model_config, tiny_train_config):
    """
    Factory for tiny bundles over the tiny synthetic corpus.

    Returns ``(bundle, examples, split)``.
    """

    def factory(mode=Mode.MCFA, views=None, seed=0, model_config=None, train_config=None):
        corpus = tiny_dataset.corpus
        if views is not None:
            corpus = corpus.select_views(views)
        model_cfg = model_config or tiny_model_config
        train_cfg = train_config or tiny_train_config
        split = holdout_split(48, 12, 0.25, seed)
        vocabs = build_vocabularies(corpus, split.train)
        rng = np.random.default_rng(seed)
        tables = [
            embeddings_from_vectors(tiny_dataset.vectors[v.view], v, model_cfg.d_word, rng)[0]
            for v in vocabs
        ]
        bundle = init_bundle(mode, vocabs, tables, corpus.n_classes, model_cfg, train_cfg, rng)
        return bundle, encode_corpus(corpus, vocabs), split

    return factory
