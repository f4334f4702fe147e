import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from mcfa.modules import Configuration as Conf
from mcfa.modules.Configuration import DataSource, Mode


class TestConfiguration(unittest.TestCase):
    def setUp(self) -> None:
        self.test_dir = tempfile.TemporaryDirectory()
        self.toml_path = Path(self.test_dir.name) / "test_config.toml"
        # Isolated from any MCFA_SEED in the calling shell.
        self.env = patch.dict(os.environ, {}, clear=False)
        self.env.start()
        os.environ.pop(Conf.SEED_ENV_VAR, None)

    def tearDown(self) -> None:
        self.env.stop()
        self.test_dir.cleanup()

    def write(self, content: str) -> Path:
        with self.toml_path.open("w", encoding="utf-8") as f:
            f.write(content)
        return self.toml_path

    def test_defaults(self) -> None:
        config = Conf.load_config(None)
        self.assertEqual(config.model.mode, Mode.MCFA)
        self.assertEqual(config.model.windows, [3, 4, 5])
        self.assertEqual(config.model.n_maps, 100)
        self.assertEqual(config.train.batch_size, 50)
        self.assertEqual(config.train.dropout_rate, 0.5)
        self.assertEqual(config.train.max_norm_c, 3.0)
        self.assertEqual(config.train.adadelta_rho, 0.95)
        self.assertEqual(config.train.adadelta_epsilon, 1e-6)
        self.assertEqual(config.data.source, DataSource.SYNTHETIC)
        self.assertEqual(config.data.cv_folds, 10)
        # Synthetic vectors follow the model's word width.
        self.assertEqual(config.synthetic.d_word, 300)
        self.assertEqual(config.view_names(), ["orig", "t1", "t2"])

    def test_load_basic(self) -> None:
        self.write(
            """
            [model]
            mode = "B2"
            windows = [2, 3]
            d_word = 16

            [train]
            max_epochs = 7
            """
        )
        config = Conf.load_config(self.toml_path)
        self.assertEqual(config.model.mode, Mode.B2)
        self.assertEqual(config.model.windows, [2, 3])
        self.assertEqual(config.synthetic.d_word, 16)
        self.assertEqual(config.train.max_epochs, 7)
        self.assertEqual(config.train.patience, 10)  # Default

    def test_missing_file(self) -> None:
        with self.assertRaises(FileNotFoundError):
            Conf.load_config(Path(self.test_dir.name) / "absent.toml")

    def test_invalid_toml(self) -> None:
        self.write("[model\nmode = ")
        with self.assertRaises(Conf.ConfigError):
            Conf.load_config(self.toml_path)

    def test_unknown_key_in_file(self) -> None:
        self.write(
            """
            [train]
            learning_rate = 0.1
            """
        )
        with self.assertRaises(Conf.ConfigError) as ctx:
            Conf.load_config(self.toml_path)
        self.assertIn("learning_rate", ctx.exception.key)

    def test_validation_error(self) -> None:
        self.write(
            """
            [train]
            dropout_rate = 1.0
            """
        )
        with self.assertRaises(Conf.ConfigError) as ctx:
            Conf.load_config(self.toml_path)
        self.assertEqual(ctx.exception.key, "train.dropout_rate")

    def test_overrides_beat_file(self) -> None:
        self.write(
            """
            [train]
            max_epochs = 7
            """
        )
        config = Conf.load_config(self.toml_path, {"max-epochs": "3", "model.mode": "b1"})
        self.assertEqual(config.train.max_epochs, 3)
        self.assertEqual(config.model.mode, Mode.B1)

    def test_override_lists(self) -> None:
        config = Conf.load_config(None, {"windows": "2,3", "use_views": "orig,t2"})
        self.assertEqual(config.model.windows, [2, 3])
        self.assertEqual(config.active_views(), ["orig", "t2"])
        config = Conf.load_config(None, {"windows": "[4, 5]"})
        self.assertEqual(config.model.windows, [4, 5])

    def test_unknown_override(self) -> None:
        with self.assertRaises(Conf.ConfigError):
            Conf.load_config(None, {"no_such_key": "1"})
        with self.assertRaises(Conf.ConfigError):
            Conf.load_config(None, {"train.windows": "3"})

    def test_seed_priority(self) -> None:
        os.environ[Conf.SEED_ENV_VAR] = "42"
        self.assertEqual(Conf.load_config(None).train.seed, 42)
        self.assertEqual(Conf.load_config(None, {"seed": "7"}).train.seed, 7)
        self.write(
            """
            [train]
            seed = 3
            """
        )
        self.assertEqual(Conf.load_config(self.toml_path).train.seed, 3)
        # The synthetic generator keeps its own seed.
        self.assertEqual(Conf.load_config(None).synthetic.seed, 0)

    def test_synthetic_width_mismatch(self) -> None:
        self.write(
            """
            [model]
            d_word = 8

            [synthetic]
            d_word = 16
            """
        )
        with self.assertRaises(Conf.ConfigError):
            Conf.load_config(self.toml_path)

    def test_corpus_sources(self) -> None:
        corpus = Path(self.test_dir.name) / "en.txt"
        corpus.write_text("0\ta b\n", encoding="utf-8")
        test = Path(self.test_dir.name) / "en.test.txt"
        test.write_text("1\tc\n", encoding="utf-8")

        self.write(f'[data]\nsource = "cv"\nviews = ["en"]\ncorpus = ["{corpus.as_posix()}"]\n')
        config = Conf.load_config(self.toml_path)
        self.assertEqual(config.data.source, DataSource.CV)
        self.assertEqual(config.view_names(), ["en"])

        self.write(f'[data]\nsource = "fixed"\nviews = ["en"]\ncorpus = ["{corpus.as_posix()}"]\n')
        with self.assertRaises(Conf.ConfigError):
            Conf.load_config(self.toml_path)

        self.write(
            f'[data]\nsource = "fixed"\nviews = ["en"]\ncorpus = ["{corpus.as_posix()}"]\n'
            f'test_corpus = ["{test.as_posix()}"]\n'
        )
        self.assertEqual(Conf.load_config(self.toml_path).data.source, DataSource.FIXED)

    def test_corpus_source_needs_views_and_files(self) -> None:
        self.write('[data]\nsource = "cv"\n')
        with self.assertRaises(Conf.ConfigError):
            Conf.load_config(self.toml_path)
        missing = Path(self.test_dir.name) / "missing.txt"
        self.write(f'[data]\nsource = "cv"\nviews = ["en"]\ncorpus = ["{missing.as_posix()}"]\n')
        with self.assertRaises(Conf.ConfigError):
            Conf.load_config(self.toml_path)

    def test_fold_out_of_range(self) -> None:
        corpus = Path(self.test_dir.name) / "en.txt"
        corpus.write_text("0\ta b\n", encoding="utf-8")
        self.write(
            f'[data]\nsource = "cv"\nviews = ["en"]\ncorpus = ["{corpus.as_posix()}"]\n'
            "cv_folds = 3\nfold = 3\n"
        )
        with self.assertRaises(Conf.ConfigError):
            Conf.load_config(self.toml_path)

    def test_unknown_use_view(self) -> None:
        with self.assertRaises(Conf.ConfigError):
            Conf.load_config(None, {"use_views": "orig,xx"})
