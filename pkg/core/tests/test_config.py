import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from core.services.config import dump_experiment_config, load_experiment_config, parse_experiment_values
from core.services.errors import ConfigError
from core.services.model import ModelConfig
from core.services.trainer import TrainerConfig


class ExperimentConfigTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def test_defaults_without_file(self):
        model_config, trainer_config = load_experiment_config(None)
        self.assertEqual(model_config, ModelConfig())
        self.assertEqual(trainer_config, TrainerConfig())

    def test_file_values_and_comments(self):
        path = self.dir / 'exp.cfg'
        path.write_text("# small model\nd_model=32\nn_layers=1\n\nlr=0.002\nbatch_size=4\n", encoding='utf-8')
        model_config, trainer_config = load_experiment_config(path)
        self.assertEqual((model_config.d_model, model_config.n_layers), (32, 1))
        self.assertEqual((trainer_config.lr, trainer_config.batch_size), (0.002, 4))

    def test_seed_override_reaches_both_configs(self):
        model_config, trainer_config = parse_experiment_values({'seed': '3'}, seed=11)
        self.assertEqual((model_config.seed, trainer_config.seed), (11, 11))

    def test_unknown_key(self):
        with self.assertRaises(ConfigError):
            parse_experiment_values({'learning_rate': '0.1'})

    def test_unparsable_value(self):
        with self.assertRaises(ConfigError):
            parse_experiment_values({'d_model': 'big'})

    def test_invalid_value(self):
        with self.assertRaises(ConfigError):
            parse_experiment_values({'d_model': '33'})
        with self.assertRaises(ConfigError):
            parse_experiment_values({'batch_size': '0'})

    def test_dump_round_trips(self):
        model_config = ModelConfig(d_model=32, n_heads=4, seed=5)
        trainer_config = TrainerConfig(lr=5e-4, warmup_steps=10, seed=5)
        path = self.dir / 'dumped.cfg'
        path.write_text(dump_experiment_config(model_config, trainer_config), encoding='utf-8')
        self.assertEqual(load_experiment_config(path), (model_config, trainer_config))
