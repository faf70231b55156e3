import json
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase, override_settings

from core.models import ExperimentRun
from core.services.checkpoint import save_checkpoint
from core.services.corpus import load
from core.services.errors import DegenerateLatticeError
from core.services.model import init_params
from core.tests.utils import CopyModel, tiny_config

TINY_CONFIG = """# desk test model
n_layers=1
n_heads=2
d_model=16
d_ff=24
input_vocab=6
output_vocab=7
max_len=64
batch_size=4
checkpoint_every=0
log_every=0
"""


class CommandTestCase(TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.workdir = Path(self.tmp.name)
        (self.workdir / 'tiny.cfg').write_text(TINY_CONFIG, encoding='utf-8')

    def run_command(self, name, *args):
        out = StringIO()
        call_command(name, *args, '--workdir', str(self.workdir), stdout=out)
        return out.getvalue()

    def assertExitCode(self, code, name, *args):
        with self.assertRaises(CommandError) as caught:
            self.run_command(name, *args)
        self.assertEqual(caught.exception.returncode, code)

    def gen_tiny(self, out='corpus.tsv', spec='default', n='8'):
        self.run_command('gen', '--spec', spec, '--n', n, '--len-min', '2', '--len-max', '4',
                         '--input-vocab', '6', '--output-vocab', '7', '--out', out)
        return self.workdir / out

    def tiny_checkpoint(self, name='tiny.bin'):
        return save_checkpoint(self.workdir / name, init_params(tiny_config(seed=0)))


class GenCommandTests(CommandTestCase):

    def test_empty_corpus(self):
        output = self.run_command('gen', '--n', '0', '--out', 'empty.tsv')
        self.assertEqual((self.workdir / 'empty.tsv').read_text(), "")
        self.assertIn("GEN RUN", output)

    def test_same_flags_same_file(self):
        first = self.gen_tiny('a.tsv').read_bytes()
        second = self.gen_tiny('b.tsv').read_bytes()
        self.assertEqual(first, second)
        self.assertEqual(len(load(self.workdir / 'a.tsv')), 8)

    def test_bad_length_range_is_usage_error(self):
        self.assertExitCode(2, 'gen', '--len-min', '5', '--len-max', '2')

    def test_run_is_recorded(self):
        self.gen_tiny()
        run = ExperimentRun.objects.get()
        self.assertEqual(run.command, 'gen')
        self.assertEqual(run.metrics['utterances'], 8)
        self.assertIn("RESULTS:", run.report)
        self.assertTrue(str(run).startswith("gen (seed 0)"))
        self.assertEqual(run.get_preview(10), run.report[:10] + "...")
        self.assertEqual(run.arguments['out'], 'corpus.tsv')

    @override_settings(TRANSDUCER_RECORD_RUNS=False)
    def test_recording_can_be_disabled(self):
        self.gen_tiny()
        self.assertFalse(ExperimentRun.objects.exists())


class TrainCommandTests(CommandTestCase):

    def test_zero_epochs_writes_initial_checkpoint(self):
        self.gen_tiny()
        self.run_command('train', '--corpus', 'corpus.tsv', '--config', 'tiny.cfg', '--epochs', '0')
        out_dir = self.workdir / 'train'
        self.assertEqual(sorted(p.name for p in out_dir.glob('ckpt-*.bin')), ['ckpt-0.bin'])
        self.assertTrue((out_dir / 'config.txt').exists())

    def test_config_file_seed_kept_unless_flag_given(self):
        self.gen_tiny()
        (self.workdir / 'seeded.cfg').write_text(TINY_CONFIG + "seed=5\n", encoding='utf-8')
        self.run_command('train', '--corpus', 'corpus.tsv', '--config', 'seeded.cfg', '--epochs', '0',
                         '--out-dir', 'from-file')
        written = (self.workdir / 'from-file' / 'config.txt').read_text().splitlines()
        self.assertIn("seed=5", written)
        self.assertEqual(ExperimentRun.objects.get(command='train').seed, 5)

        self.run_command('train', '--corpus', 'corpus.tsv', '--config', 'seeded.cfg', '--epochs', '0',
                         '--out-dir', 'from-flag', '--seed', '2')
        written = (self.workdir / 'from-flag' / 'config.txt').read_text().splitlines()
        self.assertIn("seed=2", written)

    def test_loss_rows_match_steps(self):
        self.gen_tiny()
        self.run_command('train', '--corpus', 'corpus.tsv', '--config', 'tiny.cfg', '--epochs', '2',
                         '--out-dir', 'run')
        curve = pd.read_csv(self.workdir / 'run' / 'loss.csv')
        self.assertEqual(curve['step'].tolist(), [1, 2, 3, 4])
        self.assertTrue((self.workdir / 'run' / 'ckpt-4.bin').exists())

    def test_missing_corpus_is_io_error(self):
        self.assertExitCode(1, 'train', '--corpus', 'absent.tsv', '--config', 'tiny.cfg', '--epochs', '1')

    def test_bad_config_key_is_usage_error(self):
        self.gen_tiny()
        (self.workdir / 'bad.cfg').write_text("depth=3\n", encoding='utf-8')
        self.assertExitCode(2, 'train', '--corpus', 'corpus.tsv', '--config', 'bad.cfg')

    def test_non_finite_loss_exit_code(self):
        self.gen_tiny()
        with mock.patch('core.services.trainer.loss_and_grad', side_effect=DegenerateLatticeError("zero")):
            self.assertExitCode(3, 'train', '--corpus', 'corpus.tsv', '--config', 'tiny.cfg', '--epochs', '1')

    def test_vocabulary_mismatch_exit_code(self):
        self.run_command('gen', '--n', '4', '--out', 'wide.tsv')
        self.assertExitCode(4, 'train', '--corpus', 'wide.tsv', '--config', 'tiny.cfg', '--epochs', '1')


class DecodeCommandTests(CommandTestCase):

    def setUp(self):
        super().setUp()
        self.gen_tiny('identity.tsv', spec='identity', n='5')
        self.tiny_checkpoint()

    def decode_with_copy_model(self, *args):
        with mock.patch('core.services.decoder.forward_row', side_effect=CopyModel(vocab=7)):
            self.run_command('decode', '--ckpt', 'tiny.bin', '--corpus', 'identity.tsv', *args)

    def test_copy_model_scores_zero_error(self):
        self.decode_with_copy_model('--out', 'out/decode.jsonl')
        metrics = pd.read_csv(self.workdir / 'out' / 'metrics.csv')
        self.assertEqual(float(metrics['ter'][0]), 0.0)
        self.assertEqual(float(metrics['duration_accuracy'][0]), 1.0)
        lines = (self.workdir / 'out' / 'decode.jsonl').read_text().splitlines()
        self.assertEqual(len(lines), 5)
        record = json.loads(lines[0])
        self.assertEqual(record['emitted'], record['reference'])
        self.assertEqual(len(record['durations']), len(record['target']))

    def test_prompt_modes(self):
        for mode in ('prompt', 'pseudo-prompt'):
            self.decode_with_copy_model('--mode', mode, '--out', f'{mode}.jsonl')
            metrics = pd.read_csv(self.workdir / 'metrics.csv')
            self.assertEqual(float(metrics['ter'][0]), 0.0, msg=mode)

    def test_degenerate_window_terminates(self):
        self.decode_with_copy_model('--window', '0,0')
        metrics = pd.read_csv(self.workdir / 'metrics.csv')
        self.assertEqual(int(metrics['aborted'][0]), 0)

    def test_real_model_runs(self):
        self.run_command('decode', '--ckpt', 'tiny.bin', '--corpus', 'identity.tsv', '--max-steps', '3')
        self.assertEqual(len((self.workdir / 'decode.jsonl').read_text().splitlines()), 5)

    def test_bad_window_is_usage_error(self):
        self.assertExitCode(2, 'decode', '--ckpt', 'tiny.bin', '--corpus', 'identity.tsv', '--window', '3')
        self.assertExitCode(2, 'decode', '--ckpt', 'tiny.bin', '--corpus', 'identity.tsv', '--window=-1,2')

    def test_checkpoint_vocabulary_mismatch(self):
        self.run_command('gen', '--n', '3', '--out', 'wide.tsv')
        self.assertExitCode(4, 'decode', '--ckpt', 'tiny.bin', '--corpus', 'wide.tsv')

    def test_corrupt_checkpoint(self):
        (self.workdir / 'junk.bin').write_bytes(b"not a checkpoint")
        self.assertExitCode(4, 'decode', '--ckpt', 'junk.bin', '--corpus', 'identity.tsv')


class AlignCommandTests(CommandTestCase):

    def test_exports(self):
        corpus = self.gen_tiny(n='3')
        self.tiny_checkpoint()
        self.run_command('align', '--ckpt', 'tiny.bin', '--corpus', 'corpus.tsv', '--limit', '2')
        out_dir = self.workdir / 'align'
        pairs = load(corpus)
        for name in ('alpha-0.pgm', 'beta-0.pgm', 'gamma-0.pgm'):
            header = (out_dir / name).read_bytes()[:20]
            self.assertTrue(header.startswith(f"P5\n{pairs[0].T} {pairs[0].U + 1}\n255\n".encode()))
        self.assertTrue((out_dir / 'path-1.txt').exists())
        self.assertFalse((out_dir / 'gamma-2.pgm').exists())
        path_lines = (out_dir / 'path-0.txt').read_text().splitlines()
        self.assertEqual(len(path_lines), pairs[0].T + pairs[0].U)
        table = pd.read_csv(out_dir / 'align.csv')
        self.assertEqual(len(table), 3)
        self.assertTrue((table['viterbi_log_prob'] <= table['log_total'] + 1e-9).all())


class SweepCommandTests(CommandTestCase):

    def setUp(self):
        super().setUp()
        self.gen_tiny(n='4')
        self.tiny_checkpoint()

    def sweep(self, out, *args):
        self.run_command('sweep', '--ckpt', 'tiny.bin', '--long-corpus', 'corpus.tsv', '--concat', '2',
                         '--max-steps', '3', '--out', out, *args)
        return self.workdir / out

    def test_single_value(self):
        table = pd.read_csv(self.sweep('one.csv', '--n-list', '2'))
        self.assertEqual(len(table), 1)
        self.assertNotIn('runtime_s', table.columns)

    def test_unbounded_row_and_reproducibility(self):
        first = self.sweep('a.csv', '--n-list', '0,1,unbounded', '--m', '1')
        second = self.sweep('b.csv', '--n-list', '0,1,unbounded', '--m', '1')
        self.assertEqual(first.read_bytes(), second.read_bytes())
        table = pd.read_csv(first)
        self.assertEqual(table['n'].astype(str).tolist(), ['0', '1', 'unbounded'])

    def test_timing_column_on_request(self):
        table = pd.read_csv(self.sweep('timed.csv', '--n-list', 'unbounded', '--timing'))
        self.assertIn('runtime_s', table.columns)
