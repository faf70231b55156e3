from concurrent.futures import ThreadPoolExecutor

import pandas as pd

from core.management.base import TransducerCommand
from core.services import corpus as corpus_service
from core.services.checkpoint import load_checkpoint
from core.services.exports import write_grid_pgm, write_grid_text, write_path_text
from core.services.lattice import forced_align, path_log_prob, posterior_map
from core.services.metrics import boundary_accuracy, duration_accuracy
from core.services.model import build_lattice

ALIGN_COLUMNS = ['index', 'T', 'U', 'log_total', 'viterbi_log_prob', 'duration_accuracy', 'boundary_accuracy']


class Command(TransducerCommand):
    help = "Forced-align a corpus: posterior maps, Viterbi paths and boundary accuracy"
    name = 'align'

    def add_command_arguments(self, parser):
        parser.add_argument('--ckpt', required=True)
        parser.add_argument('--corpus', required=True)
        parser.add_argument('--out-dir', default='align')
        parser.add_argument('--limit', type=int, default=None,
                            help="Export maps for the first N utterances only (all are scored)")

    def _align_one(self, params, index, pair, out_dir, export):
        lattice = build_lattice(params, pair.x, pair.y)
        posterior = posterior_map(lattice, pair.y)
        path = forced_align(lattice, pair.y)
        if export:
            write_grid_pgm(out_dir / f'alpha-{index}.pgm', posterior.log_alpha)
            write_grid_pgm(out_dir / f'beta-{index}.pgm', posterior.log_beta)
            write_grid_pgm(out_dir / f'gamma-{index}.pgm', posterior.log_gamma)
            write_grid_text(out_dir / f'gamma-{index}.txt', posterior.log_gamma)
            write_path_text(out_dir / f'path-{index}.txt', path)
        durations = path.durations()
        return {
            'index': index,
            'T': pair.T,
            'U': pair.U,
            'log_total': posterior.log_total,
            'viterbi_log_prob': path_log_prob(lattice, pair.y, path),
            'duration_accuracy': duration_accuracy(durations, pair.gt_durations),
            'boundary_accuracy': boundary_accuracy(durations, pair.gt_durations),
        }

    def run(self, **options):
        params, _ = load_checkpoint(self.resolve(options['ckpt']))
        pairs = corpus_service.load(self.resolve(options['corpus']))
        for pair in pairs:
            pair.check_vocab(params.config.input_vocab, params.config.output_vocab)
        out_dir = self.resolve(options['out_dir'])
        out_dir.mkdir(parents=True, exist_ok=True)
        limit = options['limit']

        def align(item):
            index, pair = item
            return self._align_one(params, index, pair, out_dir, limit is None or index < limit)

        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                rows = list(pool.map(align, enumerate(pairs)))
        else:
            rows = [align(item) for item in enumerate(pairs)]

        table = pd.DataFrame(rows, columns=ALIGN_COLUMNS)
        table.to_csv(out_dir / 'align.csv', index=False)

        symbols = int(table['T'].sum())
        metrics = {
            'utterances': len(table),
            'duration_accuracy': float((table['duration_accuracy'] * table['T']).sum() / symbols) if symbols else 1.0,
            'boundary_accuracy': float((table['boundary_accuracy'] * table['T']).sum() / symbols) if symbols else 1.0,
            'mean_log_total': float(table['log_total'].mean()) if len(table) else 0.0,
            'out_dir': str(out_dir),
        }
        self.finish(options, metrics)
