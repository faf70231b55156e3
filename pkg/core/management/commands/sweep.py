from django.core.management.base import CommandError

from core.management.base import EXIT_USAGE, TransducerCommand, parse_window_size
from core.services import corpus as corpus_service
from core.services.checkpoint import load_checkpoint
from core.services.decoder import DecodeOptions, window_sweep


class Command(TransducerCommand):
    help = "Token error rate against history window size n on long utterances"
    name = 'sweep'

    def add_command_arguments(self, parser):
        parser.add_argument('--ckpt', required=True)
        parser.add_argument('--long-corpus', required=True,
                            help="Corpus file, usually utterances joined with --concat")
        parser.add_argument('--concat', type=int, default=1,
                            help="Join groups of k utterances end to end before decoding")
        parser.add_argument('--n-list', default='0,2,5,10,20,unbounded')
        parser.add_argument('--m', default='unbounded', help="Fixed lookahead size")
        parser.add_argument('--max-steps', type=int, default=32)
        parser.add_argument('--timing', action='store_true',
                            help="Keep the runtime_s column (makes the CSV run-dependent)")
        parser.add_argument('--out', default='sweep.csv')

    def run(self, **options):
        n_values = [parse_window_size(item) for item in options['n_list'].split(',')]
        m_fixed = parse_window_size(options['m'])
        if options['concat'] < 1:
            raise CommandError("--concat must be at least 1", returncode=EXIT_USAGE)

        params, _ = load_checkpoint(self.resolve(options['ckpt']))
        pairs = corpus_service.load(self.resolve(options['long_corpus']))
        for pair in pairs:
            pair.check_vocab(params.config.input_vocab, params.config.output_vocab)
        if options['concat'] > 1:
            pairs = corpus_service.make_long_concat(pairs, options['concat'])

        if options['max_steps'] < 1:
            raise CommandError("--max-steps must be at least 1", returncode=EXIT_USAGE)
        opts = DecodeOptions(seed=options['seed'], max_steps_per_phoneme=options['max_steps'])
        table = window_sweep(params, pairs, n_values, m_fixed, opts, workers=self.workers)
        if not options['timing']:
            table = table.drop(columns=['runtime_s'])
        out = self.output_path(options['out'])
        table.to_csv(out, index=False)

        metrics = {f"ter_n_{row['n']}": float(row['ter']) for row in table.to_dict('records')}
        metrics['out'] = str(out)
        self.finish(options, metrics)
