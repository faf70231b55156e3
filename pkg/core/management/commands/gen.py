from dataclasses import replace

from django.core.management.base import CommandError

from core.management.base import EXIT_USAGE, TransducerCommand
from core.services import corpus as corpus_service
from core.services.errors import CorpusError


class Command(TransducerCommand):
    help = "Generate a seeded synthetic monotonic corpus"
    name = 'gen'

    def add_command_arguments(self, parser):
        parser.add_argument('--spec', default='default', choices=['default', 'identity'],
                            help="Task law preset")
        parser.add_argument('--n', type=int, default=2000, help="Number of utterances")
        parser.add_argument('--len-min', type=int, default=8)
        parser.add_argument('--len-max', type=int, default=24)
        parser.add_argument('--input-vocab', type=int, default=None)
        parser.add_argument('--output-vocab', type=int, default=None)
        parser.add_argument('--max-len', type=int, default=None,
                            help="Reject pairs whose model sequence T+U+1 would exceed this")
        parser.add_argument('--out', default='corpus.tsv')

    def run(self, **options):
        overrides = {key: options[key] for key in ('input_vocab', 'output_vocab') if options[key] is not None}
        try:
            spec = replace(corpus_service.TaskSpec.from_name(options['spec'], seed=options['seed']), **overrides)
            pairs = corpus_service.generate(spec, options['n'], (options['len_min'], options['len_max']),
                                            max_len=options['max_len'])
        except CorpusError as exc:
            raise CommandError(str(exc), returncode=EXIT_USAGE) from exc

        path = corpus_service.save(pairs, self.output_path(options['out']))
        stats = corpus_service.corpus_stats(pairs)
        stats['expected_duration'] = spec.expected_duration()
        stats['out'] = str(path)
        self.finish(options, stats)
