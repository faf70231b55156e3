import json

import pandas as pd
from django.core.management.base import CommandError

from core.management.base import EXIT_USAGE, TransducerCommand, parse_window
from core.services import corpus as corpus_service
from core.services.checkpoint import load_checkpoint
from core.services.decoder import DecodeMode, DecodeOptions, SamplingMode, evaluate, make_tasks
from core.services.errors import DecodeError

METRIC_COLUMNS = ['utterances', 'ter', 'duration_accuracy', 'boundary_accuracy', 'aborted', 'violations']


class Command(TransducerCommand):
    help = "Decode an evaluation corpus with a trained checkpoint and score it"
    name = 'decode'

    def add_command_arguments(self, parser):
        parser.add_argument('--ckpt', required=True)
        parser.add_argument('--corpus', required=True)
        parser.add_argument('--mode', default='plain', choices=[mode.value for mode in DecodeMode])
        parser.add_argument('--window', default='unbounded,unbounded',
                            help="History and lookahead sizes n,m ('unbounded' for no limit)")
        parser.add_argument('--sampling', default='greedy', choices=[mode.value for mode in SamplingMode])
        parser.add_argument('--temperature', type=float, default=1.0)
        parser.add_argument('--top-k', type=int, default=5)
        parser.add_argument('--max-steps', type=int, default=32, help="Emission budget per input symbol")
        parser.add_argument('--prompt-fraction', type=float, default=0.3)
        parser.add_argument('--out', default='decode.jsonl')

    def run(self, **options):
        window_n, window_m = parse_window(options['window'])
        try:
            opts = DecodeOptions(
                sampling=SamplingMode(options['sampling']),
                temperature=options['temperature'],
                top_k=options['top_k'],
                seed=options['seed'],
                window_n=window_n,
                window_m=window_m,
                max_steps_per_phoneme=options['max_steps'],
            )
        except DecodeError as exc:
            raise CommandError(str(exc), returncode=EXIT_USAGE) from exc
        params, _ = load_checkpoint(self.resolve(options['ckpt']))
        pairs = corpus_service.load(self.resolve(options['corpus']))
        for pair in pairs:
            pair.check_vocab(params.config.input_vocab, params.config.output_vocab)

        tasks = make_tasks(pairs, DecodeMode(options['mode']), seed=options['seed'],
                           prompt_fraction=options['prompt_fraction'])
        records, summary = evaluate(params, tasks, opts, workers=self.workers)

        out = self.output_path(options['out'])
        with open(out, 'w', encoding='utf-8') as handle:
            for record in records:
                handle.write(json.dumps(record) + "\n")
        pd.DataFrame([summary], columns=METRIC_COLUMNS).to_csv(out.parent / 'metrics.csv', index=False)

        self.finish(options, {**summary, 'out': str(out)})
