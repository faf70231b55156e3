from dataclasses import replace

from django.core.management.base import CommandError

from core.management.base import EXIT_USAGE, TransducerCommand
from core.services import corpus as corpus_service
from core.services.config import dump_experiment_config, load_experiment_config
from core.services.trainer import epoch_mean_losses, train_loop


class Command(TransducerCommand):
    help = "Train the transducer on a corpus file, writing checkpoints and loss.csv"
    name = 'train'

    def add_command_arguments(self, parser):
        parser.add_argument('--corpus', required=True)
        parser.add_argument('--config', default=None, help="key=value experiment config")
        parser.add_argument('--epochs', type=int, default=30)
        parser.add_argument('--out-dir', default='train')
        parser.add_argument('--resume', default=None, help="Checkpoint to continue from")

    def run(self, **options):
        if options['epochs'] < 0:
            raise CommandError("--epochs must be non-negative", returncode=EXIT_USAGE)
        config_path = self.resolve(options['config']) if options['config'] else None
        model_config, trainer_config = load_experiment_config(
            config_path, seed=options['seed'] if self.seed_given else None)
        options['seed'] = model_config.seed
        if options['workers']:
            trainer_config = replace(trainer_config, workers=self.workers)
        pairs = corpus_service.load(self.resolve(options['corpus']))
        out_dir = self.resolve(options['out_dir'])
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / 'config.txt').write_text(dump_experiment_config(model_config, trainer_config), encoding='utf-8')

        resume = self.resolve(options['resume']) if options['resume'] else None
        result = train_loop(model_config, pairs, options['epochs'], trainer_config=trainer_config,
                            out_dir=out_dir, resume_from=resume)

        curve = result.loss_curve
        metrics = {
            'steps': int(result.opt_state.step),
            'parameters': result.params.num_parameters,
            'final_loss': float(curve['mean_loss'].iloc[-1]) if len(curve) else None,
            'out_dir': str(out_dir),
        }
        for epoch, loss in epoch_mean_losses(curve).items():
            metrics[f'epoch_{int(epoch)}_loss'] = float(loss)
        self.finish(options, metrics)
