"""
Shared plumbing for the transducer management commands.

Every command accepts --workdir, --seed and --workers, resolves relative
paths against the working directory and turns service exceptions into
CommandError with a stable exit code:

    1  I/O failure (unreadable or malformed files)
    2  usage (bad flag values; argparse itself also exits 2)
    3  numerical failure (non-finite loss, degenerate lattice)
    4  artifact mismatch (checkpoint vs config, corpus vs vocabulary)
"""
import logging
from pathlib import Path
from typing import Optional, Tuple

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from core.services.errors import (
    CheckpointError,
    ConfigError,
    CorpusError,
    CorpusFormatError,
    DecodeError,
    DegenerateLatticeError,
    ModelError,
    NonFiniteLossError,
)
from core.services.ledger import format_report, record_run

logger = logging.getLogger(__name__)

EXIT_IO = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_MISMATCH = 4

UNBOUNDED_WORDS = ('unbounded', 'none', 'inf', '')


def parse_window_size(text: str) -> Optional[int]:
    """'unbounded' (or 'none', 'inf', empty) -> None, otherwise a non-negative integer."""
    text = text.strip().lower()
    if text in UNBOUNDED_WORDS:
        return None
    try:
        value = int(text)
    except ValueError:
        raise CommandError(f"Invalid window size {text!r}", returncode=EXIT_USAGE)
    if value < 0:
        raise CommandError(f"Window sizes must be non-negative, got {value}", returncode=EXIT_USAGE)
    return value


def parse_window(text: str) -> Tuple[Optional[int], Optional[int]]:
    """'n,m' -> (n, m)."""
    parts = text.split(',')
    if len(parts) != 2:
        raise CommandError(f"--window expects n,m (got {text!r})", returncode=EXIT_USAGE)
    return parse_window_size(parts[0]), parse_window_size(parts[1])


class TransducerCommand(BaseCommand):
    """
    Base class: subclasses implement add_command_arguments() and run().
    """
    name = ''

    def add_arguments(self, parser):
        parser.add_argument('--workdir', default=None,
                            help="Root for relative paths (default: TRANSDUCER_WORKDIR)")
        parser.add_argument('--seed', type=int, default=None, help="Seed (default: 0, or the config file's seed for train)")
        parser.add_argument('--workers', type=int, default=None,
                            help="Worker pool size (default: TRANSDUCER_WORKERS)")
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def handle(self, *args, **options):
        self.workdir = Path(options['workdir'] or settings.TRANSDUCER_WORKDIR)
        self.workers = options['workers'] or settings.TRANSDUCER_WORKERS
        self.seed_given = options['seed'] is not None
        if not self.seed_given:
            options['seed'] = 0
        if self.workers < 1:
            raise CommandError("--workers must be at least 1", returncode=EXIT_USAGE)
        try:
            self.run(**options)
        except CommandError:
            raise
        except (CorpusFormatError, OSError) as exc:
            raise CommandError(str(exc), returncode=EXIT_IO) from exc
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=EXIT_USAGE) from exc
        except (NonFiniteLossError, DegenerateLatticeError) as exc:
            raise CommandError(str(exc), returncode=EXIT_NUMERICAL) from exc
        except (CheckpointError, ModelError, CorpusError, DecodeError) as exc:
            raise CommandError(str(exc), returncode=EXIT_MISMATCH) from exc

    def run(self, **options):
        raise NotImplementedError

    def resolve(self, path) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.workdir / path

    def output_path(self, path) -> Path:
        path = self.resolve(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def finish(self, options: dict, metrics: dict):
        """Print the unified report and store it in the run ledger."""
        arguments = {
            key: value for key, value in options.items()
            if key not in ('verbosity', 'settings', 'pythonpath', 'traceback', 'no_color', 'force_color',
                           'skip_checks')
        }
        report = format_report(self.name, arguments, metrics)
        self.stdout.write(report)
        record_run(self.name, options['seed'], self.workdir, arguments, metrics, report)
        return report
