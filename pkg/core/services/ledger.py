"""
Run ledger: a plain-text report per command and an ExperimentRun row in the database.
"""
import logging
from datetime import datetime
from typing import Dict, Mapping, Optional

from django.conf import settings
from django.db import DatabaseError

logger = logging.getLogger(__name__)


def _format_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def format_report(command: str, arguments: Mapping[str, object], metrics: Mapping[str, object]) -> str:
    """
    Human-readable summary of one command invocation
    """
    parts = [
        "=" * 70,
        f"{command.upper()} RUN",
        "=" * 70,
        f"\nDate: {datetime.now().strftime('%B %d, %Y at %I:%M %p')}",
        "\n" + "-" * 70,
        "ARGUMENTS:",
        "-" * 70,
    ]
    parts.extend(f"{key}: {_format_value(value)}" for key, value in arguments.items())
    if metrics:
        parts.extend(["\n" + "-" * 70, "RESULTS:", "-" * 70])
        parts.extend(f"{key}: {_format_value(value)}" for key, value in metrics.items())
    parts.append("\n" + "=" * 70)
    return "\n".join(parts)


def _jsonable(values: Mapping[str, object]) -> Dict[str, object]:
    out = {}
    for key, value in values.items():
        if value is None or isinstance(value, (bool, int, float, str)):
            out[key] = value
        elif isinstance(value, (list, tuple)):
            out[key] = [v if isinstance(v, (bool, int, float, str)) or v is None else str(v) for v in value]
        else:
            out[key] = str(value)
    return out


def record_run(command: str, seed: int, workdir, arguments: Mapping[str, object],
               metrics: Mapping[str, object], report: str = "") -> Optional[object]:
    """
    Store an ExperimentRun row.

    Returns None when recording is disabled (TRANSDUCER_RECORD_RUNS) or the
    database is unavailable; a command never fails because of its ledger.
    """
    if not getattr(settings, 'TRANSDUCER_RECORD_RUNS', True):
        return None
    from core.models import ExperimentRun

    try:
        return ExperimentRun.objects.create(
            command=command,
            seed=seed,
            workdir=str(workdir),
            arguments=_jsonable(arguments),
            metrics=_jsonable(metrics),
            report=report,
        )
    except DatabaseError as exc:
        logger.warning("Could not record %s run: %s", command, exc)
        return None
