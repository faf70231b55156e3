"""
Monotonic Transducer Decoder

Blank-triggered autoregressive inference with prompt continuation:

    for t = 0 .. T-1:
        relative position 0 sits on target symbol t (after the prompt symbols)
        repeat: sample from the model's last output row
                blank  -> shift to symbol t+1
                token  -> append it

Also provides pseudo-prompt decoding (an arbitrary transcription in the
prompt slot of an untranscribed prompt), the aligned context window that
keeps n symbols of history, m symbols of lookahead and the tokens aligned
to the retained history, plus the evaluation and window-sweep harness.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .corpus import SequencePair
from .errors import DecodeAborted, DecodeBudgetExceeded, DecodeError, ModelError
from .lattice import AlignmentPath
from .metrics import boundary_accuracy, duration_accuracy, edit_distance, token_error_rate
from .model import ModelParams, PositionPlan, forward_row

logger = logging.getLogger(__name__)

UNBOUNDED = "unbounded"


class SamplingMode(Enum):
    GREEDY = "greedy"
    TEMPERATURE = "temperature"
    TOP_K = "top-k"


class DecodeMode(Enum):
    PLAIN = "plain"
    PROMPT = "prompt"
    PSEUDO_PROMPT = "pseudo-prompt"


@dataclass(frozen=True)
class DecodeOptions:
    """
    Sampling and windowing settings.

    window_n / window_m of None leave that side of the window unbounded.
    """
    sampling: SamplingMode = SamplingMode.GREEDY
    temperature: float = 1.0
    top_k: int = 5
    seed: int = 0
    window_n: Optional[int] = None
    window_m: Optional[int] = None
    max_steps_per_phoneme: int = 32

    def __post_init__(self):
        if self.temperature <= 0:
            raise DecodeError("temperature must be positive")
        if self.top_k < 1:
            raise DecodeError("top_k must be at least 1")
        if (self.window_n is not None and self.window_n < 0) or (self.window_m is not None and self.window_m < 0):
            raise DecodeError("Window sizes must be non-negative")
        if self.max_steps_per_phoneme < 1:
            raise DecodeError("max_steps_per_phoneme must be at least 1")

    @property
    def windowed(self) -> bool:
        return self.window_n is not None or self.window_m is not None


@dataclass
class DecodeSession:
    """Mutable state of one monotonic decode."""
    x_prompt: Tuple[int, ...]
    x_target: Tuple[int, ...]
    y_prompt: Tuple[int, ...]
    options: DecodeOptions = field(default_factory=DecodeOptions)
    t: int = 0
    y_out: List[int] = field(default_factory=list)
    durations: List[int] = field(default_factory=list)
    current: int = 0

    @property
    def T(self) -> int:
        return len(self.x_target)

    @property
    def T_prompt(self) -> int:
        return len(self.x_prompt)

    @property
    def finished(self) -> bool:
        return self.t == self.T

    def emit(self, token: int):
        if self.current >= self.options.max_steps_per_phoneme:
            raise DecodeBudgetExceeded(self.t, self.y_out, self.durations + [self.current])
        self.y_out.append(int(token))
        self.current += 1

    def shift(self):
        """Close the current symbol (a blank was sampled)."""
        self.durations.append(self.current)
        self.current = 0
        self.t += 1


@dataclass(frozen=True)
class DecodeResult:
    y_out: Tuple[int, ...]
    path: AlignmentPath
    durations: Tuple[int, ...]

    def to_record(self) -> Dict[str, list]:
        return {
            'emitted': list(self.y_out),
            'durations': list(self.durations),
            'path': [list(node) for node in self.path.nodes()],
        }


def apply_context_window(session: DecodeSession) -> Tuple[Tuple[int, ...], Tuple[int, ...], PositionPlan]:
    """
    Input/output views for the next model call.

    The input view holds symbols [g-n, g+m] around the current symbol
    g = T_prompt + t, clamped to the sequence; the output view holds the
    tokens aligned to the retained history plus the current symbol's partial
    emissions. The prompt is kept whole while any prompt symbol is inside the
    window and dropped whole afterwards. Absolute positions restart at 0 in
    each view; relative position 0 stays on the current symbol.
    """
    opts = session.options
    current = session.T_prompt + session.t
    total = session.T_prompt + session.T
    low = 0 if opts.window_n is None else max(0, current - opts.window_n)
    high = total - 1 if opts.window_m is None else min(total - 1, current + opts.window_m)

    if session.T_prompt and low < session.T_prompt:
        first = 0
        x_view = session.x_prompt + session.x_target[:high - session.T_prompt + 1]
        y_view = session.y_prompt + tuple(session.y_out)
    else:
        first = low
        low_target = low - session.T_prompt
        start = sum(session.durations[:low_target])
        x_view = session.x_target[low_target:high - session.T_prompt + 1]
        y_view = tuple(session.y_out[start:])

    plan = PositionPlan(
        abs_pos_x=np.arange(len(x_view)),
        abs_pos_y=np.arange(len(y_view) + 1),
        rel_pos_x=np.arange(first, first + len(x_view)) - current,
    )
    return x_view, y_view, plan


def _sample(log_probs: np.ndarray, opts: DecodeOptions, rng: np.random.Generator) -> int:
    if opts.sampling is SamplingMode.GREEDY:
        return int(np.argmax(log_probs))
    scaled = log_probs / opts.temperature
    candidates = np.arange(scaled.size)
    if opts.sampling is SamplingMode.TOP_K:
        keep = min(opts.top_k, scaled.size)
        candidates = np.argsort(-scaled, kind='stable')[:keep]
        scaled = scaled[candidates]
    weights = np.exp(scaled - scaled.max())
    return int(candidates[rng.choice(candidates.size, p=weights / weights.sum())])


def decode(params: ModelParams, x_prompt: Sequence[int], y_prompt: Sequence[int],
           x_target: Sequence[int], opts: DecodeOptions = DecodeOptions()) -> DecodeResult:
    """
    Generate output tokens for x_target, continuing from an optional prompt.

    Args:
        params: model parameters
        x_prompt: prompt transcription (may be empty)
        y_prompt: prompt output tokens (may be empty)
        x_target: symbols to generate for
        opts: sampling, window and step-budget settings

    Returns:
        DecodeResult with the emitted tokens, the realised alignment path and
        per-symbol durations

    Raises:
        DecodeBudgetExceeded: a symbol emitted more than max_steps_per_phoneme tokens
        DecodeAborted: the model rejected the (unwindowed) sequence length
        DecodeError: empty target or ids outside the model vocabulary
    """
    session = DecodeSession(tuple(int(v) for v in x_prompt), tuple(int(v) for v in x_target),
                            tuple(int(v) for v in y_prompt), opts)
    if session.T == 0:
        raise DecodeError("Nothing to decode: x_target is empty")
    config = params.config
    symbols = session.x_prompt + session.x_target
    if min(symbols) < 0 or max(symbols) >= config.input_vocab:
        raise DecodeError(f"Input ids must lie in [0, {config.input_vocab})")
    if session.y_prompt and (min(session.y_prompt) < 0 or max(session.y_prompt) >= config.output_vocab):
        raise DecodeError(f"Prompt tokens must lie in [0, {config.output_vocab})")

    rng = np.random.default_rng(opts.seed)
    while not session.finished:
        x_view, y_view, plan = apply_context_window(session)
        try:
            rows = forward_row(params, x_view, y_view, plan)
        except ModelError as exc:
            raise DecodeAborted(str(exc), session.t, session.y_out,
                                session.durations + [session.current]) from exc
        blank = rows.shape[-1] - 1
        token = _sample(rows[-1], opts, rng)
        if token == blank:
            session.shift()
        else:
            session.emit(token)

    return DecodeResult(
        y_out=tuple(session.y_out),
        path=AlignmentPath.from_durations(session.durations),
        durations=tuple(session.durations),
    )


def decode_with_pseudo_prompt(params: ModelParams, y_prompt_untranscribed: Sequence[int],
                              pseudo_x_prompt: Sequence[int], x_target: Sequence[int],
                              opts: DecodeOptions = DecodeOptions()) -> DecodeResult:
    """
    Continue an untranscribed prompt, using an arbitrary transcription in its slot.

    The pseudo transcription keeps the absolute positions of the target
    symbols in the range seen during training; relative 0 starts on the
    first target symbol as in decode.
    """
    if not pseudo_x_prompt:
        raise DecodeError("A pseudo prompt transcription is required (it must not be empty)")
    return decode(params, pseudo_x_prompt, y_prompt_untranscribed, x_target, opts)


# ---------------------------------------------------------------------------
# evaluation harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecodeTask:
    """One evaluation item: what to feed the decoder and what to compare against."""
    x_prompt: Tuple[int, ...]
    y_prompt: Tuple[int, ...]
    x_target: Tuple[int, ...]
    y_reference: Tuple[int, ...]
    reference_durations: Tuple[int, ...]


def split_for_prompt(pair: SequencePair, fraction: float = 0.3) -> DecodeTask:
    """
    Continuation example: the first symbols (and their tokens) become the prompt.

    The split sits on a duration boundary, at round(T * fraction) clamped to [1, T-1].
    """
    if pair.T < 2:
        raise DecodeError("Need at least two input symbols to form a prompt")
    split = pair.prompt_split or min(max(int(round(pair.T * fraction)), 1), pair.T - 1)
    tokens = sum(pair.gt_durations[:split])
    return DecodeTask(
        x_prompt=pair.x[:split],
        y_prompt=pair.y[:tokens],
        x_target=pair.x[split:],
        y_reference=pair.y[tokens:],
        reference_durations=pair.gt_durations[split:],
    )


def choose_pseudo_prompt(corpus: Sequence[SequencePair], seed: int = 0) -> Tuple[int, ...]:
    """Transcription of one randomly chosen utterance, reused for every pseudo-prompt decode."""
    if not corpus:
        raise DecodeError("Cannot choose a pseudo prompt from an empty corpus")
    index = int(np.random.default_rng([seed, 2]).integers(len(corpus)))
    return corpus[index].x


def make_tasks(corpus: Sequence[SequencePair], mode: DecodeMode, seed: int = 0,
               prompt_fraction: float = 0.3) -> List[DecodeTask]:
    if mode is DecodeMode.PLAIN:
        return [DecodeTask((), (), pair.x, pair.y, pair.gt_durations) for pair in corpus]
    tasks = [split_for_prompt(pair, prompt_fraction) for pair in corpus]
    if mode is DecodeMode.PSEUDO_PROMPT:
        pseudo = choose_pseudo_prompt(corpus, seed)
        tasks = [replace(task, x_prompt=pseudo) for task in tasks]
    return tasks


def _run_task(params: ModelParams, index: int, task: DecodeTask, opts: DecodeOptions) -> dict:
    item_opts = replace(opts, seed=opts.seed + index)
    record = {
        'index': index,
        'target': list(task.x_target),
        'reference': list(task.y_reference),
        'reference_durations': list(task.reference_durations),
        'aborted': None,
    }
    try:
        result = decode(params, task.x_prompt, task.y_prompt, task.x_target, item_opts)
        result.path.validate(len(task.x_target), len(result.y_out))
        record.update(result.to_record())
        record['violation'] = not (
            len(result.durations) == len(task.x_target) and sum(result.durations) == len(result.y_out)
        )
    except DecodeAborted as exc:
        logger.warning("Decode %d aborted: %s", index, exc)
        record.update({'emitted': exc.y_out, 'durations': exc.durations, 'path': [], 'aborted': exc.reason,
                       'violation': False})
    record['edit_distance'] = edit_distance(record['emitted'], task.y_reference)
    record['duration_accuracy'] = duration_accuracy(record['durations'], task.reference_durations)
    record['boundary_accuracy'] = boundary_accuracy(record['durations'], task.reference_durations)
    return record


def evaluate(params: ModelParams, tasks: Sequence[DecodeTask], opts: DecodeOptions = DecodeOptions(),
             workers: int = 1) -> Tuple[List[dict], Dict[str, float]]:
    """
    Decode every task and score it against its reference.

    Records come back in task order whatever the worker count.

    Returns:
        (per-task records, summary with ter, duration_accuracy,
         boundary_accuracy, aborted, violations, utterances)
    """
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda item: _run_task(params, item[0], item[1], opts), enumerate(tasks)))
    else:
        records = [_run_task(params, index, task, opts) for index, task in enumerate(tasks)]

    reference_symbols = sum(len(task.reference_durations) for task in tasks)
    summary = {
        'utterances': len(records),
        'ter': token_error_rate([r['emitted'] for r in records], [task.y_reference for task in tasks]),
        'duration_accuracy': (
            sum(r['duration_accuracy'] * len(r['reference_durations']) for r in records) / reference_symbols
            if reference_symbols else 1.0
        ),
        'boundary_accuracy': (
            sum(r['boundary_accuracy'] * len(r['reference_durations']) for r in records) / reference_symbols
            if reference_symbols else 1.0
        ),
        'aborted': sum(1 for r in records if r['aborted']),
        'violations': sum(1 for r in records if r['violation']),
    }
    return records, summary


def window_sweep(params: ModelParams, corpus_long: Sequence[SequencePair], n_values: Sequence[Optional[int]],
                 m_fixed: Optional[int], opts: DecodeOptions = DecodeOptions(), workers: int = 1) -> pd.DataFrame:
    """
    Token error rate of plain windowed decoding for every history size n.

    None in n_values (and m_fixed) means unbounded.

    Returns:
        DataFrame with one row per n: n, m, ter, duration_accuracy, aborted, runtime_s
    """
    tasks = make_tasks(corpus_long, DecodeMode.PLAIN)
    rows = []
    for n in n_values:
        started = time.perf_counter()
        _, summary = evaluate(params, tasks, replace(opts, window_n=n, window_m=m_fixed), workers)
        elapsed = time.perf_counter() - started
        logger.info("window n=%s m=%s: ter %.4f", n, m_fixed, summary['ter'])
        rows.append({
            'n': UNBOUNDED if n is None else n,
            'm': UNBOUNDED if m_fixed is None else m_fixed,
            'ter': summary['ter'],
            'duration_accuracy': summary['duration_accuracy'],
            'aborted': summary['aborted'],
            'runtime_s': elapsed,
        })
    return pd.DataFrame(rows, columns=['n', 'm', 'ter', 'duration_accuracy', 'aborted', 'runtime_s'])
