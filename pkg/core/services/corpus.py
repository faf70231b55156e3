"""
Synthetic Monotonic Corpus

Stands in for phoneme -> speech-token data. Every input symbol emits a run of
output tokens whose length (the duration) and ids follow a seeded law, so
the ground-truth alignment of each pair is known by construction.

The law, for symbol s preceded by symbol p (p = start for the first symbol):

    duration(p, s) = max(1, base[s] + jitter[p, s])      base in {1..4}, jitter in {-1, 0, 1}
    token_k(p, s)  = (map[s] + k + offset[p]) mod V      k = 0 .. duration-1

base, jitter, map and offset are drawn once from the task seed. The map is
not a bijection (V_in symbols onto V tokens, with repeats) and offset makes
the ids depend on the left context, so the task cannot be solved from the
current symbol alone.

File format, one utterance per line, three tab-separated fields of
space-separated integers (inputs, outputs, durations), plus an optional
fourth field holding the prompt split when a pair carries one:

    3 7 1<TAB>5 6 12 9 10 11<TAB>2 1 3
    3 7 1<TAB>5 6 12 9 10 11<TAB>2 1 3<TAB>1
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CorpusError, CorpusFormatError

logger = logging.getLogger(__name__)

MAX_BASE_DURATION = 4


@dataclass(frozen=True)
class SequencePair:
    """One example: inputs x (length T), outputs y (length U), per-input durations."""
    x: Tuple[int, ...]
    y: Tuple[int, ...]
    gt_durations: Tuple[int, ...]
    prompt_split: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'x', tuple(int(v) for v in self.x))
        object.__setattr__(self, 'y', tuple(int(v) for v in self.y))
        object.__setattr__(self, 'gt_durations', tuple(int(v) for v in self.gt_durations))
        if not self.x:
            raise CorpusError("Sequence pair needs at least one input symbol")
        if len(self.gt_durations) != len(self.x):
            raise CorpusError(
                f"{len(self.gt_durations)} durations given for {len(self.x)} input symbols"
            )
        if sum(self.gt_durations) != len(self.y):
            raise CorpusError(
                f"Durations sum to {sum(self.gt_durations)} but there are {len(self.y)} output tokens"
            )
        if min(self.gt_durations) < 1:
            raise CorpusError("Every input symbol must emit at least one token")
        if min(self.x) < 0 or (self.y and min(self.y) < 0):
            raise CorpusError("Symbol and token ids must be non-negative")
        if self.prompt_split is not None and not 0 < self.prompt_split < len(self.x):
            raise CorpusError(f"Prompt split {self.prompt_split} outside (0, {len(self.x)})")

    @property
    def T(self) -> int:
        return len(self.x)

    @property
    def U(self) -> int:
        return len(self.y)

    def check_vocab(self, input_vocab: int, output_vocab: int):
        if max(self.x) >= input_vocab:
            raise CorpusError(f"Input id {max(self.x)} outside vocabulary of {input_vocab}")
        if self.y and max(self.y) >= output_vocab:
            raise CorpusError(f"Output id {max(self.y)} outside vocabulary of {output_vocab}")


@dataclass(frozen=True)
class TaskTables:
    base: np.ndarray
    jitter: np.ndarray
    token_map: np.ndarray
    offset: np.ndarray


@dataclass(frozen=True)
class TaskSpec:
    """
    Parameters of the synthetic duration and emission law.

    Args:
        input_vocab: number of input symbols V_in
        output_vocab: number of output tokens V (blank excluded)
        mapping: "random" (seeded, non-bijective) or "identity"
        context_perturbation: shift token ids by an offset of the previous symbol
        jitter: add the context-dependent duration jitter
        fixed_duration: if set, every symbol emits exactly this many tokens
        seed: seed of the law tables and of utterance sampling
    """
    input_vocab: int = 20
    output_vocab: int = 24
    mapping: str = "random"
    context_perturbation: bool = True
    jitter: bool = True
    fixed_duration: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.input_vocab < 1 or self.output_vocab < 1:
            raise CorpusError("Vocabulary sizes must be positive")
        if self.mapping not in ("random", "identity"):
            raise CorpusError(f"Unknown mapping {self.mapping!r}")
        if self.mapping == "identity" and self.output_vocab < self.input_vocab:
            raise CorpusError(
                f"Identity mapping needs output_vocab >= input_vocab ({self.output_vocab} < {self.input_vocab})"
            )
        if self.fixed_duration is not None and self.fixed_duration < 1:
            raise CorpusError("fixed_duration must be at least 1")

    @classmethod
    def from_name(cls, name: str, seed: int = 0) -> 'TaskSpec':
        """Named presets used by the gen command."""
        if name == "default":
            return cls(seed=seed)
        if name == "identity":
            return cls(mapping="identity", context_perturbation=False, jitter=False,
                       fixed_duration=1, seed=seed)
        raise CorpusError(f"Unknown task spec {name!r} (expected 'default' or 'identity')")

    @cached_property
    def tables(self) -> TaskTables:
        rng = np.random.default_rng([self.seed, 0])
        contexts = self.input_vocab + 1  # last row is the utterance start
        base = rng.integers(1, MAX_BASE_DURATION + 1, size=self.input_vocab)
        jitter = rng.integers(-1, 2, size=(contexts, self.input_vocab))
        if self.mapping == "identity":
            token_map = np.arange(self.input_vocab)
        else:
            token_map = rng.integers(0, self.output_vocab, size=self.input_vocab)
        offset = rng.integers(0, 3, size=contexts)
        offset[-1] = 0
        return TaskTables(base=base, jitter=jitter, token_map=token_map, offset=offset)

    @property
    def start(self) -> int:
        return self.input_vocab

    def duration(self, previous: int, symbol: int) -> int:
        if self.fixed_duration is not None:
            return self.fixed_duration
        tables = self.tables
        value = int(tables.base[symbol])
        if self.jitter:
            value += int(tables.jitter[previous, symbol])
        return max(1, value)

    def tokens(self, previous: int, symbol: int, duration: int) -> List[int]:
        tables = self.tables
        offset = int(tables.offset[previous]) if self.context_perturbation else 0
        first = int(tables.token_map[symbol]) + offset
        return [(first + k) % self.output_vocab for k in range(duration)]

    def expected_duration(self) -> float:
        """Mean duration under uniformly drawn (previous, symbol) pairs."""
        values = [
            self.duration(previous, symbol)
            for previous in range(self.input_vocab)
            for symbol in range(self.input_vocab)
        ]
        return float(np.mean(values))

    def realize(self, x: Sequence[int]) -> SequencePair:
        """Apply the law to an input sequence."""
        y: List[int] = []
        durations: List[int] = []
        previous = self.start
        for symbol in x:
            if not 0 <= symbol < self.input_vocab:
                raise CorpusError(f"Symbol {symbol} outside vocabulary of {self.input_vocab}")
            count = self.duration(previous, symbol)
            y.extend(self.tokens(previous, symbol, count))
            durations.append(count)
            previous = symbol
        return SequencePair(tuple(x), tuple(y), tuple(durations))


def generate(spec: TaskSpec, n_utts: int, len_range: Tuple[int, int] = (8, 24),
             max_len: Optional[int] = None) -> List[SequencePair]:
    """
    Seeded corpus of n_utts pairs with input lengths drawn from len_range (inclusive).

    Args:
        spec: task law and seed
        n_utts: number of utterances
        len_range: (min, max) input length
        max_len: if given, reject pairs whose model sequence T+U+1 would not fit

    Returns:
        List of SequencePair, identical for identical arguments
    """
    low, high = len_range
    if n_utts < 0:
        raise CorpusError("n_utts must be non-negative")
    if not 1 <= low <= high:
        raise CorpusError(f"Invalid length range {len_range}")
    rng = np.random.default_rng([spec.seed, 1])
    corpus = []
    for _ in range(n_utts):
        length = int(rng.integers(low, high + 1))
        x = rng.integers(0, spec.input_vocab, size=length)
        pair = spec.realize([int(v) for v in x])
        if max_len is not None and pair.T + pair.U + 1 > max_len:
            raise CorpusError(
                f"Generated pair of length {pair.T + pair.U + 1} exceeds max_len={max_len}"
            )
        corpus.append(pair)
    return corpus


def make_long_concat(corpus: Sequence[SequencePair], k: int) -> List[SequencePair]:
    """
    Concatenate consecutive groups of k pairs end to end.

    Trailing pairs that do not fill a group are dropped.
    """
    if k < 1:
        raise CorpusError("k must be at least 1")
    joined = []
    for start in range(0, len(corpus) - k + 1, k):
        group = corpus[start:start + k]
        joined.append(SequencePair(
            x=tuple(v for pair in group for v in pair.x),
            y=tuple(v for pair in group for v in pair.y),
            gt_durations=tuple(v for pair in group for v in pair.gt_durations),
        ))
    return joined


def _format_ids(values: Sequence[int]) -> str:
    return " ".join(str(v) for v in values)


def save(corpus: Sequence[SequencePair], path) -> Path:
    """Write the corpus, one utterance per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for pair in corpus:
        fields = [_format_ids(pair.x), _format_ids(pair.y), _format_ids(pair.gt_durations)]
        if pair.prompt_split is not None:
            fields.append(str(pair.prompt_split))
        lines.append("\t".join(fields) + "\n")
    path.write_text("".join(lines), encoding='utf-8')
    return path


def _parse_ids(field_text: str, path: str, line_number: int, label: str) -> Tuple[int, ...]:
    try:
        return tuple(int(token) for token in field_text.split())
    except ValueError as exc:
        raise CorpusFormatError(f"non-integer {label} id ({exc})", path, line_number) from exc


def load(path) -> List[SequencePair]:
    """
    Read a corpus file, re-validating every pair.

    Raises:
        CorpusFormatError: malformed line or broken invariant, with line number
        OSError: unreadable file
    """
    path = Path(path)
    corpus = []
    with open(path, encoding='utf-8') as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.rstrip('\n')
            if not line.strip():
                continue
            fields = line.split('\t')
            if len(fields) not in (3, 4):
                raise CorpusFormatError(
                    f"expected 3 or 4 tab-separated fields, found {len(fields)}", str(path), line_number
                )
            x = _parse_ids(fields[0], str(path), line_number, "input")
            y = _parse_ids(fields[1], str(path), line_number, "output")
            durations = _parse_ids(fields[2], str(path), line_number, "duration")
            split = None
            if len(fields) == 4:
                split_ids = _parse_ids(fields[3], str(path), line_number, "prompt split")
                if len(split_ids) != 1:
                    raise CorpusFormatError("prompt split field must hold one integer", str(path), line_number)
                split = split_ids[0]
            try:
                corpus.append(SequencePair(x, y, durations, prompt_split=split))
            except CorpusError as exc:
                raise CorpusFormatError(str(exc), str(path), line_number) from exc
    return corpus


def corpus_stats(corpus: Sequence[SequencePair]) -> Dict[str, float]:
    """Summary numbers printed by the gen command."""
    if not corpus:
        return {"utterances": 0, "mean_T": 0.0, "mean_U": 0.0, "mean_duration": 0.0}
    total_t = sum(pair.T for pair in corpus)
    total_u = sum(pair.U for pair in corpus)
    return {
        "utterances": len(corpus),
        "mean_T": total_t / len(corpus),
        "mean_U": total_u / len(corpus),
        "mean_duration": total_u / total_t,
    }
