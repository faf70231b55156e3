"""
Transducer Lattice Service

Log-space mathematics over the T x (U+1) alignment lattice: total path
probability, forward/backward variables, posterior map, loss gradient and
Viterbi forced alignment.

Conventions:
    - The extended vocabulary has V+1 entries; blank is the last index (V).
    - A path starts at node (0, 0), takes U EMIT and T BLANK steps and always
      ends with the blank emitted at (T-1, U). Pr(y|x) therefore includes that
      final blank factor.
    - Probability zero is -inf. Out-of-range terms never enter a sum.

Every function here is pure; lattices are immutable.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DegenerateLatticeError, LatticeError

logger = logging.getLogger(__name__)

LOG_ZERO = -np.inf


def logsumexp(values: np.ndarray, axis=None) -> np.ndarray:
    """
    Log of the sum of exponentials, shifted by the maximum for stability.

    All -inf inputs along an axis give -inf rather than NaN.
    """
    values = np.asarray(values, dtype=np.float64)
    peak = np.max(values, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide='ignore'):
        total = np.log(np.sum(np.exp(values - peak), axis=axis, keepdims=True)) + peak
    if axis is None:
        return total.reshape(())[()]
    return np.squeeze(total, axis=axis)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Normalize logits into log-probabilities along `axis`."""
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


@dataclass(frozen=True)
class LogProbLattice:
    """
    Emission lattice of next-token log-distributions.

    entries[t, u, k] is log p_{t,u}[k]: the log-probability of extended token k
    after u output tokens while relative position 0 sits on input t.
    """
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64)
        if entries.ndim != 3:
            raise LatticeError(f"Lattice must be T x (U+1) x V+1, got shape {entries.shape}")
        if entries.shape[0] < 1 or entries.shape[1] < 1:
            raise LatticeError(f"Lattice needs T >= 1 and U >= 0, got shape {entries.shape}")
        if entries.shape[2] < 2:
            raise LatticeError("Extended vocabulary must hold at least one token and blank")
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    @property
    def T(self) -> int:
        return self.entries.shape[0]

    @property
    def U(self) -> int:
        return self.entries.shape[1] - 1

    @property
    def vbar(self) -> int:
        return self.entries.shape[2]

    @property
    def blank(self) -> int:
        return self.vbar - 1

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> 'LogProbLattice':
        return cls(log_softmax(np.asarray(logits, dtype=np.float64), axis=-1))

    def check_normalized(self, tolerance: float = 1e-6):
        """Raise LatticeError unless every (t, u) row is a distribution."""
        row_mass = logsumexp(self.entries, axis=-1)
        worst = float(np.max(np.abs(row_mass)))
        if worst > tolerance:
            raise LatticeError(f"Lattice rows are not normalized (max |logsumexp| = {worst:.3g})")
        if np.max(self.entries) > tolerance:
            raise LatticeError("Lattice holds log-probabilities above zero")


class Step(Enum):
    """One move along the lattice."""
    EMIT = "emit"
    BLANK = "blank"


@dataclass(frozen=True)
class AlignmentPath:
    """
    Monotone lattice path of length T+U.

    EMIT advances u, BLANK advances t; the path must close with a BLANK.
    """
    steps: Tuple[Step, ...]

    def __post_init__(self):
        steps = tuple(self.steps)
        object.__setattr__(self, 'steps', steps)
        if not steps:
            raise LatticeError("Alignment path must contain at least one blank")
        if steps[-1] is not Step.BLANK:
            raise LatticeError("Alignment path must terminate with a blank")

    @property
    def T(self) -> int:
        return sum(1 for step in self.steps if step is Step.BLANK)

    @property
    def U(self) -> int:
        return sum(1 for step in self.steps if step is Step.EMIT)

    def __len__(self) -> int:
        return len(self.steps)

    @classmethod
    def from_durations(cls, durations: Sequence[int]) -> 'AlignmentPath':
        """Build the path that emits durations[t] tokens on input t, then a blank."""
        steps: List[Step] = []
        for count in durations:
            if count < 0:
                raise LatticeError(f"Negative duration {count}")
            steps.extend([Step.EMIT] * int(count))
            steps.append(Step.BLANK)
        return cls(tuple(steps))

    def durations(self) -> List[int]:
        counts = []
        current = 0
        for step in self.steps:
            if step is Step.EMIT:
                current += 1
            else:
                counts.append(current)
                current = 0
        return counts

    def nodes(self) -> List[Tuple[int, int]]:
        """The (t, u) node each step leaves from, starting at (0, 0)."""
        t, u = 0, 0
        visited = []
        for step in self.steps:
            visited.append((t, u))
            if step is Step.EMIT:
                u += 1
            else:
                t += 1
        return visited

    def validate(self, T: int, U: int):
        """Raise LatticeError unless this is a complete path over a T x (U+1) lattice."""
        if self.T != T or self.U != U:
            raise LatticeError(
                f"Path has {self.T} blanks and {self.U} emissions, expected {T} and {U}"
            )

    def to_text(self) -> str:
        """One `t,u` pair per line, in path order."""
        return "".join(f"{t},{u}\n" for t, u in self.nodes())


@dataclass(frozen=True)
class PosteriorMap:
    log_alpha: np.ndarray
    log_beta: np.ndarray
    log_gamma: np.ndarray
    log_total: float


def _check_inputs(lat: LogProbLattice, y: Sequence[int]) -> np.ndarray:
    targets = np.asarray(y, dtype=np.int64).reshape(-1)
    if targets.shape[0] != lat.U:
        raise LatticeError(f"Lattice has U={lat.U} but {targets.shape[0]} target tokens were given")
    if targets.size and (targets.min() < 0 or targets.max() >= lat.blank):
        raise LatticeError(
            f"Target ids must lie in [0, {lat.blank}); blank may not appear in y"
        )
    if np.isnan(lat.entries).any() or np.isposinf(lat.entries).any():
        raise LatticeError("Lattice contains NaN or +inf entries")
    return targets


def _emit_log_probs(lat: LogProbLattice, targets: np.ndarray) -> np.ndarray:
    # emit[t, u] = log p_{t,u}[y_{u+1}]
    return lat.entries[:, np.arange(lat.U), targets]


def _blank_log_probs(lat: LogProbLattice) -> np.ndarray:
    return lat.entries[:, :, lat.blank]


def _forward(blank: np.ndarray, emit: np.ndarray) -> np.ndarray:
    T, width = blank.shape
    log_alpha = np.full((T, width), LOG_ZERO)
    log_alpha[0, 0] = 0.0
    for u in range(1, width):
        log_alpha[0, u] = log_alpha[0, u - 1] + emit[0, u - 1]
    for t in range(1, T):
        log_alpha[t, 0] = log_alpha[t - 1, 0] + blank[t - 1, 0]
        for u in range(1, width):
            log_alpha[t, u] = np.logaddexp(
                log_alpha[t - 1, u] + blank[t - 1, u],
                log_alpha[t, u - 1] + emit[t, u - 1],
            )
    return log_alpha


def _backward(blank: np.ndarray, emit: np.ndarray) -> np.ndarray:
    T, width = blank.shape
    U = width - 1
    log_beta = np.full((T, width), LOG_ZERO)
    log_beta[T - 1, U] = blank[T - 1, U]
    for u in range(U - 1, -1, -1):
        log_beta[T - 1, u] = log_beta[T - 1, u + 1] + emit[T - 1, u]
    for t in range(T - 2, -1, -1):
        log_beta[t, U] = log_beta[t + 1, U] + blank[t, U]
        for u in range(U - 1, -1, -1):
            log_beta[t, u] = np.logaddexp(
                log_beta[t + 1, u] + blank[t, u],
                log_beta[t, u + 1] + emit[t, u],
            )
    return log_beta


def forward_variables(lat: LogProbLattice, y: Sequence[int]) -> np.ndarray:
    """
    Log forward variables.

    alpha(t, u) = alpha(t-1, u) p_{t-1,u}[blank] + alpha(t, u-1) p_{t,u-1}[y_u],
    alpha(0, 0) = 1.

    Args:
        lat: emission lattice
        y: U target token ids, each in [0, V)

    Returns:
        T x (U+1) array of log alpha
    """
    targets = _check_inputs(lat, y)
    return _forward(_blank_log_probs(lat), _emit_log_probs(lat, targets))


def backward_variables(lat: LogProbLattice, y: Sequence[int]) -> np.ndarray:
    """
    Log backward variables.

    beta(t, u) = beta(t+1, u) p_{t,u}[blank] + beta(t, u+1) p_{t,u}[y_{u+1}],
    beta(T-1, U) = p_{T-1,U}[blank].
    """
    targets = _check_inputs(lat, y)
    return _backward(_blank_log_probs(lat), _emit_log_probs(lat, targets))


def total_log_prob(lat: LogProbLattice, y: Sequence[int]) -> float:
    """log Pr(y|x): the sum over every complete path, final blank included."""
    log_alpha = forward_variables(lat, y)
    return float(log_alpha[lat.T - 1, lat.U] + lat.entries[lat.T - 1, lat.U, lat.blank])


def alpha_total_log_prob(lat: LogProbLattice, y: Sequence[int]) -> float:
    """log alpha(T-1, U), i.e. the total without the terminating blank."""
    return float(forward_variables(lat, y)[lat.T - 1, lat.U])


def loss_and_grad(lat: LogProbLattice, y: Sequence[int]) -> Tuple[float, np.ndarray]:
    """
    Transducer loss -log Pr(y|x) and its gradient w.r.t. every lattice entry.

    Each entry is treated as an independent log-probability; the softmax
    chain rule is applied by the model. Only the emission of y_{u+1} and the
    blank at each node carry gradient, so the gradient sums to -(T+U).

    Raises:
        LatticeError: bad shapes, ids or non-finite entries
        DegenerateLatticeError: every path has probability zero
    """
    targets = _check_inputs(lat, y)
    T, U = lat.T, lat.U
    blank = _blank_log_probs(lat)
    emit = _emit_log_probs(lat, targets)
    log_alpha = _forward(blank, emit)
    log_beta = _backward(blank, emit)
    log_total = log_alpha[T - 1, U] + blank[T - 1, U]
    if not np.isfinite(log_total):
        raise DegenerateLatticeError("Pr(y|x) = 0: no alignment path has positive probability")

    grad = np.zeros_like(lat.entries)
    if U > 0:
        occupancy = log_alpha[:, :U] + emit + log_beta[:, 1:] - log_total
        grad[:, np.arange(U), targets] = -np.exp(occupancy)

    # beta one step to the right in t; the terminal blank leaves the lattice with beta := 1
    next_beta = np.full((T, U + 1), LOG_ZERO)
    next_beta[:-1] = log_beta[1:]
    next_beta[T - 1, U] = 0.0
    grad[:, :, lat.blank] = -np.exp(log_alpha + blank + next_beta - log_total)
    return float(-log_total), grad


def posterior_map(lat: LogProbLattice, y: Sequence[int]) -> PosteriorMap:
    """Forward, backward and posterior (alpha * beta) maps with log Pr(y|x)."""
    targets = _check_inputs(lat, y)
    blank = _blank_log_probs(lat)
    emit = _emit_log_probs(lat, targets)
    log_alpha = _forward(blank, emit)
    log_beta = _backward(blank, emit)
    log_total = float(log_alpha[lat.T - 1, lat.U] + blank[lat.T - 1, lat.U])
    return PosteriorMap(
        log_alpha=log_alpha,
        log_beta=log_beta,
        log_gamma=log_alpha + log_beta,
        log_total=log_total,
    )


def path_log_prob(lat: LogProbLattice, y: Sequence[int], path: AlignmentPath) -> float:
    """Log-probability of a single alignment path."""
    targets = _check_inputs(lat, y)
    path.validate(lat.T, lat.U)
    total = 0.0
    for (t, u), step in zip(path.nodes(), path.steps):
        token = lat.blank if step is Step.BLANK else targets[u]
        total += lat.entries[t, u, token]
    return float(total)


def forced_align(lat: LogProbLattice, y: Sequence[int]) -> AlignmentPath:
    """
    Viterbi alignment: the single most probable path.

    Ties prefer arriving by BLANK, which places emissions at the earliest
    input position that achieves the maximum.
    """
    targets = _check_inputs(lat, y)
    T, U = lat.T, lat.U
    blank = _blank_log_probs(lat)
    emit = _emit_log_probs(lat, targets)

    best = np.full((T, U + 1), LOG_ZERO)
    via_blank = np.zeros((T, U + 1), dtype=bool)
    best[0, 0] = 0.0
    for t in range(T):
        for u in range(U + 1):
            if t == 0 and u == 0:
                continue
            if t == 0:
                best[t, u] = best[t, u - 1] + emit[t, u - 1]
                continue
            if u == 0:
                best[t, u] = best[t - 1, u] + blank[t - 1, u]
                via_blank[t, u] = True
                continue
            from_blank = best[t - 1, u] + blank[t - 1, u]
            from_emit = best[t, u - 1] + emit[t, u - 1]
            if from_blank >= from_emit:
                best[t, u] = from_blank
                via_blank[t, u] = True
            else:
                best[t, u] = from_emit

    if not np.isfinite(best[T - 1, U] + blank[T - 1, U]):
        raise DegenerateLatticeError("No alignment path has positive probability")

    steps = [Step.BLANK]
    t, u = T - 1, U
    while (t, u) != (0, 0):
        if via_blank[t, u]:
            steps.append(Step.BLANK)
            t -= 1
        else:
            steps.append(Step.EMIT)
            u -= 1
    steps.reverse()
    return AlignmentPath(tuple(steps))
