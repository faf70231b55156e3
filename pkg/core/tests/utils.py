"""
Shared fixtures for the core test suites.
"""
import itertools

import numpy as np

from core.services.lattice import AlignmentPath, LogProbLattice, Step
from core.services.model import ModelConfig


def random_lattice(rng, T, U, vocab=3, scale=2.0):
    """Normalized lattice over `vocab` tokens plus blank, with matching random targets."""
    logits = rng.normal(scale=scale, size=(T, U + 1, vocab + 1))
    y = [int(v) for v in rng.integers(0, vocab, size=U)]
    return LogProbLattice.from_logits(logits), y


def all_paths(T, U):
    """Every complete alignment path over a T x (U+1) lattice."""
    length = T + U - 1
    for emits in itertools.combinations(range(length), U):
        chosen = set(emits)
        steps = [Step.EMIT if i in chosen else Step.BLANK for i in range(length)]
        yield AlignmentPath(tuple(steps) + (Step.BLANK,))


def walk_log_prob(lattice, y, path):
    """Path log-probability computed directly from the entries."""
    total, t, u = 0.0, 0, 0
    for step in path.steps:
        if step is Step.BLANK:
            total += lattice.entries[t, u, lattice.blank]
            t += 1
        else:
            total += lattice.entries[t, u, y[u]]
            u += 1
    return total


def tiny_config(**overrides):
    values = dict(n_layers=1, n_heads=2, d_model=16, d_ff=24, input_vocab=6, output_vocab=7, max_len=64, seed=3)
    values.update(overrides)
    return ModelConfig(**values)


def stub_rows(y_view, token, vocab):
    """Model output that puts all mass of every row on `token`."""
    rows = np.full((len(y_view) + 1, vocab + 1), -np.inf)
    rows[:, token] = 0.0
    return rows


class CopyModel:
    """
    Stand-in for forward_row that emits the current input symbol once, then a blank.

    On the identity task (unit durations) this decodes every pair perfectly.
    """

    def __init__(self, vocab=24):
        self.vocab = vocab
        self.emitted = False
        self.views = []

    def __call__(self, params, x_view, y_view, plan):
        self.views.append((tuple(x_view), tuple(y_view), plan))
        token = self.vocab if self.emitted else x_view[plan.current]
        self.emitted = not self.emitted
        return stub_rows(y_view, token, self.vocab)
