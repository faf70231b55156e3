"""
Evaluation metrics: token error rate, duration accuracy and boundary accuracy.
"""
from typing import Sequence

import numpy as np


def edit_distance(hypothesis: Sequence[int], reference: Sequence[int]) -> int:
    """Levenshtein distance (unit cost insert/delete/substitute)."""
    hyp = np.asarray(hypothesis)
    ref = np.asarray(reference)
    # one DP row per hypothesis token
    row = np.arange(ref.size + 1)
    for i in range(1, hyp.size + 1):
        previous = row
        row = np.empty_like(previous)
        row[0] = i
        substitute = previous[:-1] + (ref != hyp[i - 1])
        delete = previous[1:] + 1
        best = np.minimum(substitute, delete)
        for j in range(1, ref.size + 1):
            row[j] = min(best[j - 1], row[j - 1] + 1)
    return int(row[-1])


def token_error_rate(hypotheses: Sequence[Sequence[int]], references: Sequence[Sequence[int]]) -> float:
    """Corpus-level TER: total edit distance over total reference length."""
    if len(hypotheses) != len(references):
        raise ValueError("Need one hypothesis per reference")
    errors = sum(edit_distance(h, r) for h, r in zip(hypotheses, references))
    length = sum(len(r) for r in references)
    if length == 0:
        return 0.0 if errors == 0 else float('inf')
    return errors / length


def duration_accuracy(predicted: Sequence[int], reference: Sequence[int]) -> float:
    """Fraction of input symbols whose decoded duration equals the reference."""
    if not reference:
        return 1.0
    matched = sum(1 for p, r in zip(predicted, reference) if p == r)
    return matched / len(reference)


def boundary_accuracy(predicted: Sequence[int], reference: Sequence[int], tolerance: int = 1) -> float:
    """
    Fraction of symbol end boundaries within +-tolerance output steps.

    A boundary is the cumulative duration after each input symbol; symbols
    missing from `predicted` count as wrong.
    """
    if not reference:
        return 1.0
    predicted_ends = np.cumsum(predicted)
    reference_ends = np.cumsum(reference)
    count = min(predicted_ends.size, reference_ends.size)
    hits = np.abs(predicted_ends[:count] - reference_ends[:count]) <= tolerance
    return float(np.sum(hits)) / reference_ends.size
