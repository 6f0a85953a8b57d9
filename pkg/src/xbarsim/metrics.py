"""Output error, relative error and bit accuracy."""

from dataclasses import dataclass

import numpy as np

from .errors import InputError

HIST_EDGES = np.array([0.0, 1e-4, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 0.1, 0.2, 0.5, 1.0, np.inf])


@dataclass
class ErrorStats:
    mean_rel: float
    worst_rel: float
    mean_bits: float
    worst_bits: float
    count: int
    histogram: np.ndarray

    def row(self):
        return {"mean_rel": self.mean_rel, "worst_rel": self.worst_rel,
                "mean_bits": self.mean_bits}


def output_range(ideal, axis=0):
    """Per-column spread (max - min) of ideal outputs over a batch."""
    ideal = np.asarray(ideal, dtype=float)
    return ideal.max(axis=axis) - ideal.min(axis=axis)


def safe_range(ideal):
    """:func:`output_range` with flat columns replaced by the widest column.

    A column whose ideal output never changes over the batch has no range
    to normalize by; borrowing the layer's widest range keeps the report
    finite.  An all-flat batch falls back to 1.
    """
    rng = output_range(ideal)
    widest = rng.max() if rng.size and rng.max() > 0 else 1.0
    return np.where(rng > 0, rng, widest)


def output_error(actual, ideal, rng):
    rng = np.asarray(rng, dtype=float)
    if np.any(rng <= 0):
        raise InputError("output range must be > 0")
    return (np.asarray(actual, dtype=float) - np.asarray(ideal, dtype=float)) / rng


def relative_error(actual, ideal, rng):
    return np.abs(output_error(actual, ideal, rng))


def bit_accuracy(rel):
    """``log2(1/rel + 1)``; an exact output (rel = 0) maps to +inf."""
    rel = np.asarray(rel, dtype=float)
    if np.any(rel < 0):
        raise InputError("relative error must be >= 0")
    with np.errstate(divide="ignore"):
        bits = np.log2(1.0 / rel + 1.0)
    return float(bits) if bits.ndim == 0 else bits


def format_bits(bits):
    return "exact" if np.isinf(bits) else f"{bits:.3f}"


def error_stats(actual, ideal, rng):
    actual = np.asarray(actual, dtype=float)
    ideal = np.asarray(ideal, dtype=float)
    if actual.shape != ideal.shape:
        raise InputError(f"shape mismatch {actual.shape} vs {ideal.shape}")
    if actual.size == 0:
        raise InputError("empty batch")
    rel = relative_error(actual, ideal, rng)
    mean_rel = float(rel.mean())
    worst_rel = float(rel.max())
    hist, _ = np.histogram(rel.ravel(), bins=HIST_EDGES)
    return ErrorStats(mean_rel, worst_rel, bit_accuracy(mean_rel), bit_accuracy(worst_rel),
                      int(rel.size), hist)
