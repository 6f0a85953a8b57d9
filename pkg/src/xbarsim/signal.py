"""DAC / ADC quantizers and the input accumulator.

Both quantizers use ``2**bits`` levels that include the range endpoints,
rounding to the nearest level with ties going up.
"""

from dataclasses import dataclass

import numpy as np

from .circuit import V_MAX
from .errors import InputError


@dataclass(frozen=True)
class QuantizerSpec:
    bits: int = None
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.bits is not None and not (1 <= int(self.bits) <= 16):
            raise InputError(f"quantizer bits must be in 1..16, got {self.bits}")
        if not self.lo < self.hi:
            raise InputError(f"quantizer range needs lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def levels(self):
        return None if self.bits is None else 2 ** int(self.bits)

    @property
    def step(self):
        return None if self.bits is None else (self.hi - self.lo) / (self.levels - 1)


def parse_bits(text):
    """``"none"`` -> None, ``"8"`` -> 8."""
    if text is None or str(text).strip().lower() in ("none", ""):
        return None
    return int(text)


def _round_half_up(u):
    return np.floor(u + 0.5)


def quantize_unit(x, bits):
    """Clamp to [0, 1] and snap to the DAC grid (normalized units)."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    if bits is None:
        return x
    top = 2 ** int(bits) - 1
    return _round_half_up(x * top) / top


def dac_encode(x, q=None, v_max=V_MAX):
    bits = None if q is None else q.bits
    return quantize_unit(x, bits) * v_max


def adc_decode(value, q):
    """Saturate to ``[lo, hi]`` and snap to the nearest ADC level.

    ``lo``/``hi`` may be arrays broadcasting against ``value`` (per-column
    ranges); ``q`` then only supplies ``bits``.
    """
    return adc_quantize(value, q.bits, q.lo, q.hi)


def adc_quantize(value, bits, lo, hi):
    value = np.asarray(value, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if bits is None:
        return value.copy()
    clipped = np.clip(value, lo, hi)
    step = (hi - lo) / (2 ** int(bits) - 1)
    level = _round_half_up((clipped - lo) / step)
    return np.minimum(lo + level * step, hi)


def accumulate_sum(x, q=None, v_max=V_MAX):
    """``(sum_x, sum_v)`` over DAC-quantized inputs; batches sum the last axis."""
    xq = quantize_unit(x, None if q is None else q.bits)
    sum_x = xq.sum(axis=-1)
    return sum_x, v_max * sum_x
