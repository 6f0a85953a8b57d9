"""Parasitic compensation: conversion (G -> G') and first-order calibration."""

from dataclasses import dataclass, field
import logging
import warnings

import numpy as np

from .circuit import Crossbar, DeviceModel, ParasiticParams, V_MAX
from .errors import ConversionInfeasibleError, InputError
from .mapping import decode_shifted, ShiftScaleSpec
from .signal import adc_quantize, quantize_unit

log = logging.getLogger(__name__)

CALIBRATION_SAMPLES = 10
ADC_RANGE_PAD = 0.05

# conversion amplitudes by crossbar size, from the reference networks
DEFAULT_AMPLITUDES = {
    (25, 20): 0.1, (500, 50): 0.01, (800, 500): 0.001, (500, 10): 0.01,
    (27, 16): 0.1, (144, 16): 0.1, (144, 32): 0.1, (288, 32): 0.05,
    (288, 64): 0.05, (576, 64): 0.01, (64, 10): 0.1,
}
AMPLITUDE_CANDIDATES = (1.0, 0.1, 0.01, 0.001)


@dataclass(frozen=True)
class ConversionSignal:
    """Drive used to enforce the conversion constraints.

    ``amplitude`` is in normalized input units (1.0 = DAC full scale), so
    the row voltages are ``amplitude * pattern * v_max``.
    """

    amplitude: float
    pattern: tuple = None

    def __post_init__(self):
        if not 0 < self.amplitude <= 1:
            raise InputError(f"conversion amplitude must be in (0, 1], got {self.amplitude}")
        if self.pattern is not None:
            pat = np.asarray(self.pattern, dtype=float)
            if np.any(pat < 0) or np.any(pat > 1):
                raise InputError("conversion pattern entries must lie in [0, 1]")
            object.__setattr__(self, "pattern", tuple(pat.tolist()))

    def voltages(self, m, v_max=V_MAX):
        pat = np.ones(m) if self.pattern is None else np.asarray(self.pattern, dtype=float)
        if pat.shape != (m,):
            raise InputError(f"pattern has {pat.size} entries, crossbar has {m} rows")
        return self.amplitude * pat * v_max


def required_conductance(g_target, p, d, v_conv):
    """Closed-form G' that makes every cross-point pass ``v_conv[i] * g[i, j]``.

    With every device current prescribed, each wire segment carries a known
    partial sum, so the node voltages follow by marching in from the driven
    row ends and the sensed column ends.  Entries whose device voltage comes
    out non-positive are returned as ``inf``; undriven rows keep their
    target value.
    """
    g_target = np.asarray(g_target, dtype=float)
    v_conv = np.asarray(v_conv, dtype=float)
    cur = v_conv[:, None] * g_target
    # row segment feeding top[i, j] carries everything at columns >= j
    suffix = np.cumsum(cur[:, ::-1], axis=1)[:, ::-1]
    v_top = v_conv[:, None] - p.r_input * suffix[:, :1] - p.r_wire_row * np.cumsum(suffix, axis=1)
    # column segment below bottom[i, j] carries everything at rows <= i
    prefix = np.cumsum(cur, axis=0)
    below = np.cumsum(prefix[::-1], axis=0)[::-1]
    v_bot = p.r_output * prefix[-1:, :] + p.r_wire_col * below
    v_dev = v_top - (v_bot + p.r_access * cur)
    out = np.full_like(g_target, np.inf)
    ok = v_dev > 0
    out[ok] = d.conductance_for(cur[ok], v_dev[ok])
    idle = v_conv == 0
    out[idle, :] = g_target[idle, :]
    return out


def convert(g_target, p, d, sig, v_max=V_MAX, clamp=False):
    """Compensated conductances for the parasitic crossbar.

    Raises :class:`ConversionInfeasibleError` when any entry would leave the
    programmable range, unless ``clamp`` is set, in which case those entries
    are pinned to the range edges.
    """
    g_target = np.asarray(g_target, dtype=float)
    lo_ok = g_target >= d.g_min * (1 - 1e-12)
    hi_ok = g_target <= d.g_max * (1 + 1e-12)
    if not np.all(lo_ok & hi_ok):
        raise InputError("target conductances must lie in the device range")
    if p.is_zero():
        return g_target.copy()
    gp = required_conductance(g_target, p, d, sig.voltages(g_target.shape[0], v_max))
    bad = (gp < d.g_min) | (gp > d.g_max) | ~np.isfinite(gp)
    if bad.any():
        if not clamp:
            idx = np.argwhere(bad)
            offending = [(int(i), int(j), float(gp[i, j])) for i, j in idx]
            head = ", ".join(f"({i},{j})={v:.3e}" for i, j, v in offending[:5])
            raise ConversionInfeasibleError(
                f"{len(offending)} of {gp.size} conductances fall outside "
                f"[{d.g_min:.3e}, {d.g_max:.3e}] S: {head}", offending)
        gp = np.where(np.isfinite(gp), gp, d.g_max)
        gp = np.clip(gp, d.g_min, d.g_max)
    return gp


def count_infeasible(g_target, p, d, sig, v_max=V_MAX):
    gp = required_conductance(g_target, p, d, sig.voltages(np.shape(g_target)[0], v_max))
    return int(np.count_nonzero((gp < d.g_min) | (gp > d.g_max) | ~np.isfinite(gp)))


@dataclass(frozen=True)
class CalibrationParams:
    slope: np.ndarray
    intercept: np.ndarray
    residual: float = 0.0

    @classmethod
    def identity(cls, n):
        return cls(np.ones(n), np.zeros(n), 0.0)

    def apply(self, z):
        return self.slope * z + self.intercept


def fit_lines(raw, target):
    """Per-column least-squares ``target ~ slope * raw + intercept``."""
    raw = np.asarray(raw, dtype=float)
    target = np.asarray(target, dtype=float)
    if raw.shape != target.shape or raw.ndim != 2:
        raise InputError("raw and target must be matching (samples, columns) arrays")
    if raw.shape[0] < 2:
        raise InputError("calibration needs at least 2 samples")
    n = raw.shape[1]
    slope = np.ones(n)
    intercept = np.zeros(n)
    for j in range(n):
        x, y = raw[:, j], target[:, j]
        spread = np.ptp(x)
        if spread <= 1e-12 * max(1.0, np.max(np.abs(x))):
            warnings.warn(f"column {j}: constant crossbar output, calibration is offset only")
            intercept[j] = float(np.mean(y - x))
            continue
        slope[j], intercept[j] = np.polyfit(x, y, 1)
    if np.any(slope <= 0):
        warnings.warn("calibration produced a non-positive slope")
    resid = target - (slope * raw + intercept)
    return CalibrationParams(slope, intercept, float(np.sqrt(np.mean(resid ** 2))))


def apply_calibration(i_col, sum_v, sum_x, spec, cal):
    """Calibrated output: correct the decoded shifted product, then drop the shift."""
    z = decode_shifted(i_col, sum_v, spec)
    sum_x = np.asarray(sum_x, dtype=float)
    if z.ndim == 2:
        sum_x = sum_x.reshape(-1, 1)
    return cal.apply(z) - spec.a_shift * sum_x


@dataclass
class PreparedCrossbar:
    """Mapped, converted and calibrated crossbar plus everything to decode it."""

    g_prime: np.ndarray
    spec: ShiftScaleSpec
    cal: CalibrationParams
    parasitics: ParasiticParams
    device: DeviceModel
    amplitude: float = None
    adc_lo: np.ndarray = None
    adc_hi: np.ndarray = None
    clamped: int = 0
    _xbar: Crossbar = field(default=None, repr=False, compare=False)

    @property
    def shape(self):
        return self.g_prime.shape

    def crossbar(self):
        if self._xbar is None:
            self._xbar = Crossbar(self.g_prime, self.parasitics, self.device)
        return self._xbar

    def raw_shifted(self, x, dac_bits=None):
        """Decoded shifted product ``X (A + shift)`` before any ADC/calibration.

        ``x`` is a (k, rows) batch of normalized inputs.
        """
        xq = quantize_unit(np.atleast_2d(x), dac_bits)
        v = xq * self.spec.v_max
        i_col = self.crossbar().column_currents(v)
        return decode_shifted(i_col, v.sum(axis=1), self.spec), xq

    def evaluate(self, x, dac_bits=None, adc_bits=None, calibrate=True):
        """Full DAC -> crossbar -> ADC -> calibration chain for a batch."""
        z, xq = self.raw_shifted(x, dac_bits)
        if adc_bits is not None:
            if self.adc_lo is None:
                raise InputError("crossbar has no ADC range; prepare it with a sample batch")
            z = adc_quantize(z, adc_bits, self.adc_lo, self.adc_hi)
        if calibrate:
            z = self.cal.apply(z)
        return z - self.spec.a_shift * xq.sum(axis=1, keepdims=True)


def adc_range(ideal_shifted, pad=ADC_RANGE_PAD):
    lo = ideal_shifted.min(axis=0)
    hi = ideal_shifted.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    return lo - pad * span, hi + pad * span


def fit_calibration(pc, samples, ideal_outputs, dac_bits=None):
    """Fit per-column lines from the crossbar's decoded output to the ideal.

    ``ideal_outputs`` is ``X A`` for the samples; the fit runs on the
    shifted product so the exact shift term stays outside the correction.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    z, xq = pc.raw_shifted(samples, dac_bits)
    target = np.asarray(ideal_outputs, dtype=float) + pc.spec.a_shift * xq.sum(axis=1, keepdims=True)
    return fit_lines(z, target)


def pick_calibration_samples(batch, seed, count=CALIBRATION_SAMPLES):
    batch = np.atleast_2d(batch)
    rng = np.random.default_rng(seed)
    count = min(count, batch.shape[0])
    return batch[np.sort(rng.choice(batch.shape[0], size=count, replace=False))]


def conversion_error(g_target, spec, p, d, amplitude, probe_inputs, clamp=False):
    """Mean relative error of the converted, uncalibrated crossbar on probes.

    The reference is the ideal crossbar holding ``g_target``.
    """
    from .metrics import relative_error, safe_range
    gp = convert(g_target, p, d, ConversionSignal(amplitude), spec.v_max, clamp=clamp)
    ident = CalibrationParams.identity(gp.shape[1])
    pc = PreparedCrossbar(gp, spec, ident, p, d, amplitude)
    probe = np.atleast_2d(probe_inputs)
    v = probe * spec.v_max
    ideal = apply_calibration(v @ g_target, v.sum(axis=1), probe.sum(axis=1), spec, ident)
    actual = pc.evaluate(probe, calibrate=False)
    return float(relative_error(actual, ideal, safe_range(ideal)).mean())


def select_conversion_amplitude(g_target, p, d, candidates, probe_inputs, spec, clamp=False):
    """Candidate amplitude with the lowest probe error; ties go to the smaller."""
    if len(candidates) == 0:
        raise InputError("no candidate amplitudes")
    best = None
    for amp in sorted(candidates):
        try:
            err = conversion_error(g_target, spec, p, d, amp, probe_inputs, clamp)
        except ConversionInfeasibleError:
            log.info("amplitude %g infeasible", amp)
            continue
        log.debug("amplitude %g: mean relative error %.4g", amp, err)
        if best is None or err < best[1]:
            best = (amp, err)
    if best is None:
        raise ConversionInfeasibleError("every candidate amplitude is infeasible")
    return best[0]
