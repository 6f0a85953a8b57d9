"""Single-crossbar error sweeps over size, kernel type, sparsity and method.

Methods:

* ``linear``: the shifted/scaled conductances are programmed as is.
* ``convert``: conversion only, no calibration.
* ``convert+calibrate``: conversion followed by the 10-sample line fit.
"""

from dataclasses import dataclass
import logging

import numpy as np

from .errors import ConversionInfeasibleError, XbarError
from .mapping import shift_and_scale
from .metrics import bit_accuracy, error_stats, safe_range
from .mitigation import (AMPLITUDE_CANDIDATES, CalibrationParams, ConversionSignal,
                         DEFAULT_AMPLITUDES, PreparedCrossbar, convert, count_infeasible,
                         fit_calibration, pick_calibration_samples, select_conversion_amplitude)
from .patterns import gen_kernel, gen_sparse_input

log = logging.getLogger(__name__)

SWEEP_HEADER = ["rows", "cols", "kernel_type", "sparsity", "method", "amplitude", "seeds",
                "mean_rel", "worst_rel", "mean_bits", "worst_bits", "clamped", "status"]
# offsets keep kernel, input and calibration streams independent per seed
_INPUT_STREAM = 104729
PROBE_COUNT = 20


@dataclass(frozen=True)
class Trial:
    """One (crossbar, kernel, input batch) draw shared by every method."""

    A: np.ndarray
    g: np.ndarray
    spec: object
    X: np.ndarray
    ideal: np.ndarray
    rng: np.ndarray
    seed: int


def make_trial(rows, cols, kernel_type, sparsity, seed, device, v_max, batch):
    A = gen_kernel(kernel_type, (rows, cols), seed)
    g, spec = shift_and_scale(A, device, v_max)
    X = gen_sparse_input(sparsity, (batch, rows), seed + _INPUT_STREAM)
    ideal = X @ A
    return Trial(A, g, spec, X, ideal, safe_range(ideal), seed)


def linear_stats(trial, p, d):
    pc = PreparedCrossbar(trial.g, trial.spec, CalibrationParams.identity(trial.g.shape[1]), p, d)
    return error_stats(pc.evaluate(trial.X, calibrate=False), trial.ideal, trial.rng)


def resolve_amplitude(trial, p, d, amplitude, clamp):
    """``amplitude`` itself, the per-size default, or a probe search."""
    if amplitude is not None:
        return amplitude
    if trial.g.shape in DEFAULT_AMPLITUDES:
        return DEFAULT_AMPLITUDES[trial.g.shape]
    return select_conversion_amplitude(trial.g, p, d, AMPLITUDE_CANDIDATES,
                                       trial.X[:PROBE_COUNT], trial.spec, clamp=clamp)


def converted_stats(trial, p, d, amplitude, clamp, calibrate=True):
    """``(convert-only stats, convert+calibrate stats or None, clamped count)``."""
    sig = ConversionSignal(amplitude)
    gp = convert(trial.g, p, d, sig, trial.spec.v_max, clamp=clamp)
    clamped = count_infeasible(trial.g, p, d, sig, trial.spec.v_max) if clamp else 0
    n = trial.g.shape[1]
    pc = PreparedCrossbar(gp, trial.spec, CalibrationParams.identity(n), p, d, amplitude)
    conv = error_stats(pc.evaluate(trial.X, calibrate=False), trial.ideal, trial.rng)
    cal = None
    if calibrate:
        samples = pick_calibration_samples(trial.X, trial.seed)
        pc.cal = fit_calibration(pc, samples, samples @ trial.A)
        cal = error_stats(pc.evaluate(trial.X), trial.ideal, trial.rng)
    return conv, cal, clamped


def _aggregate(rows, cols, kt, s, method, amp, stats, clamped, status, seeds):
    row = {"rows": rows, "cols": cols, "kernel_type": kt, "sparsity": s, "method": method,
           "amplitude": amp, "seeds": seeds, "status": status}
    if stats:
        mean_rel = float(np.mean([st.mean_rel for st in stats]))
        worst_rel = float(np.max([st.worst_rel for st in stats]))
        row.update(mean_rel=mean_rel, worst_rel=worst_rel, mean_bits=bit_accuracy(mean_rel),
                   worst_bits=bit_accuracy(worst_rel), clamped=float(np.mean(clamped)))
    return row


def sweep_cell(rows, cols, kernel_type, sparsity, p, d, v_max=0.4, methods=None, amplitudes=(None,),
               seeds=5, base_seed=0, batch=200, clamp=False):
    """Rows for every (method, amplitude) at one grid point, seed-averaged."""
    methods = tuple(methods or ("linear", "convert", "convert+calibrate"))
    want_conv = [m for m in methods if m != "linear"]
    stats, clamps, used = {}, {}, {}
    failed = {}
    for k in range(seeds):
        trial = make_trial(rows, cols, kernel_type, sparsity, base_seed + k, d, v_max, batch)
        if "linear" in methods:
            stats.setdefault(("linear", None), []).append(linear_stats(trial, p, d))
            clamps.setdefault(("linear", None), []).append(0)
        for amp in (amplitudes if want_conv else ()):
            try:
                chosen = resolve_amplitude(trial, p, d, amp, clamp)
                conv, cal, clamped = converted_stats(trial, p, d, chosen, clamp,
                                                     "convert+calibrate" in methods)
            except ConversionInfeasibleError as exc:
                log.info("%dx%d %s s=%g: %s", rows, cols, kernel_type, sparsity, exc)
                failed.update({(m, amp): "infeasible" for m in want_conv})
                continue
            except XbarError as exc:
                failed.update({(m, amp): f"error:{type(exc).__name__}" for m in want_conv})
                continue
            for m, st in (("convert", conv), ("convert+calibrate", cal)):
                if m in methods:
                    stats.setdefault((m, amp), []).append(st)
                    clamps.setdefault((m, amp), []).append(clamped)
                    used.setdefault((m, amp), set()).add(chosen)
    out = []
    for m in methods:
        for amp in ((None,) if m == "linear" else amplitudes):
            key = (m, amp)
            label = amp
            if key in used and amp is None:
                label = "/".join(repr(a) for a in sorted(used[key]))
            if key in failed:
                out.append(_aggregate(rows, cols, kernel_type, sparsity, m, label, None, None,
                                      failed[key], seeds))
                continue
            status = "clamped" if any(clamps[key]) else "ok"
            out.append(_aggregate(rows, cols, kernel_type, sparsity, m, label, stats[key],
                                  clamps[key], status, seeds))
    return out


def run_sweep(cfg):
    """All grid rows for a :class:`~xbarsim.config.RunConfig`."""
    p, d = cfg.parasitics(), cfg.device_model()
    amps = tuple(cfg.amplitudes) or (None,)
    rows = []
    for m, n in cfg.sizes:
        for kt in cfg.kernel_types:
            for s in cfg.sparsities:
                rows.extend(sweep_cell(m, n, kt, s, p, d, cfg.v_max, cfg.methods, amps,
                                       cfg.seeds, cfg.seed, cfg.batch, cfg.clamp))
    return rows
