"""Layer planning, crossbar preparation and analog inference over a CNN chain.

Activations are batches of volumes shaped ``(batch, height, width,
channels)``.  A fully connected layer is a ``1 x 1 x cin x cout`` kernel
applied to the row-major flattening of its input volume.

Intermediate activations are not confined to ``[0, 1]``.  Before the DAC,
each analog layer divides an image's input volume by that volume's largest
value (a per-image digital scale, 1 for an all-zero volume) and multiplies
the decoded result back afterwards.  Inputs already inside ``[0, 1]`` whose
maximum is 1 pass unchanged; negative values clip to zero at the DAC.
"""

from dataclasses import dataclass, field, replace
import logging

import numpy as np

from .circuit import DeviceModel, ParasiticParams, V_MAX
from .errors import ConversionInfeasibleError, DegenerateMatrixError, InputError, PlanError
from .mapping import (KernelDims, adc_count, dense_map_kernel, output_shape, shift_and_scale,
                      toeplitz_dims, unroll_windows)
from .metrics import ErrorStats, error_stats, safe_range
from .mitigation import (AMPLITUDE_CANDIDATES, CalibrationParams, ConversionSignal,
                         DEFAULT_AMPLITUDES, PreparedCrossbar, adc_range, convert,
                         count_infeasible, fit_calibration, pick_calibration_samples,
                         select_conversion_amplitude)
from .patterns import inject_programming_error

log = logging.getLogger(__name__)

ANALOG_KINDS = ("conv", "fc")
DIGITAL_KINDS = ("relu", "maxpool", "avgpool")
_REJECTED_KINDS = ("bn", "batchnorm", "batch_norm", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a feed-forward chain.

    ``amplitude`` is a normalized conversion amplitude, ``"auto"`` (use the
    per-size table, falling back to a search) or ``"search"`` (always search).
    """

    kind: str
    name: str = None
    kernel: KernelDims = None
    window: int = None
    stride: int = None
    dac_bits: int = None
    adc_bits: int = None
    amplitude: object = "auto"
    weights: str = None

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind in _REJECTED_KINDS:
            raise PlanError(f"{kind} layers are not supported: fold batch normalization into "
                            "the preceding kernel and keep softmax in software")
        if kind not in ANALOG_KINDS + DIGITAL_KINDS:
            raise PlanError(f"unknown layer kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind in ANALOG_KINDS and self.kernel is None:
            raise PlanError(f"{kind} layer needs kernel dims")
        if kind == "fc" and (self.kernel.kh, self.kernel.kw) != (1, 1):
            raise PlanError("fc kernel must be 1x1xCINxCOUT")
        if kind in ("maxpool", "avgpool"):
            if self.window is None or int(self.window) < 1:
                raise PlanError("pool layer needs a positive window")
            if self.stride is not None and int(self.stride) < 1:
                raise PlanError("pool stride must be positive")
        amp = self.amplitude
        if isinstance(amp, str) and amp not in ("auto", "search"):
            raise PlanError(f"amplitude must be a number, 'auto' or 'search', got {amp!r}")
        if not isinstance(amp, str) and not 0 < float(amp) <= 1:
            raise PlanError(f"amplitude must be in (0, 1], got {amp}")

    @property
    def is_analog(self):
        return self.kind in ANALOG_KINDS

    @property
    def pool_stride(self):
        return int(self.window if self.stride is None else self.stride)


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple
    layers: tuple
    parasitics: ParasiticParams = field(default_factory=ParasiticParams)
    device: DeviceModel = field(default_factory=DeviceModel)
    v_max: float = V_MAX
    seed: int = 0
    clamp: bool = False
    max_rows: int = None

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise PlanError(f"input shape must be (height, width, channels), got {self.input_shape}")

    def label(self, index):
        ls = self.layers[index]
        return ls.name or f"{index}:{ls.kind}"


@dataclass(frozen=True)
class LayerPlan:
    index: int
    name: str
    kind: str
    in_shape: tuple
    out_shape: tuple
    crossbar: tuple = None
    dacs: int = 0
    adcs: int = 0
    iterations: int = 0
    sparse_crossbar: tuple = None
    sparse_adcs: int = 0


@dataclass(frozen=True)
class NetworkPlan:
    layers: tuple

    @property
    def crossbars(self):
        return sum(1 for lp in self.layers if lp.crossbar is not None)

    @property
    def total_dacs(self):
        return sum(lp.dacs for lp in self.layers)

    @property
    def total_adcs(self):
        return sum(lp.adcs for lp in self.layers)

    @property
    def total_iterations(self):
        return sum(lp.iterations for lp in self.layers)


def _pool_out(size, window, stride):
    return (size - window) // stride + 1


def plan_network(ns):
    """Crossbar sizes, converter counts and sequential iterations per layer."""
    shape = ns.input_shape
    plans = []
    for idx, ls in enumerate(ns.layers):
        label = ns.label(idx)
        h, w, c = shape
        if ls.kind == "conv":
            kd = ls.kernel
            if c != kd.cin:
                raise PlanError(f"input has {c} channels, kernel expects {kd.cin}", label)
            try:
                oh, ow = output_shape(shape, kd)
                sparse = toeplitz_dims(shape, kd)
            except InputError as exc:
                raise PlanError(str(exc), label) from exc
            out = (oh, ow, kd.cout)
            iters = oh * ow
        elif ls.kind == "fc":
            kd = ls.kernel
            if h * w * c != kd.cin:
                raise PlanError(f"flattened input has {h * w * c} values, fc expects {kd.cin}", label)
            out = (1, 1, kd.cout)
            iters = 1
            sparse = (kd.cin, kd.cout)
        elif ls.kind == "relu":
            out = shape
        else:
            win, st = int(ls.window), ls.pool_stride
            if win > h or win > w:
                raise PlanError(f"pool window {win} exceeds input {h}x{w}", label)
            out = (_pool_out(h, win, st), _pool_out(w, win, st), c)
        if ls.is_analog:
            rows, cols = kd.rows, kd.cout
            if ns.max_rows is not None and rows > ns.max_rows:
                raise PlanError(f"unrolled kernel needs {rows} rows, limit is {ns.max_rows}", label)
            plans.append(LayerPlan(idx, label, ls.kind, shape, out, (rows, cols), rows,
                                   adc_count(cols), iters, sparse, adc_count(sparse[1])))
        else:
            plans.append(LayerPlan(idx, label, ls.kind, shape, out))
        shape = out
    return NetworkPlan(tuple(plans))


# ---------------------------------------------------------------------------
# digital layers


def relu(x):
    return np.maximum(np.asarray(x, dtype=float), 0.0)


def _pool_windows(x, window, stride):
    x = np.asarray(x, dtype=float)
    if x.ndim < 3:
        raise InputError("pooling expects (..., height, width, channels)")
    h, w = x.shape[-3], x.shape[-2]
    if window > h or window > w:
        raise InputError(f"pool window {window} exceeds input {h}x{w}")
    win = np.lib.stride_tricks.sliding_window_view(x, (window, window), axis=(-3, -2))
    return win[..., ::stride, ::stride, :, :, :]


def maxpool(x, window, stride=None):
    return _pool_windows(x, int(window), int(stride or window)).max(axis=(-2, -1))


def avgpool(x, window, stride=None):
    return _pool_windows(x, int(window), int(stride or window)).mean(axis=(-2, -1))


def digital_layer(x, ls):
    if ls.kind == "relu":
        return relu(x)
    if ls.kind == "maxpool":
        return maxpool(x, ls.window, ls.pool_stride)
    return avgpool(x, ls.window, ls.pool_stride)


# ---------------------------------------------------------------------------
# analog layers


def _batch(x, shape=None):
    x = np.asarray(x, dtype=float)
    if shape is not None and x.shape == tuple(shape):
        x = x[None]
    if x.ndim != 4:
        raise InputError(f"expected a (batch, height, width, channels) array, got shape {x.shape}")
    return x


def layer_windows(x, ls):
    """Unrolled crossbar inputs for a batch ``x``: ``(batch * positions, rows)``."""
    x = _batch(x)
    if ls.kind == "fc":
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != ls.kernel.cin:
            raise InputError(f"fc expects {ls.kernel.cin} inputs, got {flat.shape[1]}")
        return flat
    return np.concatenate([unroll_windows(img, ls.kernel) for img in x], axis=0)


def input_scales(x, ls):
    """Per-window digital scale: the peak of the window's source image."""
    x = _batch(x)
    peak = x.reshape(x.shape[0], -1).max(axis=1)
    peak = np.where(peak > 0, peak, 1.0)
    per_image = 1 if ls.kind == "fc" else len(unroll_windows(x[0], ls.kernel))
    return np.repeat(peak, per_image)[:, None]


def normalized_windows(x, ls):
    """``(windows, scales)`` with windows scaled into the DAC range."""
    wins = layer_windows(x, ls)
    scale = input_scales(x, ls)
    return wins, scale, np.clip(wins / scale, 0.0, 1.0)


def _reshape_out(y, x, ls):
    x = _batch(x)
    if ls.kind == "fc":
        return y.reshape(x.shape[0], 1, 1, -1)
    oh, ow = output_shape(x.shape[1:], ls.kernel)
    return y.reshape(x.shape[0], oh, ow, -1)


def weight_matrix(weights, ls):
    w = np.asarray(weights, dtype=float)
    kd = ls.kernel
    expect = (kd.kh, kd.kw, kd.cin, kd.cout)
    if w.shape != expect:
        if w.shape == (kd.rows, kd.cout):
            return w.copy()
        raise InputError(f"weights have shape {w.shape}, layer expects {expect}")
    return dense_map_kernel(w)


@dataclass
class PreparedLayer:
    """A prepared crossbar together with the weights it stands for."""

    index: int
    name: str
    pc: PreparedCrossbar
    matrix: np.ndarray


@dataclass
class LayerErrorReport:
    index: int
    name: str
    kind: str
    stats: ErrorStats
    vs_software: ErrorStats = None
    clamped: int = 0


def _resolve_amplitude(ls, g, spec, p, d, probes, clamp):
    amp = ls.amplitude
    if not isinstance(amp, str):
        return float(amp)
    if amp == "auto" and g.shape in DEFAULT_AMPLITUDES:
        return DEFAULT_AMPLITUDES[g.shape]
    return select_conversion_amplitude(g, p, d, AMPLITUDE_CANDIDATES, probes, spec, clamp=clamp)


def prepare_layer(weights, ls, ns, sample_inputs, index=0):
    """Map, convert and calibrate one analog layer.

    ``sample_inputs`` is a batch of layer inputs (same units as inference);
    windows drawn from it supply the amplitude probes, the 10 calibration
    samples and the ADC ranges.
    """
    label = ns.label(index)
    try:
        A = weight_matrix(weights, ls)
        _, _, xn = normalized_windows(sample_inputs, ls)
        p, d = ns.parasitics, ns.device
        g, spec = shift_and_scale(A, d, ns.v_max)
        amp = _resolve_amplitude(ls, g, spec, p, d, xn, ns.clamp)
        sig = ConversionSignal(amp)
        gp = convert(g, p, d, sig, ns.v_max, clamp=ns.clamp)
        clamped = count_infeasible(g, p, d, sig, ns.v_max) if not p.is_zero() else 0
        pc = PreparedCrossbar(gp, spec, CalibrationParams.identity(A.shape[1]), p, d, amp,
                              clamped=clamped)
        if not p.is_zero():
            samples = pick_calibration_samples(xn, ns.seed + index)
            pc.cal = fit_calibration(pc, samples, samples @ A)
        raw, xq = pc.raw_shifted(xn)
        ideal = xq @ A + spec.a_shift * xq.sum(axis=1, keepdims=True)
        pc.adc_lo, pc.adc_hi = adc_range(np.concatenate([ideal, raw], axis=0))
    except ConversionInfeasibleError as exc:
        raise ConversionInfeasibleError(f"layer {label}: {exc}", exc.offending) from exc
    except (DegenerateMatrixError, InputError) as exc:
        raise type(exc)(f"layer {label}: {exc}") from exc
    if clamped:
        log.warning("layer %s: %d conductances clamped to the device range", label, clamped)
    return PreparedLayer(index, label, pc, A)


def with_programming_error(pl, sigma, seed):
    """Copy of ``pl`` whose programmed conductances carry Gaussian error."""
    if sigma == 0:
        return pl
    g = inject_programming_error(pl.pc.g_prime, sigma, seed, pl.pc.device)
    return replace(pl, pc=replace(pl.pc, g_prime=g, _xbar=None))


def run_conv_layer(x, pl, ls, dac_bits=None, adc_bits=None, reference=None):
    """Analog evaluation of one conv/fc layer on a batch.

    The error report compares against the exact product of the same input.
    ``reference`` (optional) is the software activation for this layer's
    output and adds a second report.
    """
    x = _batch(x)
    wins, scale, xn = normalized_windows(x, ls)
    try:
        y = pl.pc.evaluate(xn, dac_bits, adc_bits) * scale
    except InputError as exc:
        raise InputError(f"layer {pl.name}: {exc}") from exc
    ideal = wins @ pl.matrix
    stats = error_stats(y, ideal, safe_range(ideal))
    vs_sw = None
    if reference is not None:
        ref = np.asarray(reference, dtype=float).reshape(y.shape)
        vs_sw = error_stats(y, ref, safe_range(ref))
    report = LayerErrorReport(pl.index, pl.name, ls.kind, stats, vs_sw, pl.pc.clamped)
    return _reshape_out(y, x, ls), report


def software_layer(x, ls, A):
    return _reshape_out(layer_windows(x, ls) @ A, x, ls)


def software_forward(x, ns, weights):
    """Exact floating-point pass; returns the activation after every layer."""
    x = _batch(x, ns.input_shape)
    acts = []
    for idx, ls in enumerate(ns.layers):
        if ls.is_analog:
            x = software_layer(x, ls, weight_matrix(weights[idx], ls))
        else:
            x = digital_layer(x, ls)
        acts.append(x)
    return acts


def prepare_network(ns, weights, sample_inputs, skip=None):
    """Prepare every analog layer, feeding each the software activations.

    ``skip`` maps layer index to an already prepared layer, which is reused.
    """
    plan_network(ns)
    x = _batch(sample_inputs, ns.input_shape)
    prepared = {}
    for idx, ls in enumerate(ns.layers):
        if ls.is_analog:
            if skip and idx in skip:
                prepared[idx] = skip[idx]
            else:
                prepared[idx] = prepare_layer(weights[idx], ls, ns, x, idx)
            x = software_layer(x, ls, prepared[idx].matrix)
        else:
            x = digital_layer(x, ls)
    return prepared


@dataclass
class NetworkResult:
    output: np.ndarray
    software: np.ndarray
    reports: list
    final: ErrorStats = None


LAYER_BITS = "layer"


def run_network(x, prepared, ns, bits=LAYER_BITS, sigma=0.0):
    """Analog inference of the whole chain.

    ``bits`` overrides both quantizers of every analog layer (``None``
    disables quantization); the default keeps each layer's own settings.
    ``sigma`` (siemens) adds programming error to every crossbar, seeded
    from ``ns.seed`` and the layer index.
    """
    x = _batch(x, ns.input_shape)
    for idx, ls in enumerate(ns.layers):
        if ls.is_analog and idx not in prepared:
            raise PlanError("layer is not prepared", ns.label(idx))
    weights = {i: pl.matrix for i, pl in prepared.items()}
    soft = software_forward(x, ns, weights)
    reports = []
    for idx, ls in enumerate(ns.layers):
        if ls.is_analog:
            pl = with_programming_error(prepared[idx], sigma, ns.seed * 1000 + idx)
            db, ab = (ls.dac_bits, ls.adc_bits) if bits == LAYER_BITS else (bits, bits)
            x, rep = run_conv_layer(x, pl, ls, db, ab, reference=soft[idx])
            reports.append(rep)
        else:
            x = digital_layer(x, ls)
    final = None
    if ns.layers:
        ref = soft[-1].reshape(x.shape[0], -1)
        final = error_stats(x.reshape(x.shape[0], -1), ref, safe_range(ref))
    return NetworkResult(x, soft[-1] if soft else x, reports, final)
