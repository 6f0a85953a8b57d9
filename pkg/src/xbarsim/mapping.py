"""Weight-to-conductance mapping and dense convolution lowering.

Flattening order (used by both :func:`dense_map_kernel` and
:func:`window_iter`): input channel varies slowest, then kernel row, then
kernel column.  A 3-D window ``w[r, c, ch]`` lands at
``ch * kh * kw + r * kw + c``.
"""

from dataclasses import dataclass
import math

import numpy as np

from .circuit import DeviceModel, V_MAX
from .errors import DegenerateMatrixError, InputError

# ISAAC-style column sharing: one ADC serves this many crossbar columns
ADC_COLUMN_GROUP = 128


@dataclass(frozen=True)
class ShiftScaleSpec:
    a_shift: float
    w_max: float
    g_min: float
    g_span: float
    v_max: float = V_MAX

    @property
    def slope(self):
        """Siemens per unit of shifted weight."""
        return self.g_span / self.w_max

    def to_dict(self):
        return {"a_shift": self.a_shift, "w_max": self.w_max, "g_min": self.g_min,
                "g_span": self.g_span, "v_max": self.v_max}


@dataclass(frozen=True)
class KernelDims:
    kh: int
    kw: int
    cin: int
    cout: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        for name in ("kh", "kw", "cin", "cout", "stride"):
            if int(getattr(self, name)) < 1:
                raise InputError(f"kernel {name} must be positive")
        if int(self.padding) < 0:
            raise InputError("padding must be >= 0")

    @property
    def rows(self):
        return self.kh * self.kw * self.cin

    @classmethod
    def of(cls, kernel, stride=1, padding=0):
        kh, kw, cin, cout = np.shape(kernel)
        return cls(kh, kw, cin, cout, stride, padding)


def shift_and_scale(A, device=None, v_max=V_MAX):
    """Map a real matrix onto ``[g_min, g_max]`` with the smallest valid shift."""
    device = DeviceModel() if device is None else device
    A = np.asarray(A, dtype=float)
    if A.size == 0 or not np.all(np.isfinite(A)):
        raise InputError("weight matrix must be finite and non-empty")
    a_shift = max(0.0, -float(A.min()))
    w_max = float(A.max()) + a_shift
    if w_max <= 0:
        raise DegenerateMatrixError("weights shift to all zeros; nothing to map")
    spec = ShiftScaleSpec(a_shift, w_max, device.g_min, device.g_span, v_max)
    g = device.g_min + spec.slope * (A + a_shift)
    return np.clip(g, device.g_min, device.g_max), spec


def decode_shifted(i_col, sum_v, spec):
    """Column currents back to the shifted product ``X (A + a_shift)``."""
    i_col = np.asarray(i_col, dtype=float)
    sum_v = np.asarray(sum_v, dtype=float)
    if i_col.ndim == 2:
        sum_v = sum_v.reshape(-1, 1)
    return (i_col - spec.g_min * sum_v) / (spec.slope * spec.v_max)


def unshift_output(i_col, sum_v, sum_x, spec):
    """Column currents to ``X A``: remove the g_min floor, rescale, drop the shift."""
    sum_x = np.asarray(sum_x, dtype=float)
    z = decode_shifted(i_col, sum_v, spec)
    if z.ndim == 2:
        sum_x = sum_x.reshape(-1, 1)
    return z - spec.a_shift * sum_x


def dense_map_kernel(K):
    """4-D kernel ``(kh, kw, cin, cout)`` to a ``(kh*kw*cin, cout)`` matrix."""
    K = np.asarray(K, dtype=float)
    if K.ndim != 4:
        raise InputError(f"kernel must be 4-D (kh, kw, cin, cout), got shape {K.shape}")
    if not np.all(np.isfinite(K)):
        raise InputError("kernel has non-finite entries")
    kh, kw, cin, cout = K.shape
    return K.transpose(2, 0, 1, 3).reshape(kh * kw * cin, cout)


def _out_size(size, k, stride, padding):
    span = size + 2 * padding - k
    if span < 0:
        raise InputError(f"kernel extent {k} exceeds padded input {size + 2 * padding}")
    return span // stride + 1


def output_shape(x_dims, kd):
    j, k = x_dims[0], x_dims[1]
    return (_out_size(j, kd.kh, kd.stride, kd.padding),
            _out_size(k, kd.kw, kd.stride, kd.padding))


def iteration_count(x_dims, kd):
    oh, ow = output_shape(x_dims, kd)
    return oh * ow


def unroll_windows(x, kd):
    """All unrolled windows as an array of shape (positions, kh*kw*cin).

    Positions are ordered row-major over the output map.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise InputError(f"input volume must be (height, width, channels), got {x.shape}")
    if x.shape[2] != kd.cin:
        raise InputError(f"input has {x.shape[2]} channels, kernel expects {kd.cin}")
    oh, ow = output_shape(x.shape, kd)
    pad = kd.padding
    if pad:
        x = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kd.kh, kd.kw), axis=(0, 1))
    # win: (H', W', cin, kh, kw) -> stride, then channel-major flattening
    win = win[::kd.stride, ::kd.stride][:oh, :ow]
    return win.reshape(oh * ow, kd.cin * kd.kh * kd.kw).copy()


def window_iter(x, kd):
    """Yield each unrolled input window in output order."""
    yield from unroll_windows(x, kd)


def toeplitz_dims(x_dims, kd):
    """Crossbar size the sparse (Toeplitz) mapping would need."""
    j, k, p = x_dims
    return j * k * p, iteration_count(x_dims, kd) * kd.cout


def adc_count(cols, group=ADC_COLUMN_GROUP):
    return math.ceil(cols / group)
