"""Synthetic kernels and inputs, and programming-error injection."""

from dataclasses import dataclass, field

import numpy as np

from .circuit import DeviceModel
from .errors import InputError

KERNEL_DEFAULTS = {
    "type1": {"mean": 0.0, "std": 0.1},
    "type2": {"gap": 0.1, "high": 1.0},
    "type3": {"zero_fraction": 0.5},
}
_ALIASES = {"type1-gaussian": "type1", "type2-gap": "type2", "type3-ternary": "type3"}


@dataclass(frozen=True)
class KernelType:
    """Weight distribution family.

    type1: Gaussian weights.  type2: magnitudes uniform on ``[gap, high]``
    with random sign, so nothing falls in ``(-gap, gap)``.  type3: ternary
    ``{-1, 0, 1}`` with a fixed fraction of zeros.
    """

    variant: str = "type1"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        variant = _ALIASES.get(self.variant, self.variant)
        if variant not in KERNEL_DEFAULTS:
            raise InputError(f"unknown kernel type {self.variant!r}")
        object.__setattr__(self, "variant", variant)
        merged = dict(KERNEL_DEFAULTS[variant])
        merged.update(self.params)
        object.__setattr__(self, "params", merged)


def gen_kernel(kt, dims, seed=0):
    if isinstance(kt, str):
        kt = KernelType(kt)
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims):
        raise InputError(f"invalid kernel dims {dims}")
    rng = np.random.default_rng(seed)
    prm = kt.params
    if kt.variant == "type1":
        return rng.normal(prm["mean"], prm["std"], size=dims)
    if kt.variant == "type2":
        mag = rng.uniform(prm["gap"], prm["high"], size=dims)
        sign = np.where(rng.random(dims) < 0.5, -1.0, 1.0)
        return mag * sign
    total = int(np.prod(dims))
    n_zero = int(round(prm["zero_fraction"] * total))
    vals = np.where(rng.random(total) < 0.5, -1.0, 1.0)
    vals[rng.permutation(total)[:n_zero]] = 0.0
    return vals.reshape(dims)


def gen_sparse_input(sparsity, dims, seed=0):
    """Exactly ``round(sparsity * N)`` zeros; the rest uniform on (0, 1]."""
    if not 0.0 <= sparsity <= 1.0:
        raise InputError(f"sparsity must be in [0, 1], got {sparsity}")
    dims = tuple(int(d) for d in np.atleast_1d(dims))
    rng = np.random.default_rng(seed)
    total = int(np.prod(dims))
    vals = 1.0 - rng.random(total)
    n_zero = int(round(sparsity * total))
    vals[rng.permutation(total)[:n_zero]] = 0.0
    return vals.reshape(dims)


def sparsity_of(x):
    x = np.asarray(x)
    if x.size == 0:
        raise InputError("sparsity of an empty array is undefined")
    return float(np.count_nonzero(x == 0)) / x.size


def inject_programming_error(g, sigma, seed=0, device=None):
    """Add zero-mean Gaussian conductance error, clamped to the device range."""
    if sigma < 0:
        raise InputError("sigma must be >= 0")
    g = np.asarray(g, dtype=float)
    if sigma == 0:
        return g.copy()
    device = DeviceModel() if device is None else device
    rng = np.random.default_rng(seed)
    return np.clip(g + rng.normal(0.0, sigma, size=g.shape), device.g_min, device.g_max)


def gen_images(count, shape, seed=0):
    """Synthetic input batch with per-image contrast and sparsity.

    Each image is a sparse uniform volume (sparsity drawn from [0, 0.8])
    scaled by a brightness drawn from [0.2, 1], so the batch spans a range
    of activation levels rather than clustering around one mean.
    """
    rng = np.random.default_rng(seed)
    shape = tuple(int(s) for s in shape)
    out = np.empty((int(count),) + shape)
    for k in range(int(count)):
        sub = int(rng.integers(2**31))
        out[k] = rng.uniform(0.2, 1.0) * gen_sparse_input(rng.uniform(0.0, 0.8), shape, sub)
    return out
