"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Keys are listed in
:data:`SCHEMA`; defaults are the :class:`RunConfig` field values; unknown keys are rejected.
Relative paths resolve against the config file's directory.  List values
are comma separated; crossbar sizes are written ``ROWSxCOLS``.
"""

from dataclasses import dataclass, fields, replace
import hashlib
from pathlib import Path

from .circuit import DeviceModel, ParasiticParams, R_OFF, R_ON, V_MAX
from .errors import InputError
from .signal import parse_bits


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(conv):
    def parse(text):
        return tuple(conv(t.strip()) for t in str(text).split(",") if t.strip())
    return parse


def _size(text):
    m, n = text.lower().split("x")
    return int(m), int(n)


def _amplitudes(text):
    if str(text).strip().lower() == "default":
        return ()
    return _list(float)(text)


def _run_bits(text):
    if str(text).strip().lower() == "layer":
        return "layer"
    return parse_bits(text)


def _opt_int(text):
    return None if str(text).strip().lower() in ("none", "") else int(text)


def _path(text):
    return None if str(text).strip().lower() in ("none", "") else str(text).strip()


# key -> value parser; defaults live on RunConfig
SCHEMA = {
    "r_wire_row": float,
    "r_wire_col": float,
    "r_input": float,
    "r_output": float,
    "r_access": float,
    "r_on": float,
    "r_off": float,
    "v_max": float,
    "device": str,
    "alpha": float,
    "seed": int,
    "out": _path,
    "clamp": _bool,
    # solve
    "conductance": _path,
    "inputs": _path,
    "nodes": _bool,
    # sweep
    "sizes": _list(_size),
    "kernel_types": _list(str),
    "sparsities": _list(float),
    "methods": _list(str),
    "amplitudes": _amplitudes,
    "seeds": int,
    "batch": int,
    # prepare / run
    "network": _path,
    "prepared": _path,
    "calib_inputs": _path,
    "calib_count": int,
    "run_inputs": _path,
    "run_count": int,
    "bits": _run_bits,
    "sigma": float,
    "max_rows": _opt_int,
}

PATH_KEYS = ("out", "conductance", "inputs", "network", "prepared", "calib_inputs", "run_inputs")
METHODS = ("linear", "convert", "convert+calibrate")


@dataclass(frozen=True)
class RunConfig:
    r_wire_row: float = 1.0
    r_wire_col: float = 1.0
    r_input: float = 1.0
    r_output: float = 1.0
    r_access: float = 0.0
    r_on: float = R_ON
    r_off: float = R_OFF
    v_max: float = V_MAX
    device: str = "linear"
    alpha: float = 0.0
    seed: int = 0
    out: str = "out"
    clamp: bool = False
    conductance: str = None
    inputs: str = None
    nodes: bool = False
    sizes: tuple = ((144, 16),)
    kernel_types: tuple = ("type1",)
    sparsities: tuple = (0.5,)
    methods: tuple = METHODS
    amplitudes: tuple = ()
    seeds: int = 5
    batch: int = 200
    network: str = None
    prepared: str = None
    calib_inputs: str = None
    calib_count: int = 16
    run_inputs: str = None
    run_count: int = 16
    bits: object = "layer"
    sigma: float = 0.0
    max_rows: int = None

    def __post_init__(self):
        self.parasitics()
        self.device_model()
        if not self.v_max > 0:
            raise InputError("v_max must be positive")
        if self.sigma < 0:
            raise InputError("sigma must be >= 0")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise InputError(f"unknown methods {bad}; choose from {METHODS}")
        if any(not 0 <= s <= 1 for s in self.sparsities):
            raise InputError("sparsities must lie in [0, 1]")
        if any(not 0 < a <= 1 for a in self.amplitudes):
            raise InputError("amplitudes must lie in (0, 1]")
        if min(self.seeds, self.batch, self.calib_count, self.run_count) < 1:
            raise InputError("seeds, batch, calib_count and run_count must be positive")
        if any(m < 1 or n < 1 for m, n in self.sizes):
            raise InputError("crossbar sizes must be positive")

    def parasitics(self):
        return ParasiticParams(self.r_wire_row, self.r_wire_col, self.r_input,
                               self.r_output, self.r_access)

    def device_model(self):
        if not 0 < self.r_on < self.r_off:
            raise InputError("need 0 < r_on < r_off")
        return DeviceModel(self.device, 1.0 / self.r_off, 1.0 / self.r_on, self.alpha)

    def canonical(self):
        """Stable text form used for hashing; output locations are left out."""
        return "\n".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self)
                         if f.name not in ("out", "prepared"))

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def parse_config_text(text, base=None):
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise InputError(f"config line {n}: unknown key {key!r}")
        try:
            parsed = SCHEMA[key](val)
        except (ValueError, TypeError) as exc:
            raise InputError(f"config line {n}: bad value for {key}: {exc}") from exc
        if key in PATH_KEYS and parsed is not None and base is not None:
            parsed = str((Path(base) / parsed))
        values[key] = parsed
    try:
        return RunConfig(**values)
    except InputError:
        raise
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, base=path.parent)
