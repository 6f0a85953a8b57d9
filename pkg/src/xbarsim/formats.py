"""On-disk formats: array CSVs, network descriptions, prepared state, results.

Array CSV
---------
UTF-8 text.  Leading lines starting with ``#`` hold ``key=value`` metadata
separated by spaces; the first metadata line is ``# xbarsim-array v1``.
Every later line is one matrix row of comma-separated numbers written with
``%.17g`` (round-trip exact).  Three kinds are used:

* ``kind=kernel shape=KH,KW,CIN,COUT order=cin,kh,kw``: the dense-mapped
  ``(KH*KW*CIN) x COUT`` matrix; row ``ch*KH*KW + r*KW + c`` holds kernel
  entry ``[r, c, ch, :]``.
* ``kind=matrix shape=M,N``: any 2-D matrix (conductances in siemens,
  voltage batches in volts, one vector per row).
* ``kind=volumes shape=B,H,W,C``: a batch of volumes, one per row,
  flattened row-major over ``(H, W, C)``.

Network description
-------------------
One layer per line, ``#`` starts a comment.  The first record is
``input H W C``.  Layer records are a kind followed by ``key=value`` tokens::

    conv name=conv1 kernel=3x3x3x16 stride=1 padding=1 weights=conv1.csv dac_bits=8 adc_bits=8 amplitude=auto
    relu
    maxpool window=2 stride=2
    fc name=fc kernel=1x1x64x10 weights=fc.csv

``weights`` paths are relative to the description file.  Bits accept an
integer or ``none``; ``amplitude`` accepts a number in ``(0, 1]``, ``auto``
or ``search``.

Prepared state
--------------
For each analog layer ``NAME``: ``NAME.npz`` with arrays ``g_prime``,
``slope``, ``intercept``, ``adc_lo``, ``adc_hi`` and ``matrix``, plus
``NAME.json`` (sorted keys) with ``key`` (the cache key), ``index``,
``spec``, ``parasitics``, ``device``, ``amplitude``, ``clamped`` and
``residual``.

Results CSV
-----------
First line ``# config_hash=HEX seed=N``, then a header row and data rows
written by :mod:`csv`; floats use Python's shortest round-trip ``repr``.
"""

import csv
import hashlib
import json
import shlex
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .circuit import DeviceModel, ParasiticParams
from .errors import InputError, PlanError
from .mapping import KernelDims, ShiftScaleSpec, dense_map_kernel
from .mitigation import CalibrationParams, PreparedCrossbar
from .network import LayerSpec, PreparedLayer

ARRAY_MAGIC = "xbarsim-array v1"


def _fmt_meta(meta):
    return " ".join(f"{k}={v}" for k, v in meta.items())


def write_array(path, data, **meta):
    data = np.atleast_2d(np.asarray(data, dtype=float))
    lines = [f"# {ARRAY_MAGIC}"]
    if meta:
        lines.append("# " + _fmt_meta(meta))
    body = "\n".join(",".join(format(v, ".17g") for v in row) for row in data)
    Path(path).write_text("\n".join(lines) + "\n" + body + "\n")


def read_array(path):
    """``(matrix, metadata)`` from an array CSV."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    meta = {}
    rows = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError as exc:
            raise InputError(f"{path}:{n}: malformed number") from exc
    if not text.lstrip().startswith(f"# {ARRAY_MAGIC}"):
        raise InputError(f"{path}: missing '# {ARRAY_MAGIC}' header")
    if not rows or len({len(r) for r in rows}) != 1:
        raise InputError(f"{path}: empty or ragged data")
    data = np.array(rows)
    if not np.all(np.isfinite(data)):
        raise InputError(f"{path}: non-finite values")
    return data, meta


def _shape(meta, path, ndim):
    try:
        shape = tuple(int(s) for s in meta["shape"].split(","))
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: missing or malformed shape") from exc
    if len(shape) != ndim or min(shape) < 1:
        raise InputError(f"{path}: expected a {ndim}-D shape, got {shape}")
    return shape


def save_kernel(path, kernel):
    kernel = np.asarray(kernel, dtype=float)
    write_array(path, dense_map_kernel(kernel), kind="kernel",
                shape=",".join(map(str, kernel.shape)), order="cin,kh,kw")


def load_kernel(path):
    """4-D ``(kh, kw, cin, cout)`` kernel from a kernel CSV."""
    data, meta = read_array(path)
    kh, kw, cin, cout = _shape(meta, path, 4)
    if data.shape != (kh * kw * cin, cout):
        raise InputError(f"{path}: data is {data.shape}, header declares {kh}x{kw}x{cin}x{cout}")
    return data.reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3).copy()


def save_matrix(path, mat):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    write_array(path, mat, kind="matrix", shape=f"{mat.shape[0]},{mat.shape[1]}")


def load_matrix(path):
    data, meta = read_array(path)
    if "shape" in meta and _shape(meta, path, 2) != data.shape:
        raise InputError(f"{path}: data is {data.shape}, header declares {meta['shape']}")
    return data


def save_volumes(path, vols):
    vols = np.asarray(vols, dtype=float)
    write_array(path, vols.reshape(vols.shape[0], -1), kind="volumes",
                shape=",".join(map(str, vols.shape)))


def load_volumes(path):
    data, meta = read_array(path)
    shape = _shape(meta, path, 4)
    if data.shape != (shape[0], int(np.prod(shape[1:]))):
        raise InputError(f"{path}: data is {data.shape}, header declares {shape}")
    return data.reshape(shape)


# ---------------------------------------------------------------------------
# network description


def _bits(text):
    return None if text.lower() == "none" else int(text)


def _amplitude(text):
    return text if text in ("auto", "search") else float(text)


def parse_network(path):
    """``(input_shape, layers, weight_paths)``; weight paths keyed by layer index."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read network file {path}: {exc}") from exc
    input_shape = None
    layers, weights = [], {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = shlex.split(line)
        kind, args = toks[0].lower(), toks[1:]
        where = f"{path}:{n}"
        if kind == "input":
            try:
                input_shape = tuple(int(a) for a in args)
            except ValueError as exc:
                raise InputError(f"{where}: input needs three integers") from exc
            continue
        kv = {}
        for tok in args:
            if "=" not in tok:
                raise InputError(f"{where}: expected key=value, got {tok!r}")
            k, v = tok.split("=", 1)
            kv[k] = v
        try:
            kwargs = {"kind": kind, "name": kv.pop("name", None)}
            if "kernel" in kv:
                kh, kw, cin, cout = (int(s) for s in kv.pop("kernel").lower().split("x"))
                kwargs["kernel"] = KernelDims(kh, kw, cin, cout, int(kv.pop("stride", 1)),
                                              int(kv.pop("padding", 0)))
            for key in ("window", "stride"):
                if key in kv:
                    kwargs[key] = int(kv.pop(key))
            for key in ("dac_bits", "adc_bits"):
                if key in kv:
                    kwargs[key] = _bits(kv.pop(key))
            if "amplitude" in kv:
                kwargs["amplitude"] = _amplitude(kv.pop("amplitude"))
            if "weights" in kv:
                kwargs["weights"] = kv.pop("weights")
            if kv:
                raise InputError(f"unknown keys {sorted(kv)}")
            ls = LayerSpec(**kwargs)
        except PlanError as exc:
            raise PlanError(f"{where}: {exc}") from exc
        except (ValueError, InputError) as exc:
            raise InputError(f"{where}: {exc}") from exc
        if ls.is_analog:
            if ls.weights is None:
                raise InputError(f"{where}: analog layer needs weights=PATH")
            weights[len(layers)] = path.parent / ls.weights
        layers.append(ls)
    if input_shape is None or len(input_shape) != 3:
        raise InputError(f"{path}: missing 'input H W C' record")
    return input_shape, layers, weights


# ---------------------------------------------------------------------------
# prepared state


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_prepared(directory, pl, key):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pc = pl.pc
    with open(directory / f"{pl.name}.npz", "wb") as fh:
        np.savez(fh, g_prime=pc.g_prime, slope=pc.cal.slope, intercept=pc.cal.intercept,
                 adc_lo=pc.adc_lo, adc_hi=pc.adc_hi, matrix=pl.matrix)
    meta = {
        "key": key, "index": pl.index, "name": pl.name,
        "spec": pc.spec.to_dict(), "parasitics": asdict(pc.parasitics),
        "device": asdict(pc.device), "amplitude": pc.amplitude,
        "clamped": pc.clamped, "residual": pc.cal.residual,
    }
    (directory / f"{pl.name}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def prepared_key(directory, name):
    """Cache key stored for ``name``, or ``None`` when absent or unreadable."""
    meta_path = Path(directory) / f"{name}.json"
    if not meta_path.exists() or not (Path(directory) / f"{name}.npz").exists():
        return None
    try:
        return json.loads(meta_path.read_text()).get("key")
    except (OSError, ValueError):
        return None


def load_prepared(directory, name):
    directory = Path(directory)
    try:
        meta = json.loads((directory / f"{name}.json").read_text())
        with np.load(directory / f"{name}.npz") as z:
            arrs = {k: z[k] for k in z.files}
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"prepared state for {name} unreadable: {exc}") from exc
    cal = CalibrationParams(arrs["slope"], arrs["intercept"], meta["residual"])
    pc = PreparedCrossbar(arrs["g_prime"], ShiftScaleSpec(**meta["spec"]), cal,
                          ParasiticParams(**meta["parasitics"]), DeviceModel(**meta["device"]),
                          meta["amplitude"], arrs["adc_lo"], arrs["adc_hi"], meta["clamped"])
    return PreparedLayer(meta["index"], meta["name"], pc, arrs["matrix"])


# ---------------------------------------------------------------------------
# results


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def write_results(path, header, rows, config_hash, seed):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash} seed={seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(row.get(h)) for h in header])


def read_results(path):
    with open(path, newline="") as fh:
        first = fh.readline()
        rows = list(csv.DictReader(fh))
    meta = dict(tok.split("=", 1) for tok in first[1:].split() if "=" in tok)
    return meta, rows
