"""``xbar`` command line: solve, sweep, prepare and run.

Exit codes: 0 success, 2 rejected input, 3 layer or solver failure.  Errors
are also printed to stderr as one JSON object per line.
"""

import argparse
from dataclasses import replace
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .circuit import Crossbar
from .config import RunConfig, load_config
from .errors import InputError, XbarError
from .experiments import SWEEP_HEADER, run_sweep
from .formats import (file_digest, load_kernel, load_matrix, load_prepared, load_volumes,
                      parse_network, prepared_key, save_prepared, save_volumes, write_results)
from .metrics import format_bits
from .network import (NetworkSpec, digital_layer, software_layer, plan_network, prepare_layer,
                      run_network, weight_matrix)
from .patterns import gen_images
from .signal import parse_bits

log = logging.getLogger("xbarsim")

EXIT_OK, EXIT_INPUT, EXIT_LAYER = 0, 2, 3
CURRENT_HEADER = ["vector", "column", "current"]
NODE_HEADER = ["vector", "node", "i", "j", "volts"]
LAYER_HEADER = ["layer", "name", "kind", "reference", "mean_rel", "worst_rel", "mean_bits",
                "worst_bits", "count", "clamped"]
PLAN_HEADER = ["layer", "name", "kind", "rows", "cols", "dacs", "adcs", "iterations",
               "sparse_rows", "sparse_cols", "sparse_adcs"]
_UNSET = object()
# seed offset separating run inputs from calibration inputs
_RUN_STREAM = 1


def _error_record(exc, code):
    rec = {"error": type(exc).__name__, "message": str(exc), "exit": code}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    return code


def _out_dir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# solve


def cmd_solve(cfg):
    if cfg.conductance is None or cfg.inputs is None:
        raise InputError("solve needs 'conductance' and 'inputs' in the config")
    g = load_matrix(cfg.conductance)
    V = load_matrix(cfg.inputs)
    xbar = Crossbar(g, cfg.parasitics(), cfg.device_model())
    out = _out_dir(cfg)
    cur_rows, node_rows = [], []
    for k, v in enumerate(V):
        res = xbar.solve(v, with_nodes=cfg.nodes)
        cur_rows += [{"vector": k, "column": j, "current": c} for j, c in enumerate(res.column_currents)]
        if cfg.nodes:
            node_rows += _node_rows(k, res.node_voltages)
    write_results(out / "currents.csv", CURRENT_HEADER, cur_rows, cfg.digest(), cfg.seed)
    if cfg.nodes:
        write_results(out / "nodes.csv", NODE_HEADER, node_rows, cfg.digest(), cfg.seed)
    print(f"solved {len(V)} vector(s) on a {g.shape[0]}x{g.shape[1]} crossbar -> {out}")
    return EXIT_OK


def _node_rows(k, nv):
    rows = []
    for kind in ("top", "mid", "bottom"):
        arr = getattr(nv, kind)
        for (i, j), v in np.ndenumerate(arr):
            rows.append({"vector": k, "node": kind, "i": i, "j": j, "volts": v})
    for kind, axis in (("row_in", "i"), ("row_end", "i"), ("col_end", "j"), ("col_out", "j")):
        for idx, v in enumerate(getattr(nv, kind)):
            rows.append({"vector": k, "node": kind, axis: idx, "volts": v})
    return rows


# ---------------------------------------------------------------------------
# sweep


def cmd_sweep(cfg):
    rows = run_sweep(cfg)
    out = _out_dir(cfg)
    write_results(out / "sweep.csv", SWEEP_HEADER, rows, cfg.digest(), cfg.seed)
    flagged = sum(1 for r in rows if r["status"] not in ("ok", "clamped"))
    clamped = sum(1 for r in rows if r["status"] == "clamped")
    print(f"{len(rows)} sweep row(s) -> {out / 'sweep.csv'}"
          + (f"; {clamped} with clamped conductances" if clamped else "")
          + (f"; {flagged} flagged" if flagged else ""))
    return EXIT_OK


# ---------------------------------------------------------------------------
# prepare / run


def _network(cfg):
    if cfg.network is None:
        raise InputError("config needs 'network'")
    shape, layers, wpaths = parse_network(cfg.network)
    ns = NetworkSpec(shape, layers, cfg.parasitics(), cfg.device_model(), cfg.v_max,
                     cfg.seed, cfg.clamp, cfg.max_rows)
    return ns, wpaths


def _prepared_dir(cfg):
    return Path(cfg.prepared) if cfg.prepared else Path(cfg.out) / "prepared"


def _calibration_inputs(cfg, ns):
    if cfg.calib_inputs:
        x = load_volumes(cfg.calib_inputs)
        tag = file_digest(cfg.calib_inputs)
    else:
        x = gen_images(cfg.calib_count, ns.input_shape, cfg.seed)
        tag = f"generated:{cfg.calib_count}:{cfg.seed}"
    if x.shape[1:] != ns.input_shape:
        raise InputError(f"calibration inputs have shape {x.shape[1:]}, network expects {ns.input_shape}")
    return x, tag


def _layer_key(cfg, ns, idx, digests, calib_tag):
    h = hashlib.sha256()
    for name in ("r_wire_row", "r_wire_col", "r_input", "r_output", "r_access", "r_on", "r_off",
                 "v_max", "device", "alpha", "seed", "clamp"):
        h.update(f"{name}={getattr(cfg, name)!r};".encode())
    h.update(f"input={ns.input_shape};calib={calib_tag};".encode())
    for k in range(idx + 1):
        h.update(f"{ns.layers[k]!r};{digests.get(k, '')};".encode())
    return h.hexdigest()


def _plan_rows(plan):
    rows = []
    for lp in plan.layers:
        if lp.crossbar is None:
            continue
        rows.append({"layer": lp.index, "name": lp.name, "kind": lp.kind,
                     "rows": lp.crossbar[0], "cols": lp.crossbar[1], "dacs": lp.dacs,
                     "adcs": lp.adcs, "iterations": lp.iterations,
                     "sparse_rows": lp.sparse_crossbar[0], "sparse_cols": lp.sparse_crossbar[1],
                     "sparse_adcs": lp.sparse_adcs})
    return rows


def cmd_prepare(cfg, force=False):
    ns, wpaths = _network(cfg)
    plan = plan_network(ns)
    x, calib_tag = _calibration_inputs(cfg, ns)
    outdir = _prepared_dir(cfg)
    outdir.mkdir(parents=True, exist_ok=True)
    write_results(outdir / "plan.csv", PLAN_HEADER, _plan_rows(plan), cfg.digest(), cfg.seed)
    digests, failures, blocked = {}, [], None
    for idx, ls in enumerate(ns.layers):
        name = ns.label(idx)
        if blocked is not None:
            if ls.is_analog:
                failures.append(name)
                print(f"layer {name}: skipped, upstream layer {blocked} failed")
            continue
        if not ls.is_analog:
            x = digital_layer(x, ls)
            continue
        try:
            digests[idx] = file_digest(wpaths[idx])
            weights = load_kernel(wpaths[idx])
            matrix = weight_matrix(weights, ls)
        except (OSError, XbarError) as exc:
            failures.append(name)
            blocked = name
            _error_record(exc, EXIT_LAYER)
            print(f"layer {name}: weights unusable: {exc}")
            continue
        key = _layer_key(cfg, ns, idx, digests, calib_tag)
        if not force and prepared_key(outdir, name) == key:
            print(f"layer {name}: cached")
        else:
            try:
                pl = prepare_layer(weights, ls, ns, x, idx)
            except XbarError as exc:
                failures.append(name)
                _error_record(exc, EXIT_LAYER)
                print(f"layer {name}: failed: {exc}")
            else:
                save_prepared(outdir, pl, key)
                flag = f" ({pl.pc.clamped} conductances clamped)" if pl.pc.clamped else ""
                print(f"layer {name}: prepared {matrix.shape[0]}x{matrix.shape[1]} "
                      f"at amplitude {pl.pc.amplitude}{flag}")
        x = software_layer(x, ls, matrix)
    return EXIT_LAYER if failures else EXIT_OK


def _report_rows(result):
    rows = []
    for rep in result.reports:
        for ref, st in (("same_input", rep.stats), ("software", rep.vs_software)):
            if st is None:
                continue
            rows.append({"layer": rep.index, "name": rep.name, "kind": rep.kind, "reference": ref,
                         "mean_rel": st.mean_rel, "worst_rel": st.worst_rel,
                         "mean_bits": st.mean_bits, "worst_bits": st.worst_bits,
                         "count": st.count, "clamped": rep.clamped})
    if result.final is not None:
        st = result.final
        rows.append({"layer": "final", "name": "output", "kind": "network",
                     "reference": "software", "mean_rel": st.mean_rel, "worst_rel": st.worst_rel,
                     "mean_bits": st.mean_bits, "worst_bits": st.worst_bits, "count": st.count,
                     "clamped": sum(r.clamped for r in result.reports)})
    return rows


def cmd_run(cfg):
    ns, _ = _network(cfg)
    plan_network(ns)
    pdir = _prepared_dir(cfg)
    prepared = {}
    for idx, ls in enumerate(ns.layers):
        if ls.is_analog:
            name = ns.label(idx)
            if prepared_key(pdir, name) is None:
                raise InputError(f"layer {name} is not prepared in {pdir}; run 'xbar prepare' first")
            prepared[idx] = load_prepared(pdir, name)
    if cfg.run_inputs:
        x = load_volumes(cfg.run_inputs)
    else:
        x = gen_images(cfg.run_count, ns.input_shape, cfg.seed + _RUN_STREAM)
    if x.shape[1:] != ns.input_shape:
        raise InputError(f"run inputs have shape {x.shape[1:]}, network expects {ns.input_shape}")
    result = run_network(x, prepared, ns, bits=cfg.bits, sigma=cfg.sigma * 1e-6)
    out = _out_dir(cfg)
    write_results(out / "layers.csv", LAYER_HEADER, _report_rows(result), cfg.digest(), cfg.seed)
    save_volumes(out / "outputs.csv", result.output)
    for rep in result.reports:
        print(f"layer {rep.name}: mean rel {rep.stats.mean_rel:.3e} "
              f"({format_bits(rep.stats.mean_bits)} bits), worst {rep.stats.worst_rel:.3e}")
    if result.final is not None:
        print(f"final vs software: mean rel {result.final.mean_rel:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _bits_arg(text):
    if text.strip().lower() == "layer":
        return "layer"
    try:
        return parse_bits(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad --bits value {text!r}") from exc


def build_parser():
    ap = argparse.ArgumentParser(prog="xbar", description="Resistive crossbar simulator.")
    ap.add_argument("command", choices=("solve", "sweep", "prepare", "run"))
    ap.add_argument("--config", help="flat key = value config file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--bits", type=_bits_arg, default=_UNSET, help="quantizer bits for run: none, layer or N")
    ap.add_argument("--sigma", type=float, help="programming error sigma in microsiemens")
    ap.add_argument("--force", action="store_true", help="re-prepare cached layers")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = cfg.with_overrides(seed=args.seed, out=args.out, sigma=args.sigma)
        if args.bits is not _UNSET:
            cfg = replace(cfg, bits=args.bits)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        if args.command == "prepare":
            return cmd_prepare(cfg, force=args.force)
        return cmd_run(cfg)
    except InputError as exc:
        return _error_record(exc, EXIT_INPUT)
    except XbarError as exc:
        return _error_record(exc, EXIT_LAYER)


if __name__ == "__main__":
    sys.exit(main())
