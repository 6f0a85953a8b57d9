"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL criterion N: ...`` line that is printed
in the terminal summary.  Tolerances are pinned below.
"""

import time

import numpy as np

from conftest import ACCEPTANCE_LINES, FIXTURES, ROOT, load_micro_cnn
from test_mapping import brute_conv
from xbarsim.circuit import (DeviceModel, G_MAX, G_MIN, ParasiticParams, solve_dc,
                             solve_dc_oracle, solve_ideal)
from xbarsim.cli import main
from xbarsim.config import load_config
from xbarsim.experiments import make_trial, run_sweep
from xbarsim.mapping import KernelDims, dense_map_kernel, toeplitz_dims, unroll_windows
from xbarsim.metrics import bit_accuracy, error_stats
from xbarsim.mitigation import (AMPLITUDE_CANDIDATES, CalibrationParams, ConversionSignal,
                                PreparedCrossbar, convert, conversion_error,
                                select_conversion_amplitude)
from xbarsim.network import LayerSpec, NetworkSpec, plan_network, prepare_network, run_network
from xbarsim.patterns import gen_images, inject_programming_error

PAPER = ParasiticParams(1.0, 1.0, 1.0, 1.0, 0.0)
ZERO = ParasiticParams.zero()
DEV = DeviceModel()

ORACLE_RTOL = 1e-8
IDEAL_RTOL = 1e-9
CONVERT_IDENTITY_RTOL = 1e-12
LOWERING_TOL = 1e-9
AMPLITUDE_RATIO = 2.0
BITS_TOL = 0.05
NETWORK_EXACT_RTOL = 1e-9
SIGMAS_US = (0.0, 0.2, 0.4, 0.7, 1.0)


def record(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_c1_oracle_equivalence():
    rng = np.random.default_rng(101)
    t0, worst = time.perf_counter(), 0.0
    for _ in range(200):
        m, n = rng.integers(1, 33, size=2)
        g = rng.uniform(G_MIN, G_MAX, (m, n))
        v = rng.uniform(0, 0.4, m)
        fast = solve_dc(v, g, PAPER).column_currents
        ref = solve_dc_oracle(v, g, PAPER).column_currents
        worst = max(worst, float(np.max(np.abs(fast - ref) / np.abs(ref))))
    dt = time.perf_counter() - t0
    record(1, worst <= ORACLE_RTOL and dt < 60,
           f"200 crossbars, worst rel diff {worst:.2e} (tol {ORACLE_RTOL:g}), {dt:.1f} s (< 60 s)")


def test_c2_zero_parasitic_identity():
    rng = np.random.default_rng(102)
    t0, worst_solve, worst_conv = time.perf_counter(), 0.0, 0.0
    for _ in range(100):
        m, n = rng.integers(1, 33, size=2)
        g = rng.uniform(G_MIN, G_MAX, (m, n))
        v = rng.uniform(0, 0.4, m)
        ideal = solve_ideal(v, g)
        got = solve_dc(v, g, ZERO).column_currents
        worst_solve = max(worst_solve, float(np.max(np.abs(got - ideal) / np.abs(ideal))))
        gp = convert(g, ZERO, DEV, ConversionSignal(float(rng.choice(AMPLITUDE_CANDIDATES))))
        worst_conv = max(worst_conv, float(np.max(np.abs(gp - g) / g)))
    dt = time.perf_counter() - t0
    record(2, worst_solve <= IDEAL_RTOL and worst_conv <= CONVERT_IDENTITY_RTOL and dt < 10,
           f"100 cases, solve {worst_solve:.1e} (tol {IDEAL_RTOL:g}), "
           f"convert {worst_conv:.1e} (tol {CONVERT_IDENTITY_RTOL:g}), {dt:.1f} s (< 10 s)")


def test_c3_convolution_lowering():
    rng = np.random.default_rng(103)
    worst, cases, seen = 0.0, 0, set()
    while cases < 50:
        h, w = rng.integers(3, 9, size=2)
        cin, cout = rng.integers(1, 5, size=2)
        k = int(rng.integers(1, 4))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        x, K = rng.random((h, w, cin)), rng.normal(size=(k, k, cin, cout))
        kd = KernelDims(k, k, cin, cout, stride, pad)
        want = brute_conv(x, K, stride, pad)
        A = dense_map_kernel(K)
        got = np.array([solve_ideal(wv, A - A.min()) - wv.sum() * (-A.min())
                        for wv in unroll_windows(x, kd)]).reshape(want.shape)
        worst = max(worst, float(np.max(np.abs(got - want))))
        seen.add((stride, pad))
        cases += 1
    record(3, worst <= LOWERING_TOL and len(seen) == 4,
           f"50 cases over stride/padding {sorted(seen)}, worst abs diff {worst:.1e} "
           f"(tol {LOWERING_TOL:g})")


def test_c4_dimension_anchors():
    rows = [((32, 32, 3), (3, 3, 3, 16), (27, 16), (3072, 14400)),
            ((32, 32, 16), (3, 3, 16, 16), (144, 16), (16384, 14400)),
            ((16, 16, 32), (3, 3, 32, 32), (288, 32), (8192, 6272)),
            ((8, 8, 64), (3, 3, 64, 64), (576, 64), (4096, 2304))]
    bad = []
    for shape, k, dense, sparse in rows:
        kd = KernelDims(*k)
        lp = plan_network(NetworkSpec(shape, [LayerSpec("conv", "c", kd)])).layers[0]
        if lp.crossbar != dense or lp.dacs != dense[0]:
            bad.append(("dense", shape, lp.crossbar))
        if toeplitz_dims(shape, kd) != sparse or lp.sparse_crossbar != sparse:
            bad.append(("sparse", shape, lp.sparse_crossbar))
    record(4, not bad, f"8 size rows reproduced, mismatches: {bad or 'none'}")


def test_c5_conversion_efficacy():
    cfg = load_config(ROOT / "configs" / "sweep.cfg")
    t0 = time.perf_counter()
    rows = run_sweep(cfg)
    dt = time.perf_counter() - t0
    failing = []
    for i in range(0, len(rows), 3):
        lin, conv, cal = rows[i:i + 3]
        assert (lin["method"], conv["method"], cal["method"]) == ("linear", "convert", "convert+calibrate")
        if not cal["mean_rel"] < conv["mean_rel"] < lin["mean_rel"]:
            failing.append(f"{lin['rows']}x{lin['cols']}/{lin['kernel_type']}/s={lin['sparsity']} "
                           f"({lin['mean_rel']:.2e}, {conv['mean_rel']:.2e}, {cal['mean_rel']:.2e})")
    cells = len(rows) // 3
    record(5, not failing and dt < 900,
           f"{cells - len(failing)}/{cells} cells ordered cal < convert < linear, {dt:.0f} s "
           f"(< 900 s); out of order (linear, convert, cal): {'; '.join(failing) or 'none'}")


def test_c6_amplitude_ordering():
    errs, chosen = [], []
    for seed in range(5):
        t = make_trial(144, 16, "type1", 0.5, seed, DEV, 0.4, 100)
        probes = t.X[:20]
        errs.append([conversion_error(t.g, t.spec, PAPER, DEV, a, t.X, clamp=True)
                     for a in (1.0, 0.1)])
        chosen.append(select_conversion_amplitude(t.g, PAPER, DEV, AMPLITUDE_CANDIDATES, probes,
                                                  t.spec, clamp=True))
    e1, e01 = np.mean(errs, axis=0)
    ratio = e1 / e01
    record(6, ratio >= AMPLITUDE_RATIO and all(c == 0.1 for c in chosen),
           f"error(1.0)/error(0.1) = {ratio:.3f} (need >= {AMPLITUDE_RATIO:g}), "
           f"selected amplitudes {chosen} (need 0.1)")


def test_c7_bit_accuracy_anchors():
    b1, b2 = bit_accuracy(0.0025), bit_accuracy(0.012)
    record(7, abs(b1 - 8.65) <= BITS_TOL and abs(b2 - 6.42) <= BITS_TOL,
           f"bit_accuracy(0.0025) = {b1:.3f} (8.65), bit_accuracy(0.012) = {b2:.3f} (6.42), "
           f"tol {BITS_TOL}")


def test_c8_quantization_ordering():
    t0 = time.perf_counter()
    per_bits = {8: [], 6: [], 4: []}
    for seed in range(10):
        ns, weights = load_micro_cnn(PAPER, seed=seed)
        prepared = prepare_network(ns, weights, gen_images(16, ns.input_shape, seed))
        x = gen_images(16, ns.input_shape, seed + 1)
        for b in per_bits:
            per_bits[b].append([r.stats.mean_rel for r in run_network(x, prepared, ns, bits=b).reports])
    mean = {b: np.mean(v, axis=0) for b, v in per_bits.items()}
    ordered = bool(np.all(mean[8] <= mean[6]) and np.all(mean[6] <= mean[4]))

    ns, weights = load_micro_cnn(ZERO)
    prepared = prepare_network(ns, weights, gen_images(16, ns.input_shape, 0))
    res = run_network(gen_images(16, ns.input_shape, 1), prepared, ns, bits=None)
    exact = float(np.max(np.abs(res.output - res.software)) / np.max(np.abs(res.software)))
    dt = time.perf_counter() - t0
    table = ", ".join(f"{b}b " + "/".join(f"{e:.2e}" for e in mean[b]) for b in (8, 6, 4))
    record(8, ordered and exact <= NETWORK_EXACT_RTOL and dt < 600,
           f"per-layer mean rel over 10 seeds: {table}; zero-parasitic unquantized diff "
           f"{exact:.1e} (tol {NETWORK_EXACT_RTOL:g}); {dt:.0f} s (< 600 s)")


def test_c9_programming_error_monotonicity():
    # the converted crossbar, without calibration: the error is injected into G'
    t = make_trial(144, 16, "type1", 0.5, 0, DEV, 0.4, 100)
    gp = convert(t.g, PAPER, DEV, ConversionSignal(0.1), 0.4, clamp=True)
    ident = CalibrationParams.identity(16)
    base = PreparedCrossbar(gp, t.spec, ident, PAPER, DEV, 0.1).evaluate(t.X, calibrate=False)
    means = []
    for s_us in SIGMAS_US:
        errs = []
        for seed in range(20):
            g2 = inject_programming_error(gp, s_us * 1e-6, seed, DEV)
            out = PreparedCrossbar(g2, t.spec, ident, PAPER, DEV, 0.1).evaluate(t.X, calibrate=False)
            if s_us == 0:
                assert np.array_equal(g2, gp) and np.array_equal(out, base)
            errs.append(error_stats(out, t.ideal, t.rng).mean_rel)
        means.append(float(np.mean(errs)))
    mono = all(a <= b for a, b in zip(means, means[1:]))
    record(9, mono, "mean rel vs sigma over 20 seeds: " + ", ".join(
        f"{s:g} uS {e:.4e}" for s, e in zip(SIGMAS_US, means)) + "; sigma=0 bit-exact")


def test_c10_determinism(tmp_path):
    sweep_cfg = tmp_path / "sweep.cfg"
    sweep_cfg.write_text("sizes = 27x16, 144x16\nkernel_types = type1, type3\nsparsities = 0.5\n"
                         "seeds = 2\nbatch = 50\nclamp = true\nseed = 5\n")
    cnn_cfg = FIXTURES / "micro_cnn" / "micro_cnn.cfg"
    outputs = []
    for rep in ("a", "b"):
        out = tmp_path / rep
        assert main(["sweep", "--config", str(sweep_cfg), "--out", str(out)]) == 0
        assert main(["prepare", "--config", str(cnn_cfg), "--out", str(out)]) == 0
        assert main(["run", "--config", str(cnn_cfg), "--out", str(out), "--sigma", "0.4"]) == 0
        outputs.append({name: (out / name).read_bytes()
                        for name in ("sweep.csv", "layers.csv", "outputs.csv", "prepared/plan.csv")})
    same = [name for name in outputs[0] if outputs[0][name] == outputs[1][name]]
    record(10, len(same) == len(outputs[0]),
           f"byte-identical across repeated invocations: {sorted(same)} of {sorted(outputs[0])}")
