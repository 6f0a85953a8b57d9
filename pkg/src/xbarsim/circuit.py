"""DC nodal analysis of a resistive crossbar with parasitic resistances.

Network topology
----------------
Row ``i`` is driven from the left: an ideal source ``v[i]`` feeds the row's
left boundary node through ``r_input``, and one ``r_wire_row`` segment joins
consecutive nodes along the row, from the left boundary through every
cross-point top node to the (open) right boundary node.  Column ``j`` is
sensed at the bottom: one ``r_wire_col`` segment joins consecutive nodes from
the (open) top boundary through every cross-point bottom node to the bottom
boundary node, which reaches the virtual ground of the sense amplifier
through ``r_output``.  Each cross-point stacks the memristor (top -> mid) and
the access transistor ``r_access`` (mid -> bottom).

Node numbering
--------------
The full node vector has ``3*m*n + 2*m + 2*n`` entries.  Cross-point
``(i, j)`` with ``k = i*n + j`` owns ``3k`` (top), ``3k + 1`` (mid) and
``3k + 2`` (bottom).  Boundary nodes follow: ``3mn + i`` row-left,
``3mn + m + i`` row-right, ``3mn + 2m + j`` column-top and
``3mn + 2m + n + j`` column-bottom.

The production solver (:class:`Crossbar`) works on a reduced system: open
boundary nodes carry no current, series chains are folded and zero-ohm
branches merge their end nodes, so the matrix only has top/mid/bottom
unknowns.  :func:`solve_dc_oracle` assembles the full modified-nodal system
densely and shares none of that machinery.
"""

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import ConvergenceError, InputError, SolverDegenerateError

R_ON = 15e3
R_OFF = 300e3
G_MAX = 1.0 / R_ON
G_MIN = 1.0 / R_OFF
V_MAX = 0.4

KCL_TOL = 1e-10
STEP_TOL = 1e-12
MAX_NEWTON_ITERS = 100
ORACLE_MAX_CELLS = 4096


@dataclass(frozen=True)
class CrossbarDims:
    rows: int
    cols: int

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise InputError(f"crossbar dims must be >= 1, got {self.rows}x{self.cols}")

    @property
    def n_nodes(self):
        m, n = self.rows, self.cols
        return 3 * m * n + 2 * m + 2 * n


@dataclass(frozen=True)
class ParasiticParams:
    """Parasitic resistances in ohms. Defaults are the 1-ohm paper setup."""

    r_wire_row: float = 1.0
    r_wire_col: float = 1.0
    r_input: float = 1.0
    r_output: float = 1.0
    r_access: float = 0.0

    def __post_init__(self):
        for name in ("r_wire_row", "r_wire_col", "r_input", "r_output", "r_access"):
            val = getattr(self, name)
            if not math.isfinite(val) or val < 0:
                raise InputError(f"{name} must be finite and >= 0, got {val!r}")

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    def is_zero(self):
        return not any((self.r_wire_row, self.r_wire_col, self.r_input,
                        self.r_output, self.r_access))


@dataclass(frozen=True)
class DeviceModel:
    """Cross-point device I-V law.

    ``linear``: ``i = g * v``.
    ``sinh``: ``i = g * sinh(alpha * v) / alpha``, the usual metal-oxide
    memristor shape; ``g`` is its small-signal conductance and ``alpha`` is
    in 1/V.
    """

    kind: str = "linear"
    g_min: float = G_MIN
    g_max: float = G_MAX
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "sinh"):
            raise InputError(f"unknown device kind {self.kind!r}")
        if not (0 < self.g_min < self.g_max) or not math.isfinite(self.g_max):
            raise InputError(f"need 0 < g_min < g_max, got {self.g_min}, {self.g_max}")
        if self.kind == "sinh" and not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise InputError("sinh device needs a positive finite alpha")

    @property
    def is_linear(self):
        return self.kind == "linear"

    @property
    def g_span(self):
        return self.g_max - self.g_min

    def current(self, g, v):
        if self.kind == "linear":
            return g * v
        a = self.alpha
        return g * np.sinh(a * v) / a

    def slope(self, g, v):
        """d(current)/dv."""
        if self.kind == "linear":
            return g * np.ones_like(v)
        return g * np.cosh(self.alpha * v)

    def conductance_for(self, i, v):
        """Conductance that passes current ``i`` at device voltage ``v``."""
        if self.kind == "linear":
            return i / v
        a = self.alpha
        return i * a / np.sinh(a * v)


@dataclass
class NodeVoltages:
    top: np.ndarray
    mid: np.ndarray
    bottom: np.ndarray
    row_in: np.ndarray
    row_end: np.ndarray
    col_end: np.ndarray
    col_out: np.ndarray

    def to_vector(self):
        m, n = self.top.shape
        cells = np.stack([self.top, self.mid, self.bottom], axis=-1).reshape(3 * m * n)
        return np.concatenate([cells, self.row_in, self.row_end, self.col_end, self.col_out])

    @classmethod
    def from_vector(cls, vec, m, n):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (3 * m * n + 2 * m + 2 * n,):
            raise InputError(f"node vector has shape {vec.shape}, expected "
                             f"({3 * m * n + 2 * m + 2 * n},)")
        cells = vec[:3 * m * n].reshape(m, n, 3)
        o = 3 * m * n
        return cls(cells[..., 0].copy(), cells[..., 1].copy(), cells[..., 2].copy(),
                   vec[o:o + m].copy(), vec[o + m:o + 2 * m].copy(),
                   vec[o + 2 * m:o + 2 * m + n].copy(), vec[o + 2 * m + n:].copy())


@dataclass
class SolveResult:
    column_currents: np.ndarray
    node_voltages: NodeVoltages = None
    kcl_residual: float = 0.0
    iterations: int = 0
    extra: dict = field(default_factory=dict)


def _check_g(g):
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] < 1 or g.shape[1] < 1:
        raise InputError(f"conductance matrix must be 2-D and non-empty, got shape {g.shape}")
    if not np.all(np.isfinite(g)) or np.any(g < 0):
        raise InputError("conductances must be finite and >= 0")
    return g


def _check_inputs(v, g):
    g = _check_g(g)
    v = np.asarray(v, dtype=float)
    if v.shape != (g.shape[0],):
        raise InputError(f"input vector has shape {v.shape}, crossbar has {g.shape[0]} rows")
    if not np.all(np.isfinite(v)):
        raise InputError("input voltages must be finite")
    return v, g


def solve_ideal(v, g):
    """Ideal crossbar: column currents ``I = v @ G``."""
    v, g = _check_inputs(v, g)
    return v @ g


# ---------------------------------------------------------------------------
# reduced sparse solver


def _stamp(a, b, c, a_src, b_src):
    """COO stamps of conductances ``c`` between nodes ``a`` and ``b``.

    Index ``-1`` marks a node held at a fixed potential: row source
    ``*_src`` when that is >= 0, ground otherwise.  Returns the stamps for
    the system matrix and for the source-coupling matrix ``S`` so that the
    right-hand side is ``S @ v``.
    """
    a, b, c, a_src, b_src = (x.ravel() for x in np.broadcast_arrays(
        np.asarray(a), np.asarray(b), np.asarray(c, dtype=float),
        np.asarray(a_src), np.asarray(b_src)))
    au, bu = a >= 0, b >= 0
    both = au & bu
    rows = [a[au], b[bu], a[both], b[both]]
    cols = [a[au], b[bu], b[both], a[both]]
    vals = [c[au], c[bu], -c[both], -c[both]]
    sa = au & ~bu & (b_src >= 0)
    sb = bu & ~au & (a_src >= 0)
    s_rows = [a[sa], b[sb]]
    s_cols = [b_src[sa], a_src[sb]]
    s_vals = [c[sa], c[sb]]
    return (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
            np.concatenate(s_rows), np.concatenate(s_cols), np.concatenate(s_vals))


class Crossbar:
    """Factorized parasitic crossbar ready to evaluate many input vectors.

    The system matrix depends only on conductances and parasitics, so for a
    linear device it is factorized once and every input vector costs one
    pair of triangular solves.
    """

    def __init__(self, g, p=None, d=None):
        p = ParasiticParams() if p is None else p
        d = DeviceModel() if d is None else d
        g = _check_g(g)
        self.g = g
        self.p = p
        self.d = d
        m, n = g.shape
        self.m, self.n = m, n
        self._build_topology()
        self._assemble()
        self._lu = None

    # -- topology ---------------------------------------------------------
    def _build_topology(self):
        m, n, p = self.m, self.n, self.p
        rows = np.repeat(np.arange(m)[:, None], n, axis=1)
        counter = 0

        top_fixed = p.r_wire_row == 0 and p.r_input == 0
        if top_fixed:
            t_idx = -np.ones((m, n), dtype=np.int64)
        elif p.r_wire_row == 0:
            t_idx = rows + counter
            counter += m
        else:
            t_idx = np.arange(m * n).reshape(m, n) + counter
            counter += m * n

        bottom_fixed = p.r_wire_col == 0 and p.r_output == 0
        if bottom_fixed:
            b_idx = -np.ones((m, n), dtype=np.int64)
        elif p.r_wire_col == 0:
            b_idx = np.repeat(np.arange(n)[None, :], m, axis=0) + counter
            counter += n
        else:
            b_idx = np.arange(m * n).reshape(m, n) + counter
            counter += m * n

        if p.r_access > 0:
            mid_idx = np.arange(m * n).reshape(m, n) + counter
            counter += m * n
        else:
            mid_idx = b_idx

        self.t_idx, self.b_idx, self.mid_idx = t_idx, b_idx, mid_idx
        self.row_of = rows
        self.n_unknowns = counter

    def _assemble(self):
        m, n, p = self.m, self.n, self.p
        t, b, mid, rows = self.t_idx, self.b_idx, self.mid_idx, self.row_of
        no_src = -1
        parts = []
        # source -> top[i, 0] through r_input plus the first row segment
        r_src = p.r_input + p.r_wire_row
        if r_src > 0:
            parts.append(_stamp(t[:, 0], -1, 1.0 / r_src, rows[:, 0], rows[:, 0]))
        if p.r_wire_row > 0 and n > 1:
            parts.append(_stamp(t[:, :-1], t[:, 1:], 1.0 / p.r_wire_row,
                                rows[:, :-1], rows[:, 1:]))
        if p.r_wire_col > 0 and m > 1:
            parts.append(_stamp(b[:-1, :], b[1:, :], 1.0 / p.r_wire_col, no_src, no_src))
        r_sink = p.r_wire_col + p.r_output
        if r_sink > 0:
            parts.append(_stamp(b[-1, :], -1, 1.0 / r_sink, no_src, no_src))
        if p.r_access > 0:
            parts.append(_stamp(mid, b, 1.0 / p.r_access, no_src, no_src))

        N = self.n_unknowns
        if parts:
            cat = [np.concatenate([prt[k] for prt in parts]) for k in range(6)]
        else:
            cat = [np.zeros(0, dtype=np.int64)] * 2 + [np.zeros(0)] + \
                  [np.zeros(0, dtype=np.int64)] * 2 + [np.zeros(0)]
        self._A_lin = sp.coo_matrix((cat[2], (cat[0], cat[1])), shape=(N, N)).tocsc()
        self._S_lin = sp.coo_matrix((cat[5], (cat[3], cat[4])), shape=(N, m)).tocsr()

        # device branches top -> mid; a fixed top sits at its row source,
        # a fixed mid can only be ground (it is merged with a grounded bottom)
        self._dev_t = t.ravel()
        self._dev_m = mid.ravel()
        self._dev_row = rows.ravel()
        gflat = self.g.ravel()
        self._gflat = gflat
        if self.d.is_linear:
            st = _stamp(self._dev_t, self._dev_m, gflat, self._dev_row, no_src)
            A_dev = sp.coo_matrix((st[2], (st[0], st[1])), shape=(N, N))
            S_dev = sp.coo_matrix((st[5], (st[3], st[4])), shape=(N, m))
            self._A = (self._A_lin + A_dev).tocsc()
            self._S = (self._S_lin + S_dev).tocsr()
        else:
            self._A = None
            self._S = None
        self._mask_t = self._dev_t >= 0
        self._mask_m = self._dev_m >= 0

    def _factor(self):
        if self._lu is None:
            A = self._A if self.d.is_linear else self._jacobian_small_signal()
            try:
                self._lu = spla.splu(A)
            except RuntimeError as exc:
                raise SolverDegenerateError(f"singular crossbar network: {exc}") from exc
        return self._lu

    # -- node voltage helpers ---------------------------------------------
    def _expand(self, X, V):
        """Full top/mid/bottom voltages from reduced unknowns.

        ``X`` is (N, k) reduced solutions and ``V`` is (k, m) row drives;
        returns arrays of shape (k, m, n).
        """
        k = V.shape[0]
        def pick(idx, fixed):
            out = np.empty((k,) + idx.shape)
            sel = idx >= 0
            out[:, sel] = X[idx[sel]].T
            out[:, ~sel] = fixed[:, ~sel]
            return out
        vt_fixed = np.repeat(V[:, :, None], self.n, axis=2)
        zeros = np.zeros((k, self.m, self.n))
        vt = pick(self.t_idx, vt_fixed)
        vb = pick(self.b_idx, zeros)
        vm = pick(self.mid_idx, zeros)
        return vt, vm, vb

    def _device_currents(self, vt, vm):
        return self.d.current(self.g, vt - vm)

    # -- nonlinear machinery ----------------------------------------------
    def _device_voltage_flat(self, X, V):
        """Device voltage per (cell, sample) from reduced unknowns: (mn, k)."""
        t = self._dev_t
        mi = self._dev_m
        vt = np.where(self._mask_t[:, None], X[np.maximum(t, 0)], V.T[self._dev_row])
        vm = np.where(self._mask_m[:, None], X[np.maximum(mi, 0)], 0.0)
        return vt - vm

    def _residual_flat(self, X, V):
        """Reduced KCL residual F(X) = A_lin X - S_lin V + device injections."""
        F = self._A_lin @ X - self._S_lin @ V.T
        vd = self._device_voltage_flat(X, V)
        i_dev = self.d.current(self._gflat[:, None], vd)
        N = self.n_unknowns
        k = X.shape[1]
        F = F + _scatter(self._dev_t, self._mask_t, i_dev, N, k)
        F = F - _scatter(self._dev_m, self._mask_m, i_dev, N, k)
        return F

    def _jacobian(self, slopes):
        st = _stamp(self._dev_t, self._dev_m, slopes, -1, -1)
        A_dev = sp.coo_matrix((st[2], (st[0], st[1])), shape=(self.n_unknowns,) * 2)
        return (self._A_lin + A_dev).tocsc()

    def _jacobian_small_signal(self):
        return self._jacobian(self.d.slope(self._gflat, np.zeros_like(self._gflat)))

    def _initial_guess(self, V):
        # tops start at their row drive, everything else at ground
        k = V.shape[0]
        X = np.zeros((self.n_unknowns, k))
        sel = self.t_idx >= 0
        X[self.t_idx[sel]] = V[:, self.row_of[sel]].T
        return X

    def _newton(self, v, x0=None, tol=KCL_TOL, max_iter=MAX_NEWTON_ITERS):
        V = v[None, :]
        X = self._initial_guess(V) if x0 is None else x0.reshape(-1, 1).copy()
        F = self._residual_flat(X, V)
        res = np.max(np.abs(F)) if F.size else 0.0
        for it in range(1, max_iter + 1):
            slopes = self.d.slope(self._gflat, self._device_voltage_flat(X, V)[:, 0])
            J = self._jacobian(slopes)
            try:
                dX = spla.spsolve(J, -F[:, 0]).reshape(-1, 1)
            except RuntimeError as exc:
                raise SolverDegenerateError(f"singular Jacobian: {exc}") from exc
            if not np.all(np.isfinite(dX)):
                raise SolverDegenerateError("non-finite Newton step")
            step = 1.0
            for _ in range(30):
                Xn = X + step * dX
                Fn = self._residual_flat(Xn, V)
                rn = np.max(np.abs(Fn))
                if rn < res or rn <= tol:
                    break
                step *= 0.5
            X, F, res = Xn, Fn, rn
            # the residual alone is loose next to 1-ohm wire stamps
            if res <= tol and step * np.max(np.abs(dX)) <= STEP_TOL:
                return X[:, 0], it, res
        raise ConvergenceError(f"Newton stalled at residual {res:.3e} A after "
                               f"{max_iter} iterations", residual=res, iterations=max_iter)

    def _chord(self, V, tol=KCL_TOL, max_iter=200):
        """Batched fixed-Jacobian Newton on the small-signal factorization."""
        lu = self._factor()
        X = self._initial_guess(V)
        done = np.zeros(V.shape[0], dtype=bool)
        for _ in range(max_iter):
            act = ~done
            F = self._residual_flat(X[:, act], V[act])
            dX = lu.solve(np.ascontiguousarray(F))
            X[:, act] -= dX
            res = np.max(np.abs(F), axis=0)
            done[act] = (res <= tol) & (np.max(np.abs(dX), axis=0) <= STEP_TOL)
            if done.all():
                break
        return X, done

    # -- public API --------------------------------------------------------
    def solve_reduced(self, V):
        """Reduced-node solutions for a batch ``V`` of shape (k, m)."""
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if V.shape[1] != self.m:
            raise InputError(f"input batch has {V.shape[1]} columns, crossbar has {self.m} rows")
        if not np.all(np.isfinite(V)):
            raise InputError("input voltages must be finite")
        if self.n_unknowns == 0:
            return np.zeros((0, V.shape[0]))
        if self.d.is_linear:
            X = self._factor().solve(np.ascontiguousarray((self._S @ V.T)))
            if not np.all(np.isfinite(X)):
                raise SolverDegenerateError("non-finite node voltages")
            return X
        X, done = self._chord(V)
        for k in np.flatnonzero(~done):
            X[:, k], _, _ = self._newton(V[k])
        return X

    def column_currents(self, V):
        """Column currents for a batch of row drives; shape (k, n)."""
        V = np.atleast_2d(np.asarray(V, dtype=float))
        X = self.solve_reduced(V)
        vt, vm, _ = self._expand(X, V)
        return self._device_currents(vt, vm).sum(axis=1)

    def solve(self, v, with_nodes=True):
        v, _ = _check_inputs(v, self.g)
        iters = 0
        if self.n_unknowns == 0:
            X = np.zeros((0, 1))
        elif self.d.is_linear:
            X = self.solve_reduced(v[None, :])
        else:
            x, iters, _ = self._newton(v)
            X = x[:, None]
        vt, vm, vb = (a[0] for a in self._expand(X, v[None, :]))
        i_dev = self._device_currents(vt, vm)
        col = i_dev.sum(axis=0)
        if not np.all(np.isfinite(col)):
            raise SolverDegenerateError("non-finite column currents")
        if not with_nodes:
            return SolveResult(col, None, float("nan"), iters)
        p = self.p
        nodes = NodeVoltages(
            top=vt, mid=vm, bottom=vb,
            row_in=v - p.r_input * i_dev.sum(axis=1),
            row_end=vt[:, -1].copy(),
            col_end=vb[0, :].copy(),
            col_out=p.r_output * col,
        )
        res = kcl_residual(v, self.g, p, self.d, nodes)
        return SolveResult(col, nodes, res, iters)


def _scatter(idx, mask, vals, N, k):
    out = np.zeros((N, k))
    if mask.any():
        np.add.at(out, idx[mask], vals[mask])
    return out


def solve_dc(v, g, p=None, d=None):
    """DC operating point of the parasitic crossbar for one input vector."""
    return Crossbar(g, p, d).solve(v)


# ---------------------------------------------------------------------------
# netlist view shared by the residual check and the dense oracle


def _netlist(m, n, p):
    """Resistor branches of the full network.

    Node ids ``0..3mn+2m+2n-1`` follow the module-level numbering; id
    ``base + i`` is the ideal source of row ``i`` and ``base + m`` is ground.
    Returns (a, b, r) arrays plus device (top, mid) id arrays.
    """
    base = 3 * m * n + 2 * m + 2 * n
    cell = lambda i, j, s: 3 * (i * n + j) + s
    left = lambda i: 3 * m * n + i
    right = lambda i: 3 * m * n + m + i
    ctop = lambda j: 3 * m * n + 2 * m + j
    cbot = lambda j: 3 * m * n + 2 * m + n + j
    gnd = base + m
    a, b, r = [], [], []

    def add(x, y, res):
        a.append(x); b.append(y); r.append(res)

    for i in range(m):
        add(base + i, left(i), p.r_input)
        add(left(i), cell(i, 0, 0), p.r_wire_row)
        for j in range(n - 1):
            add(cell(i, j, 0), cell(i, j + 1, 0), p.r_wire_row)
        add(cell(i, n - 1, 0), right(i), p.r_wire_row)
    for j in range(n):
        add(ctop(j), cell(0, j, 2), p.r_wire_col)
        for i in range(m - 1):
            add(cell(i, j, 2), cell(i + 1, j, 2), p.r_wire_col)
        add(cell(m - 1, j, 2), cbot(j), p.r_wire_col)
        add(cbot(j), gnd, p.r_output)
    for i in range(m):
        for j in range(n):
            add(cell(i, j, 1), cell(i, j, 2), p.r_access)
    dev_top = np.array([cell(i, j, 0) for i in range(m) for j in range(n)])
    dev_mid = dev_top + 1
    return (np.array(a), np.array(b), np.array(r, dtype=float), dev_top, dev_mid,
            base, gnd)


def kcl_residual(v, g, p, d, node_voltages):
    """Largest net current (A) into any non-source node of the network.

    Nodes joined by zero-ohm branches are checked as one super-node, and a
    super-node tied to a source or to ground is exempt.
    """
    v, g = _check_inputs(v, g)
    m, n = g.shape
    if isinstance(node_voltages, NodeVoltages):
        vec = node_voltages.to_vector()
    else:
        vec = np.asarray(node_voltages, dtype=float)
    if vec.shape != (3 * m * n + 2 * m + 2 * n,):
        raise InputError("node voltage vector has the wrong length")
    a, b, r, dt, dm, base, gnd = _netlist(m, n, p)
    total = gnd + 1
    volts = np.concatenate([vec, v, [0.0]])

    short = r == 0
    graph = sp.coo_matrix((np.ones(short.sum()), (a[short], b[short])), shape=(total, total))
    _, label = connected_components(graph, directed=False)
    fixed_nodes = np.arange(base, total)
    fixed_labels = label[fixed_nodes]
    fixed = np.zeros(label.max() + 1, dtype=bool)
    fixed[fixed_labels] = True
    # pin every member of a source/ground group to that potential
    pin = np.full(label.max() + 1, np.nan)
    pin[fixed_labels] = volts[fixed_nodes]
    pinned = fixed[label]
    volts = np.where(pinned, pin[label], volts)

    inj = np.zeros(total)
    res_ok = ~short
    i_br = (volts[a[res_ok]] - volts[b[res_ok]]) / r[res_ok]
    np.add.at(inj, a[res_ok], -i_br)
    np.add.at(inj, b[res_ok], i_br)
    i_dev = d.current(g.ravel(), volts[dt] - volts[dm])
    np.add.at(inj, dt, -i_dev)
    np.add.at(inj, dm, i_dev)

    net = np.bincount(label, weights=inj, minlength=label.max() + 1)
    net = net[~fixed]
    return float(np.max(np.abs(net))) if net.size else 0.0


def solve_dc_oracle(v, g, p=None, d=None, tol=KCL_TOL, max_iter=MAX_NEWTON_ITERS):
    """Reference solve: dense modified nodal analysis of the full network.

    Every node of the numbering above is an unknown, zero-ohm branches and
    the row drives become voltage-source rows, and the column current is the
    current leaving through each ``r_output`` branch.
    """
    p = ParasiticParams() if p is None else p
    d = DeviceModel() if d is None else d
    v, g = _check_inputs(v, g)
    m, n = g.shape
    if m * n > ORACLE_MAX_CELLS:
        raise InputError(f"oracle limited to {ORACLE_MAX_CELLS} cells, got {m * n}")
    a, b, r, dt, dm, base, gnd = _netlist(m, n, p)
    n_nodes = gnd            # ground is the reference and is not an unknown
    vsrc = [(base + i, None, v[i]) for i in range(m)]       # source node to ground
    shorts = np.flatnonzero(r == 0)
    vsrc += [(int(a[k]), int(b[k]), 0.0) for k in shorts]
    size = n_nodes + len(vsrc)

    Gm = np.zeros((size, size))
    rhs = np.zeros(size)
    for x, y, res in zip(a, b, r):
        if res == 0:
            continue
        c = 1.0 / res
        if x != gnd:
            Gm[x, x] += c
        if y != gnd:
            Gm[y, y] += c
        if x != gnd and y != gnd:
            Gm[x, y] -= c
            Gm[y, x] -= c
    for k, (x, y, val) in enumerate(vsrc):
        row = n_nodes + k
        for node, sgn in ((x, 1.0), (y, -1.0)):
            if node is None or node == gnd:
                continue
            Gm[node, row] += sgn
            Gm[row, node] += sgn
        rhs[row] = val

    gflat = g.ravel()

    def device_stamp(x):
        vd = x[dt] - x[dm]
        i = d.current(gflat, vd)
        s = d.slope(gflat, vd)
        f = np.zeros(size)
        np.add.at(f, dt, i)
        np.add.at(f, dm, -i)
        J = np.zeros((size, size))
        J[dt, dt] += s
        J[dm, dm] += s
        J[dt, dm] -= s
        J[dm, dt] -= s
        return f, J

    x = np.zeros(size)
    x[dt] = np.repeat(v, n)
    iters = 0
    for iters in range(1, max_iter + 1):
        f, J = device_stamp(x)
        F = Gm @ x + f - rhs
        try:
            dx = np.linalg.solve(Gm + J, F)
        except np.linalg.LinAlgError as exc:
            raise SolverDegenerateError(f"singular nodal matrix: {exc}") from exc
        x = x - dx
        if d.is_linear or np.max(np.abs(dx[:n_nodes])) <= STEP_TOL:
            break
    f, _ = device_stamp(x)
    res = np.max(np.abs((Gm @ x + f - rhs)[:n_nodes]))
    if not d.is_linear and res > tol:
        raise ConvergenceError(f"oracle Newton residual {res:.3e}", residual=res,
                               iterations=iters)
    if not np.all(np.isfinite(x)):
        raise SolverDegenerateError("non-finite oracle solution")

    # current into ground through each r_output branch
    cols = np.zeros(n)
    cbot = 3 * m * n + 2 * m + n + np.arange(n)
    if p.r_output > 0:
        cols = x[cbot] / p.r_output
    else:
        for k, (x_, y_, _) in enumerate(vsrc):
            if y_ == gnd and x_ in set(cbot.tolist()):
                cols[x_ - cbot[0]] = x[n_nodes + k]
    nodes = NodeVoltages.from_vector(x[:base], m, n)
    res = kcl_residual(v, g, p, d, nodes)
    return SolveResult(cols, nodes, res, iters)
