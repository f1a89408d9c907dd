"""Modified nodal analysis: DC operating point and fixed-step transient.

Unknown ordering is node voltages (ground excluded) followed by one branch
current per voltage source. Internally the full vector carries ground at
index 0 so stamps never branch on it; the solve drops that row and column.

The inner loops (stamping, Newton, LU) are compiled with numba; everything
outside them stays in plain Python.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_write
from ._kernels import PIVOT_MIN, _lu_solve, _newton, _transient_loop
from .devices import celsius_to_kelvin, gate_capacitance, temperature_adjust
from .netlist import Capacitor, Circuit, Mosfet, Resistor, VSource

METHOD_DC, METHOD_BE, METHOD_TRAP = 0, 1, 2
DC_SHUNT = 1e-12  # siemens


class SimulationError(RuntimeError):
    pass


class SingularMatrixError(SimulationError):
    def __init__(self, message: str, row: int = -1):
        self.row = row
        super().__init__(message)


class ConvergenceError(SimulationError):
    def __init__(self, message: str, residual: float = math.nan, worst_node: str = "",
                 time: float | None = None):
        self.residual = residual
        self.worst_node = worst_node
        self.time = time
        super().__init__(message)


@dataclass(frozen=True)
class SolveOptions:
    reltol: float = 1e-3
    vntol: float = 1e-6
    abstol: float = 1e-12
    max_newton: int = 100
    gmin_start: float = 1e-3
    gmin_final: float = 1e-12
    damping: float = 0.3

    def __post_init__(self):
        vals = (self.reltol, self.vntol, self.abstol, self.max_newton,
                self.gmin_start, self.gmin_final, self.damping)
        if min(vals) <= 0:
            raise ValueError("solver options must be strictly positive")
        if self.gmin_final >= self.gmin_start:
            raise ValueError("gmin_final must be below gmin_start")


DEFAULT_OPTIONS = SolveOptions()


@dataclass
class Waveform:
    """Sampled node voltages and supply currents.

    ``source_currents`` is the current delivered BY each source, i.e. flowing
    out of its + terminal into the circuit.
    """

    times: np.ndarray
    node_names: tuple[str, ...]
    node_voltages: np.ndarray  # (len(times), n_nodes - 1), ground omitted
    source_names: tuple[str, ...]
    source_currents: np.ndarray  # (len(times), n_sources)
    meta: dict = field(default_factory=dict)

    def v(self, node: str) -> np.ndarray:
        key = node.lower()
        if key in ("0", "gnd"):
            return np.zeros_like(self.times)
        try:
            return self.node_voltages[:, self.node_names.index(key)]
        except ValueError:
            raise KeyError(f"unknown node {node!r}") from None

    def i(self, source: str) -> np.ndarray:
        names = [s.lower() for s in self.source_names]
        try:
            return self.source_currents[:, names.index(source.lower())]
        except ValueError:
            raise KeyError(f"unknown source {source!r}") from None

    def to_csv(self, path) -> None:
        header = ["time", *self.node_names, *(f"i({s})" for s in self.source_names)]
        data = np.column_stack([self.times, self.node_voltages, self.source_currents])
        lines = [",".join(header)]
        lines.extend(",".join(f"{v:.8e}" for v in row) for row in data)
        atomic_write(path, "\n".join(lines) + "\n")


# ----------------------------------------------------------------------------
# Python front end


@dataclass(frozen=True)
class CompiledCircuit:
    """Circuit flattened into the arrays the kernels consume, at one temperature."""

    circuit: Circuit
    temp_k: float
    nn: int
    mos_nodes: np.ndarray
    mos_par: np.ndarray
    res_nodes: np.ndarray
    res_g: np.ndarray
    cap_nodes: np.ndarray
    cap_c: np.ndarray
    src_nodes: np.ndarray
    src_kind: np.ndarray
    src_par: np.ndarray
    dc_res_nodes: np.ndarray  # resistors plus DC-only shunts on capacitor-only nodes
    dc_res_g: np.ndarray

    @property
    def dim(self) -> int:
        return 1 + self.nn + self.src_nodes.shape[0]


def compile_circuit(c: Circuit, temp_k: float | None = None) -> CompiledCircuit:
    if temp_k is None:
        temp_k = celsius_to_kelvin(c.global_temp)
    mos_nodes, mos_par = [], []
    res_nodes, res_g = [], []
    cap_nodes, cap_c = [], []
    src_nodes, src_kind, src_par = [], [], []
    for dev in c.devices:
        if isinstance(dev, Mosfet):
            model = c.models[dev.model]
            tp = temperature_adjust(model, dev.w, dev.l, temp_k)
            mos_nodes.append((dev.d, dev.g, dev.s))
            mos_par.append((model.sign, tp.vth_t, model.n_slope, tp.is_t, model.lam, tp.v_t))
            cg = gate_capacitance(model, dev.w, dev.l)
            if cg > 0 and dev.g != 0:
                cap_nodes.append((dev.g, 0))
                cap_c.append(cg)
        elif isinstance(dev, Resistor):
            res_nodes.append((dev.n1, dev.n2))
            res_g.append(1.0 / dev.ohms)
        elif isinstance(dev, Capacitor):
            cap_nodes.append((dev.n1, dev.n2))
            cap_c.append(dev.farads)
        elif isinstance(dev, VSource):
            src_nodes.append((dev.npos, dev.nneg))
            if dev.pulse is not None:
                src_kind.append(1)
                src_par.append(dev.pulse.as_tuple())
            else:
                src_kind.append(0)
                src_par.append((dev.dc, 0, 0, 0, 0, 0, 0))

    def ints(rows, width):
        return np.array(rows, dtype=np.int64).reshape(-1, width)

    # nodes reached from ground only through capacitors or gates have no DC
    # solution; a shunt used only for the operating point pins them at 0 V
    shunted = _nodes_without_dc_path(c.n_nodes, res_nodes + src_nodes
                                     + [(d, s) for d, _, s in mos_nodes])
    dc_res_nodes = res_nodes + [(k, 0) for k in shunted]
    dc_res_g = res_g + [DC_SHUNT] * len(shunted)

    def floats(rows, width=None):
        arr = np.array(rows, dtype=np.float64)
        return arr.reshape(-1, width) if width else arr.reshape(-1)

    return CompiledCircuit(
        circuit=c, temp_k=float(temp_k), nn=c.n_nodes - 1,
        mos_nodes=ints(mos_nodes, 3), mos_par=floats(mos_par, 6),
        res_nodes=ints(res_nodes, 2), res_g=floats(res_g),
        cap_nodes=ints(cap_nodes, 2), cap_c=floats(cap_c),
        src_nodes=ints(src_nodes, 2), src_kind=np.array(src_kind, dtype=np.int64),
        src_par=floats(src_par, 7),
        dc_res_nodes=ints(dc_res_nodes, 2), dc_res_g=floats(dc_res_g))


def _nodes_without_dc_path(n_nodes: int, edges) -> list[int]:
    parent = list(range(n_nodes))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        parent[find(a)] = find(b)
    return [k for k in range(1, n_nodes) if find(k) != find(0)]


def solve_linear(a, b, row_names=None) -> np.ndarray:
    """Solve ``a @ x = b`` by dense LU with partial pivoting."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or b.shape != (a.shape[0],):
        raise ValueError("solve_linear needs a square matrix and matching vector")
    x, bad = _lu_solve(a, b)
    if bad >= 0:
        label = row_names[bad] if row_names is not None else f"row {bad}"
        raise SingularMatrixError(f"singular matrix at {label}", int(bad))
    return x


def _row_label(cc: CompiledCircuit, row: int) -> str:
    if row <= 0:
        return "?"
    if row <= cc.nn:
        return cc.circuit.node_names[row]
    srcs = cc.circuit.vsources
    return f"i({srcs[row - cc.nn - 1].name})"


def _solve_point(cc: CompiledCircuit, x0, t, scale, gmin, opts: SolveOptions):
    empty = np.zeros(cc.cap_nodes.shape[0])
    return _newton(x0, t, scale, gmin, 1.0, METHOD_DC, cc.nn,
                   cc.mos_nodes, cc.mos_par, cc.dc_res_nodes, cc.dc_res_g,
                   cc.cap_nodes, cc.cap_c, empty, empty,
                   cc.src_nodes, cc.src_kind, cc.src_par,
                   opts.reltol, opts.vntol, opts.abstol, opts.max_newton, opts.damping)


def _dc_solve(cc: CompiledCircuit, opts: SolveOptions, x0=None) -> np.ndarray:
    x = np.zeros(cc.dim) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    sol, status, _, worst, wval = _solve_point(cc, x, 0.0, 1.0, 0.0, opts)
    if status == 0:
        return sol
    last = (status, worst, wval)

    # gmin stepping, one decade at a time, then the unshunted circuit
    xg = x.copy()
    gmin = opts.gmin_start
    ok = True
    while True:
        xg, status, _, worst, wval = _solve_point(cc, xg, 0.0, 1.0, gmin, opts)
        if status != 0:
            ok = False
            break
        if gmin <= opts.gmin_final:
            break
        gmin = max(gmin / 10.0, opts.gmin_final)
    if ok:
        sol, status, _, worst, wval = _solve_point(cc, xg, 0.0, 1.0, 0.0, opts)
        if status == 0:
            return sol
    last = (status, worst, wval)

    # source stepping 0 -> full in 10 steps
    xs = np.zeros(cc.dim)
    ok = True
    for k in range(1, 11):
        xs, status, _, worst, wval = _solve_point(cc, xs, 0.0, k / 10.0, 0.0, opts)
        if status != 0:
            ok = False
            break
    if ok:
        return xs
    last = (status, worst, wval)
    status, worst, wval = last
    if status == 2:
        raise SingularMatrixError(
            f"singular MNA matrix at {_row_label(cc, worst)}", worst)
    raise ConvergenceError(
        f"DC operating point did not converge; last residual {wval:.3e} at "
        f"{_row_label(cc, worst)}", residual=wval, worst_node=_row_label(cc, worst))


@dataclass(frozen=True)
class OperatingPoint:
    node_names: tuple[str, ...]
    voltages: np.ndarray  # ground omitted
    source_names: tuple[str, ...]
    source_currents: np.ndarray  # delivered by each source

    def v(self, node: str) -> float:
        key = node.lower()
        if key in ("0", "gnd"):
            return 0.0
        return float(self.voltages[self.node_names.index(key)])

    def i(self, source: str) -> float:
        names = [s.lower() for s in self.source_names]
        return float(self.source_currents[names.index(source.lower())])


def dc_operating_point(c: Circuit, temp_k: float | None = None,
                       opts: SolveOptions = DEFAULT_OPTIONS) -> OperatingPoint:
    """Solve the DC operating point with pulse sources at their t = 0 value."""
    cc = compile_circuit(c, temp_k)
    x = _dc_solve(cc, opts)
    return OperatingPoint(
        node_names=c.node_names[1:], voltages=x[1:cc.nn + 1].copy(),
        source_names=tuple(s.name for s in c.vsources),
        source_currents=-x[cc.nn + 1:].copy())


def transient(c: Circuit, t_step: float | None = None, t_stop: float | None = None,
              temp_k: float | None = None, opts: SolveOptions = DEFAULT_OPTIONS,
              integrator: str = "trapezoidal") -> Waveform:
    """Fixed-step transient from the DC operating point.

    Trapezoidal by default; the first two steps always use backward Euler.
    """
    if t_step is None or t_stop is None:
        tran = c.tran
        if tran is None:
            raise ValueError("no .tran card and no t_step/t_stop given")
        t_step = tran.t_step if t_step is None else t_step
        t_stop = tran.t_stop if t_stop is None else t_stop
    if not (t_step > 0 and t_stop > t_step):
        raise ValueError("need 0 < t_step < t_stop")
    if integrator not in ("trapezoidal", "backward_euler"):
        raise ValueError(f"unknown integrator {integrator!r}")
    cc = compile_circuit(c, temp_k)
    x_dc = _dc_solve(cc, opts)
    nsteps = int(round(t_stop / t_step))
    times, states, count, status, t_fail, worst, wval = _transient_loop(
        x_dc, float(t_step), nsteps, integrator == "trapezoidal", cc.nn,
        cc.mos_nodes, cc.mos_par, cc.res_nodes, cc.res_g, cc.cap_nodes, cc.cap_c,
        cc.src_nodes, cc.src_kind, cc.src_par,
        opts.reltol, opts.vntol, opts.abstol, opts.max_newton, opts.damping)
    if status != 0:
        raise ConvergenceError(
            f"transient Newton failure at t = {t_fail:.6e} s (residual {wval:.3e} at "
            f"{_row_label(cc, worst)})", residual=wval, worst_node=_row_label(cc, worst),
            time=t_fail)
    states = states[:count]
    return Waveform(
        times=times[:count].copy(), node_names=c.node_names[1:],
        node_voltages=states[:, 1:cc.nn + 1].copy(),
        source_names=tuple(s.name for s in c.vsources),
        source_currents=-states[:, cc.nn + 1:].copy(),
        meta={"t_step": float(t_step), "t_stop": float(t_stop), "temp_k": cc.temp_k,
              "integrator": integrator})
