"""Figures of merit extracted from transient waveforms.

Conventions used throughout:

* delays are 50%-to-50%: the input level is half the input pulse swing and
  the output level is V_ddH/2;
* the first input period is a start-up transient and is excluded from every
  metric, so a run of N periods yields N - 1 measured cycles;
* power counts only the two supplies (``Vddh`` and ``Vddl``), never the input
  source.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from ._io import atomic_write
from .engine import DEFAULT_OPTIONS, SimulationError, SolveOptions, Waveform, transient
from .netlist import Circuit

REPORT_HEADER = ("vin,vddl,vddh,temp,vout_high,vout_low,tdr,tdf,tdmax,pavg,pdp,"
                 "functional")


class MeasurementError(ValueError):
    """A metric could not be extracted, typically because an output edge is missing."""


class BracketError(ValueError):
    """min_vin_search was given a range that does not bracket the transition."""


@dataclass(frozen=True)
class FunctionalPredicate:
    swing_frac_high: float = 0.9
    swing_frac_low: float = 0.1
    min_cycles: int = 3

    def __post_init__(self):
        if not 0 < self.swing_frac_low < self.swing_frac_high < 1:
            raise ValueError("need 0 < swing_frac_low < swing_frac_high < 1")
        if self.min_cycles < 1:
            raise ValueError("min_cycles must be at least 1")


DEFAULT_PREDICATE = FunctionalPredicate()


@dataclass(frozen=True)
class MeasureReport:
    v_out_high: float
    v_out_low: float
    t_d_rise: float
    t_d_fall: float
    t_d_max: float
    p_avg: float
    pdp: float
    functional: bool
    vin: float = math.nan
    vddl: float = math.nan
    vddh: float = math.nan
    temp: float = math.nan
    n_cycles: int = 0

    def csv_row(self) -> str:
        vals = (self.vin, self.vddl, self.vddh, self.temp, self.v_out_high, self.v_out_low,
                self.t_d_rise, self.t_d_fall, self.t_d_max, self.p_avg, self.pdp)
        return ",".join(f"{v:.9g}" for v in vals) + f",{int(self.functional)}"


def make_report(v_out_high: float, v_out_low: float, t_d_rise: float, t_d_fall: float,
                p_avg: float, functional: bool, **context) -> MeasureReport:
    """Build a report with ``t_d_max`` and ``pdp`` derived, never passed in."""
    t_d_max = max(t_d_rise, t_d_fall)
    if math.isnan(t_d_rise) or math.isnan(t_d_fall):
        t_d_max = math.nan
    return MeasureReport(v_out_high, v_out_low, t_d_rise, t_d_fall, t_d_max,
                         p_avg, p_avg * t_d_max, bool(functional), **context)


def write_report_csv(path, reports: Sequence[MeasureReport]) -> None:
    atomic_write(path, REPORT_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in reports))


# ----------------------------------------------------------------------------
# Edges and delays


def crossing_times(times, values, level: float, direction: str = "rising") -> np.ndarray:
    """Times at which ``values`` crosses ``level``, linearly interpolated.

    Samples lying exactly on ``level`` do not count by themselves: the signal
    has to come from one side and end up strictly on the other. A crossing
    through a run of on-level samples is placed at the first of them.
    """
    if direction not in ("rising", "falling"):
        raise ValueError(f"direction must be 'rising' or 'falling', got {direction!r}")
    t = np.asarray(times, dtype=float)
    s = np.asarray(values, dtype=float) - level
    if t.shape != s.shape or t.size < 2:
        raise ValueError("need matching series of length >= 2")
    if direction == "falling":
        s = -s
    nz = np.flatnonzero(s != 0.0)
    if nz.size < 2:
        return np.empty(0)
    i, j = nz[:-1], nz[1:]
    hit = (s[i] < 0) & (s[j] > 0)
    i, j = i[hit], j[hit]
    adjacent = j == i + 1
    frac = -s[i] / (s[j] - s[i])
    interp = t[i] + frac * (t[j] - t[i])
    out = np.where(adjacent, interp, t[np.minimum(i + 1, t.size - 1)])
    return out


def _pair_delays(t_in: np.ndarray, t_out: np.ndarray, kind: str) -> np.ndarray:
    delays = []
    for k, t0 in enumerate(t_in):
        t_next = t_in[k + 1] if k + 1 < t_in.size else math.inf
        after = t_out[(t_out >= t0) & (t_out < t_next)]
        if after.size == 0:
            raise MeasurementError(f"no {kind} output edge after input edge at {t0:.6e} s")
        delays.append(after[0] - t0)
    return np.asarray(delays)


def prop_delay(times, v_in, v_out, v_in_mid: float, v_out_mid: float,
               t_from: float = 0.0) -> tuple[float, float, float]:
    """``(t_d_rise, t_d_fall, t_d_max)``, each the worst over the measured edges.

    Every input edge at or after ``t_from`` is paired with the first output
    edge of the same direction that follows it before the next such input
    edge.
    """
    t_in_r = crossing_times(times, v_in, v_in_mid, "rising")
    t_in_f = crossing_times(times, v_in, v_in_mid, "falling")
    t_in_r, t_in_f = t_in_r[t_in_r >= t_from], t_in_f[t_in_f >= t_from]
    if t_in_r.size == 0 or t_in_f.size == 0:
        raise MeasurementError("input has no complete cycle in the measured window")
    t_out_r = crossing_times(times, v_out, v_out_mid, "rising")
    t_out_f = crossing_times(times, v_out, v_out_mid, "falling")
    tdr = float(_pair_delays(t_in_r, t_out_r, "rising").max())
    tdf = float(_pair_delays(t_in_f, t_out_f, "falling").max())
    return tdr, tdf, max(tdr, tdf)


# ----------------------------------------------------------------------------
# Power


def _window(times: np.ndarray, y: np.ndarray, t0: float, t1: float):
    inside = (times > t0) & (times < t1)
    tw = np.concatenate(([t0], times[inside], [t1]))
    yw = np.concatenate(([np.interp(t0, times, y)], y[inside], [np.interp(t1, times, y)]))
    return tw, yw


def avg_power(w: Waveform, supplies: Sequence[tuple[str, float]],
              interval: tuple[float, float]) -> float:
    """Mean power delivered by ``supplies`` over ``interval`` (trapezoidal rule)."""
    t0, t1 = interval
    if not t1 > t0:
        raise ValueError("interval must have t1 > t0")
    if t0 < w.times[0] or t1 > w.times[-1] * (1 + 1e-12):
        raise ValueError("interval outside the simulated time range")
    t1 = min(t1, w.times[-1])
    total = 0.0
    for name, volts in supplies:
        tw, iw = _window(w.times, w.i(name), t0, t1)
        total += volts * np.trapezoid(iw, tw)
    return float(total / (t1 - t0))


# ----------------------------------------------------------------------------
# Functional predicate and per-run report


@dataclass(frozen=True)
class Stimulus:
    """The deck quantities measurement needs, read off the elaborated circuit."""

    vddh: float
    vddl: float
    vin_low: float
    vin_high: float
    t_delay: float
    period: float
    temp: float

    @property
    def vin(self) -> float:
        return self.vin_high - self.vin_low


def stimulus_of(c: Circuit) -> Stimulus:
    try:
        vddh, vddl, vin = c.device("vddh"), c.device("vddl"), c.device("vin")
    except KeyError as exc:
        raise MeasurementError(f"deck lacks a required source: {exc}") from None
    if vin.pulse is None:
        raise MeasurementError("Vin must be a PULSE source")
    p = vin.pulse
    return Stimulus(vddh=vddh.dc, vddl=vddl.dc, vin_low=p.v1, vin_high=p.v2,
                    t_delay=p.t_delay, period=p.t_period, temp=c.global_temp)


def cycle_windows(st: Stimulus, t_end: float) -> list[tuple[float, float]]:
    """Complete input periods after the first, as ``(start, end)`` pairs."""
    out = []
    k = 1
    while True:
        a = st.t_delay + k * st.period
        b = a + st.period
        if b > t_end * (1 + 1e-9):
            return out
        out.append((a, b))
        k += 1


def _cycle_checks(w: Waveform, st: Stimulus, out_node: str, pred: FunctionalPredicate):
    t, v = w.times, w.v(out_node)
    mid = st.vddh / 2
    rising = crossing_times(t, v, mid, "rising")
    falling = crossing_times(t, v, mid, "falling")
    highs, lows, ok = [], [], []
    for a, b in cycle_windows(st, t[-1]):
        sel = (t >= a) & (t <= b)
        hi, lo = float(v[sel].max()), float(v[sel].min())
        edges = (np.any((rising >= a) & (rising < b)) and np.any((falling >= a) & (falling < b)))
        highs.append(hi)
        lows.append(lo)
        ok.append(bool(edges and hi >= pred.swing_frac_high * st.vddh
                       and lo <= pred.swing_frac_low * st.vddh))
    return highs, lows, ok


def is_functional(w: Waveform, st: Stimulus, pred: FunctionalPredicate = DEFAULT_PREDICATE,
                  out_node: str = "out") -> bool:
    _, _, ok = _cycle_checks(w, st, out_node, pred)
    return len(ok) >= pred.min_cycles and all(ok)


def measure_waveform(w: Waveform, c: Circuit, pred: FunctionalPredicate = DEFAULT_PREDICATE,
                     out_node: str = "out", in_node: str = "in") -> MeasureReport:
    """Full report for a run of ``c``.

    A missing output edge makes the run non-functional with NaN delays rather
    than raising; ``prop_delay`` is the strict variant.
    """
    st = stimulus_of(c)
    highs, lows, ok = _cycle_checks(w, st, out_node, pred)
    if not ok:
        raise MeasurementError("run shorter than two input periods; nothing to measure")
    functional = len(ok) >= pred.min_cycles and all(ok)
    t_from = st.t_delay + st.period
    try:
        tdr, tdf, _ = prop_delay(w.times, w.v(in_node), w.v(out_node),
                                 st.vin_low + st.vin / 2, st.vddh / 2, t_from=t_from)
    except MeasurementError:
        tdr = tdf = math.nan
        functional = False
    windows = cycle_windows(st, w.times[-1])
    p = avg_power(w, [("vddh", st.vddh), ("vddl", st.vddl)], (windows[0][0], windows[-1][1]))
    return make_report(min(highs), max(lows), tdr, tdf, p, functional,
                       vin=st.vin, vddl=st.vddl, vddh=st.vddh, temp=st.temp,
                       n_cycles=len(ok))


def simulate(c: Circuit, opts: SolveOptions = DEFAULT_OPTIONS) -> Waveform:
    return transient(c, opts=opts)


def measure_circuit(c: Circuit, pred: FunctionalPredicate = DEFAULT_PREDICATE,
                    opts: SolveOptions = DEFAULT_OPTIONS) -> MeasureReport:
    """Simulate ``c`` over its ``.tran`` window and measure it."""
    return measure_waveform(simulate(c, opts), c, pred)


# ----------------------------------------------------------------------------
# Minimum detectable input


def with_vin(c: Circuit, amplitude: float) -> Circuit:
    """Copy of ``c`` with the ``Vin`` pulse high level set to ``amplitude``."""
    src = c.device("vin")
    if src.pulse is None:
        raise MeasurementError("Vin must be a PULSE source")
    return c.replace_device("vin", pulse=replace(src.pulse, v2=src.pulse.v1 + amplitude))


def bisect_min_functional(probe: Callable[[float], bool], v_lo: float, v_hi: float,
                          tol: float = 5e-3) -> float:
    """Smallest amplitude in ``[v_lo, v_hi]`` for which ``probe`` holds, to ``tol``.

    The result is always a probed, functional amplitude.
    """
    if not (v_hi > v_lo and tol > 0):
        raise ValueError("need v_lo < v_hi and tol > 0")
    if not probe(v_hi):
        raise BracketError(f"not functional at the upper bound {v_hi:g} V")
    if probe(v_lo):
        raise BracketError(f"already functional at the lower bound {v_lo:g} V")
    lo, hi = v_lo, v_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if probe(mid):
            hi = mid
        else:
            lo = mid
    return hi


def min_vin_search(template: Circuit | Callable[[float], Circuit],
                   pred: FunctionalPredicate = DEFAULT_PREDICATE,
                   v_lo: float = 0.02, v_hi: float = 0.4, tol: float = 5e-3,
                   opts: SolveOptions = DEFAULT_OPTIONS) -> float:
    """Bisection for the minimum input amplitude that the deck still converts.

    ``template`` is either a circuit whose ``Vin`` amplitude gets replaced or a
    callable building the circuit for a given amplitude. A probe that fails to
    converge counts as non-functional.
    """
    build = template if callable(template) else (lambda v: with_vin(template, v))

    def probe(v: float) -> bool:
        c = build(v)
        try:
            w = simulate(c, opts)
        except SimulationError:
            return False
        return is_functional(w, stimulus_of(c), pred)

    return bisect_min_functional(probe, v_lo, v_hi, tol)
