"""Monte Carlo, corner, worst-case sizing and temperature campaigns.

Tolerances are read as 3 sigma of a clipped Gaussian for Monte Carlo and as
deterministic extremes for corners. Every Monte Carlo variant draws from its
own generator seeded with ``[seed, k]``, so variant ``k`` does not depend on
how many variants are generated or in which order they run.
"""
from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .engine import DEFAULT_OPTIONS, SimulationError, SolveOptions
from .measure import (DEFAULT_PREDICATE, FunctionalPredicate, MeasureReport,
                      MeasurementError, measure_circuit)
from .netlist import Circuit, Mosfet

SUPPLIES = ("vddh", "vddl")
METRICS = ("v_out_high", "v_out_low", "t_d_rise", "t_d_fall", "t_d_max", "p_avg", "pdp")
HIST_BINS = 20
WORKERS_ENV = "ULPLS_WORKERS"


class CampaignError(RuntimeError):
    """Every variant of a campaign failed."""


@dataclass(frozen=True)
class ToleranceSpec:
    supply_tol: float = 0.10
    size_tol: float = 0.04
    scoped_devices: tuple[str, ...] | None = None
    vth_tol: float = 0.0  # relative threshold spread; off by default

    def __post_init__(self):
        for name in ("supply_tol", "size_tol", "vth_tol"):
            v = getattr(self, name)
            if not 0.0 <= v < 0.5:
                raise ValueError(f"{name} must lie in [0, 0.5), got {v}")
        if self.scoped_devices is not None:
            object.__setattr__(self, "scoped_devices",
                               tuple(d.lower() for d in self.scoped_devices))

    def in_scope(self, device: str) -> bool:
        return self.scoped_devices is None or device.lower() in self.scoped_devices


@dataclass(frozen=True)
class Variant:
    """One perturbed copy of a base circuit.

    ``multipliers`` maps ``vddh``/``vddl`` and ``w_<device>`` (and ``vth_<device>``
    when threshold spread is on) to the factor applied to the base value.
    """

    index: int
    multipliers: dict[str, float]
    circuit: Circuit = field(repr=False, compare=False)
    seed: int | None = None
    label: str = ""


def _mos_names(c: Circuit) -> list[str]:
    return [m.name.lower() for m in c.mosfets]


def apply_multipliers(base: Circuit, mult: dict[str, float]) -> Circuit:
    """Circuit with supplies, widths and thresholds scaled by ``mult``."""
    c = base
    for s in SUPPLIES:
        if s in mult:
            c = c.replace_device(s, dc=c.device(s).dc * mult[s])
    models = dict(c.models)
    devices = []
    for dev in c.devices:
        if isinstance(dev, Mosfet):
            key = dev.name.lower()
            if f"w_{key}" in mult:
                dev = replace(dev, w=dev.w * mult[f"w_{key}"])
            if mult.get(f"vth_{key}", 1.0) != 1.0:
                card = f"{dev.model}@{key}"
                m = c.models[dev.model]
                models[card] = m.with_params(vth0=m.vth0 * mult[f"vth_{key}"])
                dev = replace(dev, model=card)
        devices.append(dev)
    return replace(c, devices=tuple(devices), models=models)


def _clipped(z: np.ndarray, tol: float) -> np.ndarray:
    return 1.0 + np.clip(z * (tol / 3.0), -tol, tol)


def mc_multipliers(names: Sequence[str], tol: ToleranceSpec, seed: int, k: int) -> dict[str, float]:
    """Multipliers of MC variant ``k``.

    Draw order is fixed (supplies, then every width, then every threshold) and
    independent of the scope so narrowing ``scoped_devices`` leaves the other
    draws untouched.
    """
    rng = np.random.default_rng([seed, k])
    z_sup = rng.standard_normal(len(SUPPLIES))
    z_w = rng.standard_normal(len(names))
    mult = {s: float(m) for s, m in zip(SUPPLIES, _clipped(z_sup, tol.supply_tol))}
    for name, m in zip(names, _clipped(z_w, tol.size_tol)):
        mult[f"w_{name}"] = float(m) if tol.in_scope(name) else 1.0
    if tol.vth_tol > 0:
        z_v = rng.standard_normal(len(names))
        for name, m in zip(names, _clipped(z_v, tol.vth_tol)):
            mult[f"vth_{name}"] = float(m) if tol.in_scope(name) else 1.0
    return mult


def sample_mc(base: Circuit, tol: ToleranceSpec, n: int, seed: int) -> list[Variant]:
    if n < 1:
        raise ValueError("n must be at least 1")
    names = _mos_names(base)
    out = []
    for k in range(n):
        mult = mc_multipliers(names, tol, seed, k)
        out.append(Variant(k, mult, apply_multipliers(base, mult), seed=seed, label=f"mc{k}"))
    return out


def corners(base: Circuit, tol: ToleranceSpec, axes: str = "supply_only") -> list[Variant]:
    """Deterministic extremes, low before high, ``vddh`` slowest-varying.

    ``supply_and_size`` adds one global width axis (applied to the devices in
    scope) as the fastest-varying coordinate.
    """
    if axes not in ("supply_only", "supply_and_size"):
        raise ValueError(f"unknown corner axes {axes!r}")
    s = (1.0 - tol.supply_tol, 1.0 + tol.supply_tol)
    w = (1.0 - tol.size_tol, 1.0 + tol.size_tol)
    names = _mos_names(base)
    grids = [s, s] + ([w] if axes == "supply_and_size" else [])
    out = []
    for k, combo in enumerate(itertools.product(*grids)):
        mult = {"vddh": combo[0], "vddl": combo[1]}
        tag = ("L" if combo[0] < 1 else "H") + ("L" if combo[1] < 1 else "H")
        if len(combo) == 3:
            for name in names:
                mult[f"w_{name}"] = combo[2] if tol.in_scope(name) else 1.0
            tag += "L" if combo[2] < 1 else "H"
        out.append(Variant(k, mult, apply_multipliers(base, mult), label=tag))
    return out


def worst_case_sizing(base: Circuit, devices: Sequence[str] = ("MN1", "MN2"),
                      tol: float = 0.04) -> list[Variant]:
    """Every combination of ``W * (1 +- tol)`` over ``devices``."""
    names = _mos_names(base)
    keys = [d.lower() for d in devices]
    for d in keys:
        if d not in names:
            raise KeyError(f"unknown MOSFET {d!r}")
    out = []
    for k, combo in enumerate(itertools.product((1.0 - tol, 1.0 + tol), repeat=len(keys))):
        mult = {f"w_{d}": m for d, m in zip(keys, combo)}
        label = " ".join(f"{d.upper()}{'-' if m < 1 else '+'}" for d, m in zip(keys, combo))
        out.append(Variant(k, mult, apply_multipliers(base, mult), label=label))
    return out


# ----------------------------------------------------------------------------
# Campaign runner


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    min: float
    max: float


@dataclass(frozen=True)
class CampaignResult:
    variants: tuple[Variant, ...]
    reports: tuple[MeasureReport | None, ...]  # None where the variant failed
    failures: tuple[tuple[int, str], ...]
    summary: dict[str, MetricSummary]
    hist_edges: np.ndarray
    hist_counts: np.ndarray

    @property
    def n_functional(self) -> int:
        return sum(1 for r in self.reports if r is not None and r.functional)

    @property
    def functional_fraction(self) -> float:
        return self.n_functional / len(self.variants)

    def mc_csv(self) -> str:
        w_keys = sorted({k for v in self.variants for k in v.multipliers if k.startswith("w_")},
                        key=lambda k: _mos_order(self.variants[0].circuit, k))
        head = ["variant", "seed", "vddh_mult", "vddl_mult", *(f"{k}_mult" for k in w_keys),
                "pavg", "tdmax", "pdp", "functional"]
        rows = [",".join(head)]
        for v, r in zip(self.variants, self.reports):
            m = v.multipliers
            cells = [str(v.index), "" if v.seed is None else str(v.seed),
                     _g(m.get("vddh", 1.0)), _g(m.get("vddl", 1.0)),
                     *(_g(m.get(k, 1.0)) for k in w_keys)]
            if r is None:
                cells += ["nan", "nan", "nan", "0"]
            else:
                cells += [_g(r.p_avg), _g(r.t_d_max), _g(r.pdp), str(int(r.functional))]
            rows.append(",".join(cells))
        return "\n".join(rows) + "\n"

    def hist_csv(self) -> str:
        rows = ["bin_low,bin_high,count"]
        for lo, hi, n in zip(self.hist_edges[:-1], self.hist_edges[1:], self.hist_counts):
            rows.append(f"{_g(lo)},{_g(hi)},{int(n)}")
        return "\n".join(rows) + "\n"


def _mos_order(c: Circuit, key: str) -> int:
    names = _mos_names(c)
    return names.index(key[2:]) if key[2:] in names else len(names)


def _g(x: float) -> str:
    return f"{x:.10g}"


def pdp_histogram(values: Sequence[float], bins: int = HIST_BINS):
    """Equal-width bins over ``[min, max]`` of the finite values."""
    v = np.asarray([x for x in values if math.isfinite(x)], dtype=float)
    if v.size == 0:
        return np.full(bins + 1, np.nan), np.zeros(bins, dtype=int)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        counts = np.zeros(bins, dtype=int)
        counts[-1] = v.size
        return np.full(bins + 1, lo), counts
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    return edges, counts


def _summarize(reports: Sequence[MeasureReport]) -> dict[str, MetricSummary]:
    out = {}
    for name in METRICS:
        v = np.asarray([getattr(r, name) for r in reports], dtype=float)
        v = v[np.isfinite(v)]
        if v.size == 0:
            out[name] = MetricSummary(math.nan, math.nan, math.nan, math.nan)
        else:
            out[name] = MetricSummary(float(v.mean()), float(v.std()), float(v.min()),
                                      float(v.max()))
    return out


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_campaign(variants: Sequence[Variant],
                 analysis: Callable[[Circuit], MeasureReport] | None = None,
                 predicate: FunctionalPredicate = DEFAULT_PREDICATE,
                 workers: int | None = None,
                 opts: SolveOptions = DEFAULT_OPTIONS) -> CampaignResult:
    """Simulate and measure every variant, preserving variant order.

    ``analysis`` maps a circuit to its report; by default the circuit's own
    ``.tran`` window is simulated and measured with ``predicate``.
    """
    if not variants:
        raise ValueError("campaign needs at least one variant")
    if analysis is None:
        def analysis(c: Circuit) -> MeasureReport:
            return measure_circuit(c, predicate, opts)
    workers = default_workers() if workers is None else workers
    if workers < 1:
        raise ValueError("workers must be >= 1")

    def job(v: Variant):
        try:
            return analysis(v.circuit), None
        except (SimulationError, MeasurementError, ValueError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if workers == 1:
        results = [job(v) for v in variants]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, variants))
    reports = tuple(r for r, _ in results)
    failures = tuple((v.index, msg) for v, (_, msg) in zip(variants, results) if msg)
    good = [r for r in reports if r is not None]
    if not good:
        raise CampaignError(f"all {len(variants)} variants failed; first: {failures[0][1]}")
    edges, counts = pdp_histogram([r.pdp for r in good])
    return CampaignResult(tuple(variants), reports, failures, _summarize(good), edges, counts)


def temp_sweep(base: Circuit, temps: Sequence[float], workers: int | None = None,
               predicate: FunctionalPredicate = DEFAULT_PREDICATE,
               opts: SolveOptions = DEFAULT_OPTIONS) -> CampaignResult:
    """One run per temperature (Celsius)."""
    from .devices import T_MAX, T_MIN, celsius_to_kelvin
    for t in temps:
        if not T_MIN <= celsius_to_kelvin(t) <= T_MAX:
            raise ValueError(f"temperature {t} C outside the model range")
    variants = [Variant(k, {}, base.with_temp(t), label=f"{t:g}C") for k, t in enumerate(temps)]
    return run_campaign(variants, predicate=predicate, workers=workers, opts=opts)
