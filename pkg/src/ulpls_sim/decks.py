"""Reference level-shifter decks and their generator.

All decks share the node and source conventions the measurement code relies
on: supplies ``Vddh``/``Vddl``, input source ``Vin`` driving node ``in`` with a
0 -> V_in pulse, and the loaded output node ``out``.

ULPLS reconstruction
--------------------
Only the device roles of the proposed shifter are known, not its exact
wiring, so the connectivity below is a declared reconstruction chosen to work
with the bundled compact model:

* ``MN1``/``MN2``: diode-connected divider between V_ddH and V_ddL; its tap
  ``vb`` biases the comparator NMOS pair near threshold so that neither branch
  can half-conduct and the pull-up never partially turns on.
* ``MP1``: mirror master; ``MP3``: current-limiting PMOS diode stacked
  under it (cascode reference).
* ``MN4``: reference sink (gate ``vb``, source ground).
* ``MP2``/``MP4``: mirrored (cascoded) pull-up of the detection node ``x``.
* ``MN3``: input device: gate ``vb``, source driven by V_in. A V_in swing
  of a few n*V_T moves its current across the mirror reference, so the node
  ``x`` flips even for inputs far below threshold.
* ``MP5``/``MP6``: enhanced pull-up: a second mirror leg enabled by the
  inverted detection node, adding hysteresis and a firm high level.
* ``MP7``/``MN5``, ``MP8``/``MN6``: two V_ddH inverters restoring rail
  levels and driving C_L.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .devices import DEFAULT_MODELS, MosModel
from .netlist import NetlistError, elaborate, parse_netlist

_SI = [(1e12, "t"), (1e9, "g"), (1e6, "meg"), (1e3, "k"), (1.0, ""), (1e-3, "m"),
       (1e-6, "u"), (1e-9, "n"), (1e-12, "p"), (1e-15, "f")]


def format_si(value: float) -> str:
    """Compact suffixed text for ``value`` that parses back to the same float."""
    from .netlist import parse_value
    if value == 0:
        return "0"
    for scale, suffix in _SI:
        if abs(value) >= scale * 0.999999:
            text = f"{value / scale:.6g}{suffix}"
            if parse_value(text) == value:
                return text
            break
    return repr(float(value))


ULPLS_SIZES: dict[str, tuple[float, float]] = {
    "MN1": (200e-9, 2e-6),
    "MN2": (1e-6, 40e-9),
    "MP1": (500e-9, 40e-9),
    "MP3": (500e-9, 40e-9),
    "MN4": (200e-9, 2e-6),
    "MP2": (500e-9, 40e-9),
    "MP4": (500e-9, 40e-9),
    "MN3": (600e-9, 2e-6),
    "MP5": (500e-9, 40e-9),
    "MP6": (250e-9, 40e-9),
    "MP7": (500e-9, 40e-9),
    "MN5": (200e-9, 40e-9),
    "MP8": (500e-9, 40e-9),
    "MN6": (200e-9, 40e-9),
}

# (drain, gate, source, bulk, model, role)
ULPLS_TOPOLOGY: dict[str, tuple[str, str, str, str, str, str]] = {
    "MN1": ("vddh", "vddh", "vb", "0", "n22", "voltage divider, upper diode"),
    "MN2": ("vb", "vb", "vddl", "0", "n22", "voltage divider, lower diode"),
    "MP1": ("g", "g", "vddh", "vddh", "p22", "current-mirror master"),
    "MP3": ("r", "r", "g", "vddh", "p22", "current-limiting PMOS diode"),
    "MN4": ("r", "vb", "0", "0", "n22", "reference sink"),
    "MP2": ("h", "g", "vddh", "vddh", "p22", "mirrored pull-up"),
    "MP4": ("x", "r", "h", "vddh", "p22", "mirrored pull-up cascode"),
    "MN3": ("x", "vb", "in", "0", "n22", "input device (source driven)"),
    "MP5": ("z", "y", "vddh", "vddh", "p22", "enhanced pull-up switch"),
    "MP6": ("x", "g", "z", "vddh", "p22", "enhanced pull-up mirror leg"),
    "MP7": ("y", "x", "vddh", "vddh", "p22", "restoring inverter"),
    "MN5": ("y", "x", "0", "0", "n22", "restoring inverter"),
    "MP8": ("out", "y", "vddh", "vddh", "p22", "output driver"),
    "MN6": ("out", "y", "0", "0", "n22", "output driver"),
}

DCVS_SIZES = {
    "MP1": (200e-9, 2e-6), "MP2": (200e-9, 2e-6),
    "MN1": (2e-6, 40e-9), "MN2": (2e-6, 40e-9),
    "MP3": (500e-9, 40e-9), "MN3": (200e-9, 40e-9),
}
DCVS_TOPOLOGY = {
    "MP1": ("a", "out", "vddh", "vddh", "p22", "cross-coupled pull-up"),
    "MP2": ("out", "a", "vddh", "vddh", "p22", "cross-coupled pull-up"),
    "MN1": ("a", "in", "0", "0", "n22", "pull-down, true input"),
    "MN2": ("out", "inb", "0", "0", "n22", "pull-down, inverted input"),
    "MP3": ("inb", "in", "vddl", "vddl", "p22", "V_ddL input inverter"),
    "MN3": ("inb", "in", "0", "0", "n22", "V_ddL input inverter"),
}

CMLS_SIZES = {
    "MP1": (500e-9, 40e-9), "MP2": (500e-9, 40e-9),
    "MN1": (200e-9, 40e-9), "MN2": (200e-9, 40e-9),
    "MP3": (500e-9, 40e-9), "MN3": (200e-9, 40e-9),
}
CMLS_TOPOLOGY = {
    "MP1": ("a", "a", "vddh", "vddh", "p22", "diode-connected mirror master"),
    "MN1": ("a", "in", "0", "0", "n22", "input pull-down"),
    "MP2": ("out", "a", "vddh", "vddh", "p22", "mirrored pull-up"),
    "MN2": ("out", "inb", "0", "0", "n22", "output pull-down, inverted input"),
    "MP3": ("inb", "in", "vddl", "vddl", "p22", "V_ddL input inverter"),
    "MN3": ("inb", "in", "0", "0", "n22", "V_ddL input inverter"),
}


@dataclass(frozen=True)
class DeckParams:
    vddh: float = 0.8
    vddl: float = 0.4
    vin_amplitude: float = 0.4
    f_oper: float = 100e3
    c_load: float = 200e-15
    temp: float = 27.0
    t_edge: float = 10e-9
    t_step: float = 1e-9
    n_periods: int = 4
    sizes: dict[str, tuple[float, float]] = field(default_factory=dict)
    models: dict[str, MosModel] = field(default_factory=lambda: dict(DEFAULT_MODELS))

    def __post_init__(self):
        if not 0 < self.vddl <= self.vddh:
            raise ValueError("need 0 < vddl <= vddh")
        if self.f_oper <= 0 or self.c_load <= 0 or self.t_edge <= 0:
            raise ValueError("f_oper, c_load and t_edge must be positive")
        if self.vin_amplitude <= 0:
            raise ValueError("vin_amplitude must be positive")
        if self.pulse_width <= 0:
            raise ValueError("input edges longer than half a period")
        if self.n_periods < 1:
            raise ValueError("n_periods must be at least 1")

    @property
    def period(self) -> float:
        return 1.0 / self.f_oper

    @property
    def pulse_width(self) -> float:
        # rounded so 100 kHz with 10 ns edges prints as 4.99u
        return float(f"{0.5 / self.f_oper - self.t_edge:.12g}")

    @property
    def t_stop(self) -> float:
        return self.n_periods * self.period


def _model_card(name: str, m: MosModel) -> str:
    kind = "nmos" if m.polarity == "n" else "pmos"
    return (f".model {name} {kind} (vth0={format_si(m.vth0)} n={format_si(m.n_slope)} "
            f"kp={format_si(m.kp)} lambda={format_si(m.lam)} cox={format_si(m.cox_area)}\n"
            f"+ tcvth={format_si(m.tc_vth)} muexp={format_si(m.mu_exp)})")


def _emit(title: str, header: str, topology, sizes, p: DeckParams) -> str:
    sizes = {**sizes, **{k.upper(): v for k, v in p.sizes.items()}}
    unknown = set(sizes) - set(topology)
    if unknown:
        raise ValueError(f"size override for unknown devices: {sorted(unknown)}")
    lines = [title, "* " + header, "*"]
    lines.append(f"* generated: vddh={format_si(p.vddh)} vddl={format_si(p.vddl)} "
                 f"vin={format_si(p.vin_amplitude)} f={format_si(p.f_oper)} "
                 f"cl={format_si(p.c_load)} temp={format_si(p.temp)}")
    lines.append("* device roles:")
    for name, (*_, role) in topology.items():
        lines.append(f"*   {name:<4} {role}")
    lines.append("*")
    for name in ("n22", "p22"):
        lines.append(_model_card(name, p.models[name]))
    lines.append(f"Vddh vddh 0 DC {format_si(p.vddh)}")
    lines.append(f"Vddl vddl 0 DC {format_si(p.vddl)}")
    lines.append(f"Vin in 0 PULSE(0 {format_si(p.vin_amplitude)} 0 {format_si(p.t_edge)} "
                 f"{format_si(p.t_edge)} {format_si(p.pulse_width)} {format_si(p.period)})")
    for name, (d, g, s, b, model, _role) in topology.items():
        w, l = sizes[name]
        lines.append(f"{name} {d} {g} {s} {b} {model} W={format_si(w)} L={format_si(l)}")
    lines.append(f"CL out 0 {format_si(p.c_load)}")
    lines.append(f".tran {format_si(p.t_step)} {format_si(p.t_stop)}")
    lines.append(f".temp {format_si(p.temp)}")
    lines.append(".end")
    return "\n".join(lines) + "\n"


def generate_ulpls(p: DeckParams = DeckParams()) -> str:
    return _emit("ULPLS ultra-low-power level shifter (reconstructed)",
                 "14-transistor sub-threshold input level shifter",
                 ULPLS_TOPOLOGY, ULPLS_SIZES, p)


def generate_cmls(p: DeckParams = DeckParams()) -> str:
    return _emit("CMLS current-mirror level shifter",
                 "conventional current-mirror level shifter baseline",
                 CMLS_TOPOLOGY, CMLS_SIZES, p)


def generate_dcvs(p: DeckParams = DeckParams()) -> str:
    return _emit("DCVS differential cascode voltage switch level shifter",
                 "conventional cross-coupled level shifter baseline",
                 DCVS_TOPOLOGY, DCVS_SIZES, p)


GENERATORS = {"ulpls": generate_ulpls, "cmls": generate_cmls, "dcvs": generate_dcvs}


@dataclass(frozen=True)
class DeckDiagnostics:
    ok: bool
    stage: str  # 'parse' | 'elaborate' | 'dc' | 'ok'
    message: str = ""
    nodes: tuple[str, ...] = ()
    n_mosfets: int = 0


def validate_deck(text: str) -> DeckDiagnostics:
    """Parse, elaborate and DC-solve a deck; failures come back as diagnostics."""
    from .engine import SimulationError, dc_operating_point

    try:
        deck = parse_netlist(text)
    except NetlistError as exc:
        return DeckDiagnostics(False, "parse", str(exc))
    try:
        circuit = elaborate(deck)
    except (NetlistError, ValueError) as exc:
        return DeckDiagnostics(False, "elaborate", str(exc))
    nodes = circuit.node_names[1:]
    try:
        dc_operating_point(circuit)
    except (SimulationError, ValueError) as exc:
        return DeckDiagnostics(False, "dc", str(exc), nodes, len(circuit.mosfets))
    return DeckDiagnostics(True, "ok", "", nodes, len(circuit.mosfets))
