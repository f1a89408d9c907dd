"""SPICE-dialect netlist front end.

Supported cards (case-insensitive, one logical line each, ``+`` continues)::

    title line
    M<name> <d> <g> <s> <b> <model> W=<val> L=<val>
    R<name> <n1> <n2> <val>
    C<name> <n1> <n2> <val>
    V<name> <n+> <n-> DC <val>
    V<name> <n+> <n-> PULSE(<v1> <v2> <td> <tr> <tf> <pw> <per>)
    .model <name> <nmos|pmos> (<param>=<val> ...)
    .tran <tstep> <tstop>
    .temp <celsius>
    .end

``*`` starts a full-line comment and ``;`` a trailing one.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from typing import Union

from .devices import DEFAULT_MODELS, MosModel, PulseSpec

log = logging.getLogger(__name__)

GROUND_NAMES = ("0", "gnd")

_SUFFIX_EXP = {
    "f": -15, "p": -12, "n": -9, "u": -6, "m": -3,
    "k": 3, "meg": 6, "g": 9, "t": 12,
}
# 'meg' must be tried before 'm'
_VALUE_RE = re.compile(
    r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(meg|[fpnumkgt])?$", re.IGNORECASE)

_MODEL_KEYS = {
    "vth0": "vth0", "n": "n_slope", "kp": "kp", "lambda": "lam",
    "cox": "cox_area", "tcvth": "tc_vth", "muexp": "mu_exp",
}


class NetlistError(ValueError):
    """Parse or elaboration failure, located by line (and column when known)."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


def parse_value(token: str, line: int | None = None, column: int | None = None) -> float:
    """Numeric token with optional SPICE scale suffix, e.g. ``200n`` or ``10MEG``."""
    m = _VALUE_RE.match(token.strip())
    if m is None:
        raise NetlistError(f"malformed value {token!r}", line, column)
    mantissa, suffix = m.group(1), m.group(2)
    if not suffix:
        return float(mantissa)
    exp = _SUFFIX_EXP[suffix.lower()]
    if "e" in mantissa.lower():
        return float(mantissa) * 10.0 ** exp
    # decimal shift keeps '200n' == 2e-7 exactly
    return float(f"{mantissa}e{exp}")


def format_value(value: float) -> str:
    """Shortest text that reparses to exactly ``value``."""
    return repr(float(value))


@dataclass(frozen=True)
class RawDeck:
    title: str
    cards: tuple[str, ...]
    source_locations: tuple[int, ...]


def _strip_comment(line: str) -> str:
    if line.lstrip().startswith("*"):
        return ""
    return line.split(";", 1)[0].strip()


def parse_netlist(text: str) -> RawDeck:
    """Split deck text into logical cards (comments removed, continuations folded)."""
    if not text or not text.strip():
        raise NetlistError("empty netlist", 1)
    lines = text.splitlines()
    title = lines[0].strip()
    if title.startswith(".") or title.startswith("+"):
        raise NetlistError("deck must start with a title line, found a directive", 1)

    cards: list[str] = []
    locs: list[int] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        body = _strip_comment(raw)
        if not body:
            continue
        if body.startswith("+"):
            if not cards:
                raise NetlistError("continuation line without a preceding card", lineno)
            cards[-1] = cards[-1] + " " + body[1:].strip()
            continue
        if body.lower().split()[0] == ".end":
            break
        cards.append(body)
        locs.append(lineno)

    seen: dict[str, int] = {}
    for card, lineno in zip(cards, locs):
        if card.startswith("."):
            continue
        name = card.split()[0].lower()
        if name in seen:
            raise NetlistError(
                f"duplicate device name {card.split()[0]!r} (first on line {seen[name]})", lineno)
        seen[name] = lineno
    return RawDeck(title=title, cards=tuple(cards), source_locations=tuple(locs))


@dataclass(frozen=True)
class Mosfet:
    name: str
    d: int
    g: int
    s: int
    b: int
    model: str
    w: float
    l: float


@dataclass(frozen=True)
class Resistor:
    name: str
    n1: int
    n2: int
    ohms: float


@dataclass(frozen=True)
class Capacitor:
    name: str
    n1: int
    n2: int
    farads: float


@dataclass(frozen=True)
class VSource:
    name: str
    npos: int
    nneg: int
    dc: float = 0.0
    pulse: PulseSpec | None = None

    def value_at(self, t: float) -> float:
        from .devices import pulse_value
        if self.pulse is None:
            return self.dc
        return pulse_value(self.pulse, t)


DeviceInstance = Union[Mosfet, Resistor, Capacitor, VSource]


@dataclass(frozen=True)
class AnalysisSpec:
    kind: str  # 'tran' | 'dc_op' | 'temp'
    t_step: float = 0.0
    t_stop: float = 0.0
    celsius: float = 27.0

    def __post_init__(self):
        if self.kind == "tran" and not (self.t_step > 0 and self.t_stop > self.t_step):
            raise ValueError("tran needs 0 < t_step < t_stop")


@dataclass(frozen=True)
class Circuit:
    """Elaborated, node-indexed circuit. Treat as immutable."""

    title: str
    node_names: tuple[str, ...]
    devices: tuple[DeviceInstance, ...]
    models: dict[str, MosModel]
    analyses: tuple[AnalysisSpec, ...] = ()
    global_temp: float = 27.0
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    @property
    def nodes(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.node_names)}

    @property
    def n_nodes(self) -> int:
        return len(self.node_names)

    def node(self, name: str) -> int:
        key = name.lower()
        if key in GROUND_NAMES:
            return 0
        try:
            return self.node_names.index(key)
        except ValueError:
            raise KeyError(f"unknown node {name!r}") from None

    def device(self, name: str) -> DeviceInstance:
        key = name.lower()
        for dev in self.devices:
            if dev.name.lower() == key:
                return dev
        raise KeyError(f"unknown device {name!r}")

    @property
    def mosfets(self) -> list[Mosfet]:
        return [d for d in self.devices if isinstance(d, Mosfet)]

    @property
    def vsources(self) -> list[VSource]:
        return [d for d in self.devices if isinstance(d, VSource)]

    @property
    def tran(self) -> AnalysisSpec | None:
        for a in self.analyses:
            if a.kind == "tran":
                return a
        return None

    def replace_device(self, name: str, **changes) -> "Circuit":
        key = name.lower()
        found = False
        devs = []
        for dev in self.devices:
            if dev.name.lower() == key:
                dev = replace(dev, **changes)
                found = True
            devs.append(dev)
        if not found:
            raise KeyError(f"unknown device {name!r}")
        return replace(self, devices=tuple(devs))

    def with_temp(self, celsius: float) -> "Circuit":
        return replace(self, global_temp=celsius)


_TOKEN_RE = re.compile(r"\s*=\s*")


def _tokens(card: str) -> list[str]:
    card = _TOKEN_RE.sub("=", card)
    return card.replace("(", " ").replace(")", " ").replace(",", " ").split()


def _keyvals(tokens: list[str], lineno: int) -> dict[str, float]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise NetlistError(f"expected key=value, got {tok!r}", lineno)
        key, val = tok.split("=", 1)
        out[key.lower()] = parse_value(val, lineno)
    return out


def _parse_model(tokens: list[str], lineno: int) -> tuple[str, MosModel]:
    if len(tokens) < 3:
        raise NetlistError(".model needs a name and a type", lineno)
    name, kind = tokens[1].lower(), tokens[2].lower()
    if kind not in ("nmos", "pmos"):
        raise NetlistError(f"unsupported model type {tokens[2]!r}", lineno)
    base = DEFAULT_MODELS["n22"] if kind == "nmos" else DEFAULT_MODELS["p22"]
    params = {}
    for key, val in _keyvals(tokens[3:], lineno).items():
        if key not in _MODEL_KEYS:
            raise NetlistError(f"unknown model parameter {key!r}", lineno)
        params[_MODEL_KEYS[key]] = val
    try:
        return name, base.with_params(**params)
    except ValueError as exc:
        raise NetlistError(f"model {name}: {exc}", lineno) from None


def elaborate(deck: RawDeck) -> Circuit:
    """Index nodes, resolve models and check circuit-level invariants."""
    node_names: list[str] = ["0"]
    node_idx: dict[str, int] = {"0": 0}
    conn_count: dict[int, int] = {}
    edges: list[tuple[int, ...]] = []
    models: dict[str, MosModel] = {}
    analyses: list[AnalysisSpec] = []
    diagnostics: list[str] = []
    temp = 27.0
    pending: list[tuple[str, list[str], int]] = []

    def node(name: str) -> int:
        key = name.lower()
        if key in GROUND_NAMES:
            key = "0"
        if key not in node_idx:
            node_idx[key] = len(node_names)
            node_names.append(key)
        return node_idx[key]

    for card, lineno in zip(deck.cards, deck.source_locations):
        tokens = _tokens(card)
        head = tokens[0].lower()
        if head == ".model":
            name, model = _parse_model(tokens, lineno)
            models[name] = model
        elif head == ".tran":
            if len(tokens) < 3:
                raise NetlistError(".tran needs <tstep> <tstop>", lineno)
            try:
                spec = AnalysisSpec("tran", parse_value(tokens[1], lineno),
                                    parse_value(tokens[2], lineno))
            except ValueError as exc:
                raise NetlistError(str(exc), lineno) from None
            if any(a.kind == "tran" for a in analyses):
                msg = f"line {lineno}: duplicate .tran, last one wins"
                log.warning(msg)
                diagnostics.append(msg)
                analyses = [a for a in analyses if a.kind != "tran"]
            analyses.append(spec)
        elif head == ".temp":
            if len(tokens) != 2:
                raise NetlistError(".temp needs one value", lineno)
            temp = parse_value(tokens[1], lineno)
            analyses.append(AnalysisSpec("temp", celsius=temp))
        elif head == ".op":
            analyses.append(AnalysisSpec("dc_op"))
        elif head.startswith("."):
            raise NetlistError(f"unsupported directive {tokens[0]!r}", lineno)
        else:
            pending.append((card, tokens, lineno))

    devices: list[DeviceInstance] = []
    for card, tokens, lineno in pending:
        name = tokens[0]
        kind = name[0].lower()
        if kind == "m":
            if len(tokens) < 8:
                raise NetlistError(f"{name}: expected d g s b model W= L=", lineno)
            terms = [node(t) for t in tokens[1:5]]
            model = tokens[5].lower()
            kv = _keyvals(tokens[6:], lineno)
            if set(kv) != {"w", "l"}:
                raise NetlistError(f"{name}: MOSFET needs exactly W= and L=", lineno)
            w, l = kv["w"], kv["l"]
            if w <= 0 or l <= 0:
                raise NetlistError(f"{name}: W and L must be positive", lineno)
            if not 0.1 <= w / l <= 1000:
                raise NetlistError(f"{name}: W/L = {w / l:.3g} outside [0.1, 1000]", lineno)
            if model not in models:
                raise NetlistError(f"{name}: undeclared model {tokens[5]!r}", lineno)
            dev = Mosfet(name, *terms, model=model, w=w, l=l)
            edges.append((terms[0], terms[1], terms[2], terms[3]))
            for t in terms:
                conn_count[t] = conn_count.get(t, 0) + 1
        elif kind in "rc":
            if len(tokens) != 4:
                raise NetlistError(f"{name}: expected <n1> <n2> <value>", lineno)
            n1, n2 = node(tokens[1]), node(tokens[2])
            val = parse_value(tokens[3], lineno)
            if val <= 0:
                raise NetlistError(f"{name}: value must be positive", lineno)
            dev = Resistor(name, n1, n2, val) if kind == "r" else Capacitor(name, n1, n2, val)
            edges.append((n1, n2))
            conn_count[n1] = conn_count.get(n1, 0) + 1
            conn_count[n2] = conn_count.get(n2, 0) + 1
        elif kind == "v":
            if len(tokens) < 4:
                raise NetlistError(f"{name}: expected <n+> <n-> DC <v> | PULSE(...)", lineno)
            npos, nneg = node(tokens[1]), node(tokens[2])
            drive = tokens[3].lower()
            if drive == "dc" and len(tokens) == 5:
                dev = VSource(name, npos, nneg, dc=parse_value(tokens[4], lineno))
            elif drive == "pulse" and len(tokens) == 11:
                vals = [parse_value(t, lineno) for t in tokens[4:11]]
                try:
                    pulse = PulseSpec(*vals)
                except ValueError as exc:
                    raise NetlistError(f"{name}: {exc}", lineno) from None
                dev = VSource(name, npos, nneg, dc=vals[0], pulse=pulse)
            elif len(tokens) == 4:
                dev = VSource(name, npos, nneg, dc=parse_value(tokens[3], lineno))
            else:
                raise NetlistError(f"{name}: malformed source drive", lineno)
            edges.append((npos, nneg))
            conn_count[npos] = conn_count.get(npos, 0) + 1
            conn_count[nneg] = conn_count.get(nneg, 0) + 1
        else:
            raise NetlistError(f"unsupported element {name!r}", lineno)
        devices.append(dev)

    for idx in range(1, len(node_names)):
        if conn_count.get(idx, 0) < 2:
            raise NetlistError(f"node {node_names[idx]!r} is floating (single connection)")

    # union-find over device terminals
    parent = list(range(len(node_names)))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for group in edges:
        for other in group[1:]:
            ra, rb = find(group[0]), find(other)
            if ra != rb:
                parent[ra] = rb
    cut = [node_names[i] for i in range(1, len(node_names)) if find(i) != find(0)]
    if cut:
        raise NetlistError(f"nodes without a path to ground: {', '.join(cut)}")

    return Circuit(title=deck.title, node_names=tuple(node_names), devices=tuple(devices),
                   models=models, analyses=tuple(analyses), global_temp=temp,
                   diagnostics=tuple(diagnostics))


def load_circuit(text: str) -> Circuit:
    return elaborate(parse_netlist(text))


def unparse(c: Circuit) -> str:
    """Emit deck text that elaborates back to an identical circuit."""
    fv = format_value
    names = c.node_names
    out = [c.title or "untitled"]
    rev = {v: k for k, v in _MODEL_KEYS.items()}
    for name, m in c.models.items():
        params = " ".join(f"{rev[k]}={fv(getattr(m, k))}" for k in _MODEL_KEYS.values())
        out.append(f".model {name} {'nmos' if m.polarity == 'n' else 'pmos'} ({params})")
    for dev in c.devices:
        if isinstance(dev, Mosfet):
            out.append(f"{dev.name} {names[dev.d]} {names[dev.g]} {names[dev.s]} "
                       f"{names[dev.b]} {dev.model} W={fv(dev.w)} L={fv(dev.l)}")
        elif isinstance(dev, Resistor):
            out.append(f"{dev.name} {names[dev.n1]} {names[dev.n2]} {fv(dev.ohms)}")
        elif isinstance(dev, Capacitor):
            out.append(f"{dev.name} {names[dev.n1]} {names[dev.n2]} {fv(dev.farads)}")
        elif dev.pulse is not None:
            out.append(f"{dev.name} {names[dev.npos]} {names[dev.nneg]} PULSE("
                       + " ".join(fv(v) for v in dev.pulse.as_tuple()) + ")")
        else:
            out.append(f"{dev.name} {names[dev.npos]} {names[dev.nneg]} DC {fv(dev.dc)}")
    for a in c.analyses:
        if a.kind == "tran":
            out.append(f".tran {fv(a.t_step)} {fv(a.t_stop)}")
        elif a.kind == "temp":
            out.append(f".temp {fv(a.celsius)}")
        else:
            out.append(".op")
    out.append(".end")
    return "\n".join(out) + "\n"
