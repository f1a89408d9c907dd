"""Device constitutive relations.

The MOSFET is a single-expression EKV-style charge-sheet interpolation that
is smooth from weak to strong inversion::

    I = I_S * [F((v_p - v_s)/V_T) - F((v_p - v_d)/V_T)] * (1 + lambda*|v_ds|)
    F(x) = ln(1 + exp(x/2))**2,   v_p = (v_g - V_th(T)) / n

PMOS devices are evaluated by negating every terminal voltage and the
resulting current. Body effect is not modelled; the bulk terminal is inert.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from ._kernels import ekv_eval, pulse_eval

K_BOLTZMANN = 1.380649e-23
Q_ELECTRON = 1.602176634e-19
T_NOMINAL = 300.15
T_MIN = 200.0
T_MAX = 450.0
V_CLAMP = 5.0


class DeviceDomainError(ValueError):
    """Raised when a device is evaluated outside its validity range."""


def thermal_voltage(temp_k: float) -> float:
    return K_BOLTZMANN * temp_k / Q_ELECTRON


def celsius_to_kelvin(temp_c: float) -> float:
    return temp_c + 273.15


@dataclass(frozen=True)
class MosModel:
    """Compact-model card. ``vth0`` is a magnitude; polarity is applied in evaluation."""

    polarity: str = "n"
    vth0: float = 0.503
    n_slope: float = 1.35
    kp: float = 3.0e-4
    lam: float = 0.05
    cox_area: float = 0.03
    t0: float = T_NOMINAL
    tc_vth: float = 1.0e-3
    mu_exp: float = 1.5

    def __post_init__(self):
        if self.polarity not in ("n", "p"):
            raise ValueError(f"polarity must be 'n' or 'p', got {self.polarity!r}")
        if not 1.0 <= self.n_slope <= 2.0:
            raise ValueError(f"n_slope {self.n_slope} outside [1, 2]")
        if self.kp <= 0:
            raise ValueError("kp must be positive")
        if self.vth0 <= 0:
            raise ValueError("vth0 is a magnitude and must be positive")
        if self.lam < 0 or self.tc_vth < 0 or self.cox_area < 0:
            raise ValueError("lambda, tc_vth and cox must be non-negative")

    @property
    def sign(self) -> float:
        return 1.0 if self.polarity == "n" else -1.0

    def with_params(self, **changes) -> "MosModel":
        return replace(self, **changes)


# Calibrated default cards (see README, "Device model").
# NMOS I_on(W/L = 5, V_gs = V_ds = 0.8 V, 27 C) ~ 22 uA; PMOS kp chosen so a
# 500 nm PMOS delivers the same on-current as a 200 nm NMOS.
N22 = MosModel(polarity="n", vth0=0.503, kp=1.3e-4)
P22 = MosModel(polarity="p", vth0=0.460, kp=3.98e-5)
DEFAULT_MODELS = {"n22": N22, "p22": P22}


@dataclass(frozen=True)
class TempParams:
    vth_t: float
    is_t: float
    v_t: float
    kp_t: float


@dataclass(frozen=True)
class MosEval:
    """Operating point of one device.

    ``g_m``, ``g_ds`` and ``g_ms`` are the partial derivatives of ``i_ds`` with
    respect to ``v_g``, ``v_d`` and ``v_s`` in the terminal frame given.
    """

    i_ds: float
    g_m: float
    g_ds: float
    g_ms: float
    region: str


def temperature_adjust(model: MosModel, w: float, l: float, temp_k: float) -> TempParams:
    """Threshold, specific current and thermal voltage at ``temp_k``."""
    if not T_MIN <= temp_k <= T_MAX:
        raise DeviceDomainError(
            f"temperature {temp_k:.2f} K outside [{T_MIN:.0f}, {T_MAX:.0f}] K")
    if w <= 0 or l <= 0:
        raise ValueError("W and L must be positive")
    v_t = thermal_voltage(temp_k)
    vth_t = model.vth0 - model.tc_vth * (temp_k - model.t0)
    kp_t = model.kp * (temp_k / model.t0) ** (-model.mu_exp)
    is_t = 2.0 * model.n_slope * kp_t * (w / l) * v_t * v_t
    return TempParams(vth_t=vth_t, is_t=is_t, v_t=v_t, kp_t=kp_t)


def _region(vg: float, vs: float, vth: float, sign: float) -> str:
    vgs = sign * (vg - vs)
    if vgs < vth - 0.1:
        return "off" if vgs < 0.0 else "weak"
    return "weak" if vgs < vth else "strong"


def mos_ids(model: MosModel, w: float, l: float, v_g: float, v_d: float, v_s: float,
            temp_k: float = T_NOMINAL) -> MosEval:
    """Drain current (drain to source, NMOS sense) and its partial derivatives."""
    tp = temperature_adjust(model, w, l, temp_k)
    v_g, v_d, v_s = (min(max(v, -V_CLAMP), V_CLAMP) for v in (v_g, v_d, v_s))
    i, gm, gds, gms = ekv_eval(model.sign, v_g, v_d, v_s, tp.vth_t, model.n_slope,
                               tp.is_t, model.lam, tp.v_t)
    return MosEval(i_ds=i, g_m=gm, g_ds=gds, g_ms=gms,
                   region=_region(v_g, min(v_s, v_d) if model.sign > 0 else max(v_s, v_d),
                                  tp.vth_t, model.sign))


def gate_capacitance(model: MosModel, w: float, l: float) -> float:
    if w <= 0 or l <= 0:
        raise ValueError("W and L must be positive")
    return model.cox_area * w * l


def mos_gate_charge(model: MosModel, w: float, l: float, v_g: float) -> tuple[float, float]:
    """Linear lumped gate charge (gate to ground). Returns ``(Q, C_g)``."""
    c_g = gate_capacitance(model, w, l)
    return c_g * v_g, c_g


@dataclass(frozen=True)
class PulseSpec:
    v1: float
    v2: float
    t_delay: float
    t_rise: float
    t_fall: float
    t_pw: float
    t_period: float

    def __post_init__(self):
        if self.t_rise <= 0 or self.t_fall <= 0:
            raise ValueError("pulse rise and fall times must be positive")
        if self.t_delay < 0 or self.t_pw < 0:
            raise ValueError("pulse delay and width must be non-negative")
        # relative slack absorbs the rounding of suffixed values such as 4.99u
        if self.t_period < (self.t_rise + self.t_pw + self.t_fall) * (1 - 1e-12):
            raise ValueError("pulse period shorter than rise + width + fall")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.v1, self.v2, self.t_delay, self.t_rise, self.t_fall,
                self.t_pw, self.t_period)


def pulse_value(p: PulseSpec, t: float) -> float:
    """Periodic trapezoid value at time ``t``."""
    if t < 0:
        raise ValueError("time must be non-negative")
    return float(pulse_eval(*p.as_tuple(), t))
