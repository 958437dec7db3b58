"""Switched-mode boost converter model.

Topology: v_s -> L (series resistance r_l) -> [switch to ground | diode -> C || R].
Three affine sub-dynamics are selected by the switch gate and the sign of the
inductor current:

    switch on:                di/dt = (v_s - r_l*i_l) / L
                              dv/dt = -v_o / (R*C)
    switch off, i_l > 0:      di/dt = (v_s - r_l*i_l - v_o) / L
                              dv/dt = i_l/C - v_o/(R*C)
    switch off, i_l = 0:      di/dt = 0          (diode blocks)
                              dv/dt = -v_o / (R*C)

One `step` advances a full PWM period with trailing-edge modulation: the switch
conducts for the first round(duty * n_sub) sub-steps, then opens.  Integration
is fixed-step RK4 on each sub-step; when an off-interval sub-step would drive
i_l below zero, the current is clamped to zero and the converter stays in the
blocked (DCM) branch until the switch closes again.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

__all__ = [
    "ConductionMode",
    "PlantParams",
    "PlantState",
    "derivatives",
    "step",
    "step_averaged",
    "steady_state_hint",
]


class ConductionMode(enum.Enum):
    """Which affine branch was active at the end of the last sub-step."""

    SWITCH_ON = "on"
    SWITCH_OFF_CONDUCTING = "off_conducting"
    SWITCH_OFF_BLOCKED = "off_blocked"


@dataclass(frozen=True)
class PlantParams:
    """Converter constants.  Defaults follow the nominal desk setup.

    dt must divide the switching period exactly; the PWM duty is quantized to
    this sub-step grid (1% duty resolution at the default dt = T_s/100).
    """

    r_load: float = 80.0       # load resistance (ohm)
    l_ind: float = 860e-6      # inductance (H)
    c_out: float = 860e-6      # output capacitance (F)
    r_l: float = 0.1           # inductor series resistance (ohm)
    v_s: float = 60.0          # input voltage (V)
    f_sw: float = 20e3         # switching frequency (Hz)
    dt: float = 0.5e-6         # RK4 sub-step (s)

    def __post_init__(self) -> None:
        for name in ("r_load", "l_ind", "c_out", "f_sw", "dt"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.r_l < 0.0:
            raise ValueError("r_l must be non-negative")
        n = self.t_sw / self.dt
        if abs(n - round(n)) > 1e-9 * n or round(n) < 1:
            raise ValueError(
                f"dt={self.dt} does not divide the switching period {self.t_sw}"
            )

    @property
    def t_sw(self) -> float:
        """Switching period 1/f_sw (s)."""
        return 1.0 / self.f_sw

    @property
    def substeps(self) -> int:
        """Integration sub-steps per PWM period."""
        return round(self.t_sw / self.dt)


@dataclass(frozen=True)
class PlantState:
    """Converter state at a sub-step boundary: inductor current and output voltage."""

    i_l: float = 0.0
    v_o: float = 0.0
    mode: ConductionMode = ConductionMode.SWITCH_OFF_BLOCKED

    def __post_init__(self) -> None:
        if self.i_l < 0.0:
            raise ValueError("i_l must be non-negative (diode blocks reverse current)")
        if self.v_o < 0.0:
            raise ValueError("v_o must be non-negative")


def derivatives(
    state: PlantState, switch_on: bool, params: PlantParams
) -> tuple[float, float]:
    """Return (di_l/dt, dv_o/dt) for the active affine branch.

    The branch is selected by the gate signal and, with the switch open, the
    sign of i_l (zero current means the diode blocks and the inductor rests).
    """
    i_l, v_o = state.i_l, state.v_o
    p = params
    if switch_on:
        return (p.v_s - p.r_l * i_l) / p.l_ind, -v_o / (p.r_load * p.c_out)
    if i_l > 0.0:
        return (
            (p.v_s - p.r_l * i_l - v_o) / p.l_ind,
            i_l / p.c_out - v_o / (p.r_load * p.c_out),
        )
    return 0.0, -v_o / (p.r_load * p.c_out)


def _advance(
    i_l: float, v_o: float, duty: float, params: PlantParams
) -> tuple[float, float, ConductionMode, float, float, float]:
    """One PWM period; returns the end state plus trapezoid-averaged
    (mean i_l, mean v_o, mean v_o^2) over the period.

    Inner loop is written with plain floats and inlined RK4 stages: a 100 ms
    run touches ~200k sub-steps, which rules out per-stage callables.
    """
    n_sub = params.substeps
    n_on = round(duty * n_sub)
    dt = params.dt
    v_s = params.v_s
    inv_l = 1.0 / params.l_ind
    rl = params.r_l
    inv_c = 1.0 / params.c_out
    inv_rc = 1.0 / (params.r_load * params.c_out)

    # trapezoid accumulators over sub-step boundary values
    s_i = 0.5 * i_l
    s_v = 0.5 * v_o
    s_v2 = 0.5 * v_o * v_o

    mode = ConductionMode.SWITCH_OFF_BLOCKED
    for k in range(n_on):
        # branch 1: switch closed, inductor charges, capacitor feeds the load
        k1i = (v_s - rl * i_l) * inv_l
        k1v = -v_o * inv_rc
        yi = i_l + 0.5 * dt * k1i
        yv = v_o + 0.5 * dt * k1v
        k2i = (v_s - rl * yi) * inv_l
        k2v = -yv * inv_rc
        yi = i_l + 0.5 * dt * k2i
        yv = v_o + 0.5 * dt * k2v
        k3i = (v_s - rl * yi) * inv_l
        k3v = -yv * inv_rc
        yi = i_l + dt * k3i
        yv = v_o + dt * k3v
        k4i = (v_s - rl * yi) * inv_l
        k4v = -yv * inv_rc
        i_l += dt * (k1i + 2.0 * (k2i + k3i) + k4i) / 6.0
        v_o += dt * (k1v + 2.0 * (k2v + k3v) + k4v) / 6.0
        s_i += i_l
        s_v += v_o
        s_v2 += v_o * v_o
        mode = ConductionMode.SWITCH_ON

    blocked = i_l <= 0.0
    if blocked:
        i_l = 0.0
    for k in range(n_sub - n_on):
        if blocked:
            # branch 3: diode blocks, output capacitor discharges into the load
            k1v = -v_o * inv_rc
            k2v = -(v_o + 0.5 * dt * k1v) * inv_rc
            k3v = -(v_o + 0.5 * dt * k2v) * inv_rc
            k4v = -(v_o + dt * k3v) * inv_rc
            v_o += dt * (k1v + 2.0 * (k2v + k3v) + k4v) / 6.0
            mode = ConductionMode.SWITCH_OFF_BLOCKED
        else:
            # branch 2: switch open, inductor feeds the output through the diode
            k1i = (v_s - rl * i_l - v_o) * inv_l
            k1v = i_l * inv_c - v_o * inv_rc
            yi = i_l + 0.5 * dt * k1i
            yv = v_o + 0.5 * dt * k1v
            k2i = (v_s - rl * yi - yv) * inv_l
            k2v = yi * inv_c - yv * inv_rc
            yi = i_l + 0.5 * dt * k2i
            yv = v_o + 0.5 * dt * k2v
            k3i = (v_s - rl * yi - yv) * inv_l
            k3v = yi * inv_c - yv * inv_rc
            yi = i_l + dt * k3i
            yv = v_o + dt * k3v
            k4i = (v_s - rl * yi - yv) * inv_l
            k4v = yi * inv_c - yv * inv_rc
            i_l += dt * (k1i + 2.0 * (k2i + k3i) + k4i) / 6.0
            v_o += dt * (k1v + 2.0 * (k2v + k3v) + k4v) / 6.0
            if i_l <= 0.0:
                # DCM entry: clamp at zero for the rest of the off interval
                i_l = 0.0
                blocked = True
                mode = ConductionMode.SWITCH_OFF_BLOCKED
            else:
                mode = ConductionMode.SWITCH_OFF_CONDUCTING
        s_i += i_l
        s_v += v_o
        s_v2 += v_o * v_o

    # undo the half-weight on the final boundary value
    s_i -= 0.5 * i_l
    s_v -= 0.5 * v_o
    s_v2 -= 0.5 * v_o * v_o
    return i_l, v_o, mode, s_i / n_sub, s_v / n_sub, s_v2 / n_sub


def step(state: PlantState, duty: float, params: PlantParams) -> PlantState:
    """Advance one full PWM period T_s = 1/f_sw under the given duty cycle."""
    new_state, _ = step_averaged(state, duty, params)
    return new_state


def step_averaged(
    state: PlantState, duty: float, params: PlantParams
) -> tuple[PlantState, tuple[float, float, float]]:
    """Like `step`, additionally returning (mean i_l, mean v_o, mean v_o^2)
    over the period — the waveform averages needed for power-balance and
    volt-second checks, which per-period boundary samples would bias.
    """
    if not 0.0 <= duty <= 1.0:
        raise ValueError(f"duty must lie in [0, 1], got {duty}")
    i_l, v_o, mode, m_i, m_v, m_v2 = _advance(state.i_l, state.v_o, duty, params)
    return PlantState(i_l=i_l, v_o=v_o, mode=mode), (m_i, m_v, m_v2)


def steady_state_hint(v_set: float, v_s: float, r_load: float) -> tuple[float, float]:
    """Lossless CCM operating point for a voltage target.

    Volt-second balance gives duty = 1 - v_s/v_set; power balance gives the
    average inductor (= input) current i_set = v_set^2 / (r_load * v_s).
    """
    if v_set <= 0.0 or v_s <= 0.0 or r_load <= 0.0:
        raise ValueError("v_set, v_s, and r_load must be strictly positive")
    if v_s >= v_set:
        raise ValueError(
            f"boost converter cannot step down: need v_s < v_set, "
            f"got v_s={v_s}, v_set={v_set}"
        )
    duty = 1.0 - v_s / v_set
    i_set = v_set * v_set / (r_load * v_s)
    return duty, i_set
