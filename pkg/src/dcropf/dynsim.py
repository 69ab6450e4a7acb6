"""Time-domain validation of set points under staircase load scenarios.

Scenarios hold a fixed reference-voltage vector and a sequence of
constant-power segments; loads step discontinuously between segments
while the state carries over, reproducing staircase ramp experiments.
The circuit dynamics are stiff (inductor and capacitor time constants of
tens of microseconds to milliseconds against multi-second scenarios), so
the default integrator is an L-stable implicit Runge-Kutta method with
the analytic Jacobian; an explicit scheme is available for cross-checks.

Instability is detected structurally, not numerically: a trajectory is
flagged divergent when any load voltage leaves a wide physical window or
the implicit solver's step control collapses, both symptoms of the
finite-time voltage collapse constant-power loads produce.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.integrate as sint

from .powerflow import GridEquations, solve_pf
from .statespace import (SingularStateError, StateSpaceModel, jacobian, rhs,
                         rhs_jacobian)

RTOL = 1e-6
DIVERGE_V_LO = 1.0            # volts; a load voltage below this is collapse
DIVERGE_V_HI_FACTOR = 10.0    # times v_max counts as runaway
EQUILIBRIUM_RHS_TOL = 1e-3    # state-derivative norm treated as settled


class CollapseError(RuntimeError):
    """Raised when the state reaches the load-voltage singularity itself
    (distinct from a detected, finite divergence excursion)."""


@dataclass(frozen=True)
class Scenario:
    """Piecewise-constant load schedule under one reference-voltage vector.

    ``segments`` is a tuple of (duration_s, load_vector) pairs; ``x0``
    overrides the default start at the first segment's equilibrium.
    """

    vref: np.ndarray
    segments: tuple
    x0: np.ndarray | None = None

    def __post_init__(self):
        if not self.segments:
            raise ValueError("scenario needs at least one segment")
        for dur, _ in self.segments:
            if dur <= 0:
                raise ValueError("segment durations must be positive")


def ramp_scenario(vref: np.ndarray, n_loads: int, p_start_w: float,
                  step_w: float, step_period_s: float,
                  p_end_w: float) -> Scenario:
    """Uniform staircase: every load starts at ``p_start_w`` and steps by
    ``step_w`` each ``step_period_s`` until reaching ``p_end_w``."""
    if step_w <= 0 or p_end_w < p_start_w:
        raise ValueError("ramp must increase toward p_end_w")
    levels = np.arange(p_start_w, p_end_w + step_w / 2, step_w)
    levels[-1] = min(levels[-1], p_end_w)
    segments = tuple((step_period_s, np.full(n_loads, lvl)) for lvl in levels)
    return Scenario(vref=np.asarray(vref, dtype=float), segments=segments)


@dataclass(frozen=True)
class SegmentFlags:
    """Qualitative outcome of one constant-load segment."""

    p_level: np.ndarray
    t_start: float
    t_end: float
    converged_to_equilibrium: bool
    diverged: bool
    oscillation_growing: bool


@dataclass(frozen=True)
class Trajectory:
    """Integrated scenario with per-segment stability flags."""

    times: np.ndarray
    states: np.ndarray
    flags: tuple

    @property
    def diverged(self) -> bool:
        return any(f.diverged for f in self.flags)

    @property
    def t_unstable(self) -> float | None:
        """Start of the first segment flagged divergent or growing."""
        for f in self.flags:
            if f.diverged or f.oscillation_growing:
                return f.t_start
        return None

    @property
    def p_unstable(self) -> np.ndarray | None:
        """Load level of the first segment flagged divergent or growing."""
        for f in self.flags:
            if f.diverged or f.oscillation_growing:
                return f.p_level
        return None


def equilibrium_state(model: StateSpaceModel, ge: GridEquations,
                      vref: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Steady state (line currents, source and load voltages) at a load."""
    sol = solve_pf(ge, vref, p)
    x = np.zeros(model.A.shape[0])
    x[:len(sol.i_line)] = sol.i_line
    x[model.source_rows] = sol.v_source
    x[model.load_rows] = sol.v_load
    return x


def equilibrium_spectrum(model: StateSpaceModel, ge: GridEquations,
                         vref: np.ndarray, p: np.ndarray
                         ) -> tuple[np.ndarray, bool]:
    """Eigenvalues of the dynamics linearized at the equilibrium for ``p``.

    Power-flow failures propagate; ``stable`` means every eigenvalue has a
    strictly negative real part.
    """
    sol = solve_pf(ge, vref, p)
    delta = np.asarray(p, dtype=float) / sol.v_load**2
    eig = np.linalg.eigvals(jacobian(model, delta))
    return eig, bool(np.max(eig.real) < 0)


def _segment_flags(model: StateSpaceModel, vref: np.ndarray, p: np.ndarray,
                   t: np.ndarray, x: np.ndarray, t0: float, t1: float,
                   diverged: bool) -> SegmentFlags:
    converged = False
    growing = False
    if not diverged and x.shape[1] >= 2:
        try:
            end_rhs = float(np.max(np.abs(rhs(model, x[:, -1], vref, p))))
            converged = end_rhs <= EQUILIBRIUM_RHS_TOL
        except SingularStateError:
            converged = False
        mid = x.shape[1] // 2
        center = x[:, -1][:, None]
        amp1 = float(np.max(np.abs(x[:, :mid] - center))) if mid else 0.0
        amp2 = float(np.max(np.abs(x[:, mid:] - center)))
        growing = amp2 > 1.5 * amp1 and amp2 > 1.0 and not converged
    return SegmentFlags(p_level=p.copy(), t_start=t0, t_end=t1,
                        converged_to_equilibrium=converged,
                        diverged=diverged, oscillation_growing=growing)


def simulate(model: StateSpaceModel, scenario: Scenario,
             dt_max: float | None = None, t_end: float | None = None,
             ge: GridEquations | None = None, v_max: float = 575.0,
             method: str = "implicit", rtol: float = RTOL) -> Trajectory:
    """Integrate a scenario and flag each segment's qualitative outcome.

    The start state is ``scenario.x0`` when given, otherwise the first
    segment's equilibrium (``ge`` required for that).  Integration is
    adaptive implicit Runge-Kutta by default (``method="explicit"``
    cross-checks with a high-order explicit pair) and stops early inside a
    segment when a load voltage exits ``[1 V, 10 v_max]`` or the stepper
    collapses, flagging the segment divergent.

    Raises:
        CollapseError: the state reached the load-voltage singularity
            before the divergence guard could stop the integration.
    """
    vref = np.asarray(scenario.vref, dtype=float)
    if scenario.x0 is not None:
        x = np.asarray(scenario.x0, dtype=float).copy()
    elif ge is not None:
        x = equilibrium_state(model, ge, vref, scenario.segments[0][1])
    else:
        raise ValueError("scenario has no start state and no grid "
                         "equations to derive the equilibrium from")

    load_rows = model.load_rows
    hi_limit = DIVERGE_V_HI_FACTOR * v_max

    def low_event(t, y):
        return float(np.min(y[load_rows]) - DIVERGE_V_LO)

    def high_event(t, y):
        return float(hi_limit - np.max(y[load_rows]))

    low_event.terminal = True
    high_event.terminal = True

    times = [0.0]
    states = [x.copy()]
    flags = []
    t_clock = 0.0
    budget = np.inf if t_end is None else float(t_end)

    for dur, p_seg in scenario.segments:
        if budget <= 0:
            break
        p = np.asarray(p_seg, dtype=float)
        span = min(float(dur), budget)

        def f(t, y):
            return rhs(model, y, vref, p)

        def jac(t, y):
            return rhs_jacobian(model, y, p)

        kwargs = dict(rtol=rtol, atol=1e-6,
                      events=[low_event, high_event], dense_output=False)
        if dt_max is not None:
            kwargs["max_step"] = dt_max
        try:
            if method == "implicit":
                sol = sint.solve_ivp(f, (0.0, span), x, method="Radau",
                                     jac=jac, **kwargs)
            elif method == "explicit":
                sol = sint.solve_ivp(f, (0.0, span), x, method="DOP853",
                                     **kwargs)
            else:
                raise ValueError(f"unknown method {method!r}")
        except SingularStateError as exc:
            raise CollapseError(
                f"load voltage collapsed to zero at t≈{t_clock:.3f}s "
                f"(load level {p.max():.0f} W)") from exc

        hit_event = any(len(te) for te in sol.t_events)
        stepper_died = sol.status < 0
        diverged = bool(hit_event or stepper_died)

        seg_t = sol.t + t_clock
        times.extend(seg_t[1:].tolist())
        states.extend(sol.y[:, 1:].T)
        flags.append(_segment_flags(model, vref, p, seg_t, sol.y,
                                    t_clock, float(seg_t[-1]), diverged))
        t_clock = float(seg_t[-1])
        budget -= span
        x = sol.y[:, -1].copy()
        if diverged:
            break

    return Trajectory(times=np.array(times),
                      states=np.array(states).T, flags=tuple(flags))
