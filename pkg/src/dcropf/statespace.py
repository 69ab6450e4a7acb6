"""State-space form of the network dynamics.

The state vector stacks line currents, source bus voltages and load bus
voltages, in the element order of the originating case:

    x = (i_line[0..n_t), v_source[0..n_s), v_load[0..n_l))

Dynamics are affine in the state except for the constant-power draw at the
load buses, which enters through the current injection ``p_j / v_j``:

    dx/dt = A x + B vref + C h(x, p),   h_j(x, p) = p_j / v_j.

Linearizing the power draw at an operating voltage ``v_j`` replaces the
nonlinearity by the slope ``delta_j = p_j / v_j**2`` and yields the Jacobian
family ``A + D diag(delta)`` acting on the load-voltage columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netcase import NetworkCase

# States whose load voltage is this close to zero make p/v meaningless.
SINGULAR_VOLTAGE = 1e-9


class SingularStateError(ValueError):
    """Raised when a load voltage is too close to zero to evaluate p/v."""


@dataclass(frozen=True)
class StateIndexMap:
    """Maps element ids to state-vector rows."""

    line: dict[str, int]
    source: dict[str, int]  # keyed by bus id
    load: dict[str, int]    # keyed by bus id


@dataclass(frozen=True)
class StateSpaceModel:
    """Matrices of the network dynamics plus index bookkeeping.

    ``C`` injects the constant-power currents (one ``-1/C_l`` entry per
    load column); ``D = -C`` is the perturbation direction of the Jacobian
    family, so ``jacobian`` adds ``delta_j / C_lj`` to the diagonal entry
    of load ``j``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    index: StateIndexMap
    load_rows: np.ndarray
    source_rows: np.ndarray
    c_load: np.ndarray
    energy_diag: np.ndarray  # per-state L or C, the stored-energy weights

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_loads(self) -> int:
        return self.load_rows.size


def assemble(case: NetworkCase) -> StateSpaceModel:
    """Build the state-space model of a case.

    Line rows implement ``L di/dt = v_from - R i - v_to``; bus rows collect
    the incident line currents, the local shunt/regulator current and, for
    loads, the constant-power injection.
    """
    nt, ns, nl = case.n_lines, case.n_sources, case.n_loads
    n = nt + ns + nl

    line_index = {l.id: k for k, l in enumerate(case.lines)}
    source_index = {s.bus: nt + k for k, s in enumerate(case.sources)}
    load_index = {l.bus: nt + ns + j for j, l in enumerate(case.loads)}
    bus_row = {**source_index, **load_index}

    A = np.zeros((n, n))
    B = np.zeros((n, ns))
    C = np.zeros((n, nl))

    for k, line in enumerate(case.lines):
        a, b = bus_row[line.from_bus], bus_row[line.to_bus]
        A[k, k] = -line.r_ohm / line.l_henry
        A[k, a] += 1.0 / line.l_henry
        A[k, b] -= 1.0 / line.l_henry
        # Current i_k leaves from_bus and enters to_bus.
        ca = case.sources[a - nt].c_farad if a < nt + ns else case.loads[a - nt - ns].c_farad
        cb = case.sources[b - nt].c_farad if b < nt + ns else case.loads[b - nt - ns].c_farad
        A[a, k] -= 1.0 / ca
        A[b, k] += 1.0 / cb

    for k, s in enumerate(case.sources):
        r = source_index[s.bus]
        A[r, r] += -1.0 / (s.r_ohm * s.c_farad)
        B[r, k] = 1.0 / (s.r_ohm * s.c_farad)

    c_load = np.array([l.c_farad for l in case.loads])
    for j, l in enumerate(case.loads):
        r = load_index[l.bus]
        A[r, r] += -1.0 / (l.r_ohm * l.c_farad)
        C[r, j] = -1.0 / l.c_farad

    load_rows = np.arange(nt + ns, n)
    source_rows = np.arange(nt, nt + ns)
    energy_diag = np.concatenate([
        [l.l_henry for l in case.lines],
        [s.c_farad for s in case.sources],
        c_load,
    ])
    return StateSpaceModel(A=A, B=B, C=C, D=-C,
                           index=StateIndexMap(line=line_index,
                                               source=source_index,
                                               load=load_index),
                           load_rows=load_rows, source_rows=source_rows,
                           c_load=c_load, energy_diag=energy_diag)


def rhs(model: StateSpaceModel, x: np.ndarray, vref: np.ndarray,
        p: np.ndarray) -> np.ndarray:
    """Evaluate dx/dt at state ``x`` for references ``vref`` and loads ``p``.

    Raises:
        SingularStateError: a load voltage is within SINGULAR_VOLTAGE of zero.
    """
    v_load = x[model.load_rows]
    if np.any(np.abs(v_load) < SINGULAR_VOLTAGE):
        raise SingularStateError("load voltage too close to zero for p/v")
    return model.A @ x + model.B @ vref + model.C @ (p / v_load)


def jacobian(model: StateSpaceModel, delta: np.ndarray) -> np.ndarray:
    """Jacobian ``A + D diag(delta)`` for load sensitivities ``delta``.

    ``delta_j = p_j / v_j**2`` is the linearized slope of the power draw;
    column ``j`` of ``D`` acts on the load-voltage state of load ``j``.
    """
    J = model.A.copy()
    J[model.load_rows, model.load_rows] += np.asarray(delta) / model.c_load
    return J


def rhs_jacobian(model: StateSpaceModel, x: np.ndarray,
                 p: np.ndarray) -> np.ndarray:
    """Exact Jacobian of :func:`rhs` at state ``x`` (d/dv of p/v is -p/v^2)."""
    v_load = x[model.load_rows]
    if np.any(np.abs(v_load) < SINGULAR_VOLTAGE):
        raise SingularStateError("load voltage too close to zero for p/v")
    return jacobian(model, p / v_load**2)


@dataclass(frozen=True)
class DeltaBox:
    """Elementwise interval for the load sensitivities delta."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if np.any(self.lo > self.hi):
            raise ValueError("delta box has lo > hi")


def delta_box(case: NetworkCase, v_lo: np.ndarray | None = None,
              v_hi: np.ndarray | None = None) -> DeltaBox:
    """Sensitivity box implied by load power intervals and voltage ranges.

    With ``p in [p_min, p_max]`` and ``v in [v_lo, v_hi]`` (defaults: the
    per-load voltage bounds), ``delta = p / v**2`` ranges over
    ``[p_min / v_hi**2, p_max / v_lo**2]``.
    """
    v_lo = case.v_min() if v_lo is None else np.asarray(v_lo, dtype=float)
    v_hi = case.v_max() if v_hi is None else np.asarray(v_hi, dtype=float)
    if np.any(v_lo <= 0) or np.any(v_hi < v_lo):
        raise ValueError("need 0 < v_lo <= v_hi")
    return DeltaBox(lo=case.p_min() / v_hi**2, hi=case.p_max() / v_lo**2)


def spectral_abscissa(M: np.ndarray) -> float:
    """Largest real part over the eigenvalues of ``M``."""
    return float(np.max(np.linalg.eigvals(M).real))
