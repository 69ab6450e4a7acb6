"""Algebraic grid equations, power flow and loss accounting.

Eliminating line currents and source bus voltages from the equilibrium
conditions leaves one power-balance equation per load bus,

    p = diag(v) (Y_ll v + Y_ls vref),

where ``v`` are the load bus voltages.  ``-Y_ll`` is a nonsingular
M-matrix (positive diagonal, nonpositive off-diagonal, nonnegative
inverse), which gives three useful objects:

* the open-circuit voltages ``w = -Y_ll^{-1} Y_ls vref`` reached when all
  constant-power draws vanish,
* the open-circuit-normalized impedance ``Zt = diag(w)^{-1} Y_ll^{-1}
  diag(w)^{-1}`` whose row sums drive the solvability certificate,
* a well-conditioned Newton iteration for the high-voltage power-flow
  solution started at ``w``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netcase import NetworkCase

PF_TOL = 1e-8          # residual tolerance, scaled by max(1, ||p||_inf)
PF_POLISH_TARGET = 1e-10   # absolute watts aimed for by the final polish
PF_MAX_ITER = 50
PF_MAX_HALVINGS = 10


class PowerFlowError(RuntimeError):
    """Raised when the power-flow iteration fails to converge."""


@dataclass(frozen=True)
class GridEquations:
    """Reduced load-bus equations plus data to recover eliminated states."""

    Y_ll: np.ndarray         # (n_l, n_l) load-bus injection matrix
    Y_ls: np.ndarray         # (n_l, n_s) source coupling, nonnegative
    K: np.ndarray            # Y_ll^{-1}
    W: np.ndarray            # (n_l, n_s) open-circuit map, nonnegative
    Y_ss_full: np.ndarray    # source rows of the unreduced nodal matrix
    Y_sl_full: np.ndarray
    g_source: np.ndarray     # (n_s,) regulator conductances 1/R_s
    line_from: np.ndarray    # (n_t,) bus-vector column of each line tail
    line_to: np.ndarray
    g_line: np.ndarray       # (n_t,) line conductances 1/R_t

    @property
    def n_loads(self) -> int:
        return self.Y_ll.shape[0]

    @property
    def n_sources(self) -> int:
        return self.Y_ls.shape[1]


@dataclass(frozen=True)
class PfSolution:
    """High-voltage power-flow solution with recovered branch currents."""

    v_load: np.ndarray
    v_source: np.ndarray
    i_line: np.ndarray
    residual: float
    iterations: int


def grid_equations(case: NetworkCase) -> GridEquations:
    """Assemble the nodal matrix and reduce it onto the load buses."""
    ns, nl = case.n_sources, case.n_loads
    nb = ns + nl
    col = {s.bus: k for k, s in enumerate(case.sources)}
    col.update({l.bus: ns + j for j, l in enumerate(case.loads)})

    Y = np.zeros((nb, nb))
    line_from = np.empty(case.n_lines, dtype=int)
    line_to = np.empty(case.n_lines, dtype=int)
    g_line = np.empty(case.n_lines)
    for k, line in enumerate(case.lines):
        a, b, g = col[line.from_bus], col[line.to_bus], 1.0 / line.r_ohm
        Y[a, a] += g
        Y[b, b] += g
        Y[a, b] -= g
        Y[b, a] -= g
        line_from[k], line_to[k], g_line[k] = a, b, g

    g_source = np.array([1.0 / s.r_ohm for s in case.sources])
    Y[np.arange(ns), np.arange(ns)] += g_source
    g_shunt = np.array([1.0 / l.r_ohm for l in case.loads])
    Y[np.arange(ns, nb), np.arange(ns, nb)] += g_shunt

    Y_ss, Y_sl = Y[:ns, :ns], Y[:ns, ns:]
    Y_ls, Y_ll_raw = Y[ns:, :ns], Y[ns:, ns:]

    # Schur complement onto the load buses; the sign convention makes
    # Y_ll the injection matrix of p = diag(v)(Y_ll v + Y_ls vref).
    Y_ss_inv_sl = np.linalg.solve(Y_ss, Y_sl)
    Y_ll = -(Y_ll_raw - Y_ls @ Y_ss_inv_sl)
    Y_ls_red = -Y_ls @ np.linalg.solve(Y_ss, np.diag(g_source))

    K = np.linalg.inv(Y_ll)
    W = -K @ Y_ls_red
    return GridEquations(Y_ll=Y_ll, Y_ls=Y_ls_red, K=K, W=W,
                         Y_ss_full=Y_ss, Y_sl_full=Y_sl, g_source=g_source,
                         line_from=line_from, line_to=line_to, g_line=g_line)


def open_circuit(ge: GridEquations, vref: np.ndarray) -> np.ndarray:
    """Load voltages with every constant-power draw at zero."""
    w = ge.W @ np.asarray(vref, dtype=float)
    if np.any(w <= 0):
        raise PowerFlowError("open-circuit voltages must be positive")
    return w


def normalized_impedance(ge: GridEquations, w: np.ndarray) -> np.ndarray:
    """``Zt = diag(w)^{-1} Y_ll^{-1} diag(w)^{-1}`` (units 1/W)."""
    return ge.K / np.outer(w, w)


def pf_residual(ge: GridEquations, vref: np.ndarray, p: np.ndarray,
                v_load: np.ndarray) -> np.ndarray:
    """Power mismatch ``diag(v)(Y_ll v + Y_ls vref) - p`` in watts."""
    return v_load * (ge.Y_ll @ v_load + ge.Y_ls @ vref) - p


def _polish(ge: GridEquations, vref: np.ndarray, p: np.ndarray,
            v: np.ndarray, fn: float) -> tuple[np.ndarray, float]:
    """Drive an already-converged iterate toward the rounding floor with a
    few undamped Newton steps; keeps the best iterate, never fails."""
    for _ in range(4):
        if fn <= PF_POLISH_TARGET:
            break
        inj = ge.Y_ll @ v + ge.Y_ls @ vref
        try:
            step = np.linalg.solve(np.diag(inj) + v[:, None] * ge.Y_ll,
                                   -(v * inj - p))
        except np.linalg.LinAlgError:
            break
        v_new = v + step
        if np.any(v_new <= 0):
            break
        fn_new = float(np.max(np.abs(
            v_new * (ge.Y_ll @ v_new + ge.Y_ls @ vref) - p)))
        if fn_new >= fn:
            break
        v, fn = v_new, fn_new
    return v, fn


def solve_pf(ge: GridEquations, vref: np.ndarray, p: np.ndarray,
             v0: np.ndarray | None = None) -> PfSolution:
    """Damped Newton iteration for the high-voltage power-flow solution.

    Starts at the open-circuit voltages unless ``v0`` is given, halves the
    step until the residual norm decreases (at most PF_MAX_HALVINGS times)
    and keeps all voltages positive.

    Raises:
        PowerFlowError: iteration limit, failed line search or singular
            Newton matrix; the message carries the last residual norm.
    """
    vref = np.asarray(vref, dtype=float)
    p = np.asarray(p, dtype=float)
    v = open_circuit(ge, vref).copy() if v0 is None else np.asarray(v0, dtype=float).copy()
    if np.any(v <= 0):
        raise PowerFlowError("initial guess must have positive voltages")

    tol = PF_TOL * max(1.0, float(np.max(np.abs(p))) if p.size else 1.0)
    inj = ge.Y_ll @ v + ge.Y_ls @ vref
    F = v * inj - p
    fn = float(np.max(np.abs(F)))
    for it in range(PF_MAX_ITER):
        if fn <= tol:
            v, fn = _polish(ge, vref, p, v, fn)
            v_source, i_line = back_solve(ge, vref, v)
            return PfSolution(v_load=v, v_source=v_source, i_line=i_line,
                              residual=fn, iterations=it)
        J = np.diag(inj) + v[:, None] * ge.Y_ll
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular Newton matrix at iteration {it}") from exc
        alpha = 1.0
        for _ in range(PF_MAX_HALVINGS + 1):
            v_new = v + alpha * step
            if np.all(v_new > 0):
                inj_new = ge.Y_ll @ v_new + ge.Y_ls @ vref
                fn_new = float(np.max(np.abs(v_new * inj_new - p)))
                if fn_new < fn * (1.0 - 1e-4 * alpha) or fn_new <= tol:
                    break
            alpha *= 0.5
        else:
            raise PowerFlowError(f"line search failed at iteration {it}, "
                                 f"residual {fn:.3e} W")
        v, inj = v_new, inj_new
        F = v * inj - p
        fn = fn_new
    raise PowerFlowError(f"no convergence in {PF_MAX_ITER} iterations, "
                         f"residual {fn:.3e} W")


def back_solve(ge: GridEquations, vref: np.ndarray,
               v_load: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Recover source bus voltages and line currents from load voltages."""
    rhs = ge.g_source * vref - ge.Y_sl_full @ v_load
    v_source = np.linalg.solve(ge.Y_ss_full, rhs)
    v_bus = np.concatenate([v_source, v_load])
    i_line = ge.g_line * (v_bus[ge.line_from] - v_bus[ge.line_to])
    return v_source, i_line


def losses(ge: GridEquations, vref: np.ndarray, sol: PfSolution) -> float:
    """Total dissipated power: regulator injection minus power delivered
    to the constant-power draws (series, regulator and shunt losses)."""
    vref = np.asarray(vref, dtype=float)
    i_src = ge.g_source * (vref - sol.v_source)
    p_cpl = sol.v_load * (ge.Y_ll @ sol.v_load + ge.Y_ls @ vref)
    return float(vref @ i_src - np.sum(p_cpl))


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    line: float
    source: float
    shunt: float


def loss_breakdown(case: NetworkCase, ge: GridEquations, vref: np.ndarray,
                   sol: PfSolution) -> LossBreakdown:
    """Per-element dissipation audit; ``total`` equals :func:`losses`."""
    line = float(np.sum(sol.i_line**2 / ge.g_line))
    i_src = ge.g_source * (np.asarray(vref, dtype=float) - sol.v_source)
    source = float(np.sum(i_src**2 / ge.g_source))
    shunt = float(np.sum(sol.v_load**2 / np.array([l.r_ohm for l in case.loads])))
    return LossBreakdown(total=line + source + shunt, line=line,
                         source=source, shunt=shunt)
