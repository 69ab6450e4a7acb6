"""Set-point optimization: nominal and robustly solvable operating points.

The nominal problem picks reference voltages minimizing cost subject to
power flow at the nominal loads and the operating voltage bounds.  The
robust problem additionally certifies, through one scalar inequality, that
the power-flow equations stay solvable for *every* load vector in the
interval box, with all load voltages trapped in an explicit band around
the nominal solution.  The certificate works in open-circuit-normalized
coordinates ``u = v / w``:

    u_min = min_j v*_j / w_j,
    a = || Zt p* ||_inf,           (nominal loading depth)
    b = || Zt (p* - p) ||_inf,     (deviation depth)
    gamma_s = (u_min - a / u_min)**2 - 4 b,
    r = ((u_min - a / u_min) - sqrt(gamma_s)) / 2,

where Zt is the load-network impedance normalized by the open-circuit
voltages.  When ``a < u_min**2`` and ``gamma_s > 0`` the deviated load has
a power-flow solution with ``|v_j - v*_j| <= r * w_j``.  Applying this at
the worst boxed deviation and keeping the band inside the voltage limits
(floors included) makes the whole uncertainty box feasible.

The robust optimization treats the two norms as epigraph variables with a
pair of inequalities per load bus, all smooth rational functions of the
reference voltages, and solves a smooth NLP with analytic first
derivatives.  After the solve the certificate quantities are recomputed
exactly at the optimizer and re-verified; the recomputed radius can only
shrink, so the reported solution is both tight and certified.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize as sopt

from .netcase import NetworkCase
from .powerflow import (GridEquations, grid_equations, loss_breakdown,
                        losses, open_circuit, solve_pf)
from .stabset import StabilitySet

KKT_TOL = 1e-6
FEAS_TOL = 1e-8
STRICT_MARGIN = 1e-6          # strictness enforced on the open certificate
POWER_SCALE = 1e4             # watt rows are scaled to O(1) for the solver
COST_SCALE = 1e4


class OpfError(RuntimeError):
    """Raised when no acceptable stationary point is found."""


class NlpError(RuntimeError):
    """Raised when the NLP kernel fails outright (not mere tolerance miss)."""


@dataclass
class NlpProblem:
    """Smooth NLP in standard form for the trust-region kernel."""

    fun: object
    jac: object
    x0: np.ndarray
    bounds: sopt.Bounds | None = None
    constraints: list = field(default_factory=list)
    maxiter: int = 3000


@dataclass(frozen=True)
class NlpResult:
    """Stationary-point candidate with KKT diagnostics."""

    x: np.ndarray
    fun: float
    multipliers: tuple
    kkt_residual: float
    constr_violation: float
    iterations: int
    message: str


def nlp_solve(problem: NlpProblem) -> NlpResult:
    """Find a KKT point of a smooth NLP with analytic first derivatives.

    Strategy: a sequential-quadratic pass first (it finishes fast from the
    structured starts the callers build and lands exactly on active
    bounds), a trust-region pass plus re-polish when that stalls.  Every
    candidate is scored by the *recomputed* KKT residual of the original
    problem, never by a solver's internal barrier measure; the best
    (feasibility first, then stationarity) is returned.  Tolerance
    enforcement is the caller's job; this raises only on hard failures.

    Raises:
        NlpError: every pass aborted or produced non-finite iterates.
    """
    rows = _constraint_rows(problem)
    candidates: list[tuple[np.ndarray, int]] = []
    err: Exception | None = None
    try:
        x, nit = _slsqp_pass(problem, problem.x0, rows)
        candidates.append((x, nit))
    except Exception as exc:
        err = exc
    if not candidates or _score(problem, rows, candidates[0][0]) > \
            (FEAS_TOL, KKT_TOL):
        try:
            x, nit = _trust_pass(problem)
            candidates.append((x, nit))
            x2, nit2 = _slsqp_pass(problem, x, rows)
            candidates.append((x2, nit + nit2))
        except Exception as exc:
            err = err or exc
    if not candidates:
        raise NlpError(f"solver aborted: {err}") from err

    best_x, best_nit = min(candidates,
                           key=lambda c: _score(problem, rows, c[0]))
    kkt, viol, mults = _kkt_residual(problem, rows, best_x)
    return NlpResult(x=best_x, fun=float(problem.fun(best_x)),
                     multipliers=tuple(mults),
                     kkt_residual=kkt, constr_violation=viol,
                     iterations=best_nit, message="stationary-point search")


def _score(problem: NlpProblem, rows: list, x: np.ndarray) -> tuple:
    kkt, viol, _ = _kkt_residual(problem, rows, x)
    return (max(viol, FEAS_TOL), kkt)


def _constraint_rows(problem: NlpProblem) -> list:
    """Normalize the constraint set to (fun, jac, lb, ub) row blocks."""
    rows = []
    for con in problem.constraints:
        if isinstance(con, sopt.LinearConstraint):
            A = np.atleast_2d(np.asarray(con.A, dtype=float))
            fun = (lambda z, A=A: A @ z)
            jac = (lambda z, A=A: A)
            m = A.shape[0]
        else:
            fun, jac = con.fun, con.jac
            m = np.atleast_1d(np.asarray(fun(problem.x0))).size
        lb = np.broadcast_to(np.asarray(con.lb, dtype=float), (m,))
        ub = np.broadcast_to(np.asarray(con.ub, dtype=float), (m,))
        rows.append((fun, jac, lb, ub))
    return rows


def _slsqp_pass(problem: NlpProblem, x0: np.ndarray,
                rows: list) -> tuple[np.ndarray, int]:
    cons = []
    for fun, jac, lb, ub in rows:
        eq = np.isfinite(lb) & (lb == ub)
        lo = np.isfinite(lb) & ~eq
        hi = np.isfinite(ub) & ~eq
        if np.any(eq):
            cons.append({
                "type": "eq",
                "fun": (lambda z, f=fun, m=eq, t=lb:
                        (np.atleast_1d(f(z)) - t)[m]),
                "jac": (lambda z, j=jac, m=eq: np.atleast_2d(j(z))[m]),
            })
        if np.any(lo):
            cons.append({
                "type": "ineq",
                "fun": (lambda z, f=fun, m=lo, t=lb:
                        (np.atleast_1d(f(z)) - t)[m]),
                "jac": (lambda z, j=jac, m=lo: np.atleast_2d(j(z))[m]),
            })
        if np.any(hi):
            cons.append({
                "type": "ineq",
                "fun": (lambda z, f=fun, m=hi, t=ub:
                        (t - np.atleast_1d(f(z)))[m]),
                "jac": (lambda z, j=jac, m=hi: -np.atleast_2d(j(z))[m]),
            })
    with warnings.catch_warnings():
        # Trial steps may poke outside the box before the line search
        # clips them; the accepted iterate is always feasible.
        warnings.filterwarnings("ignore",
                                message="Values in x were outside bounds")
        res = sopt.minimize(problem.fun, x0, jac=problem.jac, method="SLSQP",
                            bounds=problem.bounds, constraints=cons,
                            options={"maxiter": 400, "ftol": 1e-14})
    if not np.all(np.isfinite(res.x)):
        raise NlpError("sequential pass returned non-finite iterate")
    return np.asarray(res.x, dtype=float), int(res.nit)


def _trust_pass(problem: NlpProblem) -> tuple[np.ndarray, int]:
    with warnings.catch_warnings():
        # Quasi-Newton curvature updates degenerate harmlessly on the
        # linear rows of these problems; the step is still accepted.
        warnings.filterwarnings("ignore", message="delta_grad == 0.0")
        # Near-degenerate active sets fall back to SVD factorization;
        # the step quality is unaffected.
        warnings.filterwarnings("ignore", message="Singular Jacobian matrix")
        res = sopt.minimize(
            problem.fun, problem.x0, jac=problem.jac,
            method="trust-constr", constraints=problem.constraints,
            bounds=problem.bounds,
            options={"gtol": 1e-8, "xtol": 1e-12,
                     "maxiter": problem.maxiter, "verbose": 0})
    if not np.all(np.isfinite(res.x)):
        raise NlpError("trust-region pass returned non-finite iterate")
    return np.asarray(res.x, dtype=float), int(res.niter)


# A constraint or bound within this distance of its limit (relative to the
# row magnitude) counts as active when fitting KKT multipliers.
ACTIVE_TOL = 1e-7


def _kkt_residual(problem: NlpProblem, rows: list,
                  x: np.ndarray) -> tuple[float, float, np.ndarray]:
    """First-order optimality of the original problem at ``x``.

    Fits multipliers (sign-constrained for inequalities and bounds) to the
    objective gradient by bounded least squares over the active rows and
    returns (stationarity_inf, violation_inf, multipliers).
    """
    g = np.asarray(problem.jac(x), dtype=float)
    n = x.size
    viol = 0.0
    cols, mlo = [], []

    for fun, jac, lb, ub in rows:
        val = np.atleast_1d(np.asarray(fun(x), dtype=float))
        J = np.atleast_2d(np.asarray(jac(x), dtype=float))
        scale = 1.0 + np.abs(val)
        viol = max(viol,
                   float(np.max(np.maximum(lb - val, 0.0), initial=0.0)),
                   float(np.max(np.maximum(val - ub, 0.0), initial=0.0)))
        for k in range(val.size):
            if np.isfinite(lb[k]) and lb[k] == ub[k]:
                cols.append(J[k])
                mlo.append(-np.inf)
            elif np.isfinite(lb[k]) and val[k] - lb[k] <= ACTIVE_TOL * scale[k]:
                cols.append(J[k])
                mlo.append(0.0)
            elif np.isfinite(ub[k]) and ub[k] - val[k] <= ACTIVE_TOL * scale[k]:
                cols.append(-J[k])
                mlo.append(0.0)

    if problem.bounds is not None:
        blo = np.broadcast_to(np.asarray(problem.bounds.lb, dtype=float), (n,))
        bhi = np.broadcast_to(np.asarray(problem.bounds.ub, dtype=float), (n,))
        viol = max(viol,
                   float(np.max(np.maximum(blo - x, 0.0), initial=0.0)),
                   float(np.max(np.maximum(x - bhi, 0.0), initial=0.0)))
        scale = 1.0 + np.abs(x)
        for k in range(n):
            if np.isfinite(blo[k]) and x[k] - blo[k] <= ACTIVE_TOL * scale[k]:
                e = np.zeros(n)
                e[k] = 1.0
                cols.append(e)
                mlo.append(0.0)
            elif np.isfinite(bhi[k]) and bhi[k] - x[k] <= ACTIVE_TOL * scale[k]:
                e = np.zeros(n)
                e[k] = -1.0
                cols.append(e)
                mlo.append(0.0)

    if not cols:
        return float(np.max(np.abs(g))), viol, np.zeros(0)
    M = np.stack(cols, axis=1)
    fit = sopt.lsq_linear(M, g, bounds=(np.array(mlo), np.inf))
    stat = float(np.max(np.abs(g - M @ fit.x)))
    return stat, viol, fit.x


@dataclass(frozen=True)
class SolvabilityCertificate:
    """Verified solvability inequality at a set point for one deviation.

    ``holds`` requires the loading precondition ``a < u_min**2`` and a
    strictly positive discriminant ``gamma_s``; then the deviated load has
    a power-flow solution within ``radius_r * w`` of ``v_star``.
    """

    u_min: float
    a: float
    b: float
    gamma_s: float
    radius_r: float
    holds: bool
    w: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray


@dataclass(frozen=True)
class OpfSolution:
    """Nominal set points with power-flow state and solver diagnostics."""

    vref: np.ndarray
    v_star: np.ndarray
    v_source: np.ndarray
    i_line: np.ndarray
    objective: float
    loss_total_w: float
    loss_series_w: float
    kkt_residual: float
    constr_violation: float
    iterations: int


@dataclass(frozen=True)
class RobustOpfSolution:
    """Robust set points with the exactly recomputed certificate.

    ``aux`` holds the certificate chain (a, b, c, d) re-evaluated at the
    optimizer, so ``r_bar`` satisfies the closed-form radius to machine
    precision and the epigraph bounds are tight.
    """

    vref: np.ndarray
    v_star: np.ndarray
    v_source: np.ndarray
    i_line: np.ndarray
    u_min: float
    r_bar: float
    band_lo: np.ndarray
    band_hi: np.ndarray
    aux: dict
    objective: float
    loss_total_w: float
    loss_series_w: float
    kkt_residual: float
    constr_violation: float
    iterations: int
    certificate: SolvabilityCertificate
    p_worst: np.ndarray
    v_floor: np.ndarray


def worst_case_load(case: NetworkCase, mode: str = "endpoint",
                    Zt: np.ndarray | None = None) -> np.ndarray:
    """Boxed load maximizing the deviation driving the certificate.

    ``endpoint`` maximizes the L1 distance from the nominal load, which is
    separable: each entry goes to its farther interval endpoint, ties to
    the upper one (heavier loading).  ``exact`` maximizes the certificate
    norm ``||Zt (p* - p)||_inf`` itself over the box (row-wise separable)
    and returns a corner attaining it; requires ``Zt``.
    """
    p_nom, p_lo, p_hi = case.p_nom(), case.p_min(), case.p_max()
    if mode == "endpoint":
        return np.where(p_hi - p_nom >= p_nom - p_lo, p_hi, p_lo)
    if mode == "exact":
        if Zt is None:
            raise ValueError("exact mode needs the normalized impedance")
        up, dn = np.abs(p_hi - p_nom), np.abs(p_nom - p_lo)
        row_max = np.abs(Zt) @ np.maximum(up, dn)
        j = int(np.argmax(row_max))
        take_hi = np.abs(Zt[j]) * up >= np.abs(Zt[j]) * dn
        return np.where(take_hi, p_hi, p_lo)
    raise ValueError(f"unknown worst-case mode {mode!r}")


def certify_solvability(ge: GridEquations, vref: np.ndarray,
                        p_star: np.ndarray, p: np.ndarray,
                        v_star: np.ndarray | None = None,
                        ) -> SolvabilityCertificate:
    """Evaluate the solvability inequality for one deviated load ``p``.

    The nominal operating point is recomputed from ``(vref, p_star)``
    unless ``v_star`` is supplied; power-flow failures propagate.
    """
    if v_star is None:
        v_star = solve_pf(ge, vref, p_star).v_load
    w = open_circuit(ge, vref)
    u_min = float(np.min(v_star / w))
    Zt = ge.K / np.outer(w, w)
    a = float(np.max(np.abs(Zt @ p_star)))
    b = float(np.max(np.abs(Zt @ (p_star - p))))
    pre = u_min > 0 and a < u_min**2
    gamma_s = (u_min - a / u_min)**2 - 4.0 * b if u_min > 0 else -np.inf
    holds = bool(pre and gamma_s > 0)
    if holds:
        radius_r = ((u_min - a / u_min) - np.sqrt(gamma_s)) / 2.0
        band_lo, band_hi = v_star - radius_r * w, v_star + radius_r * w
    else:
        radius_r = np.inf
        band_lo = np.full_like(w, -np.inf)
        band_hi = np.full_like(w, np.inf)
    return SolvabilityCertificate(u_min=u_min, a=a, b=b,
                                  gamma_s=float(gamma_s),
                                  radius_r=float(radius_r), holds=holds,
                                  w=w, band_lo=band_lo, band_hi=band_hi)


def _loss_matrices(ge: GridEquations) -> tuple[np.ndarray, np.ndarray]:
    """Total losses as a quadratic ``vref^T G1 vref + vref^T G2 v - sum(p)``."""
    S1 = np.linalg.solve(ge.Y_ss_full, np.diag(ge.g_source))
    S2 = -np.linalg.solve(ge.Y_ss_full, ge.Y_sl_full)
    G1 = np.diag(ge.g_source) @ (np.eye(len(ge.g_source)) - S1)
    G2 = -np.diag(ge.g_source) @ S2
    return G1, G2


def _objective(case: NetworkCase, ge: GridEquations):
    """Scaled objective callables (value, gradient pair) for the case cost."""
    ns = case.n_sources
    if case.cost.kind == "quadratic":
        q = np.asarray(case.cost.q_diag, dtype=float)
        lin = (np.asarray(case.cost.linear, dtype=float)
               if case.cost.linear is not None else np.zeros(ns))

        def f(vref, v):
            return float(q @ vref**2 + lin @ vref
                         + case.cost.constant) / COST_SCALE

        def grad(vref, v):
            return (2 * q * vref + lin) / COST_SCALE, np.zeros(len(v))

        return f, grad

    G1, G2 = _loss_matrices(ge)
    p_tot = float(np.sum(case.p_nom()))

    def f(vref, v):
        return (vref @ (G1 @ vref) + vref @ (G2 @ v) - p_tot) / COST_SCALE

    def grad(vref, v):
        return (((G1 + G1.T) @ vref + G2 @ v) / COST_SCALE,
                (G2.T @ vref) / COST_SCALE)

    return f, grad


def _initial_voltages(ge: GridEquations, vref: np.ndarray,
                      p: np.ndarray) -> np.ndarray:
    try:
        return solve_pf(ge, vref, p).v_load
    except Exception:
        return open_circuit(ge, vref) * 0.97


def _nominal_starts(case: NetworkCase, v_lo: np.ndarray) -> list[np.ndarray]:
    base = float(np.max(v_lo))
    starts = [np.clip(np.full(case.n_sources, base * fac),
                      case.vref_min(), case.vref_max())
              for fac in (1.06, 1.10, 1.02)]
    starts.append((case.vref_min() + case.vref_max()) / 2.0)
    return starts


def _pf_constraint(ge: GridEquations, ns: int, nl: int, p_nom: np.ndarray,
                   width: int):
    """Scaled nominal power-balance rows over z = [vref, v*, ...]."""

    def con(z):
        vref, v = z[:ns], z[ns:ns + nl]
        return (v * (ge.Y_ll @ v + ge.Y_ls @ vref) - p_nom) / POWER_SCALE

    def jac(z):
        vref, v = z[:ns], z[ns:ns + nl]
        inj = ge.Y_ll @ v + ge.Y_ls @ vref
        J = np.zeros((nl, width))
        J[:, :ns] = v[:, None] * ge.Y_ls / POWER_SCALE
        J[:, ns:ns + nl] = (np.diag(inj) + v[:, None] * ge.Y_ll) / POWER_SCALE
        return J

    return con, jac


def solve_nominal_opf(case: NetworkCase,
                      ge: GridEquations | None = None) -> OpfSolution:
    """Cost-minimizing set points with power flow pinned at nominal loads.

    Raises:
        OpfError: no start converges to a point satisfying the KKT and
            feasibility tolerances.
    """
    ge = grid_equations(case) if ge is None else ge
    ns, nl = case.n_sources, case.n_loads
    p_nom = case.p_nom()
    v_lo, v_hi = case.v_min(), case.v_max()
    f, fgrad = _objective(case, ge)

    def fun(z):
        return f(z[:ns], z[ns:])

    def jac(z):
        gr, gv = fgrad(z[:ns], z[ns:])
        return np.concatenate([gr, gv])

    con, cjac = _pf_constraint(ge, ns, nl, p_nom, ns + nl)
    constraints = [sopt.NonlinearConstraint(con, 0.0, 0.0, jac=cjac)]
    bounds = sopt.Bounds(np.concatenate([case.vref_min(), v_lo]),
                         np.concatenate([case.vref_max(), v_hi]))

    best = None
    for vref0 in _nominal_starts(case, v_lo):
        v0 = np.clip(_initial_voltages(ge, vref0, p_nom), v_lo, v_hi)
        try:
            res = nlp_solve(NlpProblem(fun=fun, jac=jac,
                                       x0=np.concatenate([vref0, v0]),
                                       bounds=bounds,
                                       constraints=constraints))
        except NlpError:
            continue
        key = (res.kkt_residual, res.constr_violation)
        if best is None or key < (best.kkt_residual, best.constr_violation):
            best = res
        if res.kkt_residual <= KKT_TOL and res.constr_violation <= FEAS_TOL:
            best = res
            break
    if best is None:
        raise OpfError("nominal set-point search failed on every start")
    if best.kkt_residual > KKT_TOL or best.constr_violation > FEAS_TOL:
        raise OpfError(
            f"nominal set-point search stalled: KKT {best.kkt_residual:.2e},"
            f" violation {best.constr_violation:.2e}")
    vref, v = best.x[:ns], best.x[ns:]
    sol = solve_pf(ge, vref, p_nom, v0=v)
    br = loss_breakdown(case, ge, vref, sol)
    return OpfSolution(vref=vref, v_star=sol.v_load, v_source=sol.v_source,
                       i_line=sol.i_line,
                       objective=float(best.fun * COST_SCALE),
                       loss_total_w=losses(ge, vref, sol),
                       loss_series_w=br.line + br.source,
                       kkt_residual=best.kkt_residual,
                       constr_violation=best.constr_violation,
                       iterations=best.iterations)


def solve_robust_opf(case: NetworkCase, stab: StabilitySet | None = None,
                     ge: GridEquations | None = None,
                     worst_mode: str = "endpoint",
                     nominal: OpfSolution | None = None) -> RobustOpfSolution:
    """Set points whose whole load box is certified solvable and in band.

    ``stab`` supplies certified stability floors that tighten the lower
    voltage limits; without it only the operating bounds are enforced.
    The returned solution carries the certificate chain recomputed exactly
    at the optimizer (never the raw solver variables), so the radius
    identity and the epigraph norms hold to machine precision.

    Raises:
        OpfError: no start reaches tolerance, the floors leave no band, or
            the recomputed certificate fails at the optimizer.
    """
    ge = grid_equations(case) if ge is None else ge
    ns, nl = case.n_sources, case.n_loads
    p_nom = case.p_nom()
    v_lo = case.v_min().copy()
    if stab is not None:
        v_lo = np.maximum(v_lo, stab.v_floor)
    v_hi = case.v_max()
    if np.any(v_lo >= v_hi):
        raise OpfError("stability floor leaves no admissible voltage band")

    f, fgrad = _objective(case, ge)
    W, K = ge.W, ge.K

    # Variable layout: [vref, v*, umin, a, b, c, d, rbar]
    iu = ns + nl
    ia, ib, ic, idd, ir = iu + 1, iu + 2, iu + 3, iu + 4, iu + 5
    nz = ns + nl + 6

    # The worst-case corner is fixed up front (for the exact mode, using
    # the impedance at a representative start); the certificate is
    # recomputed with the final voltages after the solve.
    if worst_mode == "exact":
        vref_probe = np.clip(np.full(ns, float(np.max(v_lo)) * 1.06),
                             case.vref_min(), case.vref_max())
        w_probe = open_circuit(ge, vref_probe)
        p_m = worst_case_load(case, mode="exact",
                              Zt=K / np.outer(w_probe, w_probe))
    else:
        p_m = worst_case_load(case, mode=worst_mode)
    q1, q2 = p_nom, p_nom - p_m

    def s_and_grad(w, q):
        s = (K @ (q / w)) / w
        grad = -(s / w)[:, None] * W \
            - ((K * (q / w**2)[None, :]) @ W) / w[:, None]
        return s, grad

    def fun(z):
        return f(z[:ns], z[ns:iu])

    def jac(z):
        gr, gv = fgrad(z[:ns], z[ns:iu])
        out = np.zeros(nz)
        out[:ns], out[ns:iu] = gr, gv
        return out

    pf_con, pf_jac = _pf_constraint(ge, ns, nl, p_nom, nz)

    def eq_con(z):
        umin, a, b, c, d, r = z[iu], z[ia], z[ib], z[ic], z[idd], z[ir]
        return np.concatenate([pf_con(z),
                               [d * umin - a,
                                c**2 - (umin - d)**2 + 4.0 * b,
                                2.0 * r - (umin - d) + c]])

    def eq_jac(z):
        umin, c, d = z[iu], z[ic], z[idd]
        J = np.zeros((nl + 3, nz))
        J[:nl] = pf_jac(z)
        J[nl, [iu, ia, idd]] = [d, -1.0, umin]
        J[nl + 1, [iu, ib, ic, idd]] = [-2.0 * (umin - d), 4.0, 2.0 * c,
                                        2.0 * (umin - d)]
        J[nl + 2, [iu, ic, idd, ir]] = [-1.0, 1.0, 1.0, 2.0]
        return J

    def ineq_con(z):
        vref, v = z[:ns], z[ns:iu]
        umin, a, b, c, d, r = z[iu], z[ia], z[ib], z[ic], z[idd], z[ir]
        w = W @ vref
        s1, _ = s_and_grad(w, q1)
        s2, _ = s_and_grad(w, q2)
        return np.concatenate([
            a - s1, a + s1, b - s2, b + s2,
            v - umin * w,
            v - r * w - v_lo,
            v_hi - v - r * w,
            [umin - d - STRICT_MARGIN, c - STRICT_MARGIN],
        ])

    def ineq_jac(z):
        vref, v = z[:ns], z[ns:iu]
        umin, r = z[iu], z[ir]
        w = W @ vref
        _, g1 = s_and_grad(w, q1)
        _, g2 = s_and_grad(w, q2)
        J = np.zeros((7 * nl + 2, nz))
        for k, (sgn, g, col) in enumerate([(-1.0, g1, ia), (1.0, g1, ia),
                                           (-1.0, g2, ib), (1.0, g2, ib)]):
            J[k * nl:(k + 1) * nl, :ns] = sgn * g
            J[k * nl:(k + 1) * nl, col] = 1.0
        r0 = 4 * nl
        J[r0:r0 + nl, :ns] = -umin * W
        J[r0:r0 + nl, ns:iu] = np.eye(nl)
        J[r0:r0 + nl, iu] = -w
        r0 += nl
        J[r0:r0 + nl, :ns] = -r * W
        J[r0:r0 + nl, ns:iu] = np.eye(nl)
        J[r0:r0 + nl, ir] = -w
        r0 += nl
        J[r0:r0 + nl, :ns] = -r * W
        J[r0:r0 + nl, ns:iu] = -np.eye(nl)
        J[r0:r0 + nl, ir] = -w
        r0 += nl
        J[r0, [iu, idd]] = [1.0, -1.0]
        J[r0 + 1, ic] = 1.0
        return J

    constraints = [
        sopt.NonlinearConstraint(eq_con, 0.0, 0.0, jac=eq_jac),
        sopt.NonlinearConstraint(ineq_con, 0.0, np.inf, jac=ineq_jac),
    ]
    lo = np.concatenate([case.vref_min(), v_lo,
                         [0.1, 0.0, 0.0, STRICT_MARGIN, 0.0, 0.0]])
    hi = np.concatenate([case.vref_max(), v_hi,
                         [2.0, 1.0, 1.0, 2.0, 2.0, 1.0]])
    bounds = sopt.Bounds(lo, hi)

    def initial(vref0):
        v0 = np.clip(_initial_voltages(ge, vref0, p_nom), v_lo, v_hi)
        w = open_circuit(ge, vref0)
        umin0 = max(0.1, float(np.min(v0 / w)) * 0.999)
        Zt = K / np.outer(w, w)
        a0 = float(np.max(np.abs(Zt @ q1))) * 1.01 + 1e-9
        b0 = float(np.max(np.abs(Zt @ q2))) * 1.01 + 1e-9
        d0 = a0 / umin0
        g0 = max((umin0 - d0)**2 - 4.0 * b0, 1e-8)
        c0 = float(np.sqrt(g0))
        r0 = max(((umin0 - d0) - c0) / 2.0, 1e-7)
        return np.concatenate([vref0, v0, [umin0, a0, b0, c0, d0, r0]])

    starts = []
    nom = nominal
    if nom is None:
        try:
            nom = solve_nominal_opf(case, ge=ge)
        except OpfError:
            nom = None
    if nom is not None:
        starts.append(np.clip(nom.vref * 1.10, case.vref_min(),
                              case.vref_max()))
        starts.append(np.clip(nom.vref * 1.20, case.vref_min(),
                              case.vref_max()))
    starts.extend(_nominal_starts(case, v_lo))

    best = None
    for vref0 in starts:
        try:
            res = nlp_solve(NlpProblem(fun=fun, jac=jac, x0=initial(vref0),
                                       bounds=bounds,
                                       constraints=constraints))
        except NlpError:
            continue
        key = (res.kkt_residual, res.constr_violation)
        if best is None or key < (best.kkt_residual, best.constr_violation):
            best = res
        if res.kkt_residual <= KKT_TOL and res.constr_violation <= FEAS_TOL:
            best = res
            break
    if best is None:
        raise OpfError("robust set-point search failed on every start")
    if best.constr_violation > FEAS_TOL:
        raise OpfError(
            "robust problem infeasible at every stationary point found "
            f"(residual {best.constr_violation:.2e}); the uncertainty box "
            "may exceed what the network can certify")
    if best.kkt_residual > KKT_TOL:
        raise OpfError(f"robust set-point search stalled: "
                       f"KKT {best.kkt_residual:.2e}")

    vref, v_star = best.x[:ns], best.x[ns:iu]
    sol = solve_pf(ge, vref, p_nom, v0=v_star)
    cert = certify_solvability(ge, vref, p_nom, p_m, v_star=sol.v_load)
    if not cert.holds:
        raise OpfError("certificate failed at the optimizer")
    # The exactly recomputed radius never exceeds the epigraph one, so the
    # certified band must still respect the voltage limits.
    if np.any(cert.band_lo < v_lo - 1e-6) \
            or np.any(cert.band_hi > v_hi + 1e-6):
        raise OpfError("certified band escapes the voltage limits")

    d = cert.a / cert.u_min
    aux = {"a": cert.a, "b": cert.b,
           "c": float(np.sqrt(cert.gamma_s)), "d": d}
    br = loss_breakdown(case, ge, vref, sol)
    return RobustOpfSolution(
        vref=vref, v_star=sol.v_load, v_source=sol.v_source,
        i_line=sol.i_line, u_min=cert.u_min, r_bar=cert.radius_r,
        band_lo=cert.band_lo, band_hi=cert.band_hi, aux=aux,
        objective=float(best.fun * COST_SCALE),
        loss_total_w=losses(ge, vref, sol),
        loss_series_w=br.line + br.source,
        kkt_residual=best.kkt_residual,
        constr_violation=best.constr_violation,
        iterations=best.iterations, certificate=cert, p_worst=p_m,
        v_floor=v_lo)
