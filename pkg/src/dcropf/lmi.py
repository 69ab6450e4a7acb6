"""Semidefinite feasibility kernel for common-Lyapunov problems.

Decides whether a matrix family admits a shared certificate ``P`` with

    P >= I   and   block_k(P, mults) <= -eps_margin * I   for all k,

where each block is affine in ``P`` and in optional scalar multipliers.
Families can be exponentially large (one block per sign vertex), so the
kernel solves semidefinite programs over a small active subset and grows
it lazily with the worst violators.  A family is only ever declared
feasible on the strength of an exact eigenvalue check of the returned
witness over the *entire* family; solver output is treated as a search
heuristic, never as a proof.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

_T_CAP = 100.0  # lower cap on the epigraph variable; blocks are scaled O(1)


@dataclass
class LmiOptions:
    """Tolerances of the feasibility kernel (scaled coordinates)."""

    eps_margin: float = 1e-7     # required eigenvalue margin at the witness
    eps_decide: float = 1e-3     # SDP value above -eps_decide means infeasible
    cond_cap: float = 1e5        # witness conditioning bound I <= P <= cap*I
    max_rounds: int = 6
    violators_per_round: int = 8
    ipm_state_cap: int = 25      # up to this block size, interior point leads
    ipm_max_iter: int = 200
    scs_max_iters: int = 5000
    scs_eps: float = 1e-6


@dataclass
class LmiResult:
    """Outcome of a feasibility run.

    ``status`` is ``"feasible"`` (witness verified exactly), ``"infeasible"``
    (the SDP could not push the worst block eigenvalue below the decision
    threshold even on a subset of the family) or ``"undecided"`` (solver
    gave out near the boundary; callers must treat this conservatively).
    """

    status: str
    P: np.ndarray | None = None
    mults: np.ndarray | None = None
    margin: float | None = None
    rounds: int = 0
    active: int = 0
    sdp_value: float | None = None


class VertexFamily:
    """Blocks ``P J_k + J_k^T P`` over all sign vertices of a diagonal
    interval perturbation ``J(theta) = A + sum_j theta_j e_{r_j} e_{r_j}^T``
    with ``theta_j`` in ``[lo_j, hi_j]``."""

    def __init__(self, A: np.ndarray, rows: np.ndarray, lo: np.ndarray,
                 hi: np.ndarray):
        self.A = A
        self.rows = np.asarray(rows, dtype=int)
        self.mid = (np.asarray(hi) + np.asarray(lo)) / 2.0
        self.half = (np.asarray(hi) - np.asarray(lo)) / 2.0
        m = self.rows.size
        if m > 24:
            raise ValueError("vertex family too large to enumerate")
        # All sign patterns, all-plus first and all-minus second so that
        # the initial active set covers the extreme corners.
        signs = ((np.arange(2**m)[:, None] >> np.arange(m)) & 1) * 2.0 - 1.0
        order = np.argsort(-signs.sum(axis=1), kind="stable")
        self.signs = signs[order]
        self.n = A.shape[0]
        self.n_mults = 0

    @property
    def count(self) -> int:
        return self.signs.shape[0]

    def initial_members(self) -> list[int]:
        return [0, self.count - 1] if self.count > 1 else [0]

    def vertex_matrix(self, k: int) -> np.ndarray:
        J = self.A.copy()
        theta = self.mid + self.signs[k] * self.half
        J[self.rows, self.rows] += theta
        return J

    def worst(self, P: np.ndarray, mults: np.ndarray | None,
              topk: int) -> tuple[np.ndarray, np.ndarray]:
        """Exact largest block eigenvalues over the whole family."""
        M = P @ self.A + self.A.T @ P
        # theta_j perturbs only entry (r_j, r_j) of J, so its block
        # contribution is the symmetric rank-two outer product below.
        R = np.zeros((self.rows.size, self.n, self.n))
        for j, r in enumerate(self.rows):
            R[j, :, r] += P[:, r]
            R[j, r, :] += P[:, r]
        M = M + np.einsum("j,jab->ab", self.mid, R)
        blocks = M[None, :, :] + np.einsum("kj,jab->kab",
                                           self.signs * self.half, R)
        lam = np.linalg.eigvalsh(blocks)[:, -1]
        idx = np.argsort(-lam)[:topk]
        return idx, lam[idx]

    def constraints(self, Pvar, multvars, members, tvar) -> list:
        cons = []
        eye = np.eye(self.n)
        for k in members:
            J = self.vertex_matrix(k)
            cons.append(Pvar @ J + J.T @ Pvar << tvar * eye)
        return cons


class ChannelFamily:
    """Single block coupling ``P`` with one scalar multiplier:

        [[P Ahat + Ahat^T P + lam Chat^T Chat,  P Bhat],
         [Bhat^T P,                            -lam I ]]

    Negative definiteness of this block certifies the whole interval
    family at once (small-gain form of the diagonal perturbation).
    """

    def __init__(self, Ahat: np.ndarray, Bhat: np.ndarray, Chat: np.ndarray):
        self.Ahat = Ahat
        self.Bhat = Bhat
        self.Chat = Chat
        self.CtC = Chat.T @ Chat
        self.n = Ahat.shape[0]
        self.m = Bhat.shape[1]
        self.n_mults = 1

    @property
    def count(self) -> int:
        return 1

    def initial_members(self) -> list[int]:
        return [0]

    def assemble(self, P: np.ndarray, lam: float) -> np.ndarray:
        top = P @ self.Ahat + self.Ahat.T @ P + lam * self.CtC
        off = P @ self.Bhat
        return np.block([[top, off], [off.T, -lam * np.eye(self.m)]])

    def worst(self, P: np.ndarray, mults: np.ndarray | None,
              topk: int) -> tuple[np.ndarray, np.ndarray]:
        lam = float(mults[0]) if mults is not None else 1.0
        val = float(np.linalg.eigvalsh(self.assemble(P, lam))[-1])
        return np.array([0]), np.array([val])

    def constraints(self, Pvar, multvars, members, tvar) -> list:
        lam = multvars[0]
        eye_n, eye_m = np.eye(self.n), np.eye(self.m)
        top = Pvar @ self.Ahat + self.Ahat.T @ Pvar + lam * self.CtC
        off = Pvar @ self.Bhat
        blk = cp.bmat([[top, off], [off.T, -lam * eye_m]])
        return [blk << tvar * np.eye(self.n + self.m), lam >= 0]


def _block_dim(family) -> int:
    return family.n + getattr(family, "m", 0)


def _normalized(P: np.ndarray,
                mults: np.ndarray | None) -> tuple[np.ndarray, np.ndarray | None, float]:
    """Scale a homogeneous witness so that min eig(P) is exactly one."""
    P = (P + P.T) / 2.0
    lam_min = float(np.linalg.eigvalsh(P)[0])
    if lam_min <= 0:
        return P, mults, lam_min
    return P / lam_min, (None if mults is None else mults / lam_min), lam_min


def _verify(family, P: np.ndarray, mults: np.ndarray | None,
            eps_margin: float) -> tuple[bool, float, np.ndarray, np.ndarray | None]:
    """Exact feasibility check of a (normalized) witness over the family."""
    P, mults, lam_min = _normalized(P, mults)
    if lam_min <= 0:
        return False, np.inf, P, mults
    if mults is not None and np.any(mults < 0):
        return False, np.inf, P, mults
    _, lam = family.worst(P, mults, 1)
    margin = float(lam[0])
    return margin <= -eps_margin, margin, P, mults


def lmi_feasible(family, candidates: list | None = None,
                 options: LmiOptions | None = None) -> LmiResult:
    """Decide common-certificate feasibility for a block family.

    ``candidates`` is an optional list of ``(P, mults)`` pairs tried by
    exact verification before any SDP is formed; a verified candidate
    short-circuits the solve.  Witnesses in the result are normalized to
    ``min eig(P) = 1``.
    """
    opt = options or LmiOptions()
    for P, mults in candidates or []:
        ok, margin, Pn, mn = _verify(family, P, mults, opt.eps_margin)
        if ok:
            return LmiResult(status="feasible", P=Pn, mults=mn, margin=margin)

    active = list(family.initial_members())
    n = family.n
    best_value = None
    for rnd in range(1, opt.max_rounds + 1):
        Pvar = cp.Variable((n, n), symmetric=True)
        multvars = [cp.Variable(nonneg=True) for _ in range(family.n_mults)]
        tvar = cp.Variable()
        # The blocks are homogeneous in P, so the search must be compact;
        # the conditioning cap keeps the solver off the unbounded ray.
        cons = [Pvar >> np.eye(n), Pvar << opt.cond_cap * np.eye(n),
                tvar >= -_T_CAP]
        cons += family.constraints(Pvar, multvars, active, tvar)
        prob = cp.Problem(cp.Minimize(tvar), cons)
        # Interior point is fast and accurate on small blocks but scales
        # poorly; larger problems go to the first-order solver, whose
        # output the exact verification below keeps honest.
        with warnings.catch_warnings():
            # Solver accuracy warnings are moot: every candidate below is
            # either verified exactly or discarded.
            warnings.filterwarnings("ignore", category=UserWarning,
                                    module="cvxpy")
            if _block_dim(family) <= opt.ipm_state_cap:
                try:
                    prob.solve(solver=cp.CLARABEL, max_iter=opt.ipm_max_iter)
                except (cp.error.SolverError, ValueError, ArithmeticError):
                    pass
            if Pvar.value is None or tvar.value is None:
                try:
                    prob.solve(solver=cp.SCS, max_iters=opt.scs_max_iters,
                               eps=opt.scs_eps)
                except cp.error.SolverError:
                    return LmiResult(status="undecided", rounds=rnd,
                                     active=len(active))
        if Pvar.value is None or tvar.value is None:
            return LmiResult(status="undecided", rounds=rnd, active=len(active))
        best_value = float(tvar.value)
        mults = (np.array([float(v.value) for v in multvars])
                 if multvars else None)

        ok, margin, Pn, mn = _verify(family, Pvar.value, mults, opt.eps_margin)
        if ok:
            return LmiResult(status="feasible", P=Pn, mults=mn, margin=margin,
                             rounds=rnd, active=len(active),
                             sdp_value=best_value)
        if best_value > -opt.eps_decide:
            # Even the relaxed subset problem cannot reach a negative
            # margin; the full family is infeasible at this tolerance.
            return LmiResult(status="infeasible", margin=margin, rounds=rnd,
                             active=len(active), sdp_value=best_value)
        idx, lam = family.worst(Pvar.value, mults, opt.violators_per_round)
        grew = False
        for i, l in zip(idx, lam):
            if l > -opt.eps_margin and int(i) not in active:
                active.append(int(i))
                grew = True
        if not grew:
            # Verification failed yet no new violator exists: the witness
            # is marginal beyond solver accuracy.
            return LmiResult(status="undecided", margin=margin, rounds=rnd,
                             active=len(active), sdp_value=best_value)
    return LmiResult(status="undecided", rounds=opt.max_rounds,
                     active=len(active), sdp_value=best_value)
