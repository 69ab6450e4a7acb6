"""Robust stability certificates over interval load sensitivities.

The Jacobian family ``A + D diag(delta)`` with ``delta`` in a box is
certified Hurwitz by a common Lyapunov matrix ``P``.  Three tests are
offered, all sound, increasingly scalable and increasingly conservative:

* ``vertex_lmi_test``: one matrix inequality per box vertex (exact up to
  the shared-witness restriction; needs ``n_loads <= VERTEX_CAP``),
* ``single_lmi_test``: a single small-gain inequality covering the whole
  box through one scalar multiplier,
* the stored-energy certificate: a weighted diagonal ``P`` that works in
  closed form because the energy-weighted symmetric part of ``A`` is
  diagonal; it certifies any sensitivity below the inverse shunt
  resistance.

``gevp_max_scaling`` shrinks a symmetric sensitivity box ``[-d0, d0] / beta``
to the smallest certified scaling ``beta`` (largest decay ratio
``alpha = 1/beta``) by bisection over verified feasibility tests, and
``robust_stability_set`` turns the result into per-load voltage floors:
holding every load voltage above its floor keeps the operating point
inside the certified box for any load power below its cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lmi
from .netcase import NetworkCase
from .statespace import StateSpaceModel, assemble, spectral_abscissa, DeltaBox

VERTEX_CAP = 12          # largest load count enumerated exactly
SINGLE_STATE_CAP = 100   # largest state count given to the one-block test
GEVP_REL_TOL = 1e-3


class StabilityError(RuntimeError):
    """Raised when no stability certificate can be produced."""


class VertexCapError(ValueError):
    """Raised when the vertex test would enumerate too many corners."""


class LmiNoDecision(RuntimeError):
    """Raised when the semidefinite solver cannot separate the two sides."""


@dataclass(frozen=True)
class LyapunovWitness:
    """Common Lyapunov certificate in physical state coordinates.

    ``P`` satisfies ``min eig(P) = 1`` and ``P J + J^T P <= margin * I``
    for every Jacobian ``J`` in the certified family (``margin < 0``).
    For the one-block test the margin is evaluated on the box corners
    when they are enumerable, otherwise on fixed sampled corners.
    """

    P: np.ndarray
    margin: float
    method: str
    mults: np.ndarray | None = None


@dataclass(frozen=True)
class GevpResult:
    """Smallest certified box scaling found by bisection."""

    beta: float
    witness: LyapunovWitness
    beta_lo: float
    beta_hi: float
    trials: int
    undecided: int
    method: str

    @property
    def alpha(self) -> float:
        return 1.0 / self.beta


@dataclass(frozen=True)
class StabilitySet:
    """Voltage floors certifying local exponential stability.

    Any equilibrium whose load voltages all sit above ``v_floor`` has a
    Jacobian inside the certified sensitivity box as long as each load
    power stays at or below its cap, so it is locally exponentially
    stable with the common witness ``P``.
    """

    beta: float
    delta0: np.ndarray
    v_floor: np.ndarray
    witness: LyapunovWitness
    method: str
    beta_lo: float
    beta_hi: float
    trials: int

    @property
    def alpha(self) -> float:
        return 1.0 / self.beta


@dataclass
class GevpOptions:
    rel_tol: float = GEVP_REL_TOL
    max_trials: int = 60
    lmi: lmi.LmiOptions = field(default_factory=lmi.LmiOptions)


def _energy_scaling(model: StateSpaceModel) -> tuple[np.ndarray, np.ndarray, float]:
    """Similarity transform to stored-energy coordinates plus magnitude
    normalization; returns (T, A_scaled, s) with A_scaled = T A T^-1 / s."""
    T = np.sqrt(model.energy_diag)
    A_sc = (T[:, None] * model.A) / T[None, :]
    s = float(np.linalg.norm(A_sc, 2))
    return T, A_sc / s, s


def _scaled_vertex_family(model: StateSpaceModel,
                          box: DeltaBox) -> tuple[lmi.VertexFamily, np.ndarray, float]:
    T, A_sc, s = _energy_scaling(model)
    lo = box.lo / model.c_load / s
    hi = box.hi / model.c_load / s
    return lmi.VertexFamily(A_sc, model.load_rows, lo, hi), T, s


def _physical_witness(model: StateSpaceModel, box: DeltaBox, T: np.ndarray,
                      P_scaled: np.ndarray, method: str,
                      mults: np.ndarray | None = None,
                      corner_samples: int = 256) -> LyapunovWitness:
    """Map a scaled-coordinate witness back and recompute its margin
    exactly on the physical Jacobian family."""
    P = T[:, None] * P_scaled * T[None, :]
    P = (P + P.T) / 2.0
    P /= np.linalg.eigvalsh(P)[0]
    phys = lmi.VertexFamily(model.A, model.load_rows,
                            box.lo / model.c_load, box.hi / model.c_load) \
        if model.n_loads <= 24 else None
    if phys is not None:
        _, lam = phys.worst(P, None, 1)
        margin = float(lam[0])
    else:
        rng = np.random.default_rng(0)
        signs = rng.choice([-1.0, 1.0], size=(corner_samples, model.n_loads))
        signs[0], signs[1] = 1.0, -1.0
        mid = (box.lo + box.hi) / 2.0 / model.c_load
        half = (box.hi - box.lo) / 2.0 / model.c_load
        margin = -np.inf
        M = P @ model.A + model.A.T @ P
        for sg in signs:
            theta = mid + sg * half
            B = M.copy()
            for j, r in enumerate(model.load_rows):
                B[:, r] += theta[j] * P[:, r]
                B[r, :] += theta[j] * P[:, r]
            margin = max(margin, float(np.linalg.eigvalsh(B)[-1]))
    if margin >= 0:
        raise LmiNoDecision("witness lost its margin in physical coordinates")
    return LyapunovWitness(P=P, margin=margin, method=method, mults=mults)


def vertex_lmi_test(model: StateSpaceModel, box: DeltaBox,
                    options: lmi.LmiOptions | None = None
                    ) -> tuple[bool, LyapunovWitness | None]:
    """Common-Lyapunov test with one inequality per sensitivity-box vertex.

    Raises:
        VertexCapError: more than VERTEX_CAP loads; use single_lmi_test.
        LmiNoDecision: the solver could not certify either answer.
    """
    if model.n_loads > VERTEX_CAP:
        raise VertexCapError(f"{model.n_loads} loads exceed the vertex cap "
                             f"{VERTEX_CAP}; use single_lmi_test")
    fam, T, _ = _scaled_vertex_family(model, box)
    res = lmi.lmi_feasible(fam, candidates=[(np.eye(model.n), None)],
                           options=options)
    if res.status == "feasible":
        return True, _physical_witness(model, box, T, res.P, "vertex")
    if res.status == "infeasible":
        return False, None
    raise LmiNoDecision("vertex test undecided at this tolerance")


def _channel_family(model: StateSpaceModel,
                    box: DeltaBox) -> tuple[lmi.ChannelFamily, np.ndarray]:
    """Scaled one-block family covering the box through a unit-gain channel."""
    T, A_sc, s = _energy_scaling(model)
    mid = (box.lo + box.hi) / 2.0 / model.c_load
    half = (box.hi - box.lo) / 2.0 / model.c_load
    Ahat = A_sc.copy()
    Ahat[model.load_rows, model.load_rows] += mid / s
    m = model.n_loads
    B = np.zeros((model.n, m))
    B[model.load_rows, np.arange(m)] = 1.0
    C = np.zeros((m, model.n))
    C[np.arange(m), model.load_rows] = half / s
    # Balance the channel norms; the product B diag(theta) C is unchanged.
    nb, nc = np.linalg.norm(B, 2), np.linalg.norm(C, 2)
    if nc > 0:
        u = np.sqrt(nb / nc)
        B, C = B / u, C * u
    return lmi.ChannelFamily(Ahat, B, C), T


def single_lmi_test(model: StateSpaceModel, box: DeltaBox,
                    options: lmi.LmiOptions | None = None
                    ) -> tuple[bool, LyapunovWitness | None]:
    """One-block small-gain test covering the whole sensitivity box.

    More conservative than the vertex test but independent of the number
    of box corners.  Raises LmiNoDecision when the solver cannot certify
    either answer.
    """
    fam, T = _channel_family(model, box)
    candidates = [(np.eye(model.n), np.array([lam]))
                  for lam in np.geomspace(1e-3, 1e3, 25)]
    res = lmi.lmi_feasible(fam, candidates=candidates, options=options)
    if res.status == "feasible":
        return True, _physical_witness(model, box, T, res.P, "single",
                                       mults=res.mults)
    if res.status == "infeasible":
        return False, None
    raise LmiNoDecision("one-block test undecided at this tolerance")


def _shunt_beta_bound(model: StateSpaceModel, delta0: np.ndarray) -> float:
    """Closed-form certified scaling of the stored-energy witness.

    In energy coordinates the symmetric part of ``A`` is diagonal with
    load entries ``-1/(R_l C_l)``, so the diagonal witness certifies the
    symmetric box as soon as ``delta0_j / beta < 1/R_lj`` for every load:
    ``beta = max_j R_lj delta0_j``.
    """
    load_diag = -np.diag(model.A)[model.load_rows]  # 1/(R_l C_l)
    return float(np.max(delta0 / (load_diag * model.c_load)))


def _energy_witness(model: StateSpaceModel, beta: float,
                    delta0: np.ndarray) -> LyapunovWitness:
    """Stored-energy witness with its exact (diagonal) margin."""
    e = model.energy_diag / np.min(model.energy_diag)
    M = np.diag(e) @ model.A + model.A.T @ np.diag(e)
    off = M - np.diag(np.diag(M))
    if np.max(np.abs(off)) > 1e-9 * np.max(np.abs(np.diag(M))):
        raise StabilityError("energy-weighted symmetric part is not diagonal")
    diag = np.diag(M).copy()
    diag[model.load_rows] += 2.0 * (delta0 / beta) / model.c_load \
        * e[model.load_rows]
    margin = float(np.max(diag))
    if margin >= 0:
        raise StabilityError("stored-energy certificate has no margin "
                             f"at beta={beta}")
    return LyapunovWitness(P=np.diag(e), margin=margin, method="passivity")


def _necessity_bound(model: StateSpaceModel, delta0: np.ndarray) -> float:
    """Exact lower bound on any certified scaling: the Jacobian at the
    all-plus (and all-minus) corner of ``[-d0, d0]/beta`` must itself be
    Hurwitz, no matter the witness."""
    dirs = delta0 / model.c_load

    def abscissa(c: float, sign: float) -> float:
        J = model.A.copy()
        J[model.load_rows, model.load_rows] += sign * c * dirs
        return spectral_abscissa(J)

    beta = 0.0
    for sign in (1.0, -1.0):
        hi = 1.0
        for _ in range(80):
            if abscissa(hi, sign) >= 0:
                break
            hi *= 2.0
            if hi > 1e12:
                break
        else:
            continue
        if abscissa(hi, sign) < 0:
            continue  # this corner never destabilizes
        lo = 0.0
        for _ in range(60):
            mid = (lo + hi) / 2.0
            if mid == lo or mid == hi:
                break
            if abscissa(mid, sign) < 0:
                lo = mid
            else:
                hi = mid
        if lo > 0:
            beta = max(beta, 1.0 / lo)
    return beta


def _box_at(delta0: np.ndarray, beta: float) -> DeltaBox:
    return DeltaBox(lo=-delta0 / beta, hi=delta0 / beta)


def gevp_max_scaling(model: StateSpaceModel, delta0: np.ndarray,
                     method: str = "vertex",
                     options: GevpOptions | None = None) -> GevpResult:
    """Smallest ``beta`` whose scaled box ``[-delta0, delta0] / beta`` is
    certified by the chosen test, located by geometric bisection.

    For the bisection methods the returned ``beta`` carries an exactly
    verified witness and the lower bracket end is only known infeasible up
    to solver tolerance (exactly, below the Hurwitz-necessity bound).  The
    passivity method returns the exact closed-form optimum instead; its
    witness certifies every strictly interior scaling.
    """
    opt = options or GevpOptions()
    delta0 = np.asarray(delta0, dtype=float)
    if np.any(delta0 <= 0):
        raise ValueError("delta0 must be positive")
    if spectral_abscissa(model.A) >= 0:
        raise StabilityError("open-loop dynamics are not Hurwitz; "
                             "no scaling can be certified")
    if method == "passivity":
        # Exact closed-form optimum.  The energy witness certifies every
        # strictly smaller scaling with the same P, so quote its margin a
        # hair inside the (open) boundary.
        beta_inf = _shunt_beta_bound(model, delta0)
        witness = _energy_witness(model, beta_inf * (1.0 + opt.rel_tol),
                                  delta0)
        return GevpResult(beta=beta_inf, witness=witness, beta_lo=beta_inf,
                          beta_hi=beta_inf, trials=0, undecided=0,
                          method=method)
    if method not in ("vertex", "single"):
        raise ValueError(f"unknown method {method!r}")
    if method == "vertex" and model.n_loads > VERTEX_CAP:
        raise VertexCapError(f"{model.n_loads} loads exceed the vertex cap "
                             f"{VERTEX_CAP}; use method='single' or 'passivity'")

    def oracle(beta: float):
        box = _box_at(delta0, beta)
        if method == "vertex":
            fam, T, _ = _scaled_vertex_family(model, box)
            cands = [(np.eye(model.n), None)]
            if oracle.best is not None:
                cands.insert(0, (oracle.best[0], None))
            res = lmi.lmi_feasible(fam, candidates=cands, options=opt.lmi)
            if res.status == "feasible":
                oracle.best = (res.P, None, T, box)
            return res.status
        fam, T = _channel_family(model, box)
        cands = [(np.eye(model.n), np.array([lam]))
                 for lam in np.geomspace(1e-3, 1e3, 25)]
        if oracle.best is not None:
            cands.insert(0, (oracle.best[0], oracle.best[1]))
        res = lmi.lmi_feasible(fam, candidates=cands, options=opt.lmi)
        if res.status == "feasible":
            oracle.best = (res.P, res.mults, T, box)
        return res.status

    oracle.best = None

    beta_nec = _necessity_bound(model, delta0)
    lo = max(beta_nec, 1e-12)
    hi = _shunt_beta_bound(model, delta0) * 1.01
    trials = undecided = 0
    for _ in range(8):
        trials += 1
        if oracle(hi) == "feasible":
            break
        hi *= 2.0
    else:
        raise StabilityError("no certified scaling found; the test cannot "
                             "cover this family")
    lo = min(lo, hi / (1.0 + opt.rel_tol))

    # Probe just above the exact Hurwitz-necessity bound first: on
    # shunt-dominated networks that corner is usually binding, so one
    # cheap feasible trial can close the bracket immediately.
    if beta_nec > 0 and hi / lo > 1.0 + opt.rel_tol:
        probe = lo * (1.0 + 0.9 * opt.rel_tol)
        trials += 1
        if oracle(probe) == "feasible":
            hi = probe
        else:
            lo = probe

    while hi / lo > 1.0 + opt.rel_tol and trials < opt.max_trials:
        mid = float(np.sqrt(lo * hi))
        trials += 1
        status = oracle(mid)
        if status == "feasible":
            hi = mid
        else:
            lo = mid
            if status == "undecided":
                undecided += 1

    P_sc, mults, T, box = oracle.best
    witness = _physical_witness(model, box, T, P_sc,
                                method, mults=mults)
    return GevpResult(beta=hi, witness=witness, beta_lo=lo, beta_hi=hi,
                      trials=trials, undecided=undecided, method=method)


def robust_stability_set(case: NetworkCase,
                         model: StateSpaceModel | None = None,
                         delta0: np.ndarray | None = None,
                         method: str = "auto",
                         options: GevpOptions | None = None) -> StabilitySet:
    """Certified voltage floors for a case.

    ``delta0`` defaults to the load power caps, which makes the floor the
    uniform value ``sqrt(beta)`` and means: keep every load voltage above
    the floor and every load power below its cap and the equilibrium is
    locally exponentially stable.  ``method="auto"`` picks the tightest
    test that fits the problem size.
    """
    model = assemble(case) if model is None else model
    delta0 = case.p_max() if delta0 is None else np.asarray(delta0, dtype=float)
    if method == "auto":
        if model.n_loads <= VERTEX_CAP:
            method = "vertex"
        elif model.n <= SINGLE_STATE_CAP:
            method = "single"
        else:
            method = "passivity"
    res = gevp_max_scaling(model, delta0, method=method, options=options)
    v_floor = np.sqrt(res.beta * case.p_max() / delta0)
    return StabilitySet(beta=res.beta, delta0=delta0, v_floor=v_floor,
                        witness=res.witness, method=method,
                        beta_lo=res.beta_lo, beta_hi=res.beta_hi,
                        trials=res.trials)
