"""Fixed-order conic controller synthesis by iterative convex overbounding.

Builds the convex subproblem that descends the closed-loop squared H2
cost around a feasible (K, Q, P) triple while keeping the controller
inside its conic sector, and iterates it to a local minimum.  Also
provides the exact-cost evaluation, the termination bound, and the
observer-based (Luenberger) H2-optimal baseline design.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import sdp
from .cones import Cone
from .lti import (
    Controller,
    Plant,
    RiccatiError,
    UnstableSystemError,
    close_loop,
    h2_norm_sq,
    is_hurwitz,
    solve_lyapunov,
    solve_riccati,
)
from .transform import (
    TransformData,
    assemble_closed_loop,
    build_transform,
    conic_lmi_matrix,
    pack_k,
    ptil_of,
    unpack_k,
)

__all__ = [
    "IterateState",
    "SynthesisOptions",
    "SynthesisResult",
    "SubproblemError",
    "lyapunov_lmi_matrix",
    "jprime_value",
    "true_cost",
    "build_subproblem",
    "solve_subproblem",
    "run_algorithm1",
    "iteration_bound",
    "design_h2_luenberger",
]


class SubproblemError(RuntimeError):
    """Raised when the descent subproblem cannot be formed or solved."""


@dataclass(frozen=True)
class IterateState:
    """One feasible iterate: controller matrix, Gramian bound, cone certificate."""

    K: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    jprime: float
    jtrue: float


@dataclass(frozen=True)
class SynthesisOptions:
    epsilon: float = 5e-3
    gamma_reg: float = 0.1
    max_iters: int = 500
    W1: np.ndarray | None = None
    W2: np.ndarray | None = None
    feas_tol: float = 1e-7
    solver: str = "CLARABEL"
    verbose: bool = False

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.gamma_reg < 0.0:
            raise ValueError("gamma_reg must be nonnegative")
        for name, W in (("W1", self.W1), ("W2", self.W2)):
            if W is not None:
                W = np.asarray(W, dtype=float)
                if np.min(np.linalg.eigvalsh(0.5 * (W + W.T))) <= 0.0:
                    raise ValueError(f"{name} must be symmetric positive definite")


@dataclass
class SynthesisResult:
    state: IterateState
    history: list
    status: str  # "converged" | "max-iters" | "stalled" | "subproblem-failure"
    iterations: int

    def controller(self, m: int) -> Controller:
        return unpack_k(self.state.K, m)


# ---------------------------------------------------------------------------
# Exact evaluations
# ---------------------------------------------------------------------------


def lyapunov_lmi_matrix(t: TransformData, K: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """He[Q(Atil + E K R)] + (Ctil + F K R)^T (Ctil + F K R)."""
    Acl = t.Atil + t.E @ K @ t.R
    Ccl = t.Ctil + t.F @ K @ t.R
    M = Q @ Acl
    return M + M.T + Ccl.T @ Ccl


def jprime_value(t: TransformData, K: np.ndarray, Q: np.ndarray) -> float:
    """Overbound cost with the epigraph variable at its tight value."""
    EKS = t.E @ K @ t.S
    return float(np.trace(t.Btil.T @ Q @ t.Btil) + np.trace(EKS.T @ Q @ EKS))


def true_cost(t: TransformData, K: np.ndarray) -> float:
    """Exact squared H2 cost of the closed loop; inf if unstable."""
    cl = assemble_closed_loop(t, K)
    if not is_hurwitz(cl.A):
        return float("inf")
    return h2_norm_sq(cl)


def closed_loop_gramian(t: TransformData, K: np.ndarray) -> np.ndarray:
    """Exact observability Gramian of the closed loop (the equality solution)."""
    cl = assemble_closed_loop(t, K)
    if not is_hurwitz(cl.A):
        raise UnstableSystemError("closed loop is not Hurwitz")
    return solve_lyapunov(cl.A, cl.C.T @ cl.C)


# ---------------------------------------------------------------------------
# Convex subproblem
# ---------------------------------------------------------------------------


def _sym_inverse(M: np.ndarray, name: str, cond_limit: float = 1e12) -> np.ndarray:
    M = 0.5 * (M + M.T)
    lam, V = np.linalg.eigh(M)
    if lam[0] <= 0.0 or lam[-1] / lam[0] > cond_limit:
        raise SubproblemError(
            f"{name} is singular or ill conditioned (eigenvalue range "
            f"[{lam[0]:.3e}, {lam[-1]:.3e}])"
        )
    inv = (V / lam) @ V.T
    return 0.5 * (inv + inv.T)


@dataclass
class SubproblemBuild:
    program: sdp.SdpProgram
    dims: tuple  # (m, n_c, nx, p)
    relaxed: bool
    q0_sqrt: np.ndarray | None = None

    def extract(self, values: dict) -> dict:
        m, n_c, nx, p = self.dims
        dK = np.block([
            [np.zeros((m, m)), values["dK12"]],
            [values["dK21"], values["dK22"]],
        ])
        dQ = self.q0_sqrt @ values["dQbar"] @ self.q0_sqrt
        out = {
            "dK": dK,
            "dQ": 0.5 * (dQ + dQ.T),
            "dP": values["dP"],
            "Z": values["Z"],
        }
        if "eps" in values:
            out["eps"] = float(np.asarray(values["eps"]).item())
        if "treg" in values:
            out["treg"] = float(np.asarray(values["treg"]).item())
        return out


def _tid(ref: sdp.VarRef, dim: int) -> sdp.Expr:
    terms = []
    for i in range(dim):
        e = np.zeros((dim, 1))
        e[i, 0] = 1.0
        terms.append(sdp.Const.of(e) @ ref @ sdp.Const.of(e.T))
    return sdp.Add(tuple(terms))


def build_subproblem(
    t: TransformData,
    K0: np.ndarray,
    Q0: np.ndarray,
    P0: np.ndarray,
    opts: SynthesisOptions,
    mode: str = "descent",
    relax_lyapunov: bool = False,
    cost_cap: float | None = None,
    check_feasibility: bool = True,
) -> SubproblemBuild:
    """Assemble the convex step program around a feasible point.

    ``mode="descent"`` minimizes the overbound cost (plus Frobenius
    regularization).  ``mode="relax"`` is the constraint-relaxation
    variant used by the ICO initialization: the conic block is loosened
    to <= eps I, eps is minimized, and the cost is capped.
    """
    if mode not in ("descent", "relax"):
        raise ValueError("mode must be 'descent' or 'relax'")
    d = t.dims
    m, n_c, nx, p, nk, ng = d.m, d.n_c, d.nx, d.p, d.nk, d.ng
    K0 = np.asarray(K0, dtype=float)
    Q0 = 0.5 * (np.asarray(Q0, dtype=float) + np.asarray(Q0, dtype=float).T)
    P0 = 0.5 * (np.asarray(P0, dtype=float) + np.asarray(P0, dtype=float).T)

    if check_feasibility and mode == "descent":
        lyap_res = float(np.linalg.eigvalsh(lyapunov_lmi_matrix(t, K0, Q0)).max())
        conic_res = float(np.linalg.eigvalsh(conic_lmi_matrix(t, K0, P0)).max())
        slack = opts.feas_tol * max(1.0, np.linalg.norm(Q0, 2), np.linalg.norm(t.Gamma, 2))
        if lyap_res > 10 * slack or conic_res > 10 * slack:
            warnings.warn(
                f"initial point is only marginally feasible "
                f"(lyap {lyap_res:.3e}, conic {conic_res:.3e})",
                UserWarning,
            )

    lamq, Vq = np.linalg.eigh(Q0)
    if lamq[-1] <= 0.0:
        raise SubproblemError(
            f"Q0 is not positive definite (max eigenvalue {lamq[-1]:.3e})"
        )
    # exact Gramians of near-unobservable closed loops can be numerically
    # singular; floor the spectrum so the square root stays invertible
    floor = 1e-12 * lamq[-1]
    if lamq[0] < floor:
        lamq = np.maximum(lamq, floor)
        Q0 = (Vq * lamq) @ Vq.T
        Q0 = 0.5 * (Q0 + Q0.T)
    Q0sqrt = (Vq * np.sqrt(lamq)) @ Vq.T
    Q0sqrt = 0.5 * (Q0sqrt + Q0sqrt.T)
    W1 = np.eye(nk) if opts.W1 is None else np.asarray(opts.W1, dtype=float)
    W2 = np.eye(nk) if opts.W2 is None else np.asarray(opts.W2, dtype=float)
    W1inv = _sym_inverse(W1, "W1")
    W2inv = _sym_inverse(W2, "W2")
    M3 = _sym_inverse(W1inv + t.F.T @ t.F, "W1^-1 + F^T F")

    C = sdp.Const.of
    z = lambda r, c: C(np.zeros((r, c)))

    specs = [
        sdp.VarSpec("dK12", (m, n_c)),
        sdp.VarSpec("dK21", (n_c, m)),
        sdp.VarSpec("dK22", (n_c, n_c)),
        sdp.VarSpec("dQbar", (nx, nx), symmetric=True),
        sdp.VarSpec("dP", (n_c, n_c), symmetric=True),
        sdp.VarSpec("Z", (p, p), symmetric=True),
    ]
    dK12, dK21, dK22 = (sdp.VarRef(n, s) for n, s in
                        (("dK12", (m, n_c)), ("dK21", (n_c, m)), ("dK22", (n_c, n_c))))
    # dQ is parameterized as Q0^1/2 dQbar Q0^1/2 so the linearized-inverse
    # block below carries coefficients of order one even when Q0 is badly
    # conditioned (the substitution is a congruence, hence lossless)
    dQbar = sdp.VarRef("dQbar", (nx, nx))
    dQ = C(Q0sqrt) @ dQbar @ C(Q0sqrt)
    dP = sdp.VarRef("dP", (n_c, n_c))
    Z = sdp.VarRef("Z", (p, p))
    dK = sdp.block([[z(m, m), dK12], [dK21, dK22]])

    constraints = []

    # --- cost overbound block (the Q^-1 linearization) ---------------------
    # congruence of [[Q0inv - Q0inv dQ Q0inv, EKS], [*, Z]] by diag(Q0^1/2, I)
    EKS0 = t.E @ K0 @ t.S
    top_left = C(np.eye(nx)) - dQbar
    top_right = C(Q0sqrt @ EKS0) + C(Q0sqrt @ t.E) @ dK @ C(t.S)
    cost_block = sdp.block([
        [top_left, top_right],
        [top_right.T, Z],
    ])
    constraints.append(sdp.Constraint(cost_block, "psd"))

    # --- Lyapunov descent block -------------------------------------------
    EK0R = t.E @ K0 @ t.R
    CtF = t.Ctil.T @ t.F
    RtK0FtF = t.R.T @ K0.T @ t.F.T @ t.F
    pi1_lin = sdp.Add((
        C(t.Atil.T) @ dQ,
        C(t.Atil.T @ Q0 + Q0 @ EK0R + CtF @ K0 @ t.R),
        dQ @ C(EK0R),
        C(Q0 @ t.E) @ dK @ C(t.R),
        C(CtF) @ dK @ C(t.R),
        C(RtK0FtF) @ dK @ C(t.R),
    ))
    pi1 = sdp.he(pi1_lin) + C(t.Ctil.T @ t.Ctil + RtK0FtF @ K0 @ t.R)
    lyap_block = sdp.block([
        [pi1, dQ @ C(t.E), C(t.R.T) @ dK.T],
        [C(t.E.T) @ dQ, C(-W1inv), z(nk, nk)],
        [dK @ C(t.R), z(nk, nk), C(-M3)],
    ])

    # --- conic block -------------------------------------------------------
    Ptil0 = ptil_of(P0, d)
    dPtil = sdp.block([
        [z(n_c, m), dP],
        [z(m, m), z(m, n_c)],
        [z(m, m), z(m, n_c)],
    ])
    pi2 = C(t.Gamma) + sdp.he(
        sdp.Add((
            C(Ptil0 @ K0 @ t.X),
            C(Ptil0) @ dK @ C(t.X),
            dPtil @ C(K0 @ t.X),
        ))
    )
    conic_block = sdp.block([
        [pi2, dPtil, C(t.X.T) @ dK.T],
        [dPtil.T, C(-W2inv), z(nk, nk)],
        [dK @ C(t.X), z(nk, nk), C(-W2)],
    ])

    # --- positivity --------------------------------------------------------
    # Q0 + dQ > 0 is equivalent to I + dQbar > 0 under the congruence
    constraints.append(sdp.Constraint(C((1.0 - 1e-9) * np.eye(nx)) + dQbar, "psd"))
    eps_p = 1e-9 * max(1.0, float(np.linalg.eigvalsh(P0).max()))
    constraints.append(sdp.Constraint(C(P0 - eps_p * np.eye(n_c)) + dP, "psd"))

    # --- regularization epigraph ------------------------------------------
    gamma = opts.gamma_reg
    reg_term = None
    if gamma > 0.0:
        specs.append(sdp.VarSpec("treg", (1, 1)))
        treg = sdp.VarRef("treg", (1, 1))
        stacked = sdp.block([
            [sdp.vec(dK12)],
            [sdp.vec(dK21)],
            [sdp.vec(dK22)],
            [sdp.vec(dQ)],
            [sdp.vec(dP)],
        ])
        constraints.append(sdp.SocSqConstraint(treg, stacked))
        reg_term = sdp.Scale(gamma, sdp.trace(treg))

    jprime_expr = sdp.trace(C(t.Btil.T) @ (C(Q0) + dQ) @ C(t.Btil)) + sdp.trace(Z)

    if mode == "descent":
        constraints.append(sdp.Constraint(lyap_block, "nsd"))
        constraints.append(sdp.Constraint(conic_block, "nsd"))
        objective = jprime_expr if reg_term is None else jprime_expr + reg_term
        relaxed = False
    else:
        specs.append(sdp.VarSpec("eps", (1, 1)))
        eps = sdp.VarRef("eps", (1, 1))
        conic_dim = conic_block.shape[0]
        constraints.append(sdp.Constraint(conic_block - _tid(eps, conic_dim), "nsd"))
        if relax_lyapunov:
            lyap_dim = lyap_block.shape[0]
            constraints.append(sdp.Constraint(lyap_block - _tid(eps, lyap_dim), "nsd"))
        else:
            constraints.append(sdp.Constraint(lyap_block, "nsd"))
        if cost_cap is not None:
            constraints.append(
                sdp.Constraint(C(np.array([[cost_cap]])) - jprime_expr, "psd")
            )
        objective = sdp.trace(eps) if reg_term is None else sdp.trace(eps) + reg_term
        relaxed = True

    program = sdp.SdpProgram(tuple(specs), tuple(constraints), objective)
    return SubproblemBuild(
        program=program, dims=(m, n_c, nx, p), relaxed=relaxed, q0_sqrt=Q0sqrt
    )


def solve_subproblem(build: SubproblemBuild, opts: SynthesisOptions, scale: float = 1.0):
    sol = sdp.solve(
        build.program,
        feas_tol=opts.feas_tol * max(1.0, scale),
        solver=opts.solver,
        verbose=opts.verbose,
    )
    if sol.status != "optimal":
        raise SubproblemError(f"subproblem solve failed: {sol.status} ({sol.diagnostics})")
    return build.extract(sol.values), sol


# ---------------------------------------------------------------------------
# Algorithm 1
# ---------------------------------------------------------------------------


def _history_row(t, k, K, Q, P, jprime, jtrue):
    return {
        "iter": k,
        "jprime": jprime,
        "jtrue": jtrue,
        "lyap_residual": float(np.linalg.eigvalsh(lyapunov_lmi_matrix(t, K, Q)).max()),
        "conic_residual": float(np.linalg.eigvalsh(conic_lmi_matrix(t, K, P)).max()),
    }


def run_algorithm1(
    plant: Plant,
    n_c: int,
    cone_c: Cone,
    init: IterateState,
    opts: SynthesisOptions = SynthesisOptions(),
    t: TransformData | None = None,
) -> SynthesisResult:
    """Iterate the convex descent step from a feasible initialization.

    Stops when the overbound cost changes by less than ``opts.epsilon``,
    when the iteration budget is exhausted, or when solver noise makes
    the overbound increase (the step is then rejected and the run is
    flagged as stalled).  Subproblem failures return the best iterate so
    far with a failure status rather than raising.
    """
    if t is None:
        t = build_transform(plant, n_c, cone_c)
    scale = max(1.0, float(np.linalg.norm(t.Gamma, 2)), float(np.linalg.norm(init.Q, 2)))

    K, Q, P = init.K, init.Q, init.P
    jprime = jprime_value(t, K, Q)
    jtrue = true_cost(t, K)
    history = [_history_row(t, 0, K, Q, P, jprime, jtrue)]

    status = "max-iters"
    k = 0
    for k in range(1, opts.max_iters + 1):
        try:
            build = build_subproblem(t, K, Q, P, opts, check_feasibility=(k == 1))
            step, sol = solve_subproblem(build, opts, scale=scale)
        except SubproblemError as exc:
            status = "subproblem-failure"
            warnings.warn(f"iteration {k}: {exc}", UserWarning)
            k -= 1
            break
        K_new = K + step["dK"]
        Q_new = 0.5 * (Q + step["dQ"] + (Q + step["dQ"]).T)
        P_new = 0.5 * (P + step["dP"] + (P + step["dP"]).T)
        jprime_new = float(
            np.trace(t.Btil.T @ Q_new @ t.Btil) + np.trace(step["Z"])
        )
        rise_tol = max(10.0 * opts.feas_tol * scale, 1e-9 * (1.0 + abs(jprime)))
        if jprime_new > jprime + rise_tol:
            status = "stalled"
            k -= 1
            break
        K, Q, P = K_new, Q_new, P_new
        delta = abs(jprime_new - jprime)
        jprime = jprime_new
        jtrue = true_cost(t, K)
        history.append(_history_row(t, k, K, Q, P, jprime, jtrue))
        if delta <= opts.epsilon:
            status = "converged"
            break

    state = IterateState(K=K, Q=Q, P=P, jprime=jprime, jtrue=jtrue)
    return SynthesisResult(state=state, history=history, status=status, iterations=k)


def iteration_bound(j0prime: float, j_h2: float, epsilon: float) -> int:
    """Worst-case iteration count (J0' - J_H2) / epsilon, rounded up."""
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    if j0prime < j_h2 - 1e-12 * max(1.0, abs(j_h2)):
        raise ValueError("initial overbound must be at least the unconstrained optimum")
    return max(0, math.ceil((j0prime - j_h2) / epsilon))


# ---------------------------------------------------------------------------
# Observer-based H2-optimal baseline
# ---------------------------------------------------------------------------


def design_h2_luenberger(plant: Plant) -> Controller:
    """H2-optimal controller with the observer structure
    Ahat = A - B2 Chat - Bhat C2, from the control and filter Riccati
    equations."""
    problems = []
    R2 = plant.D12.T @ plant.D12
    R1 = plant.D21 @ plant.D21.T
    if np.min(np.linalg.eigvalsh(0.5 * (R2 + R2.T))) <= 0.0:
        problems.append("D12^T D12 must be positive definite")
    if np.min(np.linalg.eigvalsh(0.5 * (R1 + R1.T))) <= 0.0:
        problems.append("D21 D21^T must be positive definite")
    if problems:
        raise ValueError("; ".join(problems))

    A, B1, B2, C1, C2 = plant.A, plant.B1, plant.B2, plant.C1, plant.C2
    D12, D21 = plant.D12, plant.D21

    # control Riccati with cross terms folded out
    R2inv_DtC1 = np.linalg.solve(R2, D12.T @ C1)
    Ac = A - B2 @ R2inv_DtC1
    Qc = C1.T @ C1 - C1.T @ D12 @ R2inv_DtC1
    Qc = 0.5 * (Qc + Qc.T)
    try:
        Xc = solve_riccati(Ac, B2, Qc, R2)
    except RiccatiError as exc:
        raise RiccatiError(f"control Riccati failed: {exc}") from exc
    Chat = np.linalg.solve(R2, B2.T @ Xc + D12.T @ C1)

    # filter Riccati (dual); D21 B1^T = 0 removes its cross term
    try:
        Yf = solve_riccati(A.T, C2.T, 0.5 * (B1 @ B1.T + (B1 @ B1.T).T), R1)
    except RiccatiError as exc:
        raise RiccatiError(f"filter Riccati failed: {exc}") from exc
    Bhat = Yf @ C2.T @ np.linalg.inv(R1)

    Ahat = A - B2 @ Chat - Bhat @ C2
    ctrl = Controller(Ahat=Ahat, Bhat=Bhat, Chat=Chat)
    cl = close_loop(plant, ctrl)
    if not is_hurwitz(cl.A):
        raise RiccatiError("observer-based design did not stabilize the closed loop")
    return ctrl
