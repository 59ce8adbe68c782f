"""Starting points for the iterative synthesis.

Produces the weight pair (W1, W2) and the feasible triple (K0, Q0, P0):
identity or SDP-optimized weights; arbitrary (user-supplied conic
controller), minimal output-matrix modification of an observer-based
target ("conicc"), and iterative relaxation of the unconstrained
optimum ("ico").
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import sdp
from .cones import Cone, csl_check
from .lti import Controller, Plant, is_hurwitz
from .synthesis import (
    SubproblemError,
    SynthesisOptions,
    build_subproblem,
    closed_loop_gramian,
    conic_lmi_matrix,
    jprime_value,
    lyapunov_lmi_matrix,
    solve_subproblem,
    true_cost,
)
from .transform import TransformData, build_transform, pack_k

__all__ = [
    "InitResult",
    "IcoFailure",
    "InitializationError",
    "w_identity",
    "w_optimize",
    "init_arbitrary",
    "init_conicc",
    "init_ico",
]


class InitializationError(RuntimeError):
    """Raised when an initialization method cannot produce a feasible triple."""


@dataclass
class InitResult:
    K0: np.ndarray
    Q0: np.ndarray
    P0: np.ndarray
    provenance: str  # "arbitrary" | "conicc" | "ico"
    diagnostics: dict

    def as_iterate(self):
        from .synthesis import IterateState

        return IterateState(K=self.K0, Q=self.Q0, P=self.P0,
                            jprime=self.diagnostics.get("jtrue", float("nan")),
                            jtrue=self.diagnostics.get("jtrue", float("nan")))


@dataclass
class IcoFailure:
    """Structured no-convergence outcome of the relaxation initialization."""

    eps_trajectory: list
    status: str
    message: str


def _diagnostics(t: TransformData, K0, Q0, P0) -> dict:
    return {
        "lyap_residual": float(np.linalg.eigvalsh(lyapunov_lmi_matrix(t, K0, Q0)).max()),
        "conic_residual": float(np.linalg.eigvalsh(conic_lmi_matrix(t, K0, P0)).max()),
        "jtrue": true_cost(t, K0),
    }


# ---------------------------------------------------------------------------
# W initialization
# ---------------------------------------------------------------------------


def w_identity(t: TransformData) -> tuple[np.ndarray, np.ndarray]:
    """Identity weights of dimension m + n_c; always admissible."""
    nk = t.dims.nk
    return np.eye(nk), np.eye(nk)


def w_optimize(t: TransformData, ridge: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Weights minimizing the size of the overbounding terms.

    W1 solves min tr(E W1 E^T) + tr(V1) s.t. [[W1, R], [R^T, V1]] >= 0
    and W2 the analogous problem with X; identity is always feasible, so
    solver failure falls back to identity with a warning.
    """
    nk, nx, ng = t.dims.nk, t.dims.nx, t.dims.ng
    C = sdp.Const.of

    def _one(cost_wrap, coupling, v_dim, label):
        W = sdp.VarSpec("W", (nk, nk), symmetric=True)
        V = sdp.VarSpec("V", (v_dim, v_dim), symmetric=True)
        Wr, Vr = W.ref(), V.ref()
        program = sdp.SdpProgram(
            (W, V),
            (sdp.Constraint(sdp.block([[Wr, C(coupling)], [C(coupling.T), Vr]]), "psd"),),
            sdp.trace(cost_wrap(Wr)) + sdp.trace(Vr),
        )
        sol = sdp.solve(program)
        if sol.status != "optimal":
            warnings.warn(f"{label} weight SDP failed ({sol.status}); using identity")
            return np.eye(nk)
        Wv = 0.5 * (sol.values["W"] + sol.values["W"].T)
        lam = np.linalg.eigvalsh(Wv)
        if lam[0] <= ridge:
            Wv = Wv + (ridge - min(lam[0], 0.0)) * np.eye(nk)
        return Wv

    W1 = _one(lambda Wr: C(t.E) @ Wr @ C(t.E.T), t.R, nx, "W1")
    W2 = _one(lambda Wr: Wr, t.X, ng, "W2")
    return W1, W2


# ---------------------------------------------------------------------------
# KQP initialization
# ---------------------------------------------------------------------------


def init_arbitrary(t: TransformData, ctrl: Controller) -> InitResult:
    """Initialization from a known conic, closed-loop-stabilizing controller."""
    K0 = pack_k(ctrl)
    try:
        Q0 = closed_loop_gramian(t, K0)
    except Exception as exc:
        raise InitializationError(f"controller does not stabilize the closed loop: {exc}")
    cert = csl_check(ctrl.as_statespace(), t.cone, form=2)
    if cert is None:
        raise InitializationError("controller is not inside the requested cone")
    small = np.linalg.norm(K0, "fro") < 1e-6 * (1.0 + np.linalg.norm(t.Atil, "fro"))
    if small:
        warnings.warn(
            "K0 is (near) zero; the descent makes no progress from such a point",
            UserWarning,
        )
    diag = _diagnostics(t, K0, Q0, cert.P)
    diag["k0_small"] = bool(small)
    return InitResult(K0=K0, Q0=Q0, P0=cert.P, provenance="arbitrary", diagnostics=diag)


def _stabilized_target(plant: Plant, target: Controller) -> tuple[Controller, float]:
    """Shrink the target output matrix until the observer dynamics are stable.

    With Chat -> 0 the dynamics A - Bhat C2 are Hurwitz by construction of
    the filter gain, so the scan terminates.
    """
    s = 1.0
    for _ in range(60):
        Ahat = plant.A - plant.B2 @ (s * target.Chat) - target.Bhat @ plant.C2
        if is_hurwitz(Ahat):
            return Controller(Ahat=Ahat, Bhat=target.Bhat, Chat=s * target.Chat), s
        s *= 0.5
    raise InitializationError("could not stabilize the target controller by output scaling")


def init_conicc(
    plant: Plant,
    n_c: int,
    cone_c: Cone,
    target: Controller | None = None,
    t: TransformData | None = None,
    feas_margin_scale: float = 1e-7,
) -> InitResult:
    """Minimal output-matrix change of an observer-based target into the cone.

    Solves min ||Chat - Chat_target||_F^2 over (Chat, P) subject to the
    conic LMI with Ahat, Bhat fixed at the target values; always feasible
    for a stable target because the scaled output matrix is a feasible
    point.
    """
    if t is None:
        t = build_transform(plant, n_c, cone_c)
    if target is None:
        from .synthesis import design_h2_luenberger

        if n_c != plant.n:
            raise ValueError("the observer-based target requires n_c = n")
        target = design_h2_luenberger(plant)
    if target.n_c != n_c:
        raise ValueError("target controller order does not match n_c")
    if not is_hurwitz(target.Ahat):
        target, s = _stabilized_target(plant, target)
        warnings.warn(f"target dynamics unstable; output matrix rescaled by {s}", UserWarning)

    a, b = cone_c.effective_bounds()
    m, nc = t.dims.m, n_c
    scale = max(1.0, abs(a) * b)
    margin = feas_margin_scale * scale
    C = sdp.Const.of
    Im = np.eye(m)

    Pv = sdp.VarSpec("P", (nc, nc), symmetric=True)
    Cv = sdp.VarSpec("Chat", (m, nc))
    sv = sdp.VarSpec("s", (1, 1))
    Pr, Cr, sr = Pv.ref(), Cv.ref(), sv.ref()
    Ah, Bh = target.Ahat, target.Bhat
    lmi = sdp.block([
        [Pr @ Ah + C(Ah.T) @ Pr, Pr @ Bh, Cr.T],
        [C(Bh.T) @ Pr, C(-((a - b) ** 2) / (4.0 * b) * Im), C(-0.5 * (a + b) * Im)],
        [Cr, C(-0.5 * (a + b) * Im), C(-b * Im)],
    ])
    dim = lmi.shape[0]
    program = sdp.SdpProgram(
        (Pv, Cv, sv),
        (
            sdp.Constraint(lmi + C(margin * np.eye(dim)), "nsd"),
            sdp.Constraint(Pr - C(1e-8 * scale * np.eye(nc)), "psd"),
            sdp.SocSqConstraint(sr, sdp.vec(Cr - C(target.Chat))),
        ),
        sdp.trace(sr),
    )
    sol = sdp.solve(program, feas_tol=1e-6 * scale)
    if sol.status != "optimal":
        raise InitializationError(f"conicc SDP failed: {sol.status} ({sol.diagnostics})")

    ctrl = Controller(Ahat=Ah, Bhat=Bh, Chat=sol.values["Chat"])
    K0 = pack_k(ctrl)
    try:
        Q0 = closed_loop_gramian(t, K0)
    except Exception as exc:
        raise InitializationError(
            f"conicc controller does not stabilize the closed loop: {exc}"
        )
    P0 = sol.values["P"]
    diag = _diagnostics(t, K0, Q0, P0)
    diag["chat_distance"] = float(np.linalg.norm(ctrl.Chat - target.Chat, "fro"))
    return InitResult(K0=K0, Q0=Q0, P0=P0, provenance="conicc", diagnostics=diag)


def _p_feasibility_stage(t: TransformData, K: np.ndarray) -> tuple[np.ndarray, float]:
    """min eps s.t. He[Ptil K X] + Gamma <= eps I, P > 0."""
    nc, ng = t.dims.n_c, t.dims.ng
    C = sdp.Const.of
    Pv = sdp.VarSpec("P", (nc, nc), symmetric=True)
    ev = sdp.VarSpec("eps", (1, 1))
    Pr, er = Pv.ref(), ev.ref()
    Ptil = _ptil_expr(Pr, t)
    M = C(t.Gamma) + sdp.he(Ptil @ C(K @ t.X))
    eye_terms = []
    for i in range(ng):
        e = np.zeros((ng, 1))
        e[i, 0] = 1.0
        eye_terms.append(C(e) @ er @ C(e.T))
    program = sdp.SdpProgram(
        (Pv, ev),
        (
            sdp.Constraint(M - sdp.Add(tuple(eye_terms)), "nsd"),
            sdp.Constraint(Pr - C(1e-8 * np.eye(nc)), "psd"),
            sdp.Constraint(C(1e9 * max(1.0, np.linalg.norm(t.Gamma, 2)) * np.eye(nc)) - Pr, "psd"),
        ),
        sdp.trace(er),
    )
    sol = sdp.solve(program, feas_tol=1e-6 * max(1.0, np.linalg.norm(t.Gamma, 2)))
    if sol.status != "optimal":
        raise InitializationError(f"cone feasibility stage failed: {sol.status}")
    return sol.values["P"], float(sol.objective)


def _ptil_expr(Pr: sdp.VarRef, t: TransformData) -> sdp.Expr:
    nc, m = t.dims.n_c, t.dims.m
    z = lambda r, c: sdp.Const.of(np.zeros((r, c)))
    return sdp.block([
        [z(nc, m), Pr],
        [z(m, m), z(m, nc)],
        [sdp.Const.of(np.eye(m)), z(m, nc)],
    ])


def init_ico(
    plant: Plant,
    n_c: int,
    cone_c: Cone,
    delta: float = 0.1,
    opts: SynthesisOptions | None = None,
    target: Controller | None = None,
    max_relax_iters: int = 200,
    gamma_ico: float = 1e-3,
    strictness: float = 1e-8,
    t: TransformData | None = None,
) -> InitResult | IcoFailure:
    """Relax the unconstrained optimum into the cone.

    Stage 1 checks whether the target is already conic; stage 2 iterates
    the relaxed step program, minimizing the conic violation eps while
    capping the cost at (1 + delta) times the running cost, until
    eps < 0.  Not guaranteed to converge; the eps trajectory is reported
    on failure.
    """
    if delta < 0.0:
        raise ValueError("delta must be nonnegative")
    if t is None:
        t = build_transform(plant, n_c, cone_c)
    if opts is None:
        opts = SynthesisOptions()
    if target is None:
        from .synthesis import design_h2_luenberger

        if n_c != plant.n:
            raise ValueError("the observer-based target requires n_c = n")
        target = design_h2_luenberger(plant)

    K = pack_k(target)
    try:
        Q = closed_loop_gramian(t, K)
    except Exception as exc:
        raise InitializationError(f"target does not stabilize the closed loop: {exc}")
    P, eps = _p_feasibility_stage(t, K)
    eps_trajectory = [eps]
    if eps < -strictness:
        Q0 = closed_loop_gramian(t, K)
        diag = _diagnostics(t, K, Q0, P)
        diag["eps_trajectory"] = eps_trajectory
        diag["relax_iterations"] = 0
        return InitResult(K0=K, Q0=Q0, P0=P, provenance="ico", diagnostics=diag)

    ico_opts = replace(opts, gamma_reg=gamma_ico)
    scale = max(1.0, float(np.linalg.norm(t.Gamma, 2)), float(np.linalg.norm(Q, 2)))
    j_l = jprime_value(t, K, Q)
    relaxed_lyap = False
    stall_count = 0
    for it in range(1, max_relax_iters + 1):
        cap = (1.0 + delta) * j_l
        try:
            build = build_subproblem(
                t, K, Q, P, ico_opts, mode="relax",
                relax_lyapunov=relaxed_lyap, cost_cap=cap, check_feasibility=False,
            )
            step, sol = solve_subproblem(build, ico_opts, scale=scale)
        except SubproblemError:
            if not relaxed_lyap:
                # the Gramian sits on the Lyapunov equality boundary; relax it too
                relaxed_lyap = True
                warnings.warn("relaxing the Lyapunov block as well (strict variant infeasible)",
                              UserWarning)
                continue
            return IcoFailure(eps_trajectory, "subproblem-failure",
                              "relaxation subproblem became unsolvable")
        K = K + step["dK"]
        Q = 0.5 * (Q + step["dQ"] + (Q + step["dQ"]).T)
        P = 0.5 * (P + step["dP"] + (P + step["dP"]).T)
        eps_new = step["eps"]
        j_l = float(np.trace(t.Btil.T @ Q @ t.Btil) + np.trace(step["Z"]))
        if abs(eps_new - eps) <= 1e-10 * (1.0 + abs(eps)):
            stall_count += 1
        else:
            stall_count = 0
        eps = eps_new
        eps_trajectory.append(eps)
        if eps < -strictness:
            try:
                Q0 = closed_loop_gramian(t, K)
            except Exception:
                Q0 = Q  # inequality Gramian still certifies stability
            P_cert, eps_final = _p_feasibility_stage(t, K)
            if eps_final < 0:
                P = P_cert
            diag = _diagnostics(t, K, Q0, P)
            diag["eps_trajectory"] = eps_trajectory
            diag["relax_iterations"] = it
            diag["relaxed_lyapunov"] = relaxed_lyap
            return InitResult(K0=K, Q0=Q0, P0=P, provenance="ico", diagnostics=diag)
        if stall_count >= 3:
            return IcoFailure(eps_trajectory, "stalled",
                              "eps plateaued while the cost cap binds")
    return IcoFailure(eps_trajectory, "iteration-limit",
                      f"no feasible point after {max_relax_iters} relaxation steps")
