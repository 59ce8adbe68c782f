"""State-space containers and core linear-systems computations.

Provides the plant/controller data types used throughout the toolkit,
Hurwitz tests, Lyapunov and Riccati solvers, squared H2-norm evaluation
via the observability Gramian, closed-loop assembly, and JSON
serialization of plants and controllers.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "StateSpace",
    "Plant",
    "Controller",
    "UnstableSystemError",
    "RiccatiError",
    "ConditioningWarning",
    "HURWITZ_TOL",
    "is_hurwitz",
    "solve_lyapunov",
    "h2_norm_sq",
    "solve_riccati",
    "close_loop",
    "statespace_to_dict",
    "statespace_from_dict",
    "load_statespace",
    "plant_to_dict",
    "plant_from_dict",
    "controller_to_dict",
    "controller_from_dict",
    "save_json",
    "load_plant",
    "load_controller",
]

HURWITZ_TOL = 1e-9


class UnstableSystemError(RuntimeError):
    """Raised when a computation requires a Hurwitz matrix and gets none."""


class RiccatiError(RuntimeError):
    """Raised when no stabilizing Riccati solution can be produced."""


class ConditioningWarning(UserWarning):
    """Emitted when a linear solve is close to singular."""


def _mat(a, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


@dataclass(frozen=True)
class StateSpace:
    """Minimal realization (A, B, C, D); conic analysis requires D = 0."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray = None

    def __post_init__(self):
        A = _mat(self.A, "A")
        B = _mat(self.B, "B")
        C = _mat(self.C, "C")
        D = _mat(self.D, "D") if self.D is not None else np.zeros((C.shape[0], B.shape[1]))
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if B.shape[0] != A.shape[0]:
            raise ValueError("B row count must match A")
        if C.shape[1] != A.shape[0]:
            raise ValueError("C column count must match A")
        if D.shape != (C.shape[0], B.shape[1]):
            raise ValueError("D shape must be (outputs, inputs)")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    @property
    def is_square(self) -> bool:
        return self.n_inputs == self.n_outputs

    @property
    def has_feedthrough(self) -> bool:
        return bool(np.any(self.D != 0.0))

    def transfer(self, s: complex) -> np.ndarray:
        """Evaluate C (sI - A)^-1 B + D at a complex frequency."""
        return self.C @ np.linalg.solve(s * np.eye(self.n) - self.A, self.B) + self.D


def _pbh_ok(A: np.ndarray, M: np.ndarray, by_columns: bool, tol: float = 1e-8) -> bool:
    """PBH rank test over unstable eigenvalues (columns: [lI-A, M], rows stacked)."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real < -HURWITZ_TOL:
            continue
        if by_columns:
            test = np.hstack([lam * np.eye(n) - A, M])
        else:
            test = np.vstack([lam * np.eye(n) - A, M])
        s = np.linalg.svd(test, compute_uv=False)
        if s[n - 1] <= tol * max(1.0, s[0]):
            return False
    return True


@dataclass(frozen=True)
class Plant:
    """Generalized plant with partitioned disturbance/control channels.

    Requires D21 B1^T = 0, (A, B2) stabilizable, (A, C2) detectable, and a
    square control channel (u and y both of dimension m).
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D12: np.ndarray
    D21: np.ndarray

    def __post_init__(self):
        A = _mat(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("A must be square")
        B1 = _mat(self.B1, "B1")
        B2 = _mat(self.B2, "B2")
        C1 = _mat(self.C1, "C1")
        C2 = _mat(self.C2, "C2")
        D12 = _mat(self.D12, "D12")
        D21 = _mat(self.D21, "D21")
        for name, M, rows in (("B1", B1, n), ("B2", B2, n)):
            if M.shape[0] != rows:
                raise ValueError(f"{name} must have {rows} rows")
        for name, M in (("C1", C1), ("C2", C2)):
            if M.shape[1] != n:
                raise ValueError(f"{name} must have {n} columns")
        m = B2.shape[1]
        if C2.shape[0] != m:
            raise ValueError("control channel must be square (y and u both of dimension m)")
        if D12.shape != (C1.shape[0], m):
            raise ValueError("D12 shape must be (q, m)")
        if D21.shape != (m, B1.shape[1]):
            raise ValueError("D21 shape must be (m, p)")
        if np.max(np.abs(D21 @ B1.T)) > 1e-10 * max(1.0, np.linalg.norm(B1)):
            raise ValueError("D21 B1^T = 0 is required (cross-term cancellation)")
        if not _pbh_ok(A, B2, by_columns=True):
            raise ValueError("(A, B2) is not stabilizable")
        if not _pbh_ok(A, C2, by_columns=False):
            raise ValueError("(A, C2) is not detectable")
        for name, M in (("A", A), ("B1", B1), ("B2", B2), ("C1", C1),
                        ("C2", C2), ("D12", D12), ("D21", D21)):
            object.__setattr__(self, name, M)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B2.shape[1]

    @property
    def p(self) -> int:
        return self.B1.shape[1]

    @property
    def q(self) -> int:
        return self.C1.shape[0]

    def control_channel(self) -> StateSpace:
        """The square u -> y subsystem (A, B2, C2, 0) used for conic analysis."""
        return StateSpace(self.A, self.B2, self.C2)


@dataclass(frozen=True)
class Controller:
    """Strictly proper dynamic output-feedback controller."""

    Ahat: np.ndarray
    Bhat: np.ndarray
    Chat: np.ndarray

    def __post_init__(self):
        Ahat = _mat(self.Ahat, "Ahat")
        Bhat = _mat(self.Bhat, "Bhat")
        Chat = _mat(self.Chat, "Chat")
        nc = Ahat.shape[0]
        if Ahat.shape != (nc, nc):
            raise ValueError("Ahat must be square")
        if Bhat.shape[0] != nc:
            raise ValueError("Bhat must have n_c rows")
        if Chat.shape[1] != nc:
            raise ValueError("Chat must have n_c columns")
        if Bhat.shape[1] != Chat.shape[0]:
            raise ValueError("controller input/output dimension mismatch")
        object.__setattr__(self, "Ahat", Ahat)
        object.__setattr__(self, "Bhat", Bhat)
        object.__setattr__(self, "Chat", Chat)

    @property
    def n_c(self) -> int:
        return self.Ahat.shape[0]

    @property
    def m(self) -> int:
        return self.Chat.shape[0]

    def as_statespace(self) -> StateSpace:
        return StateSpace(self.Ahat, self.Bhat, self.Chat)


# ---------------------------------------------------------------------------
# Core computations
# ---------------------------------------------------------------------------


def is_hurwitz(A, tol: float = HURWITZ_TOL) -> bool:
    """True iff all eigenvalues of A have real part < -tol."""
    A = _mat(A, "A")
    if A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    return bool(np.max(np.linalg.eigvals(A).real) < -tol)


def solve_lyapunov(A, W) -> np.ndarray:
    """Solve A^T X + X A + W = 0 for symmetric W and Hurwitz A.

    Uses the Schur-form (Bartels-Stewart) solver; the result is
    symmetrized before return.
    """
    A = _mat(A, "A")
    W = _mat(W, "W")
    if not is_hurwitz(A):
        raise UnstableSystemError("A must be Hurwitz for a unique stable Lyapunov solution")
    if np.max(np.abs(W - W.T)) > 1e-10 * max(1.0, np.linalg.norm(W)):
        raise ValueError("W must be symmetric")
    # scipy solves A X + X A^H = Q
    X = scipy.linalg.solve_continuous_lyapunov(A.T, -W)
    X = 0.5 * (X + X.T)
    res = np.linalg.norm(A.T @ X + X @ A + W, "fro")
    scale = np.linalg.norm(A, "fro") * np.linalg.norm(X, "fro") + np.linalg.norm(W, "fro")
    if res > 1e-8 * max(scale, 1e-300):
        warnings.warn(
            f"Lyapunov solve is ill conditioned (residual {res:.3e})",
            ConditioningWarning,
        )
    return X


def h2_norm_sq(sys: StateSpace) -> float:
    """Squared H2 norm tr(B^T X B), X the observability Gramian."""
    if sys.has_feedthrough:
        raise ValueError("H2 norm requires D = 0")
    if not is_hurwitz(sys.A):
        raise UnstableSystemError("H2 norm is infinite for an unstable system")
    X = solve_lyapunov(sys.A, sys.C.T @ sys.C)
    return max(0.0, float(np.trace(sys.B.T @ X @ sys.B)))


def solve_riccati(A, B, Q, R) -> np.ndarray:
    """Stabilizing solution of A^T X + X A - X B R^-1 B^T X + Q = 0.

    Solved by the stable-invariant-subspace method with one Newton
    refinement step (a Lyapunov solve at the closed-loop matrix).
    """
    A = _mat(A, "A")
    B = _mat(B, "B")
    Q = _mat(Q, "Q")
    R = _mat(R, "R")
    try:
        X = scipy.linalg.solve_continuous_are(A, B, Q, R)
    except Exception as exc:
        raise RiccatiError(f"no stabilizing Riccati solution: {exc}") from exc
    X = 0.5 * (X + X.T)
    S = B @ np.linalg.solve(R, B.T)
    resid = A.T @ X + X @ A - X @ S @ X + Q
    Acl = A - S @ X
    if is_hurwitz(Acl, tol=0.0):
        # Newton step: (A - S X)^T D + D (A - S X) = -resid
        try:
            D = scipy.linalg.solve_continuous_lyapunov(Acl.T, -resid)
            Xn = 0.5 * (X + D + (X + D).T)
            if np.linalg.norm(A.T @ Xn + Xn @ A - Xn @ S @ Xn + Q, "fro") < np.linalg.norm(resid, "fro"):
                X = Xn
        except Exception:
            pass
    resid = np.linalg.norm(A.T @ X + X @ A - X @ S @ X + Q, "fro")
    scale = max(1.0, np.linalg.norm(Q, "fro"), np.linalg.norm(X @ S @ X, "fro"))
    if resid > 1e-7 * scale:
        raise RiccatiError(f"Riccati residual {resid:.3e} too large")
    if not is_hurwitz(A - S @ X, tol=0.0):
        raise RiccatiError("Riccati solution is not stabilizing")
    return X


def close_loop(plant: Plant, ctrl: Controller) -> StateSpace:
    """Closed loop of plant and controller under u = -Chat xhat.

    Acl = [[A, -B2 Chat], [Bhat C2, Ahat]],
    Bcl = [B1; Bhat D21], Ccl = [C1, -D12 Chat], Dcl = 0.
    """
    if ctrl.m != plant.m:
        raise ValueError("controller channel dimension does not match plant")
    Acl = np.block([
        [plant.A, -plant.B2 @ ctrl.Chat],
        [ctrl.Bhat @ plant.C2, ctrl.Ahat],
    ])
    Bcl = np.vstack([plant.B1, ctrl.Bhat @ plant.D21])
    Ccl = np.hstack([plant.C1, -plant.D12 @ ctrl.Chat])
    return StateSpace(Acl, Bcl, Ccl, np.zeros((plant.q, plant.p)))


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------


def statespace_to_dict(s: StateSpace) -> dict:
    return {k: getattr(s, k).tolist() for k in ("A", "B", "C", "D")}


def statespace_from_dict(d: dict) -> StateSpace:
    A = np.asarray(d["A"], dtype=float)
    B = np.asarray(d["B"], dtype=float)
    C = np.asarray(d["C"], dtype=float)
    D = np.asarray(d["D"], dtype=float) if "D" in d and d["D"] is not None else None
    return StateSpace(A, B, C, D)


def load_statespace(path) -> StateSpace:
    with open(path) as fh:
        return statespace_from_dict(json.load(fh))


def plant_to_dict(p: Plant) -> dict:
    return {k: getattr(p, k).tolist() for k in ("A", "B1", "B2", "C1", "C2", "D12", "D21")}


def plant_from_dict(d: dict) -> Plant:
    return Plant(**{k: np.asarray(d[k], dtype=float)
                    for k in ("A", "B1", "B2", "C1", "C2", "D12", "D21")})


def controller_to_dict(c: Controller) -> dict:
    return {k: getattr(c, k).tolist() for k in ("Ahat", "Bhat", "Chat")}


def controller_from_dict(d: dict) -> Controller:
    return Controller(**{k: np.asarray(d[k], dtype=float) for k in ("Ahat", "Bhat", "Chat")})


def save_json(obj, path) -> None:
    if isinstance(obj, Plant):
        payload = plant_to_dict(obj)
    elif isinstance(obj, Controller):
        payload = controller_to_dict(obj)
    elif isinstance(obj, StateSpace):
        payload = statespace_to_dict(obj)
    else:
        payload = obj
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def load_plant(path) -> Plant:
    with open(path) as fh:
        return plant_from_dict(json.load(fh))


def load_controller(path) -> Controller:
    with open(path) as fh:
        return controller_from_dict(json.load(fh))
