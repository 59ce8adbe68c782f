"""Block-matrix transformation collecting all controller parameters in K.

Rewrites the plant/controller interconnection so that
Acl = Atil + E K R, Bcl = Btil + E K S, Ccl = Ctil + F K R, and the
controller conic LMI becomes He[Ptil K X] + Gamma <= 0, with every
controller parameter gathered in the single matrix
K = [[0, Chat], [Bhat, Ahat]].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cones import Cone
from .lti import Controller, Plant, StateSpace

__all__ = ["Dims", "TransformData", "pack_k", "unpack_k", "build_transform",
           "assemble_closed_loop", "conic_lmi_matrix", "ptil_of"]


@dataclass(frozen=True)
class Dims:
    n: int
    m: int
    p: int
    q: int
    n_c: int

    @property
    def nx(self) -> int:
        """Closed-loop state dimension n + n_c."""
        return self.n + self.n_c

    @property
    def nk(self) -> int:
        """Side length of K, m + n_c."""
        return self.m + self.n_c

    @property
    def ng(self) -> int:
        """Side length of Gamma, n_c + 2m."""
        return self.n_c + 2 * self.m


@dataclass(frozen=True)
class TransformData:
    """Constant matrices of the closed-loop/conic reformulation."""

    dims: Dims
    Atil: np.ndarray
    Btil: np.ndarray
    Ctil: np.ndarray
    E: np.ndarray
    R: np.ndarray
    S: np.ndarray
    F: np.ndarray
    X: np.ndarray
    Gamma: np.ndarray
    cone: Cone


def pack_k(ctrl: Controller) -> np.ndarray:
    """K = [[0, Chat], [Bhat, Ahat]]; top-left m x m block is zero."""
    m, nc = ctrl.m, ctrl.n_c
    return np.block([
        [np.zeros((m, m)), ctrl.Chat],
        [ctrl.Bhat, ctrl.Ahat],
    ])


def unpack_k(K: np.ndarray, m: int) -> Controller:
    K = np.asarray(K, dtype=float)
    nc = K.shape[0] - m
    if nc < 1 or K.shape[0] != K.shape[1]:
        raise ValueError("K must be square of side m + n_c with n_c >= 1")
    return Controller(Ahat=K[m:, m:], Bhat=K[m:, :m], Chat=K[:m, m:])


def build_transform(plant: Plant, n_c: int, cone_c: Cone) -> TransformData:
    """Assemble the constant transformation blocks for a controller order."""
    if n_c < 1:
        raise ValueError("controller order n_c must be at least 1")
    n, m, p, q = plant.n, plant.m, plant.p, plant.q
    dims = Dims(n=n, m=m, p=p, q=q, n_c=n_c)
    a_c, b_c = cone_c.effective_bounds()

    Atil = np.block([
        [plant.A, np.zeros((n, n_c))],
        [np.zeros((n_c, n)), np.zeros((n_c, n_c))],
    ])
    Btil = np.vstack([plant.B1, np.zeros((n_c, p))])
    Ctil = np.hstack([plant.C1, np.zeros((q, n_c))])
    E = np.block([
        [-plant.B2, np.zeros((n, n_c))],
        [np.zeros((n_c, m)), np.eye(n_c)],
    ])
    R = np.block([
        [plant.C2, np.zeros((m, n_c))],
        [np.zeros((n_c, n)), np.eye(n_c)],
    ])
    S = np.vstack([plant.D21, np.zeros((n_c, p))])
    F = np.hstack([-plant.D12, np.zeros((q, n_c))])
    X = np.block([
        [np.zeros((m, n_c)), np.eye(m), np.zeros((m, m))],
        [np.eye(n_c), np.zeros((n_c, m)), np.zeros((n_c, m))],
    ])
    Im = np.eye(m)
    Gamma = np.block([
        [np.zeros((n_c, n_c)), np.zeros((n_c, m)), np.zeros((n_c, m))],
        [np.zeros((m, n_c)), -((a_c - b_c) ** 2) / (4.0 * b_c) * Im, -0.5 * (a_c + b_c) * Im],
        [np.zeros((m, n_c)), -0.5 * (a_c + b_c) * Im, -b_c * Im],
    ])
    return TransformData(dims=dims, Atil=Atil, Btil=Btil, Ctil=Ctil, E=E, R=R,
                         S=S, F=F, X=X, Gamma=Gamma, cone=cone_c)


def assemble_closed_loop(t: TransformData, K: np.ndarray) -> StateSpace:
    """Closed loop (Atil + E K R, Btil + E K S, Ctil + F K R, 0)."""
    K = np.asarray(K, dtype=float)
    if K.shape != (t.dims.nk, t.dims.nk):
        raise ValueError(f"K must be {t.dims.nk} x {t.dims.nk}")
    Acl = t.Atil + t.E @ K @ t.R
    Bcl = t.Btil + t.E @ K @ t.S
    Ccl = t.Ctil + t.F @ K @ t.R
    return StateSpace(Acl, Bcl, Ccl)


def ptil_of(P: np.ndarray, dims: Dims) -> np.ndarray:
    """Ptil = [[0, P], [0, 0], [I, 0]] with row blocks (n_c, m, m)."""
    nc, m = dims.n_c, dims.m
    return np.block([
        [np.zeros((nc, m)), P],
        [np.zeros((m, m)), np.zeros((m, nc))],
        [np.eye(m), np.zeros((m, nc))],
    ])


def conic_lmi_matrix(t: TransformData, K: np.ndarray, P: np.ndarray) -> np.ndarray:
    """He[Ptil K X] + Gamma, the controller conic constraint matrix."""
    P = np.asarray(P, dtype=float)
    if P.shape != (t.dims.n_c, t.dims.n_c):
        raise ValueError("P must be n_c x n_c")
    M = ptil_of(P, t.dims) @ np.asarray(K, dtype=float) @ t.X
    return M + M.T + t.Gamma
