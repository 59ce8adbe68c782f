"""Shared helpers for the test suite."""

import numpy as np
import pytest

from h2conic.lti import StateSpace


def random_stable_system(rng, n, m, spread=1.0):
    """Random square system with A shifted to be comfortably Hurwitz."""
    A = spread * rng.standard_normal((n, n))
    shift = max(0.0, float(np.max(np.linalg.eigvals(A).real))) + 0.5 + rng.uniform(0.0, 1.0)
    A = A - shift * np.eye(n)
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((m, n))
    return StateSpace(A, B, C)


def random_spd(rng, n, cond_cap=100.0):
    """Random symmetric positive definite matrix with bounded conditioning."""
    M = rng.standard_normal((n, n))
    Q, _ = np.linalg.qr(M)
    lam = rng.uniform(1.0 / np.sqrt(cond_cap), np.sqrt(cond_cap), size=n)
    return (Q * lam) @ Q.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
