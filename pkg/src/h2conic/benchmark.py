"""Three-mass spring-damper benchmark with passivity-violating measurements.

Rebuilds the vibration-suppression experiment: a wall-anchored chain of
three masses, an idealized velocity-measured variant and a realistic
variant whose measured outputs are positions passed through the
approximate-derivative filter 25 s / (s^2 + 4 s + 25), a discrete
parameter grid for the masses, springs and dampers, and a controller
comparison (stability and closed-loop squared H2 cost per parameter
set).
"""

from __future__ import annotations

import itertools
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .cones import Cone, csl_check, cst_complement
from .lti import Controller, Plant, close_loop, h2_norm_sq, is_hurwitz

__all__ = [
    "ChainParams",
    "ParamGrid",
    "BenchReport",
    "BenchmarkRun",
    "ITERATIVE_CONIC_TABLE_COST",
    "ITERATIVE_CONIC_TABLE_ITERS",
    "build_chain_plant",
    "augment_with_filter",
    "enumerate_parameter_sets",
    "recompute_plant_sector",
    "run_comparison",
    "run_benchmark",
]

# literature constants quoted for comparison; that design itself is not rebuilt here
ITERATIVE_CONIC_TABLE_COST = 73.74
ITERATIVE_CONIC_TABLE_ITERS = 17


@dataclass(frozen=True)
class ChainParams:
    """Masses (kg), spring constants (N/m), damping (N s/m); all positive."""

    m: tuple[float, float, float]
    k: tuple[float, float, float]
    c: tuple[float, float, float]

    def __post_init__(self):
        for name in ("m", "k", "c"):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != 3 or any(v <= 0.0 for v in vals):
                raise ValueError(f"{name} must be three positive values")
            object.__setattr__(self, name, vals)


@dataclass(frozen=True)
class ParamGrid:
    """Per-parameter discrete value sets; the nominal set is in each."""

    m_values: tuple = (0.3, 1.0, 3.0)
    k_values: tuple = (0.3, 1.0, 3.0)
    c_values: tuple = (0.01, 0.05, 0.1)
    m_nominal: float = 1.0
    k_nominal: float = 1.0
    c_nominal: float = 0.05

    def __post_init__(self):
        if self.m_nominal not in self.m_values or self.k_nominal not in self.k_values \
                or self.c_nominal not in self.c_values:
            raise ValueError("nominal value must be contained in each value set")

    @property
    def nominal(self) -> ChainParams:
        return ChainParams(
            m=(self.m_nominal,) * 3, k=(self.k_nominal,) * 3, c=(self.c_nominal,) * 3
        )


def _chain_matrices(p: ChainParams):
    """Wall-anchored chain: (k1, c1) anchors mass 1, (k2, c2) couples 1-2,
    (k3, c3) couples 2-3.  States interleaved [p1 v1 p2 v2 p3 v3]."""
    m1, m2, m3 = p.m
    k1, k2, k3 = p.k
    c1, c2, c3 = p.c
    A = np.zeros((6, 6))
    for i in range(3):
        A[2 * i, 2 * i + 1] = 1.0
    A[1, 0] = -(k1 + k2) / m1
    A[1, 1] = -(c1 + c2) / m1
    A[1, 2] = k2 / m1
    A[1, 3] = c2 / m1
    A[3, 0] = k2 / m2
    A[3, 1] = c2 / m2
    A[3, 2] = -(k2 + k3) / m2
    A[3, 3] = -(c2 + c3) / m2
    A[3, 4] = k3 / m2
    A[3, 5] = c3 / m2
    A[5, 2] = k3 / m3
    A[5, 3] = c3 / m3
    A[5, 4] = -k3 / m3
    A[5, 5] = -c3 / m3
    return A


def build_chain_plant(p: ChainParams, output: str = "velocity") -> Plant:
    """Generalized plant for the three-mass chain.

    Disturbances are a force w_i1 on each mass and a measurement noise
    w_i2 on each output; performance outputs stack [p_i, v_i, u_i] per
    mass.  ``output`` selects the measurement: "velocity" (idealized
    variant), "position", or "filtered_position" (position through the
    approximate-derivative filter, appending two states per channel).
    """
    if output not in ("velocity", "position", "filtered_position"):
        raise ValueError(f"unknown output selection {output!r}")
    A = _chain_matrices(p)
    # force inputs enter as [0 1]^T per mass
    B2 = np.zeros((6, 3))
    B1 = np.zeros((6, 6))
    D21 = np.zeros((3, 6))
    for i in range(3):
        B2[2 * i + 1, i] = 1.0
        B1[2 * i + 1, 2 * i] = 1.0  # w_i1 force disturbance
        D21[i, 2 * i + 1] = 1.0  # w_i2 measurement noise
    C1 = np.zeros((9, 6))
    D12 = np.zeros((9, 3))
    for i in range(3):
        C1[3 * i, 2 * i] = 1.0  # p_i
        C1[3 * i + 1, 2 * i + 1] = 1.0  # v_i
        D12[3 * i + 2, i] = 1.0  # u_i
    C2 = np.zeros((3, 6))
    for i in range(3):
        C2[i, 2 * i + (1 if output == "velocity" else 0)] = 1.0
    plant = Plant(A=A, B1=B1, B2=B2, C1=C1, C2=C2, D12=D12, D21=D21)
    if output == "filtered_position":
        plant = augment_with_filter(plant)
    return plant


def augment_with_filter(
    plant: Plant,
    num_gain: float = 25.0,
    den_s: float = 4.0,
    den_0: float = 25.0,
) -> Plant:
    """Pass each measured output through num_gain*s / (s^2 + den_s*s + den_0).

    Appends two controllable-canonical filter states per measured
    channel; the filter input is the current measured output C2 x, and
    the measurement noise D21 w stays on the filtered output.
    """
    n, m, p = plant.n, plant.m, plant.p
    Af1 = np.array([[0.0, 1.0], [-den_0, -den_s]])
    Bf1 = np.array([[0.0], [1.0]])
    Cf1 = np.array([[0.0, num_gain]])
    Af = np.kron(np.eye(m), Af1)
    Bf = np.kron(np.eye(m), Bf1)
    Cf = np.kron(np.eye(m), Cf1)
    nf = 2 * m
    A = np.block([
        [plant.A, np.zeros((n, nf))],
        [Bf @ plant.C2, Af],
    ])
    B1 = np.vstack([plant.B1, np.zeros((nf, p))])
    B2 = np.vstack([plant.B2, np.zeros((nf, m))])
    C1 = np.hstack([plant.C1, np.zeros((plant.q, nf))])
    C2 = np.hstack([np.zeros((m, n)), Cf])
    return Plant(A=A, B1=B1, B2=B2, C1=C1, C2=C2, D12=plant.D12, D21=plant.D21)


def enumerate_parameter_sets(
    grid: ParamGrid, mode: str = "full", n: int = 500, seed: int = 0
) -> list[ChainParams]:
    """Full 3^9 factorial, or n seeded draws always including the nominal."""
    if mode == "full":
        sets = []
        for combo in itertools.product(
            grid.m_values, grid.m_values, grid.m_values,
            grid.k_values, grid.k_values, grid.k_values,
            grid.c_values, grid.c_values, grid.c_values,
        ):
            sets.append(ChainParams(m=combo[0:3], k=combo[3:6], c=combo[6:9]))
        return sets
    if mode != "sample":
        raise ValueError("mode must be 'full' or 'sample'")
    if n < 1:
        raise ValueError("sample size must be at least 1")
    rng = np.random.default_rng(seed)
    sets = [grid.nominal]
    for _ in range(n - 1):
        sets.append(ChainParams(
            m=tuple(rng.choice(grid.m_values) for _ in range(3)),
            k=tuple(rng.choice(grid.k_values) for _ in range(3)),
            c=tuple(rng.choice(grid.c_values) for _ in range(3)),
        ))
    return sets


@dataclass
class BenchReport:
    """Stability/cost results over controllers and parameter sets."""

    controller_names: list
    param_sets: list
    stable: dict  # name -> list[bool]
    costs: dict  # name -> list[float] (inf when unstable)
    in_cone: dict  # name -> bool
    iterations: dict  # name -> int | None
    cone: Cone
    output: str = "filtered_position"

    def nominal_costs(self) -> dict:
        return {name: self.costs[name][0] for name in self.controller_names}

    def stable_fraction(self, name: str) -> float:
        flags = self.stable[name]
        return sum(flags) / len(flags)

    def percent_increase(self, reference: float | None = None) -> dict:
        """Percent increase of each nominal cost over a reference cost.

        The reference defaults to the best nominal cost in the report; the
        comparison table uses the unconstrained optimum instead.
        """
        nom = self.nominal_costs()
        ref = min(nom.values()) if reference is None else reference
        return {name: 100.0 * (cost - ref) / ref for name, cost in nom.items()}

    def cost_cdf(self, name: str, thresholds) -> list:
        costs = np.asarray(self.costs[name])
        return [float(np.mean(costs <= thr) * 100.0) for thr in thresholds]

    def regret_percent(self, conic_names) -> dict:
        """Per-set percent excess over the best conic controller on that set."""
        best = np.min(np.vstack([self.costs[n] for n in conic_names]), axis=0)
        out = {}
        for name in conic_names:
            costs = np.asarray(self.costs[name])
            out[name] = (100.0 * (costs - best) / best).tolist()
        return out


def _evaluate_cell(ctrl: Controller, params: ChainParams, output: str):
    plant = build_chain_plant(params, output=output)
    cl = close_loop(plant, ctrl)
    if not is_hurwitz(cl.A):
        return False, float("inf")
    return True, h2_norm_sq(cl)


def run_comparison(
    controllers: dict,
    sets: list,
    cone: Cone,
    output: str = "filtered_position",
    iterations: dict | None = None,
    max_workers: int | None = None,
) -> BenchReport:
    """Evaluate each named controller on each parameter set.

    Parallelism is capped by ``max_workers`` (default: the
    CONIC_SYNTH_THREADS environment variable, else sequential).
    Per-cell failures are recorded as unstable/infinite-cost, never
    raised.
    """
    if max_workers is None:
        max_workers = int(os.environ.get("CONIC_SYNTH_THREADS", "1"))
    names = list(controllers)
    stable = {name: [None] * len(sets) for name in names}
    costs = {name: [None] * len(sets) for name in names}

    def work(item):
        name, idx = item
        try:
            ok, cost = _evaluate_cell(controllers[name], sets[idx], output)
        except Exception:
            ok, cost = False, float("inf")
        return name, idx, ok, cost

    items = [(name, i) for name in names for i in range(len(sets))]
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(it) for it in items]
    for name, idx, ok, cost in results:
        stable[name][idx] = ok
        costs[name][idx] = cost

    in_cone = {}
    for name in names:
        try:
            in_cone[name] = csl_check(controllers[name].as_statespace(), cone) is not None
        except Exception:
            in_cone[name] = False
    return BenchReport(
        controller_names=names,
        param_sets=sets,
        stable=stable,
        costs=costs,
        in_cone=in_cone,
        iterations=dict(iterations or {}),
        cone=cone,
        output=output,
    )


def recompute_plant_sector(
    sets: list,
    b: float,
    output: str = "filtered_position",
    frequencies: np.ndarray | None = None,
) -> tuple[float, float, float]:
    """Tightest lower sector bound covering every parameter set.

    For the fixed upper bound ``b``, finds the largest a such that the
    sampled sector inequality -(1/b) G*G + (1 + a/b) He[G] - a I >= 0
    holds at every grid frequency for every set.  Returns
    (a_required, b, max_gain); a_required < 0 quantifies the worst
    passivity violation across the family.
    """
    if frequencies is None:
        frequencies = np.concatenate([[0.0], np.logspace(-3.0, 4.0, 300)])
    a_req = np.inf
    gain_max = 0.0
    for p in sets:
        chan = build_chain_plant(p, output=output).control_channel()
        for omega in frequencies:
            G = chan.transfer(1j * float(omega))
            He = 0.5 * (G + G.conj().T)
            M0 = -(G.conj().T @ G) / b + He
            neg_M1 = np.eye(G.shape[0]) - He / b
            # constraint is affine in a with slope -neg_M1 < 0, so the
            # admissible region is a <= lambda_min of the definite pencil
            lam = scipy.linalg.eigh(M0, neg_M1, eigvals_only=True)
            a_req = min(a_req, float(lam[0]))
            gain_max = max(gain_max, float(np.linalg.svd(G, compute_uv=False)[0]))
    return float(a_req), float(b), float(gain_max)


@dataclass
class BenchmarkRun:
    """Everything the comparison experiment produced, ready for emission."""

    report: BenchReport
    controllers: dict  # name -> Controller
    histories: dict  # name -> list of per-iteration rows (descent runs only)
    statuses: dict  # name -> descent termination status
    ico_eps_trajectory: list
    plant_cone: Cone
    controller_cone: Cone
    recomputed_sector: tuple  # (a_required, b, max_gain) over the evaluated sets
    reference_cost: float  # unconstrained optimum on the nominal plant
    g1_design_cost: float  # idealized-model optimum evaluated on its own plant


def run_benchmark(
    plant_cone: Cone = Cone(-24.84, 62200.0),
    mode: str = "sample",
    n_sets: int = 500,
    seed: int = 0,
    epsilon: float = 5e-3,
    gamma_reg: float = 0.1,
    max_iters: int = 25,
    max_relax_iters: int = 60,
    grid: ParamGrid | None = None,
    max_workers: int | None = None,
) -> BenchmarkRun:
    """Full controller-comparison experiment on the three-mass chain.

    Designs the idealized-model optimal controller, the minimally
    modified conic controller ("ConicC"), and the two descent-refined
    controllers ("Cnew" from the ConicC start, "Inew" from the
    relaxation start), then evaluates all of them over the parameter
    family.  Controllers are synthesized on the nominal realistic plant;
    the controller cone is the complement of ``plant_cone``.
    """
    from .initializers import IcoFailure, init_conicc, init_ico
    from .synthesis import SynthesisOptions, design_h2_luenberger, run_algorithm1
    from .transform import build_transform, unpack_k

    if grid is None:
        grid = ParamGrid()
    g1 = build_chain_plant(grid.nominal, output="velocity")
    g2 = build_chain_plant(grid.nominal, output="filtered_position")
    cone_c = cst_complement(plant_cone)
    t = build_transform(g2, g2.n, cone_c)
    opts = SynthesisOptions(epsilon=epsilon, gamma_reg=gamma_reg, max_iters=max_iters)

    ctrl_g1 = design_h2_luenberger(g1)
    g1_design_cost = h2_norm_sq(close_loop(g1, ctrl_g1))
    reference_cost = h2_norm_sq(close_loop(g2, design_h2_luenberger(g2)))

    controllers = {"H2-Optimal-G1": ctrl_g1}
    iterations = {"H2-Optimal-G1": None, "ConicC": None}
    histories, statuses = {}, {}

    conicc = init_conicc(g2, g2.n, cone_c, t=t)
    controllers["ConicC"] = unpack_k(conicc.K0, g2.m)
    res_c = run_algorithm1(g2, g2.n, cone_c, conicc.as_iterate(), opts, t=t)
    controllers["Cnew"] = res_c.controller(g2.m)
    histories["Cnew"] = res_c.history
    statuses["Cnew"] = res_c.status
    iterations["Cnew"] = res_c.iterations

    ico_eps = []
    ico = init_ico(g2, g2.n, cone_c, opts=opts, max_relax_iters=max_relax_iters, t=t)
    if isinstance(ico, IcoFailure):
        warnings.warn(
            f"relaxation initialization failed ({ico.status}); comparison "
            "proceeds without the Inew controller",
            UserWarning,
        )
        ico_eps = list(ico.eps_trajectory)
        statuses["Inew"] = f"init-{ico.status}"
    else:
        ico_eps = list(ico.diagnostics.get("eps_trajectory", []))
        res_i = run_algorithm1(g2, g2.n, cone_c, ico.as_iterate(), opts, t=t)
        controllers["Inew"] = res_i.controller(g2.m)
        histories["Inew"] = res_i.history
        statuses["Inew"] = res_i.status
        iterations["Inew"] = res_i.iterations

    sets = enumerate_parameter_sets(grid, mode=mode, n=n_sets, seed=seed)
    report = run_comparison(
        controllers, sets, cone_c, output="filtered_position",
        iterations=iterations, max_workers=max_workers,
    )
    sector = recompute_plant_sector(sets, plant_cone.b)
    return BenchmarkRun(
        report=report,
        controllers=controllers,
        histories=histories,
        statuses=statuses,
        ico_eps_trajectory=ico_eps,
        plant_cone=plant_cone,
        controller_cone=cone_c,
        recomputed_sector=sector,
        reference_cost=reference_cost,
        g1_design_cost=g1_design_cost,
    )
