"""Synthesize the nominal-chain controllers and store them for inspection.

Produces, in the output directory (default ``results/design``):

- ``controllers.json``: the ConicC starting controller, the descent
  result from the ConicC start ("Cnew") and the descent result from the
  relaxation start ("Inew"), with nominal closed-loop costs, statuses
  and iteration counts.
- ``history_cnew.csv`` / ``history_inew.csv``: per-iteration descent
  records (J', Jtrue, feasibility residuals).
- ``ico_eps.json``: the constraint-violation trajectory of the
  relaxation initialization.

The descent phases run in chunks and checkpoint their state, so an
interrupted run resumes where it stopped.  A full fresh run takes tens
of minutes on one core; most of it is the relaxation initialization.
"""

import argparse
import json
import os

import numpy as np

from h2conic.benchmark import ParamGrid, build_chain_plant
from h2conic.cones import Cone, cst_complement
from h2conic.initializers import IcoFailure, init_conicc, init_ico
from h2conic.lti import close_loop, controller_to_dict, h2_norm_sq
from h2conic.synthesis import (
    IterateState,
    SynthesisOptions,
    design_h2_luenberger,
    run_algorithm1,
)
from h2conic.transform import build_transform, unpack_k

PLANT_CONE = Cone(-24.84, 62200.0)
HISTORY_COLUMNS = ("iter", "Jprime", "Jtrue", "lyap_residual", "conic_residual")


def _save_state(path, state, iters, status, done):
    np.savez(path, K=state.K, Q=state.Q, P=state.P,
             jprime=state.jprime, jtrue=state.jtrue,
             iters=iters, status=status, done=done)


def _load_state(path):
    d = np.load(path, allow_pickle=False)
    state = IterateState(K=d["K"], Q=d["Q"], P=d["P"],
                         jprime=float(d["jprime"]), jtrue=float(d["jtrue"]))
    return state, int(d["iters"]), str(d["status"]), bool(d["done"])


def _append_history(path, rows, offset):
    new_file = not os.path.exists(path)
    with open(path, "a") as fh:
        if new_file:
            fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(map(repr, (
                offset + r["iter"], r["jprime"], r["jtrue"],
                r["lyap_residual"], r["conic_residual"]))) + "\n")


def _descend(tag, plant, cone_c, t, start, opts, out, chunk, budget):
    """Chunked descent with checkpointing; returns (state, iters, status)."""
    state_path = os.path.join(out, f"state_{tag}.npz")
    hist_path = os.path.join(out, f"history_{tag}.csv")
    if os.path.exists(state_path):
        state, iters, status, done = _load_state(state_path)
        if done:
            return state, iters, status
    else:
        state, iters = start, 0
    while iters < budget:
        step_opts = SynthesisOptions(
            epsilon=opts.epsilon, gamma_reg=opts.gamma_reg,
            max_iters=min(chunk, budget - iters),
            W1=opts.W1, W2=opts.W2, feas_tol=opts.feas_tol, solver=opts.solver,
        )
        res = run_algorithm1(plant, t.dims.n_c, cone_c, state, step_opts, t=t)
        # drop the duplicated starting row on continuation chunks
        rows = res.history if iters == 0 else res.history[1:]
        _append_history(hist_path, rows, offset=iters)
        state = res.state
        iters += res.iterations
        done = res.status != "max-iters"
        _save_state(state_path, state, iters, res.status, done)
        print(f"{tag}: +{res.iterations} iters (total {iters}), "
              f"J'={state.jprime:.4f}, Jtrue={state.jtrue:.4f}, {res.status}")
        if done:
            return state, iters, res.status
    return state, iters, "max-iters"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results/design")
    parser.add_argument("--chunk", type=int, default=5, help="iterations per checkpoint")
    parser.add_argument("--budget-cnew", type=int, default=150)
    parser.add_argument("--budget-inew", type=int, default=60)
    parser.add_argument("--max-relax-iters", type=int, default=60)
    parser.add_argument("--epsilon", type=float, default=5e-3)
    parser.add_argument("--gamma", type=float, default=0.1)
    parser.add_argument("--cnew-only", action="store_true",
                        help="run only the ConicC branch (phase the study)")
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)

    g2 = build_chain_plant(ParamGrid().nominal, output="filtered_position")
    cone_c = cst_complement(PLANT_CONE)
    t = build_transform(g2, g2.n, cone_c)
    opts = SynthesisOptions(epsilon=args.epsilon, gamma_reg=args.gamma)

    conicc = init_conicc(g2, g2.n, cone_c, t=t)
    print(f"ConicC init: Jtrue={conicc.diagnostics['jtrue']:.4f}")
    cnew_state, cnew_iters, cnew_status = _descend(
        "cnew", g2, cone_c, t, conicc.as_iterate(), opts,
        args.out, args.chunk, args.budget_cnew)
    if args.cnew_only:
        print("stopping after the ConicC branch (--cnew-only)")
        return 0

    ico_json = os.path.join(args.out, "ico_init.json")
    if os.path.exists(ico_json):
        with open(ico_json) as fh:
            ico_data = json.load(fh)
        ico_start = IterateState(
            K=np.asarray(ico_data["K0"]), Q=np.asarray(ico_data["Q0"]),
            P=np.asarray(ico_data["P0"]),
            jprime=float(ico_data["jtrue"]), jtrue=float(ico_data["jtrue"]))
        ico_eps = ico_data["eps_trajectory"]
        ico_ok = True
    else:
        ico = init_ico(g2, g2.n, cone_c, opts=opts,
                       max_relax_iters=args.max_relax_iters, t=t)
        if isinstance(ico, IcoFailure):
            print(f"relaxation init failed: {ico.status} ({ico.message})")
            ico_eps, ico_ok = list(ico.eps_trajectory), False
        else:
            ico_eps, ico_ok = list(ico.diagnostics["eps_trajectory"]), True
            with open(ico_json, "w") as fh:
                json.dump({"K0": ico.K0.tolist(), "Q0": ico.Q0.tolist(),
                           "P0": ico.P0.tolist(),
                           "jtrue": ico.diagnostics["jtrue"],
                           "relax_iterations": ico.diagnostics["relax_iterations"],
                           "eps_trajectory": ico_eps}, fh, indent=1)
            ico_start = ico.as_iterate()
    with open(os.path.join(args.out, "ico_eps.json"), "w") as fh:
        json.dump({"converged": ico_ok, "eps_trajectory": ico_eps}, fh, indent=1)

    controllers = {"ConicC": conicc.K0, "Cnew": cnew_state.K}
    meta = {
        "ConicC": {"iterations": None, "status": "init",
                   "cost_nominal": conicc.diagnostics["jtrue"]},
        "Cnew": {"iterations": cnew_iters, "status": cnew_status,
                 "cost_nominal": cnew_state.jtrue},
    }
    if ico_ok:
        inew_state, inew_iters, inew_status = _descend(
            "inew", g2, cone_c, t, ico_start, opts,
            args.out, args.chunk, args.budget_inew)
        controllers["Inew"] = inew_state.K
        meta["Inew"] = {"iterations": inew_iters, "status": inew_status,
                        "cost_nominal": inew_state.jtrue}

    payload = {"plant_cone": [PLANT_CONE.a, PLANT_CONE.b],
               "controller_cone": [cone_c.a, cone_c.b],
               "reference_cost": h2_norm_sq(close_loop(g2, design_h2_luenberger(g2))),
               "controllers": {}}
    for name, K in controllers.items():
        payload["controllers"][name] = {
            **controller_to_dict(unpack_k(K, g2.m)), **meta[name],
        }
    with open(os.path.join(args.out, "controllers.json"), "w") as fh:
        json.dump(payload, fh, indent=1)
    print(f"wrote controllers.json in {args.out}")
    return 0 if ico_ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
