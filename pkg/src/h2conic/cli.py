"""Batch command-line front end.

Subcommands: ``analyze-cone`` (sector feasibility of a state-space
system), ``init`` (starting-point construction), ``synthesize``
(iterative descent run), ``benchmark`` (full controller comparison).
Configuration comes from TOML or JSON files with command-line flags
taking precedence; artifacts are written atomically and embed the
resolved configuration, so identical config and seed reproduce
byte-identical outputs.

Exit codes: 0 success, 1 infeasible or no convergence (with a
machine-readable error JSON on stdout), 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .benchmark import (
    ITERATIVE_CONIC_TABLE_COST,
    ITERATIVE_CONIC_TABLE_ITERS,
    run_benchmark,
)
from .cones import Cone, ConeCertificate, csl_check, cst_complement, frequency_cone_oracle
from .initializers import (
    IcoFailure,
    InitializationError,
    init_arbitrary,
    init_conicc,
    init_ico,
    w_optimize,
)
from .lti import (
    controller_to_dict,
    load_controller,
    load_plant,
    load_statespace,
)
from .synthesis import SynthesisOptions, run_algorithm1
from .transform import build_transform

__all__ = ["main", "run"]

HISTORY_COLUMNS = ("iter", "Jprime", "Jtrue", "lyap_residual", "conic_residual")


# ---------------------------------------------------------------------------
# Plumbing
# ---------------------------------------------------------------------------


def _atomic_write(path: str, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see halves."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = os.path.join(directory, f".{os.path.basename(path)}.tmp")
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _load_config_file(path: str) -> dict:
    if path.endswith(".toml"):
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path) as fh:
        return json.load(fh)


def _resolve(defaults: dict, file_cfg: dict, flags: dict) -> dict:
    """defaults < config file < explicit flags."""
    cfg = dict(defaults)
    for k, v in file_cfg.items():
        if k not in defaults:
            raise SystemExit(f"unknown config key: {k}")
        cfg[k] = v
    for k, v in flags.items():
        if v is not None:
            cfg[k] = v
    return cfg


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(config: dict, columns, rows) -> str:
    lines = [f"# {k} = {_fmt(config[k])}" for k in sorted(config)]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    return "\n".join(lines) + "\n"


def _json_text(payload: dict) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(f"not serializable: {type(o).__name__}")

    return json.dumps(payload, indent=1, sort_keys=True, default=default) + "\n"


def _fail(code: str, message: str, **extra) -> int:
    print(_json_text({"error": {"code": code, "message": message, **extra}}), end="")
    return 1


def _require_file(parser: argparse.ArgumentParser, path: str, what: str) -> None:
    if path is None:
        parser.error(f"missing required {what} path")
    if not os.path.exists(path):
        parser.error(f"{what} file not found: {path}")


def _controller_cone(cfg: dict) -> Cone:
    """The cone the controller must occupy.

    ``cone`` carries the plant sector digits by default (matching how
    the benchmark sector is quoted); the controller bound is its
    complement.  Set ``cone_role = "controller"`` to pass controller
    bounds directly.
    """
    a, b = float(cfg["cone"][0]), float(cfg["cone"][1])
    if cfg["cone_role"] == "controller":
        return Cone(a, b, strict=True)
    if cfg["cone_role"] != "plant":
        raise SystemExit(f"cone_role must be 'plant' or 'controller', got {cfg['cone_role']!r}")
    return cst_complement(Cone(a, b))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_analyze_cone(parser, args) -> int:
    _require_file(parser, args.sys, "system")
    cfg = {
        "sys": args.sys,
        "cone": [float(args.cone[0]), float(args.cone[1])],
        "form": args.form,
    }
    sys_ = load_statespace(args.sys)
    cone = Cone(cfg["cone"][0], cfg["cone"][1])
    cert = csl_check(sys_, cone, form=args.form)
    freq = frequency_cone_oracle(sys_, cone)
    payload = {
        "config": cfg,
        "feasible": cert is not None,
        "frequency_check": {
            "ok": freq.ok,
            "worst_frequency": freq.worst_frequency,
            "min_eigenvalue": freq.min_eigenvalue,
        },
    }
    if cert is not None:
        payload["certificate"] = {"P": cert.P, "form": cert.form, "residual": cert.residual}
    text = _json_text(payload)
    if args.out:
        _atomic_write(args.out, text)
    print(text, end="")
    if cert is None:
        return _fail("infeasible", "no conic certificate exists for the requested sector",
                     worst_frequency=freq.worst_frequency)
    return 0


_SYNTH_DEFAULTS = {
    "plant": None,
    "nc": None,
    "cone": [-24.84, 62200.0],
    "cone_role": "plant",
    "init": "conicc",
    "controller": None,
    "target": None,
    "delta": 0.1,
    "epsilon": 5e-3,
    "gamma": 0.1,
    "max_iters": 500,
    "w_mode": "identity",
    "seed": 0,
    "out": ".",
}


def _synth_setup(parser, args):
    file_cfg = _load_config_file(args.config) if args.config else {}
    flags = {
        "plant": args.plant,
        "nc": args.nc,
        "cone": [float(args.cone[0]), float(args.cone[1])] if args.cone else None,
        "cone_role": args.cone_role,
        "init": args.init,
        "controller": args.controller,
        "target": args.target,
        "delta": args.delta,
        "epsilon": getattr(args, "epsilon", None),
        "gamma": getattr(args, "gamma", None),
        "max_iters": getattr(args, "max_iters", None),
        "w_mode": getattr(args, "w_mode", None),
        "seed": args.seed,
        "out": args.out,
    }
    cfg = _resolve(_SYNTH_DEFAULTS, file_cfg, flags)
    _require_file(parser, cfg["plant"], "plant")
    plant = load_plant(cfg["plant"])
    if cfg["nc"] is None:
        cfg["nc"] = plant.n
    cfg["nc"] = int(cfg["nc"])
    cone_c = _controller_cone(cfg)
    t = build_transform(plant, cfg["nc"], cone_c)
    return cfg, plant, cone_c, t


def _build_init(cfg, plant, cone_c, t):
    method = cfg["init"]
    if method == "arbitrary":
        if not cfg["controller"]:
            raise InitializationError("arbitrary initialization requires a controller file")
        return init_arbitrary(t, load_controller(cfg["controller"]))
    target = load_controller(cfg["target"]) if cfg["target"] else None
    if method == "conicc":
        return init_conicc(plant, cfg["nc"], cone_c, target=target, t=t)
    if method == "ico":
        return init_ico(plant, cfg["nc"], cone_c, delta=float(cfg["delta"]),
                        target=target, t=t)
    raise SystemExit(f"unknown init method {method!r}")


def _cmd_init(parser, args) -> int:
    cfg, plant, cone_c, t = _synth_setup(parser, args)
    try:
        res = _build_init(cfg, plant, cone_c, t)
    except InitializationError as exc:
        return _fail("initialization-failed", str(exc))
    if isinstance(res, IcoFailure):
        return _fail("no-convergence", res.message, status=res.status,
                     eps_trajectory=res.eps_trajectory)
    payload = {
        "config": cfg,
        "provenance": res.provenance,
        "K0": res.K0,
        "Q0": res.Q0,
        "P0": res.P0,
        "diagnostics": res.diagnostics,
    }
    out = os.path.join(cfg["out"], "init.json")
    _atomic_write(out, _json_text(payload))
    print(f"wrote {out}")
    return 0


def _cmd_synthesize(parser, args) -> int:
    cfg, plant, cone_c, t = _synth_setup(parser, args)
    opts = SynthesisOptions(
        epsilon=float(cfg["epsilon"]),
        gamma_reg=float(cfg["gamma"]),
        max_iters=int(cfg["max_iters"]),
    )
    if cfg["w_mode"] == "optimize":
        W1, W2 = w_optimize(t)
        opts = SynthesisOptions(
            epsilon=opts.epsilon, gamma_reg=opts.gamma_reg,
            max_iters=opts.max_iters, W1=W1, W2=W2,
        )
    elif cfg["w_mode"] != "identity":
        raise SystemExit(f"w_mode must be 'identity' or 'optimize', got {cfg['w_mode']!r}")

    try:
        init = _build_init(cfg, plant, cone_c, t)
    except InitializationError as exc:
        return _fail("initialization-failed", str(exc))
    if isinstance(init, IcoFailure):
        return _fail("no-convergence", init.message, status=init.status,
                     eps_trajectory=init.eps_trajectory)

    result = run_algorithm1(plant, cfg["nc"], cone_c, init.as_iterate(), opts, t=t)
    ctrl = result.controller(plant.m)

    flat_cfg = dict(cfg)
    flat_cfg["cone"] = f"({cfg['cone'][0]} {cfg['cone'][1]})"
    rows = [
        (r["iter"], r["jprime"], r["jtrue"], r["lyap_residual"], r["conic_residual"])
        for r in result.history
    ]
    _atomic_write(os.path.join(cfg["out"], "history.csv"),
                  _csv_text(flat_cfg, HISTORY_COLUMNS, rows))
    payload = {
        "config": cfg,
        "controller": controller_to_dict(ctrl),
        "status": result.status,
        "iterations": result.iterations,
        "Jprime": result.state.jprime,
        "Jtrue": result.state.jtrue,
        "init_diagnostics": init.diagnostics,
    }
    _atomic_write(os.path.join(cfg["out"], "controller.json"), _json_text(payload))
    print(f"wrote {os.path.join(cfg['out'], 'controller.json')} "
          f"and {os.path.join(cfg['out'], 'history.csv')}")
    if result.status not in ("converged", "max-iters"):
        return _fail("no-convergence", f"descent terminated with status {result.status}",
                     status=result.status, iterations=result.iterations)
    return 0


_BENCH_DEFAULTS = {
    "cone": [-24.84, 62200.0],
    "mode": "sample",
    "n": 500,
    "seed": 0,
    "epsilon": 5e-3,
    "gamma": 0.1,
    "max_iters": 25,
    "max_relax_iters": 60,
    "out": ".",
}


def _cmd_benchmark(parser, args) -> int:
    file_cfg = _load_config_file(args.config) if args.config else {}
    flags = {
        "cone": [float(args.cone[0]), float(args.cone[1])] if args.cone else None,
        "mode": args.mode,
        "n": args.n,
        "seed": args.seed,
        "epsilon": args.epsilon,
        "gamma": args.gamma,
        "max_iters": args.max_iters,
        "max_relax_iters": args.max_relax_iters,
        "out": args.out,
    }
    cfg = _resolve(_BENCH_DEFAULTS, file_cfg, flags)
    plant_cone = Cone(float(cfg["cone"][0]), float(cfg["cone"][1]))
    run = run_benchmark(
        plant_cone=plant_cone,
        mode=cfg["mode"],
        n_sets=int(cfg["n"]),
        seed=int(cfg["seed"]),
        epsilon=float(cfg["epsilon"]),
        gamma_reg=float(cfg["gamma"]),
        max_iters=int(cfg["max_iters"]),
        max_relax_iters=int(cfg["max_relax_iters"]),
    )
    report = run.report
    flat_cfg = dict(cfg)
    flat_cfg["cone"] = f"({cfg['cone'][0]} {cfg['cone'][1]})"
    out = cfg["out"]

    # summary table: nominal cost, percent increase over the unconstrained
    # optimum, iteration count, cone membership
    pct = report.percent_increase(reference=run.reference_cost)
    lit_pct = 100.0 * (ITERATIVE_CONIC_TABLE_COST - run.reference_cost) / run.reference_cost
    rows = []
    for name in report.controller_names:
        rows.append((
            name,
            report.nominal_costs()[name],
            pct[name],
            report.iterations.get(name) if report.iterations.get(name) is not None else "n/a",
            "yes" if report.in_cone[name] else "no",
            "computed",
        ))
        if name == "ConicC":
            rows.append(("IterativeConic", ITERATIVE_CONIC_TABLE_COST, lit_pct,
                         ITERATIVE_CONIC_TABLE_ITERS, "yes", "literature"))
    _atomic_write(os.path.join(out, "table1.csv"), _csv_text(
        flat_cfg,
        ("controller", "cost_nominal", "pct_increase_vs_optimal", "iterations",
         "in_cone", "source"),
        rows,
    ))

    # cumulative cost histogram over the parameter family
    finite = [c for name in report.controller_names
              for c in report.costs[name] if np.isfinite(c)]
    top = max(finite) * 1.05 if finite else 1.0
    thresholds = np.linspace(0.0, top, 101)
    cdf = {name: report.cost_cdf(name, thresholds) for name in report.controller_names}
    rows = [(float(thr),) + tuple(cdf[name][i] for name in report.controller_names)
            for i, thr in enumerate(thresholds)]
    _atomic_write(os.path.join(out, "histogram_cost.csv"), _csv_text(
        flat_cfg, ("cost_threshold",) + tuple(report.controller_names), rows))

    # regret vs the best conic controller per parameter set
    conic_names = [n for n in report.controller_names if report.in_cone[n]]
    regret = report.regret_percent(conic_names) if conic_names else {}
    pct_grid = np.linspace(0.0, 100.0, 101)
    rows = []
    for thr in pct_grid:
        row = [float(thr)]
        for name in conic_names:
            vals = np.asarray(regret[name])
            row.append(float(np.mean(vals <= thr) * 100.0))
        rows.append(tuple(row))
    _atomic_write(os.path.join(out, "histogram_regret.csv"), _csv_text(
        flat_cfg, ("regret_pct_threshold",) + tuple(conic_names), rows))

    # descent trajectories plus the relaxation-phase violation curve
    rows = []
    for i, eps in enumerate(run.ico_eps_trajectory):
        rows.append(("ico-init", "Inew", i, "", "", eps))
    for name in sorted(run.histories):
        for r in run.histories[name]:
            rows.append(("descent", name, r["iter"], r["jprime"], r["jtrue"], ""))
    _atomic_write(os.path.join(out, "design_curves.csv"), _csv_text(
        flat_cfg, ("phase", "controller", "iter", "Jprime", "Jtrue", "eps"), rows))

    payload = {
        "config": cfg,
        "reference_cost": run.reference_cost,
        "g1_design_cost": run.g1_design_cost,
        "controller_cone": [run.controller_cone.a, run.controller_cone.b],
        "plant_cone_quoted": [run.plant_cone.a, run.plant_cone.b],
        "plant_sector_recomputed": {
            "a_required": run.recomputed_sector[0],
            "b": run.recomputed_sector[1],
            "max_gain": run.recomputed_sector[2],
        },
        "nominal_costs": report.nominal_costs(),
        "stable_fraction": {n: report.stable_fraction(n) for n in report.controller_names},
        "in_cone": report.in_cone,
        "statuses": run.statuses,
        "n_sets": len(report.param_sets),
    }
    _atomic_write(os.path.join(out, "report.json"), _json_text(payload))
    print(f"wrote table1.csv, histogram_cost.csv, histogram_regret.csv, "
          f"design_curves.csv, report.json in {out}")

    missing = [n for n in ("Cnew", "Inew") if n not in report.controller_names]
    if missing:
        return _fail("no-convergence",
                     f"synthesis did not produce: {', '.join(missing)}",
                     statuses=run.statuses)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_synth_args(sub, include_algorithm: bool):
    sub.add_argument("--config", help="TOML or JSON config file")
    sub.add_argument("--plant", help="plant JSON file")
    sub.add_argument("--nc", type=int, help="controller order (default: plant order)")
    sub.add_argument("--cone", nargs=2, type=float, metavar=("A", "B"),
                     help="sector bounds (plant sector unless --cone-role controller)")
    sub.add_argument("--cone-role", dest="cone_role", choices=("plant", "controller"))
    sub.add_argument("--init", choices=("conicc", "ico", "arbitrary"))
    sub.add_argument("--controller", help="controller JSON (arbitrary init)")
    sub.add_argument("--target", help="target controller JSON (conicc/ico)")
    sub.add_argument("--delta", type=float, help="relaxation cost-cap increment")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out", help="output directory")
    if include_algorithm:
        sub.add_argument("--epsilon", type=float, help="descent stopping tolerance")
        sub.add_argument("--gamma", type=float, help="step regularization weight")
        sub.add_argument("--max-iters", dest="max_iters", type=int)
        sub.add_argument("--w", dest="w_mode", choices=("identity", "optimize"))


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="h2conic",
        description="Fixed-order H2 controller synthesis under conic sector constraints",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("analyze-cone", help="sector feasibility of a state-space system")
    p.add_argument("--sys", help="state-space JSON file")
    p.add_argument("--cone", nargs=2, type=float, metavar=("A", "B"), required=True)
    p.add_argument("--form", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--out", help="optional output JSON path")

    p = subs.add_parser("init", help="construct a feasible starting point")
    _add_synth_args(p, include_algorithm=False)

    p = subs.add_parser("synthesize", help="run the iterative descent")
    _add_synth_args(p, include_algorithm=True)

    p = subs.add_parser("benchmark", help="three-mass chain controller comparison")
    p.add_argument("--config", help="TOML or JSON config file")
    p.add_argument("--cone", nargs=2, type=float, metavar=("A", "B"))
    p.add_argument("--mode", choices=("sample", "full"))
    p.add_argument("--n", type=int, help="number of sampled parameter sets")
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--max-relax-iters", dest="max_relax_iters", type=int)
    p.add_argument("--out", help="output directory")
    return parser


def run(argv=None) -> int:
    parser = _make_parser()
    args = parser.parse_args(argv)
    commands = {
        "analyze-cone": _cmd_analyze_cone,
        "init": _cmd_init,
        "synthesize": _cmd_synthesize,
        "benchmark": _cmd_benchmark,
    }
    return commands[args.command](parser, args)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
