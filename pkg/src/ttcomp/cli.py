"""``ttc`` command line.

Every subcommand accepts ``--config file.json``; explicit flags override the
values read from it.  Recognised keys: shape, ranks, n, trials, seed,
step_constant, nu, mu, trim, max_iters, rel_change_tol, success_tol, jobs, out.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import bench
from .completion import CompletionConfig, rgrad_complete
from .diagnostics import diagnose, relative_error
from .observations import read_observations, sample_uniform, write_observations
from .spectral_init import InitConfig, initialize, naive_init
from .tt import load_tt, random_tt, save_tt, tt_full, tt_svd

CONFIG_KEYS = (
    "shape", "ranks", "n", "trials", "seed", "step_constant", "nu", "mu", "trim",
    "max_iters", "rel_change_tol", "success_tol", "jobs", "out",
)


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.replace("x", ",").split(",") if t.strip()]


def _rank_list(text: str) -> list[list[int]]:
    """``"2,2;4,4"`` -> ``[[2, 2], [4, 4]]``."""
    return [_ints(part) for part in text.split(";") if part.strip()]


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def load_config(args) -> dict:
    cfg: dict = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = json.load(fh)
        unknown = set(cfg) - set(CONFIG_KEYS) - {"d", "kind", "init", "order"}
        if unknown:
            raise SystemExit(f"unknown config keys: {sorted(unknown)}")
    for key in CONFIG_KEYS + ("d",):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _need(cfg: dict, key: str):
    if cfg.get(key) is None:
        raise SystemExit(f"missing required setting: {key}")
    return cfg[key]


def _completion_config(cfg: dict, ranks) -> CompletionConfig:
    kw = {k: cfg[k] for k in ("step_constant", "nu", "trim", "max_iters", "rel_change_tol",
                              "success_tol", "seed") if cfg.get(k) is not None}
    return CompletionConfig(ranks=ranks, **kw)


def _init_config(cfg: dict) -> InitConfig:
    return InitConfig(nu=cfg.get("nu"), mu=cfg.get("mu"), seed=cfg.get("seed", 0) or 0)


def cmd_gen(args) -> int:
    cfg = load_config(args)
    shape, ranks = _need(cfg, "shape"), _need(cfg, "ranks")
    n, seed = _need(cfg, "n"), cfg.get("seed", 0)
    truth_ss, sample_ss = np.random.SeedSequence(seed).spawn(2)
    truth = random_tt(shape, ranks, np.random.default_rng(truth_ss))
    obs = sample_uniform(shape, n, np.random.default_rng(sample_ss), truth)
    save_tt(truth, args.truth)
    write_observations(obs, args.obs)
    print(json.dumps({"truth": args.truth, "obs": args.obs, "shape": list(truth.shape),
                      "ranks": list(truth.ranks), "n": len(obs)}))
    return 0


def cmd_ttsvd(args) -> int:
    cfg = load_config(args)
    A = np.load(args.input)
    T = tt_svd(A, _need(cfg, "ranks"))
    out = _need(cfg, "out")
    save_tt(T, out)
    print(json.dumps({"out": out, "ranks": list(T.ranks),
                      "rel_err": relative_error(tt_full(T), A)}))
    return 0


def cmd_init(args) -> int:
    cfg = load_config(args)
    obs = read_observations(args.obs)
    ranks = _need(cfg, "ranks")
    if args.naive_init:
        T0, report = naive_init(obs, ranks), {"method": "naive"}
    else:
        T0, rep = initialize(obs, ranks, _init_config(cfg), return_report=True)
        report = {"method": "spectral", **rep.as_dict()}
    out = _need(cfg, "out")
    save_tt(T0, out)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=2)
    print(json.dumps(report))
    return 0


def cmd_complete(args) -> int:
    cfg = load_config(args)
    obs = read_observations(args.obs)
    ranks = _need(cfg, "ranks")
    if args.init:
        T0 = load_tt(args.init)
    elif args.naive_init:
        T0 = naive_init(obs, ranks)
    else:
        T0 = initialize(obs, ranks, _init_config(cfg))
    truth = load_tt(args.truth) if args.truth else None
    T, trace = rgrad_complete(obs, _completion_config(cfg, ranks), T0, truth=truth)
    out = _need(cfg, "out")
    save_tt(T, out)
    if args.trace:
        trace.to_csv(args.trace, with_error=truth is not None)
    summary = {"out": out, "status": trace.status, "iters": trace.iterations,
               "retraction": trace.retraction, "nu": trace.nu, "f": trace.records[trace.best_iter].f}
    if truth is not None:
        summary["rel_err"] = relative_error(T, truth)
    print(json.dumps(summary))
    return 0


def cmd_diag(args) -> int:
    if args.input.endswith(".npy"):
        T = np.load(args.input)
    else:
        T = load_tt(args.input)
    ref = None
    if args.reference:
        ref = np.load(args.reference) if args.reference.endswith(".npy") else load_tt(args.reference)
    ranks = _ints(args.ranks) if isinstance(args.ranks, str) else args.ranks
    print(diagnose(T, ranks=ranks, reference=ref).to_json(indent=2))
    return 0


def _experiment_spec(cfg: dict, kind: str, args) -> bench.ExperimentSpec:
    spec = {"kind": kind}
    if cfg.get("d") is not None:
        spec["d_values"] = cfg["d"] if isinstance(cfg["d"], list) else [cfg["d"]]
    elif cfg.get("shape") is not None:
        spec["d_values"], spec["order"] = [cfg["shape"][0]], len(cfg["shape"])
    if cfg.get("order") is not None:
        spec["order"] = cfg["order"]
    ranks = cfg.get("ranks")
    if ranks is not None:
        spec["rank_values"] = ranks if ranks and isinstance(ranks[0], list) else [ranks]
        spec.setdefault("order", len(spec["rank_values"][0]) + 1)
    n = cfg.get("n")
    if n is not None:
        spec["n_values"] = n if isinstance(n, list) else [n]
    if getattr(args, "naive_init", False):
        spec["init"] = "naive"
    elif cfg.get("init"):
        spec["init"] = cfg["init"]
    for key in ("trials", "seed", "step_constant", "nu", "mu", "trim", "max_iters",
                "rel_change_tol", "success_tol", "jobs", "out"):
        if cfg.get(key) is not None:
            spec[key] = cfg[key]
    return bench.ExperimentSpec(**spec)


def _print_rates(results) -> None:
    for (d, ranks, n), p in bench.success_rates(results).items():
        print(f"d={d} ranks={'x'.join(map(str, ranks))} n={n} success={p:.2f}")


def cmd_phase(args) -> int:
    spec = _experiment_spec(load_config(args), "phase-grid", args)
    results = bench.run_phase_grid(spec)
    if not spec.out:
        sys.stdout.write(bench.cells_csv(results))
    _print_rates(results)
    return 0


def cmd_ranksweep(args) -> int:
    spec = _experiment_spec(load_config(args), "rank-sweep", args)
    results = bench.run_rank_sweep(spec)
    if not spec.out:
        sys.stdout.write(bench.cells_csv(results))
    _print_rates(results)
    return 0


def cmd_convergence(args) -> int:
    spec = _experiment_spec(load_config(args), "convergence", args)
    res = bench.run_convergence(spec)
    print(json.dumps({"iters": res.trace.iterations, "status": res.trace.status,
                      "init_rel_err": res.init_rel_err, "final_rel_err": res.final_rel_err,
                      "out": spec.out}))
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args)
    cfg.setdefault("rel_change_tol", 1e-3)
    spec = _experiment_spec(cfg, "runtime", args)
    rows = bench.run_runtime(spec)
    for r in rows:
        print(f"d={r['d']} ranks={r['ranks']} trial={r['trial']} iters={r['iters']} "
              f"total_ms={r['total_ms']:.1f} per_iter_ms={r['per_iter_ms']:.2f}")
    return 0


def _common(p: argparse.ArgumentParser, experiment: bool = False) -> None:
    p.add_argument("--config", help="JSON file with default settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--nu", type=float)
    p.add_argument("--mu", type=float)
    if experiment:
        p.add_argument("--d", type=_ints, help="dimension(s), comma separated")
        p.add_argument("--ranks", type=_rank_list, help="rank vectors, e.g. '2,2;4,4'")
        p.add_argument("--n", type=_ints, help="sample sizes, comma separated")
        p.add_argument("--trials", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--naive-init", action="store_true")
    else:
        p.add_argument("--ranks", type=_ints)
    p.add_argument("--step-constant", dest="step_constant", type=float)
    p.add_argument("--trim", type=_bool)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--rel-change-tol", dest="rel_change_tol", type=float)
    p.add_argument("--success-tol", dest="success_tol", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttc", description="Tensor-train completion tools")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="random TT truth plus sampled observations")
    _common(p)
    p.add_argument("--shape", type=_ints)
    p.add_argument("--n", type=int)
    p.add_argument("--truth", required=True, help="output TT container")
    p.add_argument("--obs", required=True, help="output observation file")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("ttsvd", help="TT-SVD of a dense .npy tensor")
    _common(p)
    p.add_argument("input")
    p.set_defaults(func=cmd_ttsvd)

    p = sub.add_parser("init", help="initial estimate from observations")
    _common(p)
    p.add_argument("--obs", required=True)
    p.add_argument("--report", help="write the JSON report here as well")
    p.add_argument("--naive-init", action="store_true")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("complete", help="run Riemannian gradient descent")
    _common(p)
    p.add_argument("--obs", required=True)
    p.add_argument("--init", help="start from this TT container")
    p.add_argument("--naive-init", action="store_true")
    p.add_argument("--truth", help="TT container of the truth, adds an err column")
    p.add_argument("--trace", help="write the per-iteration trace CSV here")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("diag", help="diagnostics of a TT container or .npy tensor")
    p.add_argument("input")
    p.add_argument("--ranks", help="ranks for dense input, comma separated")
    p.add_argument("--reference", help="reference tensor for the relative error")
    p.set_defaults(func=cmd_diag)

    for name, func, helptext in (
        ("phase", cmd_phase, "success-rate grid over (d, n)"),
        ("ranksweep", cmd_ranksweep, "success-rate grid over (ranks, n)"),
        ("convergence", cmd_convergence, "per-iteration error trace"),
        ("bench", cmd_bench, "wall-time benchmark"),
    ):
        p = sub.add_parser(name, help=helptext)
        _common(p, experiment=True)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
