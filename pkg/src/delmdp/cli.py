"""Command-line entry point (``delmdp``).

Exit codes: 0 success, 2 usage, 3 invalid input, 4 planning failure,
5 LP failure, 1 any other package error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .envs import TwoClusterParams, make_random_ergodic, make_two_cluster
from .errors import DelMdpError, ReducibleChainError, ValidationError
from .harness import OUTPUT_ENV, load_config, resolve_output_dir, run_experiment, sweep_sizes
from .io import load_mdp, save_mdp
from .mdp import PROVEN_NOT_ERGODIC, delta_star, solve_optimal, validate_mdp
from .structure import LIPSCHITZ, UNSTRUCTURED, StructureSpec, covering_bounds, k_un_bound, lower_bound


def _fmt_vec(v):
    return " ".join(f"{x:.10g}" for x in v)


def _table(name, M):
    lines = [f"{name}:", "  x\\a " + " ".join(f"{a:>14d}" for a in range(M.shape[1]))]
    for x, row in enumerate(M):
        lines.append(f"  {x:<4d}" + " ".join(f"{v:>14.10g}" for v in row))
    return "\n".join(lines)


def _checked_mdp(path):
    mdp = load_mdp(path)
    rep = validate_mdp(mdp)
    if rep.errors:
        raise ValidationError(rep.errors[0])
    if rep.ergodicity == PROVEN_NOT_ERGODIC:
        raise ReducibleChainError(f"MDP is not ergodic; policy {rep.witness.tolist()} induces a reducible chain")
    return mdp, rep


def cmd_solve(args):
    mdp, rep = _checked_mdp(args.mdp)
    sol = solve_optimal(mdp, ref_state=args.ref)
    gaps = delta_star(mdp, sol)
    print(f"ergodicity: {rep.ergodicity}")
    print(f"g*: {sol.gain:.12g}")
    print(f"h*: {_fmt_vec(sol.bias)}")
    print(f"policy: {' '.join(str(int(a)) for a in sol.policy)}")
    print(f"span H: {gaps.span:.12g}")
    print(f"delta_min: {gaps.delta_min:.12g}")
    print(_table("delta*", gaps.delta))
    return 0


def cmd_lb(args):
    mdp, _ = _checked_mdp(args.mdp)
    gaps = delta_star(mdp, solve_optimal(mdp))
    if args.structure == LIPSCHITZ:
        if not mdp.has_embeddings:
            raise ValidationError("the Lipschitz structure needs state_embedding and action_embedding in the MDP file")
        spec = StructureSpec.lipschitz(args.L, args.Lp, args.alpha, args.alphap, mdp)
    else:
        spec = StructureSpec.unstructured()
    rates = lower_bound(spec, gaps)
    print(f"structure: {spec.kind}")
    print(f"feasible: {rates.feasible}")
    print(f"K: {rates.objective:.12g}")
    print(_table("eta", rates.eta))
    if np.isfinite(gaps.delta_min):
        print(f"K_un bound 2(H+1)^2 SA/delta_min: {k_un_bound(gaps):.12g}")
        if spec.is_lipschitz:
            cov = covering_bounds(spec, gaps)
            print(f"S_lip: {cov.s_lip:.12g}")
            print(f"A_lip: {cov.a_lip:.12g}")
            print(f"K_lip bound: {cov.k_upper:.12g}")
    else:
        print("every action is optimal: no exploration needed")
    return 0


def cmd_run(args):
    cfg = load_config(args.config)
    if args.workers:
        cfg.workers = args.workers
    out = resolve_output_dir(args.output_dir, cfg)
    res = run_experiment(cfg, out)
    for row in res.summary_rows():
        S, agent, T, n, m, s = row
        print(f"S={S} agent={agent} T={T} seeds={n} pseudo-regret {m:.6g} +- {s:.6g}")
    if res.failures:
        print(f"{len(res.failures)} run(s) failed; see {out / 'failures.csv'}", file=sys.stderr)
    print(f"results written to {out}")
    return 0


def _sizes(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"sizes must be comma-separated integers, got '{text}'") from None


def cmd_sweep(args):
    cfg = load_config(args.config)
    if args.workers:
        cfg.workers = args.workers
    out = resolve_output_dir(args.output_dir, cfg)
    table = sweep_sizes(cfg, args.sizes, out)
    for S, agents in table.items():
        for agent, (m, s) in agents.items():
            print(f"S={S} agent={agent} pseudo-regret {m:.6g} +- {s:.6g}")
    print(f"figure data written to {out / 'sweep.csv'}")
    return 0


def cmd_plot(args):
    from .plotting import emit_plot

    path = emit_plot(args.csv, args.output)
    print(f"wrote {path} and {path.with_suffix('.dat')}")
    return 0


def cmd_gen(args):
    if args.kind == "two-cluster":
        mdp, _ = make_two_cluster(TwoClusterParams(args.S, args.epsilon, args.zeta, args.seed))
    else:
        mdp = make_random_ergodic(args.S, args.A, args.seed, args.floor)
    save_mdp(mdp, args.output)
    print(f"wrote {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="delmdp", description="Regret lower bounds and DEL experiments for ergodic MDPs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="optimal gain, bias and gap table")
    s.add_argument("mdp", type=Path)
    s.add_argument("--ref", type=int, default=0, help="state whose bias is pinned to 0")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("lb", help="exploration rates and the regret lower-bound constant")
    s.add_argument("mdp", type=Path)
    s.add_argument("--structure", choices=(UNSTRUCTURED, LIPSCHITZ), default=UNSTRUCTURED)
    s.add_argument("--L", type=float, default=1.0)
    s.add_argument("--Lp", type=float, default=1.0)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--alphap", type=float, default=1.0)
    s.set_defaults(func=cmd_lb)

    out_help = f"output directory (default: config value, then ${OUTPUT_ENV}, then ./delmdp-out)"
    for name, func, helptext in (("run", cmd_run, "run one experiment"), ("sweep", cmd_sweep, "sweep two-cluster sizes")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", type=Path, required=True)
        s.add_argument("--output-dir", type=Path, help=out_help)
        s.add_argument("--workers", type=int, help="parallel worker processes")
        if name == "sweep":
            s.add_argument("--sizes", type=_sizes, required=True, help="comma-separated even sizes, e.g. 4,8,16")
        s.set_defaults(func=func)

    s = sub.add_parser("plot", help="render a trace, curves or summary CSV")
    s.add_argument("csv", type=Path)
    s.add_argument("-o", "--output", type=Path, required=True)
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("gen", help="write a benchmark MDP file")
    s.add_argument("kind", choices=("two-cluster", "random"))
    s.add_argument("-o", "--output", type=Path, required=True)
    s.add_argument("--S", type=int, default=4)
    s.add_argument("--A", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epsilon", type=float, default=0.1)
    s.add_argument("--zeta", type=float, default=0.1)
    s.add_argument("--floor", type=float, default=None)
    s.set_defaults(func=cmd_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except DelMdpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ValidationError.exit_code


if __name__ == "__main__":
    sys.exit(main())
