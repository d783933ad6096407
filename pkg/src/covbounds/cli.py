"""Command-line entry point: ``covbounds <subcommand> ...``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, fileio, pipeline
from .barrier import LinearObjective, SolverConfig
from .data_model import IdentifiabilityMask, check_consistency, identifiability_mask, missing_cells
from .em_engine import EmConfig, em_fit, impute_point, max_det_completion
from .errors import CovBoundsError
from .oracles import grid_interval, three_by_three_interval
from .sdp_bounds import barrier_solve, bound_cells
from .simulate import RNG_NAME, SigmaSpec, SimSpec, simulate

EXIT_USAGE = 2


def parse_rows(text: str | None):
    """``"1-5,9"`` (1-based, inclusive) -> 0-based tuple."""
    if not text:
        return None
    out = []
    for part in text.split(","):
        lo, _, hi = part.strip().partition("-")
        a, b = int(lo), int(hi or lo)
        if a < 1 or b < a:
            raise ValueError(f"bad row range {part!r}")
        out.extend(range(a - 1, b))
    return tuple(sorted(set(out)))


def solver_config(args) -> SolverConfig:
    return SolverConfig(
        t0=args.t0,
        barrier_mu=args.barrier_mu,
        gap_tol=args.gap_tol,
        inner_eps=args.inner_eps,
        l_max=args.lmax,
        max_inner_iter=args.max_inner_iter,
        accelerated=not args.no_accel,
    )


def _solver_flags(p):
    d = SolverConfig()
    g = p.add_argument_group("solver")
    g.add_argument("--t0", type=float, default=d.t0)
    g.add_argument("--barrier-mu", type=float, default=d.barrier_mu)
    g.add_argument("--gap-tol", type=float, default=d.gap_tol)
    g.add_argument("--inner-eps", type=float, default=d.inner_eps)
    g.add_argument("--lmax", type=int, default=d.l_max)
    g.add_argument("--max-inner-iter", type=int, default=d.max_inner_iter)
    g.add_argument("--no-accel", action="store_true", help="plain projected gradient steps")
    g.add_argument("--jobs", type=int, default=1)


def _data_flags(p, out_required=True):
    p.add_argument("--data", required=True, help="data CSV with NA for missing cells")
    p.add_argument("--design", required=True, help="design JSON (1-based indices)")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--tol", type=float, default=1e-6, help="EM convergence tolerance")
    p.add_argument("--max-iter", type=int, default=500, help="EM iteration cap")
    p.add_argument("--log-transform", action="store_true")
    p.add_argument("--seed", type=int, default=None, help="recorded in the manifest")


def _load(args):
    dataset, names = fileio.read_dataset(args.data)
    design = fileio.read_design(args.design)
    check_consistency(dataset, design)
    if args.log_transform:
        dataset = pipeline.log_transform(dataset)
    return dataset, names, design


def cmd_simulate(args):
    sigma = SigmaSpec(args.diag, args.identified, args.free)
    if args.sigma:
        sigma, _ = fileio.read_matrix(args.sigma)
    spec = SimSpec(
        n=args.n, p=args.p, K=args.K, vars_per_block=args.vars_per_block, sigma=sigma,
        seed=args.seed, censor_mode=args.censor, top_fraction=args.top_fraction,
    )
    sim = simulate(spec, args.realization)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_dataset(out / "data.csv", sim.dataset)
    fileio.write_design(out / "design.json", sim.design)
    fileio.write_truth(out / "truth.json", sim.truth)
    fileio.write_matrix(out / "complete.csv", sim.complete)
    spec_doc = dataclasses.asdict(spec)
    if not isinstance(sigma, SigmaSpec):
        spec_doc["sigma"] = np.asarray(sigma).tolist()
    meta = {
        "schema_version": pipeline.SCHEMA_VERSION,
        "spec": spec_doc,
        "realization": args.realization,
        "rng": RNG_NAME,
        "free_pairs": identifiability_mask(sim.design).n_free,
        "missing_cells": int(sim.dataset.missing.sum()),
        "version": __version__,
    }
    (out / "simulation.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"wrote {out} ({meta['free_pairs']} free pairs, {meta['missing_cells']} missing cells)")
    return 0


def cmd_em(args):
    dataset, names, design = _load(args)
    state = em_fit(dataset, design, EmConfig(tol=args.tol, max_iter=args.max_iter))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_matrix(out / pipeline.SIGMA_HAT, state.sigma.sigma, names)
    fileio.write_vector(out / pipeline.MU_HAT, state.mu, names)
    lines = ["row,col,value"] + [
        f"{i + 1},{j + 1},{fileio.fmt(v)}" for i, j, v in impute_point(state, dataset, design)
    ]
    (out / "imputed.csv").write_text("\n".join(lines) + "\n")
    (out / "em_trace.csv").write_text(
        "iteration,loglik\n"
        + "".join(f"{i},{fileio.fmt(v)}\n" for i, v in enumerate(state.loglik_trace))
    )
    status = "converged" if state.converged else "did not converge"
    print(f"EM {status} after {state.iteration} iterations; loglik {state.loglik_trace[-1]:.10g}")
    return 0


def cmd_bounds(args):
    dataset, names, design = _load(args)
    if args.sigma:
        sigma_hat, _ = fileio.read_matrix(args.sigma)
        if not args.mu:
            raise ValueError("--sigma needs --mu")
        mu_hat = fileio.read_vector(args.mu)
    else:
        state = em_fit(dataset, design, EmConfig(tol=args.tol, max_iter=args.max_iter))
        sigma_hat, mu_hat = state.sigma.sigma, state.mu
    cells = missing_cells(dataset, design)
    rows = parse_rows(args.rows)
    if rows is not None:
        keep = set(rows)
        cells = [c for c in cells if c.row in keep]
    results = bound_cells(cells, sigma_hat, mu_hat, dataset, design, solver_config(args), args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_intervals(out / pipeline.INTERVALS, results)
    counts = pipeline.outcome_counts(results)
    print(json.dumps(counts))
    return pipeline.exit_code(counts)


def cmd_pipeline(args):
    if args.manifest:
        res = pipeline.rerun(args.manifest, args.out, jobs=args.jobs)
    else:
        if not (args.data and args.design):
            raise ValueError("pipeline needs --data and --design, or --manifest")
        config = pipeline.PipelineConfig(
            em_tol=args.tol,
            em_max_iter=args.max_iter,
            solver=solver_config(args),
            jobs=args.jobs,
            log_transform=args.log_transform,
            rows=parse_rows(args.rows),
            seed=args.seed,
        )
        res = pipeline.run_pipeline(args.data, args.design, args.out, config, args.truth)
    print(pipeline.report(res.out_dir, per_cell=False))
    return res.exit_code


def cmd_complete(args):
    partial, names = fileio.read_matrix(args.matrix)
    known = ~np.isnan(partial)
    if partial.shape[0] != partial.shape[1]:
        raise ValueError("matrix must be square")
    if not np.array_equal(known, known.T) or not known.diagonal().all():
        raise ValueError("NA pattern must be symmetric with a complete diagonal")
    iu = np.triu_indices(len(partial), 1)
    free = tuple((int(a), int(b)) for a, b in zip(*iu) if not known[a, b])
    mask = IdentifiabilityMask(known, free)
    sigma = max_det_completion(np.nan_to_num(partial), mask).sigma
    if args.out:
        fileio.write_matrix(args.out, sigma, names)
    else:
        for r in sigma:
            print(",".join(fileio.fmt(x) for x in r))
    return 0


def cmd_oracle(args):
    a, b = args.a, args.b
    closed = three_by_three_interval(a, b)
    sigma = np.array([[1.0, a, 0.0], [a, 1.0, b], [0.0, b, 1.0]])
    identified = np.ones((3, 3), dtype=bool)
    identified[0, 2] = identified[2, 0] = False
    mask = IdentifiabilityMask(identified, ((0, 2),))
    C = np.zeros((3, 3))
    C[0, 2] = C[2, 0] = 0.5
    obj = LinearObjective(C)
    grid = grid_interval(sigma, mask, obj, args.step)
    print(f"closed form  [{closed.lower:.6f}, {closed.upper:.6f}]")
    print(f"grid         [{grid.lower:.6f}, {grid.upper:.6f}]  (step {args.step:g})")
    if not args.no_sdp:
        config = solver_config(args)
        lo = barrier_solve(obj, sigma, mask, config, "min")
        hi = barrier_solve(obj, sigma, mask, config, "max")
        print(f"barrier SDP  [{lo.optimum:.6f}, {hi.optimum:.6f}]"
              f"  ({lo.inner_iters + hi.inner_iters} inner iterations)")
    return 0


def cmd_report(args):
    print(pipeline.report(args.dir, per_cell=True if args.per_cell else None))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covbounds", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic block-missing dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--realization", type=int, default=0)
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--p", type=int, default=18)
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--vars-per-block", type=int, default=12)
    p.add_argument("--diag", type=float, default=1.0)
    p.add_argument("--identified", type=float, default=0.3)
    p.add_argument("--free", type=float, default=0.56)
    p.add_argument("--sigma", help="explicit covariance CSV instead of diag/identified/free")
    p.add_argument("--censor", choices=("random_blocks", "adversarial"), default="random_blocks")
    p.add_argument("--top-fraction", type=float, default=0.05)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("em", help="fit EM and write the estimates and imputations")
    _data_flags(p)
    p.set_defaults(func=cmd_em)

    p = sub.add_parser("bounds", help="imputation intervals for missing cells")
    _data_flags(p)
    p.add_argument("--sigma", help="covariance CSV to use instead of fitting EM")
    p.add_argument("--mu", help="mean CSV to use with --sigma")
    p.add_argument("--rows", help="1-based rows to bound, e.g. 1-10,25")
    _solver_flags(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("pipeline", help="EM plus bounds plus manifest")
    p.add_argument("--data")
    p.add_argument("--design")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="truth JSON from `simulate` for coverage columns")
    p.add_argument("--manifest", help="rerun exactly as recorded in this manifest")
    p.add_argument("--rows", help="1-based rows to bound, e.g. 1-10,25")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--log-transform", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    _solver_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("complete", help="max-determinant completion of a partial matrix")
    p.add_argument("--matrix", required=True, help="CSV with NA at unknown entries")
    p.add_argument("--out")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("oracle", help="compare the 3x3 closed form, grid and SDP")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--no-sdp", action="store_true")
    _solver_flags(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("dir")
    p.add_argument("--per-cell", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            return args.func(args)
    except (CovBoundsError, ValueError, IndexError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
