"""Batch orchestration: EM, per-cell bounds, output files and run summaries."""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import fileio
from .barrier import SolverConfig, matrix_scale
from .data_model import (
    BlockDesign,
    MaskedDataset,
    check_consistency,
    identifiability_mask,
    missing_cells,
)
from .em_engine import EmConfig, EmState, em_fit
from .errors import DomainError, MissingArtifactError
from .mvn_stats import sym_inverse
from .sdp_bounds import BoundResult, bound_cells
from .simulate import RNG_NAME

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_PARTIAL, EXIT_FAILED = 0, 3, 4
ZERO_WIDTH = 1e-6
COVER_TOL = 1e-6

INTERVALS = "intervals.csv"
SIGMA_HAT = "sigma_hat.csv"
MU_HAT = "mu_hat.csv"
PLOT_DATA = "plot_data.csv"
MANIFEST = "manifest.json"


@dataclass(frozen=True)
class PipelineConfig:
    """Everything besides the input files that determines a run's output.

    ``rows`` restricts bounding to those (0-based) rows; EM always uses all
    rows. ``seed`` is recorded in the manifest only, since EM and the
    solver are deterministic.
    """

    em_tol: float = 1e-6
    em_max_iter: int = 500
    solver: SolverConfig = field(default_factory=SolverConfig)
    jobs: int = 1
    log_transform: bool = False
    rows: tuple | None = None
    seed: int | None = None

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["rows"] = None if self.rows is None else [int(i) + 1 for i in self.rows]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        d["solver"] = SolverConfig(**d["solver"])
        if d.get("rows") is not None:
            d["rows"] = tuple(int(i) - 1 for i in d["rows"])
        return cls(**d)


@dataclass
class PipelineResult:
    out_dir: Path
    exit_code: int
    counts: dict
    em_state: EmState
    results: list


def log_transform(dataset: MaskedDataset) -> MaskedDataset:
    obs = dataset.values[~dataset.missing]
    if np.any(obs <= 0):
        raise DomainError("log transform needs strictly positive observed values")
    return MaskedDataset(np.log(np.where(dataset.missing, 1.0, dataset.values)), dataset.missing)


def true_conditional_means(cells, mu, sigma, dataset: MaskedDataset, design: BlockDesign):
    """Conditional means of each cell under known parameters, one solve per block."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    coef = {}
    out = np.empty(len(cells))
    for i, c in enumerate(cells):
        J = design.block_vars(c.block)
        if c.block not in coef:
            inv, _ = sym_inverse(sigma[np.ix_(J, J)], block=c.block + 1)
            coef[c.block] = sigma[:, J] @ inv
        out[i] = mu[c.col] + coef[c.block][c.col] @ (dataset.values[c.row, J] - mu[J])
    return out


def outcome_counts(results) -> dict:
    fast = sum(r.fast_path for r in results)
    failed = sum(r.error is not None for r in results)
    nonconv = sum(r.error is None and not all(r.converged) for r in results)
    return {
        "cells": len(results),
        "fast_path": fast,
        "solved": len(results) - fast - failed - nonconv,
        "nonconverged": nonconv,
        "failed": failed,
    }


def exit_code(counts: dict) -> int:
    bad = counts["failed"] + counts["nonconverged"]
    if bad == 0:
        return EXIT_OK
    needing_solver = counts["cells"] - counts["fast_path"]
    return EXIT_FAILED if counts["failed"] == needing_solver else EXIT_PARTIAL


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def write_plot_data(path, results: list[BoundResult], truth_values=None):
    header = ["row", "col", "em_value", "lower", "upper"]
    if truth_values is not None:
        header.append("true_value")
    lines = [",".join(header)]
    for i, r in enumerate(results):
        vals = [str(r.row + 1), str(r.col + 1), fileio.fmt(r.em_value),
                fileio.fmt(r.lower), fileio.fmt(r.upper)]
        if truth_values is not None:
            vals.append(fileio.fmt(truth_values[i]))
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def run_pipeline(
    data_path,
    design_path,
    out_dir,
    config: PipelineConfig | None = None,
    truth_path=None,
) -> PipelineResult:
    """Fit EM, bound every missing cell and write the run directory.

    Writes ``intervals.csv``, ``sigma_hat.csv``, ``mu_hat.csv``,
    ``plot_data.csv`` (with a ``true_value`` column when a truth file is
    given) and ``manifest.json``. The returned ``exit_code`` is 0 when every
    cell solved, 3 when some failed or did not converge, and 4 when every
    cell that needed the solver failed.
    """
    config = config or PipelineConfig()
    started = _now()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    dataset, names = fileio.read_dataset(data_path)
    design = fileio.read_design(design_path)
    check_consistency(dataset, design)
    if config.log_transform:
        dataset = log_transform(dataset)

    state = em_fit(dataset, design, EmConfig(tol=config.em_tol, max_iter=config.em_max_iter))
    sigma_hat = state.sigma.sigma
    cells = missing_cells(dataset, design)
    if config.rows is not None:
        keep = set(config.rows)
        cells = [c for c in cells if c.row in keep]
    results = bound_cells(
        cells, sigma_hat, state.mu, dataset, design, config.solver, jobs=config.jobs
    )

    truth_values = None
    if truth_path is not None:
        mu_true, sigma_true = fileio.read_truth(truth_path)
        truth_values = true_conditional_means(cells, mu_true, sigma_true, dataset, design)

    fileio.write_intervals(out_dir / INTERVALS, results)
    fileio.write_matrix(out_dir / SIGMA_HAT, sigma_hat, names)
    fileio.write_vector(out_dir / MU_HAT, state.mu, names)
    write_plot_data(out_dir / PLOT_DATA, results, truth_values)

    counts = outcome_counts(results)
    code = exit_code(counts)
    inputs = {"data": data_path, "design": design_path}
    if truth_path is not None:
        inputs["truth"] = truth_path
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "software": {"name": "covbounds", "version": __version__},
        "started": started,
        "finished": _now(),
        "inputs": {
            k: {"path": str(Path(v).resolve()), "sha256": fileio.sha256(v)}
            for k, v in inputs.items()
        },
        "config": config.to_json(),
        "seed": config.seed,
        "rng": RNG_NAME,
        "n": dataset.n,
        "p": dataset.p,
        "K": design.K,
        "free_pairs": identifiability_mask(design).n_free,
        "scale": matrix_scale(sigma_hat),
        "em": {
            "iterations": state.iteration,
            "converged": state.converged,
            "loglik": state.loglik_trace[-1],
        },
        "counts": counts,
        "exit_code": code,
    }
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    log.info("wrote %s (%s)", out_dir, counts)
    return PipelineResult(out_dir, code, counts, state, results)


def rerun(manifest_path, out_dir, jobs: int | None = None, check_inputs: bool = True):
    """Repeat a run from its manifest, optionally with a different worker count."""
    manifest = json.loads(Path(manifest_path).read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported manifest schema {manifest.get('schema_version')!r}")
    inputs = manifest["inputs"]
    if check_inputs:
        for name, info in inputs.items():
            if fileio.sha256(info["path"]) != info["sha256"]:
                raise ValueError(f"{name} input {info['path']} changed since the recorded run")
    config = PipelineConfig.from_json(manifest["config"])
    if jobs is not None:
        config = dataclasses.replace(config, jobs=jobs)
    truth = inputs.get("truth", {}).get("path")
    return run_pipeline(inputs["data"]["path"], inputs["design"]["path"], out_dir, config, truth)


def _float(s: str) -> float:
    return np.nan if s == fileio.NA else float(s)


def summarize(run_dir) -> dict:
    """Aggregate statistics of a finished run directory."""
    run_dir = Path(run_dir)
    for name in (INTERVALS, MANIFEST):
        if not (run_dir / name).exists():
            raise MissingArtifactError(f"{run_dir / name} not found")
    manifest = json.loads((run_dir / MANIFEST).read_text())
    rows = fileio.read_table(run_dir / INTERVALS)
    scale = float(manifest.get("scale", 1.0))
    width = np.array([_float(r["width"]) for r in rows])
    ok = ~np.isnan(width)
    out = {
        "cells": len(rows),
        "failed": int((~ok).sum()),
        "nonconverged": sum(
            r["converged_min"] != "true" or r["converged_max"] != "true" for r in rows
        ),
        "zero_width": int(np.sum(width[ok] < ZERO_WIDTH * scale)),
        "median_width": float(np.median(width[ok])) if ok.any() else np.nan,
        "max_width": float(np.max(width[ok])) if ok.any() else np.nan,
        "inner_iters": sum(int(r["inner_iters_min"]) + int(r["inner_iters_max"]) for r in rows),
        "em_iterations": manifest["em"]["iterations"],
    }
    plot = run_dir / PLOT_DATA
    if plot.exists():
        prow = fileio.read_table(plot)
        if prow and "true_value" in prow[0]:
            tol = COVER_TOL * scale
            hit = [
                _float(r["lower"]) - tol <= _float(r["true_value"]) <= _float(r["upper"]) + tol
                for r in prow
            ]
            out["covered"] = int(sum(hit))
            out["coverage"] = float(np.mean(hit)) if hit else np.nan
    return out


def report(run_dir, per_cell: bool | None = None) -> str:
    """Human-readable summary of a run directory.

    Per-cell lines are included when ``per_cell`` is True, or by default
    when the run has at most 50 cells.
    """
    s = summarize(run_dir)
    lines = [f"run directory      {run_dir}"]
    if s["cells"] == 0:
        lines.append("no missing cells")
        return "\n".join(lines)
    if per_cell is None:
        per_cell = s["cells"] <= 50
    if per_cell:
        lines.append(f"{'row':>6} {'col':>5} {'em_value':>12} {'lower':>12} {'upper':>12} {'width':>12}")
        for r in fileio.read_table(Path(run_dir) / INTERVALS):
            lines.append(
                f"{r['row']:>6} {r['col']:>5} " + " ".join(
                    f"{_float(r[k]):12.6g}" for k in ("em_value", "lower", "upper", "width")
                )
            )
    lines += [
        f"cells              {s['cells']}",
        f"zero-width         {s['zero_width']}",
        f"median width       {s['median_width']:.6g}",
        f"max width          {s['max_width']:.6g}",
        f"failed             {s['failed']}",
        f"not converged      {s['nonconverged']}",
        f"EM iterations      {s['em_iterations']}",
        f"inner iterations   {s['inner_iters']}",
    ]
    if "coverage" in s:
        lines.append(f"coverage           {s['covered']}/{s['cells']} ({100 * s['coverage']:.1f}%)")
    if s["failed"] < s["cells"] and s["zero_width"] == s["cells"] - s["failed"]:
        lines.append("all intervals degenerate")
    return "\n".join(lines)
