"""Command-line driver: ``cgft solve | transform | embed | verify``.

Exit status is 0 when every requested certificate or invariant passes, 2 when
a check fails and 1 on bad input. Inputs are fully loaded and validated before
anything is written, so an input error leaves no partial artifacts.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .cgf import BaseMeasure, parse_base
from .ctransform import (
    CHECK_TOL,
    GridFn,
    concavity_residual,
    grid_tolerance,
    transform_bwd,
    transform_fwd,
)
from .embedding import (
    ExpConcaveFn,
    accepted_pairs,
    exp_concavity_check,
    random_measures,
    family_residual_for,
    supergradient_report,
)
from .errors import CGFTError
from .io import InputError, csv_text, dumps, load_json
from .measures import DiscreteMeasure, MeasureRep, as_points
from .transport import TransportProblem, certify, solve_entropic, solve_exact
from .verify import run_suites

log = logging.getLogger("cgft")

EXIT_OK, EXIT_INPUT, EXIT_CHECK = 0, 1, 2
COMMANDS = ("solve", "transform", "embed", "verify")


@dataclass
class RunConfig:
    command: str
    base: str | None = None
    seed: int = 0
    tol: float | None = None
    out: Path = Path(".")
    json_only: bool = False
    source: Path | None = None
    target: Path | None = None
    entropic: float | None = None
    psi: Path | None = None
    y_grid: Path | None = None
    direction: str = "fwd"
    alpha_grid: Path | None = None
    theta_grid: Path | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise InputError(f"unknown command {self.command!r}")
        if self.tol is not None and not self.tol > 0:
            raise InputError(f"--tol must be positive, got {self.tol}")
        if self.entropic is not None and not self.entropic > 0:
            raise InputError(f"--entropic must be positive, got {self.entropic}")
        if not 0 <= self.seed < 2**64:
            raise InputError("--seed must be a 64-bit unsigned integer")


@dataclass
class Artifacts:
    """Files to write, keyed by name, plus the check outcome."""

    files: dict
    passed: bool
    summary: list
    report: dict


def _require(path: Path | None, flag: str) -> Path:
    if path is None:
        raise InputError(f"{flag} is required")
    return path


def _base(cfg: RunConfig) -> BaseMeasure:
    if cfg.base is None:
        raise InputError("--base is required")
    try:
        return parse_base(cfg.base)
    except InputError:
        raise
    except CGFTError as exc:
        raise InputError(f"--base: {exc}") from None


def _load(path: Path, loader, what: str):
    obj = load_json(path)
    try:
        return loader(obj)
    except CGFTError as exc:
        raise InputError(f"{path}: {what}: {exc}") from None


def _load_grid(path: Path, d: int) -> np.ndarray:
    obj = load_json(path)
    if isinstance(obj, dict) and "grid" in obj:
        obj = obj["grid"]
    try:
        return as_points(obj, d)
    except (CGFTError, ValueError) as exc:
        raise InputError(f"{path}: field 'grid': {exc}") from None


def _check_dim(what: str, got: int, want: int) -> None:
    if got != want:
        raise InputError(f"dimension mismatch: {what} has dimension {got}, base has {want}")


# commands


def _solve(cfg: RunConfig) -> Artifacts:
    base = _base(cfg)
    P = _load(_require(cfg.source, "--source"), DiscreteMeasure.from_json, "source measure")
    Q = _load(_require(cfg.target, "--target"), DiscreteMeasure.from_json, "target measure")
    _check_dim("source.atoms", P.dim, base.dim)
    _check_dim("target.atoms", Q.dim, base.dim)
    prob = TransportProblem(P, Q, base)
    tol = cfg.tol or 1e-7
    report = {"base": base.name, "shape": list(prob.shape)}
    if cfg.entropic is not None:
        coupling = solve_entropic(prob, cfg.entropic)
        report.update(
            objective=coupling.objective,
            duals=None,
            certificate=None,
            entropic={
                "epsilon": cfg.entropic,
                "iterations": coupling.iterations,
                "marginal_error": coupling.marginal_error(prob),
            },
        )
        passed = True
    else:
        coupling, duals = solve_exact(prob)
        cert = certify(coupling, duals, prob, tol=tol)
        report.update(
            objective=coupling.objective,
            duals={"psi": duals.psi.values.tolist(), "psi0": duals.psi0.values.tolist()},
            certificate=cert.to_json(),
        )
        passed = cert.passed
    C = prob.cost
    rows = [
        (int(i), int(j), float(coupling.plan[i, j]), float(C[i, j]))
        for i, j in np.argwhere(coupling.plan > 1e-12)
    ]
    files = {
        "plan.csv": csv_text(("i", "j", "mass", "cost"), rows),
        "solve_report.json": dumps(report),
    }
    summary = [f"objective {coupling.objective:.12g}"]
    if report["certificate"] is not None:
        summary.append(f"certificate {'PASS' if passed else 'FAIL'} "
                       f"(max slack {report['certificate']['max_slack']:.3g})")
    return Artifacts(files, passed, summary, report)


def _transform(cfg: RunConfig) -> Artifacts:
    base = _base(cfg)
    f = _load(_require(cfg.psi, "--psi"), GridFn.from_json, "grid function")
    _check_dim("psi.grid", f.dim, base.dim)
    grid = _load_grid(cfg.y_grid, base.dim) if cfg.y_grid else f.grid
    if cfg.direction == "fwd":
        out = transform_fwd(f, grid, base)
    else:
        out = transform_bwd(f, grid, base)
    report = dict(out.to_json(), direction=cfg.direction, boundary_hits=list(out.boundary_hits))
    d = base.dim
    header = [f"point_{k + 1}" for k in range(d)] + ["value", "argmin"]
    rows = [list(map(float, p)) + [float(v), int(a)] for p, v, a in zip(out.grid, out.values, out.argmin)]
    files = {"transform.json": dumps(report), "transform.csv": csv_text(header, rows)}
    summary = [f"{len(out)} values", f"{len(out.boundary_hits)} boundary argmins"]
    if out.boundary_hits:
        log.warning("%d argmins lie on the grid boundary; the grid may be too small",
                    len(out.boundary_hits))
    return Artifacts(files, True, summary, report)


def _embed(cfg: RunConfig) -> Artifacts:
    base = _base(cfg)
    if base.kind == "gaussian" and base.metadata.get("nodes_per_axis", 20) < 40:
        base = BaseMeasure.gaussian(base.dim, 40)
    psi = _load(_require(cfg.psi, "--psi"), GridFn.from_json, "grid function")
    _check_dim("psi.grid", psi.dim, base.dim)
    theta_grid = _load_grid(cfg.theta_grid, base.dim) if cfg.theta_grid else psi.grid
    alphas = _load_grid(cfg.alpha_grid, base.dim) if cfg.alpha_grid else psi.grid
    for a in alphas:
        try:
            psi.index_of(a)
        except KeyError:
            raise InputError(f"alpha {a.tolist()} is not on the psi grid") from None
    grid_tol = cfg.tol or grid_tolerance(psi.grid)
    rng = np.random.default_rng(cfg.seed)

    res = concavity_residual(psi, base, theta_grid)
    f = ExpConcaveFn.from_psi(base, psi, theta_grid)
    t5 = [family_residual_for(f, psi, a) for a in alphas]
    nus = random_measures(base, 100, rng)
    alpha_set = {tuple(a) for a in alphas}
    pairs = [(a, t) for a, t in accepted_pairs(psi, f, CHECK_TOL) if tuple(a) in alpha_set]
    recs = supergradient_report(psi, f, nus, pairs=pairs)
    worst = exp_concavity_check(f, 200, rng)

    quad = not base.is_exact
    t7_ok = all(
        r.normalization <= (1e-6 if quad else 1e-10)
        and r.tv <= (1e-8 if quad else 1e-12)
        and r.inequality_min >= -(1e-6 if quad else 1e-9)
        and r.fd_scaled_error <= 1e-6
        for r in recs
    )
    passed = bool(res <= grid_tol and max(t5, default=0.0) <= grid_tol and t7_ok and worst >= -1e-9)
    report = {
        "base": base.name,
        "seed": cfg.seed,
        "grid_tolerance": grid_tol,
        "concavity_residual": res,
        "theorem5": t5,
        "theorem7": [
            {"alpha": r.alpha, "theta": r.theta, "tv": r.tv, "normalization": r.normalization,
             "inequality_min": r.inequality_min, "fd_error": r.fd_error,
             "fd_scaled_error": r.fd_scaled_error}
            for r in recs
        ],
        "exp_concavity": worst,
        "pass": passed,
    }
    rows = [r.alpha + r.theta + [r.normalization, r.tv, r.inequality_min, r.fd_error] for r in recs]
    d = base.dim
    header = ([f"alpha_{k + 1}" for k in range(d)] + [f"theta_{k + 1}" for k in range(d)]
              + ["normalization", "tv", "inequality_min", "fd_error"])
    files = {"embed_report.json": dumps(report), "supergradient.csv": csv_text(header, rows)}
    summary = [
        f"concavity residual {res:.3g} (tolerance {grid_tol:.3g})",
        f"phi residual worst {max(t5, default=0.0):.3g}",
        f"supergradient pairs {len(recs)} {'PASS' if t7_ok else 'FAIL'}",
        f"exp-concavity worst margin {worst:.3g}",
    ]
    return Artifacts(files, passed, summary, report)


def _verify(cfg: RunConfig) -> Artifacts:
    base = _base(cfg)
    results = run_suites(base, cfg.seed)
    passed = all(r.passed for r in results)
    report = {
        "base": base.name,
        "seed": cfg.seed,
        "suites": [r.to_json() for r in results],
        "pass": passed,
    }
    rows = [(r.suite, r.cases, r.worst_violation, r.tolerance, int(r.passed)) for r in results]
    files = {
        "verify_report.json": dumps(report),
        "verify_report.csv": csv_text(("suite", "cases", "worst_violation", "tolerance", "pass"), rows),
    }
    summary = [f"{'PASS' if r.passed else 'FAIL'} {r.suite} worst {r.worst_violation:.3g} "
               f"tol {r.tolerance:.3g}" for r in results]
    summary.append(f"seed {cfg.seed}")
    return Artifacts(files, passed, summary, report)


_HANDLERS = {"solve": _solve, "transform": _transform, "embed": _embed, "verify": _verify}


def emit_report(artifacts: Artifacts, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in artifacts.files.items():
        path = out / name
        path.write_text(text, encoding="utf-8")
        written.append(path)
    return written


def run(cfg: RunConfig) -> int:
    try:
        artifacts = _HANDLERS[cfg.command](cfg)
    except CGFTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        emit_report(artifacts, cfg.out)
    except OSError as exc:
        print(f"error: cannot write to {cfg.out}: {exc.strerror}", file=sys.stderr)
        return EXIT_INPUT
    if cfg.json_only:
        sys.stdout.write(dumps(artifacts.report))
    else:
        for line in artifacts.summary:
            print(line)
    return EXIT_OK if artifacts.passed else EXIT_CHECK


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors (exit 1); argparse would use 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--base", help="gaussian:d[:nodes], simplex:d, or a base-measure JSON file")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    common.add_argument("--tol", type=float, help="override the check tolerance")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--json", dest="json_only", action="store_true",
                        help="print the JSON report only")

    parser = _Parser(prog="cgft", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", parents=[common], help="exact or entropic transport")
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--target", type=Path, required=True)
    p.add_argument("--entropic", type=float, metavar="EPS")

    p = sub.add_parser("transform", parents=[common], help="Lambda0-transform of a grid function")
    p.add_argument("--psi", type=Path, required=True)
    p.add_argument("--y-grid", type=Path)
    p.add_argument("--direction", choices=("fwd", "bwd"), default="fwd")

    p = sub.add_parser("embed", parents=[common], help="check the exponentially concave embedding")
    p.add_argument("--psi", type=Path, required=True)
    p.add_argument("--alpha-grid", type=Path)
    p.add_argument("--theta-grid", type=Path)

    p = sub.add_parser("verify", parents=[common], help="run the invariant suites")
    p.set_defaults(base="simplex:2")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    opts = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__}
    try:
        cfg = RunConfig(**opts)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
