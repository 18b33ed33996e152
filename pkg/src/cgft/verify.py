"""Randomized invariant suites run by ``cgft verify``.

Each suite draws from its own child of the run seed, so results do not depend
on the order (or thread) in which suites execute.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .cgf import BaseMeasure, cgf_eval, cgf_grad, log_mgf, tilt, tilt_logmoment
from .ctransform import (
    GridFn,
    concavity_residual,
    grid_tolerance,
    transform_bwd,
    transform_fwd,
)
from .embedding import (
    ExpConcaveFn,
    exp_concavity_check,
    phi_batch,
    random_measures,
    supergradient_report,
)
from .measures import DiscreteMeasure, exp_moment, seminorm
from .transport import TransportProblem, certify, solve_exact


@dataclass
class SuiteResult:
    suite: str
    cases: int
    worst_violation: float
    tolerance: float
    passed: bool

    def to_json(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def _result(name, cases, worst, tol) -> SuiteResult:
    worst = float(worst)
    return SuiteResult(name, int(cases), worst, float(tol), bool(worst <= tol))


def default_grid(d: int) -> np.ndarray:
    """Tensor grid on [-2, 2]^d used by the transform and embedding suites."""
    n = {1: 41, 2: 9, 3: 5}.get(d, 3)
    axis = np.linspace(-2.0, 2.0, n)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def random_concave(base: BaseMeasure, grid: np.ndarray, rng: np.random.Generator, sparsity: float = 0.3) -> GridFn:
    """A Lambda0-concave function on ``grid``: backward transform of a random generator."""
    vals = rng.normal(scale=1.0, size=len(grid))
    off = rng.random(len(grid)) < sparsity
    off[rng.integers(len(grid))] = False
    vals[off] = -np.inf
    return transform_bwd(GridFn(grid, vals), grid, base)


def random_problem(base: BaseMeasure, rng: np.random.Generator, max_atoms: int = 7) -> TransportProblem:
    d = base.dim
    n, m = rng.integers(1, max_atoms + 1, size=2)
    P = DiscreteMeasure(rng.normal(size=(n, d)), rng.dirichlet(np.ones(n)))
    Q = DiscreteMeasure(rng.normal(size=(m, d)), rng.dirichlet(np.ones(m)))
    return TransportProblem(P, Q, base)


def _random_theta(rng, d, size, scale=2.0):
    return rng.uniform(-scale, scale, size=(size, d))


def _tilt_tol(base: BaseMeasure) -> float:
    return 1e-10 if base.is_exact else 1e-7


# suites


def suite_change_of_measure(base, rng, n=1000):
    th = _random_theta(rng, base.dim, n)
    ga = _random_theta(rng, base.dim, n)
    worst = max(
        abs(tilt_logmoment(base, t, g) - (cgf_eval(base, t + g) - cgf_eval(base, t)))
        for t, g in zip(th, ga)
    )
    return _result("change_of_measure", n, worst, _tilt_tol(base))


def suite_cgf_convexity(base, rng, n=500):
    t1 = _random_theta(rng, base.dim, n, 5.0)
    t2 = _random_theta(rng, base.dim, n, 5.0)
    lam = rng.uniform(0.01, 0.99, size=n)
    mid = lam[:, None] * t1 + (1 - lam[:, None]) * t2
    gap = log_mgf(base, mid) - (lam * log_mgf(base, t1) + (1 - lam) * log_mgf(base, t2))
    return _result("cgf_convexity", n, max(gap.max(), 0.0), 1e-12)


def suite_cgf_grad(base, rng, n=200, h=1e-5):
    worst = 0.0
    for th in _random_theta(rng, base.dim, n):
        g = cgf_grad(base, th)
        fd = np.array([
            (cgf_eval(base, th + h * e) - cgf_eval(base, th - h * e)) / (2 * h)
            for e in np.eye(base.dim)
        ])
        worst = max(worst, float(np.max(np.abs(fd - g) / np.maximum(1.0, np.abs(g)))))
    return _result("cgf_grad_finite_difference", n, worst, 1e-6)


def suite_tilt_mean(base, rng, n=200):
    worst = 0.0
    for th in _random_theta(rng, base.dim, n):
        worst = max(worst, float(np.max(np.abs(tilt(base, th).mean() - cgf_grad(base, th)))))
    return _result("tilt_mean_matches_gradient", n, worst, _tilt_tol(base))


def suite_mean_zero_bound(base, rng, n=500):
    centered = base.recentered()
    vals = log_mgf(centered, _random_theta(rng, base.dim, n, 5.0))
    return _result("recentered_cgf_nonnegative", n, max(0.0, -vals.min()), 1e-12)


def suite_seminorm_bound(base, rng, n=100):
    worst = 0.0
    for _ in range(n):
        nu = random_measures(base, 1, rng)[0]
        th = _random_theta(rng, base.dim, 1)[0]
        j = int(np.ceil(np.abs(th).sum()))
        bound = sum(seminorm(nu, i, j) for i in range(1, base.dim + 1))
        worst = max(worst, (exp_moment(nu, th) - bound) / bound)
    return _result("exp_moment_seminorm_bound", n, max(worst, 0.0), 1e-12)


def suite_ctransform(base, rng, grid, n=100):
    dominance = order = shift = 0.0
    for _ in range(n):
        vals = rng.normal(size=len(grid))
        vals[rng.random(len(grid)) < 0.2] = -np.inf
        vals[rng.integers(len(grid))] = 0.0
        psi = GridFn(grid, vals)
        fwd = transform_fwd(psi, grid, base)
        cc = transform_bwd(fwd, grid, base)
        finite = np.isfinite(psi.values)
        dominance = max(dominance, float(np.max(psi.values[finite] - cc.values[finite])))
        bigger = GridFn(grid, np.where(finite, psi.values + rng.random(len(grid)), -np.inf))
        diff = transform_fwd(bigger, grid, base).values - fwd.values
        order = max(order, float(diff.max()))
        c = float(rng.normal())
        shifted = transform_fwd(psi.shifted(c), grid, base).values
        shift = max(shift, float(np.max(np.abs(shifted - (fwd.values - c)))))
    return [
        _result("ctransform_double_dominance", n, max(dominance, 0.0), 1e-12),
        _result("ctransform_order_reversal", n, max(order, 0.0), 0.0),
        _result("ctransform_shift_equivariance", n, shift, 1e-12),
    ]


def suite_idempotence(base, rng, grid, n=20):
    worst = max(concavity_residual(random_concave(base, grid, rng), base) for _ in range(n))
    return _result("ctransform_idempotence", n, worst, grid_tolerance(grid))


def suite_transport(base, rng, n=50):
    slack = duality = 0.0
    for _ in range(n):
        prob = random_problem(base, rng)
        coupling, duals = solve_exact(prob)
        slack = max(slack, certify(coupling, duals, prob).max_slack)
        duality = max(duality, abs(duals.dual_objective(prob) - coupling.objective),
                      duals.feasibility_violation(prob))
    return [
        _result("optimality_certificate", n, slack, 1e-7),
        _result("strong_duality", n, duality, 1e-8),
    ]


def suite_embedding(base, rng, grid, n_psi=20, n_nu=100):
    tol = grid_tolerance(grid)
    pairs_per_psi = max(1, 200 // n_psi)
    t5 = 0.0
    t5a = 0.0
    expc = 0.0
    mus = [tilt(base, a) for a in grid]
    lam = log_mgf(base, grid)
    for _ in range(n_psi):
        psi = random_concave(base, grid, rng)
        f = ExpConcaveFn.from_psi(base, psi)
        phis = phi_batch(f, mus)
        t5 = max(t5, float(np.max(np.abs(phis - psi.values + lam))))
        h = GridFn(grid, rng.normal(size=len(grid)))
        fh = ExpConcaveFn.from_h(base, h)
        psi_h = GridFn(grid, phi_batch(fh, mus) + lam)
        t5a = max(t5a, concavity_residual(psi_h, base))
        expc = max(expc, -exp_concavity_check(f, pairs_per_psi, rng))
    # one psi gets the full supergradient treatment
    psi = random_concave(base, grid, rng)
    f = ExpConcaveFn.from_psi(base, psi)
    nus = random_measures(base, n_nu, rng)
    recs = supergradient_report(psi, f, nus)
    quad = not base.is_exact
    return [
        _result("phi_on_tilted_family", n_psi * len(grid), t5, tol),
        _result("psi_from_phi_concave", n_psi, t5a, tol),
        _result("supergradient_normalization", len(recs),
                max((r.normalization for r in recs), default=0.0), 1e-6 if quad else 1e-10),
        _result("portfolio_map", len(recs),
                max((r.tv for r in recs), default=0.0), 1e-8 if quad else 1e-12),
        _result("supergradient_inequality", len(recs) * n_nu,
                max((max(0.0, -r.inequality_min) for r in recs), default=0.0), 1e-6 if quad else 1e-9),
        _result("gateaux_derivative", len(recs),
                max((r.fd_scaled_error for r in recs), default=0.0), 1e-6),
        _result("exp_concavity_midpoint", n_psi * pairs_per_psi, max(expc, 0.0), 1e-9),
    ]


def thread_cap() -> int:
    raw = os.environ.get("CGFT_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return min(8, os.cpu_count() or 1)


def run_suites(base: BaseMeasure, seed: int, grid: np.ndarray | None = None) -> list[SuiteResult]:
    grid = default_grid(base.dim) if grid is None else grid
    embed_base = base
    if base.kind == "gaussian" and base.metadata.get("nodes_per_axis", 20) < 40:
        embed_base = BaseMeasure.gaussian(base.dim, 40)
    jobs = [
        lambda r: [suite_change_of_measure(base, r)],
        lambda r: [suite_cgf_convexity(base, r)],
        lambda r: [suite_cgf_grad(base, r)],
        lambda r: [suite_tilt_mean(base, r)],
        lambda r: [suite_mean_zero_bound(base, r)],
        lambda r: [suite_seminorm_bound(base, r)],
        lambda r: suite_ctransform(base, r, grid),
        lambda r: [suite_idempotence(base, r, grid)],
        lambda r: suite_transport(base, r),
        lambda r: suite_embedding(embed_base, r, grid),
    ]
    seeds = np.random.SeedSequence(seed).spawn(len(jobs))
    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        futures = [pool.submit(job, np.random.default_rng(s)) for job, s in zip(jobs, seeds)]
        return [res for fut in futures for res in fut.result()]
