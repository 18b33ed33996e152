"""Exit criteria of the build, each checked at its stated tolerance.

Every test prints one PASS/FAIL line; the lines are repeated in the pytest
terminal summary under "acceptance criteria".
"""
from __future__ import annotations

import json
import math
import shutil
import subprocess
import sys

import numpy as np
import pytest

from cgft.cgf import BaseMeasure, cgf_eval, tilt, tilt_logmoment
from cgft.ctransform import (
    GridFn,
    concavity_residual,
    grid_tolerance,
    transform_bwd,
    transform_fwd,
)
from cgft.embedding import (
    ExpConcaveFn,
    exp_concavity_check,
    gateaux_fd,
    phi_batch,
    phi_eval,
    portfolio_map,
    random_measures,
    supergradient,
    theorem5_residual,
    supergradient_report,
)
from cgft.measures import DiscreteMeasure, MeasureRep, NodeSet, tv_distance
from cgft.transport import TransportProblem, certify, solve_entropic, solve_exact
from cgft.verify import default_grid, random_concave

import oracles

pytestmark = pytest.mark.acceptance

GAUSS1 = BaseMeasure.gaussian(1)
GAUSS40 = BaseMeasure.gaussian(1, 40)
N_UNITS = 7


def check(label, worst, tol):
    worst = float(worst)
    return (label, worst, tol, bool(worst <= tol))


@pytest.fixture(scope="module")
def problem_set():
    """50 random 1-D problems, n, m <= 7, masses in multiples of 1/7."""
    rng = np.random.default_rng(20240601)
    probs = []
    for _ in range(50):
        n, m = rng.integers(1, N_UNITS + 1, size=2)
        P = DiscreteMeasure(rng.normal(size=(n, 1)) * 2, oracles.random_composition(rng, N_UNITS, n) / N_UNITS)
        Q = DiscreteMeasure(rng.normal(size=(m, 1)) * 2 + 1, oracles.random_composition(rng, N_UNITS, m) / N_UNITS)
        probs.append(TransportProblem(P, Q, GAUSS1))
    return probs


def embedding_bases():
    return {"simplex:1": BaseMeasure.simplex(1), "simplex:2": BaseMeasure.simplex(2), "gaussian:1:40": GAUSS40}


def test_c1_gaussian_recovers_w2(problem_set, criteria):
    worst_brute = worst_quantile = 0.0
    for prob in problem_set:
        x, y = prob.source.atoms[:, 0], prob.target.atoms[:, 0]
        a, b = prob.source.weights, prob.target.weights
        C = np.array([[oracles.gaussian_cost(xi, yj) for yj in y] for xi in x])
        obj = solve_exact(prob)[0].objective
        worst_brute = max(worst_brute, abs(obj - oracles.brute_force_ot(C, a, b, N_UNITS)))
        worst_quantile = max(worst_quantile, abs(obj - oracles.quantile_w2_half(x, a, y, b)))

    rng = np.random.default_rng(77)
    worst_plan = 0.0
    for n in range(1, 8):
        for m in range(1, 8):
            x = np.sort(rng.normal(size=n))
            y = np.sort(rng.normal(size=m))
            prob = TransportProblem(DiscreteMeasure.uniform(x), DiscreteMeasure.uniform(y), GAUSS1)
            plan = solve_exact(prob)[0].plan
            ref = oracles.monotone_plan(x, np.full(n, 1 / n), y, np.full(m, 1 / m))
            worst_plan = max(worst_plan, float(np.abs(plan - ref).max()))

    ok = criteria.record(1, "gaussian cost = W2 (50 problems)", [
        check("|obj - brute force|", worst_brute, 1e-9),
        check("|obj - quantile W2|", worst_quantile, 1e-9),
        check("monotone plan", worst_plan, 1e-12),
    ])
    assert ok


def test_c2_simplex_tilt(criteria):
    rng = np.random.default_rng(2)
    checks = []
    for d in (1, 2, 5):
        base = BaseMeasure.simplex(d)
        worst = 0.0
        for theta in rng.normal(scale=3.0, size=(1000, d)):
            worst = max(worst, float(np.abs(tilt(base, theta).masses - oracles.simplex_tilt_masses(theta)).max()))
        checks.append(check(f"d={d}", worst, 1e-12))
    assert criteria.record(2, "simplex tilt masses (1000 theta)", checks)


def test_c3_change_of_measure(criteria):
    rng = np.random.default_rng(3)
    checks = []
    bases = [("simplex:1", BaseMeasure.simplex(1), 1e-10), ("simplex:2", BaseMeasure.simplex(2), 1e-10),
             ("simplex:5", BaseMeasure.simplex(5), 1e-10),
             ("discrete", BaseMeasure.discrete(DiscreteMeasure([[0.0], [1.5], [-2.0]], [0.3, 0.3, 0.4])), 1e-10),
             ("gaussian:1:40", GAUSS40, 1e-7), ("gaussian:2:40", BaseMeasure.gaussian(2, 40), 1e-7)]
    for label, base, tol in bases:
        th = rng.uniform(-2, 2, size=(1000, base.dim))
        ga = rng.uniform(-2, 2, size=(1000, base.dim))
        worst = max(
            abs(tilt_logmoment(base, t, g) - cgf_eval(base, t + g) + cgf_eval(base, t)) for t, g in zip(th, ga)
        )
        checks.append(check(label, worst, tol))
    assert criteria.record(3, "change of measure (1000 pairs)", checks)


def test_c4_transform_laws(criteria):
    rng = np.random.default_rng(4)
    dominance = order = idem = 0.0
    idem_tol = math.inf
    for base in (BaseMeasure.simplex(1), BaseMeasure.simplex(2), GAUSS1):
        grid = default_grid(base.dim)
        idem_tol = min(idem_tol, grid_tolerance(grid))
        for _ in range(100):
            vals = rng.normal(size=len(grid))
            vals[rng.random(len(grid)) < 0.2] = -np.inf
            vals[rng.integers(len(grid))] = 0.0
            psi = GridFn(grid, vals)
            fwd = transform_fwd(psi, grid, base)
            cc = transform_bwd(fwd, grid, base)
            ok = np.isfinite(vals)
            dominance = max(dominance, float(np.max(vals[ok] - cc.values[ok])))
            idem = max(idem, concavity_residual(cc, base))
            bigger = GridFn(grid, np.where(ok, vals + rng.random(len(grid)), -np.inf))
            order = max(order, float(np.max(transform_fwd(bigger, grid, base).values - fwd.values)))
    assert criteria.record(4, "transform laws (100 functions per base)", [
        check("dominance", max(dominance, 0.0), 1e-12),
        check("idempotence", idem, idem_tol),
        check("order reversal", max(order, 0.0), 0.0),
    ])


def test_c5_certificate(criteria):
    rng = np.random.default_rng(5)
    mu = DiscreteMeasure([[0.0, 0.0], [1.0, -1.0], [0.5, 2.0], [-1.0, 0.3]], [0.1, 0.2, 0.3, 0.4])
    bases = {
        "gaussian:1": GAUSS1,
        "gaussian:2": BaseMeasure.gaussian(2),
        "simplex:2": BaseMeasure.simplex(2),
        "discrete:2": BaseMeasure.discrete(mu),
        "quadrature:1": BaseMeasure.quadrature(NodeSet([[-1.0], [0.0], [2.0]], [0.25, 0.5, 0.25], name="q3")),
    }
    checks = []
    for label, base in bases.items():
        worst = 0.0
        for _ in range(50):
            n, m = rng.integers(1, 8, size=2)
            P = DiscreteMeasure(rng.normal(size=(n, base.dim)), rng.dirichlet(np.ones(n)))
            Q = DiscreteMeasure(rng.normal(size=(m, base.dim)), rng.dirichlet(np.ones(m)))
            prob = TransportProblem(P, Q, base)
            coupling, duals = solve_exact(prob)
            cert = certify(coupling, duals, prob)
            worst = max(worst, cert.max_slack if cert.passed else math.inf)
        checks.append(check(label, worst, 1e-7))
    assert criteria.record(5, "optimality certificate (50 problems per base)", checks)


QUARTER_GRID = np.round(np.arange(-6.0, 6.0 + 1e-9, 0.05), 12)[:, None]


@pytest.fixture(scope="module")
def quarter():
    psi = GridFn(QUARTER_GRID, QUARTER_GRID[:, 0] ** 2 / 4)
    return psi, ExpConcaveFn.from_psi(GAUSS40, psi)


def test_c6_phi_on_family(quarter, criteria):
    psi, f = quarter
    tol = grid_tolerance(QUARTER_GRID)
    mus = [tilt(GAUSS40, a) for a in QUARTER_GRID]
    closed = float(np.max(np.abs(phi_batch(f, mus) - psi.values + QUARTER_GRID[:, 0] ** 2 / 2)))
    phi1 = phi_eval(f, tilt(GAUSS40, [1.0]))
    checks = [check("x^2/4 all alpha", closed, tol), check("|phi(mu_1) + 0.25|", abs(phi1 + 0.25), tol)]

    rng = np.random.default_rng(6)
    for label, base in embedding_bases().items():
        grid = default_grid(base.dim)
        worst = 0.0
        for _ in range(20):
            p = random_concave(base, grid, rng)
            worst = max(worst, max(theorem5_residual(p, base, a) for a in grid))
        checks.append(check(f"{label} x20", worst, grid_tolerance(grid)))
    assert criteria.record(6, "phi along the exponential family", checks)


def test_c7_supergradient(quarter, criteria):
    rng = np.random.default_rng(7)
    checks = []
    for label, base in embedding_bases().items():
        quad = not base.is_exact
        grid = default_grid(base.dim)
        psi = random_concave(base, grid, rng)
        f = ExpConcaveFn.from_psi(base, psi)
        recs = supergradient_report(psi, f, random_measures(base, 100, rng))
        assert recs
        checks += [
            check(f"{label} normalization", max(r.normalization for r in recs), 1e-6 if quad else 1e-10),
            check(f"{label} tv", max(r.tv for r in recs), 1e-8 if quad else 1e-12),
            check(f"{label} inequality", max(max(0.0, -r.inequality_min) for r in recs), 1e-9),
            check(f"{label} gateaux", max(r.fd_scaled_error for r in recs), 1e-6),
        ]

    psi, f = quarter
    sg = supergradient(GAUSS40, psi, [1.0], [0.5])
    x = GAUSS40.nodes.nodes[:, 0]
    density = float(np.max(np.abs(sg.values - np.exp(-x / 2 + 3 / 8))))
    tv = tv_distance(portfolio_map(GAUSS40, sg), tilt(GAUSS40, [0.5]))
    fd = gateaux_fd(f, sg, MeasureRep.base_measure(GAUSS40.nodes))
    checks += [
        check("h_1 closed form", density, 1e-12),
        check("pi_1 = N(0.5,1)", tv, 1e-8),
        check("gateaux e^0.5 - 1", abs(fd.extrapolated - math.expm1(0.5)), 1e-6),
    ]
    assert criteria.record(7, "supergradients and portfolio maps", checks)


def test_c8_exp_concavity(quarter, criteria):
    rng = np.random.default_rng(8)
    checks = []
    for label, base in embedding_bases().items():
        f = ExpConcaveFn.from_psi(base, random_concave(base, default_grid(base.dim), rng))
        checks.append(check(label, max(0.0, -exp_concavity_check(f, 200, rng)), 1e-9))
    checks.append(check("x^2/4", max(0.0, -exp_concavity_check(quarter[1], 200, rng)), 1e-9))
    assert criteria.record(8, "midpoint concavity of exp(phi) (200 pairs)", checks)


def test_c9_sinkhorn(problem_set, criteria):
    checks = []
    for eps in (1e-1, 1e-2, 1e-3):
        worst = 0.0
        for prob in problem_set:
            n, m = prob.shape
            exact = solve_exact(prob)[0].objective
            gap = abs(solve_entropic(prob, eps).objective - exact)
            worst = max(worst, gap / (eps * math.log(n * m) + 1e-6))
        checks.append(check(f"eps={eps:g} gap/(eps log(nm) + 1e-6)", worst, 1.0))
    assert criteria.record(9, "entropic vs exact objective", checks)


def _cgft():
    exe = shutil.which("cgft")
    return [exe] if exe else [sys.executable, "-m", "cgft.cli"]


def test_c10_cli(tmp_path, criteria):
    cmd = _cgft()
    runs = []
    for k in range(2):
        out = tmp_path / f"v{k}"
        proc = subprocess.run(cmd + ["verify", "--seed", "7", "--out", str(out)], capture_output=True)
        runs.append((proc.returncode, (out / "verify_report.json").read_bytes(), (out / "verify_report.csv").read_bytes()))
    identical = runs[0][1:] == runs[1][1:]
    all_pass = json.loads(runs[0][1])["pass"]

    (tmp_path / "p.json").write_text('{"atoms": [[0], [1]], "weights": [0.5, 0.5]}')
    (tmp_path / "q.json").write_text('{"atoms": [[2], [3]], "weights": [0.5, 0.5]}')
    solve = subprocess.run(cmd + ["solve", "--base", "gaussian:1", "--source", str(tmp_path / "p.json"),
                                  "--target", str(tmp_path / "q.json"), "--out", str(tmp_path / "s")],
                           capture_output=True)
    plan = (tmp_path / "s" / "plan.csv").read_text().splitlines()
    missing = subprocess.run(cmd + ["solve", "--base", "gaussian:1", "--source", str(tmp_path / "p.json"),
                                    "--target", str(tmp_path / "absent.json"), "--out", str(tmp_path / "m")],
                             capture_output=True)
    grid = np.round(np.arange(-3.0, 3.0 + 1e-9, 0.05), 12)
    (tmp_path / "psi.json").write_text(json.dumps({"grid": [[g] for g in grid], "values": list(grid**2)}))
    failing = subprocess.run(cmd + ["embed", "--base", "gaussian:1", "--psi", str(tmp_path / "psi.json"),
                                    "--out", str(tmp_path / "e")], capture_output=True)

    golden = [
        (runs[0][0], 0),
        (solve.returncode, 0),
        (missing.returncode, 1),
        (failing.returncode, 2),
    ]
    mismatches = sum(got != want for got, want in golden)
    plan_ok = plan == ["i,j,mass,cost", "0,0,0.5,2.0", "1,1,0.5,2.0"]
    no_artifacts = not (tmp_path / "m").exists()
    assert criteria.record(10, "CLI determinism and exit codes", [
        check("report bytes differ", 0.0 if identical else 1.0, 0.0),
        check("verify suites failing", 0.0 if all_pass else 1.0, 0.0),
        check("exit-code mismatches", mismatches, 0.0),
        check("plan rows wrong", 0.0 if plan_ok else 1.0, 0.0),
        check("partial artifacts", 0.0 if no_artifacts else 1.0, 0.0),
    ])
