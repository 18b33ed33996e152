"""Discrete Monge-Kantorovich problems with cost Lambda0(theta - y).

The exact solver is a transportation simplex (north-west corner start, Bland's
rule) which yields a basic optimal plan together with dual potentials; the
certificate checks that every charged pair is a Lambda0-superdifferential pair
of the Lambda0-concave extension of those potentials.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, solve
from scipy.special import logsumexp

from .cgf import BaseMeasure, cost_matrix
from .ctransform import GridFn, superdiff_check, transform_bwd, transform_fwd
from .errors import ConvergenceError, ValidationError
from .measures import DiscreteMeasure

MAX_ENTRIES = 10**6
SUPPORT_TOL = 1e-12
CERT_TOL = 1e-7
MONGE_TOL = 1e-9
_REDUCED_COST_TOL = 1e-12
_TIE_TOL = 1e-15
_NEWTON_EVERY = 200


@dataclass(frozen=True, eq=False)
class TransportProblem:
    source: DiscreteMeasure
    target: DiscreteMeasure
    base: BaseMeasure

    def __post_init__(self):
        if self.source.dim != self.base.dim:
            raise ValidationError(
                f"source has dimension {self.source.dim}, base has {self.base.dim}"
            )
        if self.target.dim != self.base.dim:
            raise ValidationError(
                f"target has dimension {self.target.dim}, base has {self.base.dim}"
            )
        object.__setattr__(self, "_cost", None)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.source), len(self.target)

    @property
    def cost(self) -> np.ndarray:
        if self._cost is None:
            C = cost_matrix(self.base, self.source.atoms, self.target.atoms)
            C.setflags(write=False)
            object.__setattr__(self, "_cost", C)
        return self._cost


@dataclass(frozen=True, eq=False)
class Coupling:
    plan: np.ndarray
    objective: float
    iterations: int = 0

    def marginal_error(self, prob: TransportProblem) -> float:
        """L1 distance between the plan's marginals and (P, Q)."""
        return float(
            np.abs(self.plan.sum(1) - prob.source.weights).sum()
            + np.abs(self.plan.sum(0) - prob.target.weights).sum()
        )


@dataclass(frozen=True, eq=False)
class DualPotentials:
    psi: GridFn
    psi0: GridFn

    def feasibility_violation(self, prob: TransportProblem) -> float:
        slack = self.psi.values[:, None] + self.psi0.values[None, :] - prob.cost
        return float(max(slack.max(), 0.0))

    def dual_objective(self, prob: TransportProblem) -> float:
        return float(prob.source.weights @ self.psi.values + prob.target.weights @ self.psi0.values)


# exact solver


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    n, m = len(a), len(b)
    a, b = a.copy(), b.copy()
    flow = {}
    i = j = 0
    while True:
        q = min(a[i], b[j])
        flow[i, j] = q
        a[i] -= q
        b[j] -= q
        if i == n - 1 and j == m - 1:
            break
        # on a tie advance the row only; the next cell then enters at zero
        if j == m - 1 or (i < n - 1 and a[i] <= b[j] + _TIE_TOL):
            i += 1
        else:
            j += 1
    return flow


def _potentials(basis, C, n, m):
    """Solve u_i + v_j = C_ij on the spanning tree with u_0 = 0."""
    rows = [[] for _ in range(n)]
    cols = [[] for _ in range(m)]
    for i, j in basis:
        rows[i].append(j)
        cols[j].append(i)
    u = np.full(n, np.nan)
    v = np.full(m, np.nan)
    u[0] = 0.0
    queue = deque([("r", 0)])
    while queue:
        side, k = queue.popleft()
        if side == "r":
            for j in rows[k]:
                if np.isnan(v[j]):
                    v[j] = C[k, j] - u[k]
                    queue.append(("c", j))
        else:
            for i in cols[k]:
                if np.isnan(u[i]):
                    u[i] = C[i, k] - v[k]
                    queue.append(("r", i))
    return u, v, rows, cols


def _cycle(rows, cols, n, i0, j0):
    """Tree path from column node j0 to row node i0, as a list of basic cells."""
    # nodes: rows are 0..n-1, columns n..n+m-1
    start, goal = n + j0, i0
    parent = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        nbrs = (n + j for j in rows[node]) if node < n else iter(cols[node - n])
        for nb in nbrs:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    path = []
    node = goal
    while parent[node] is not None:
        prev = parent[node]
        cell = (node, prev - n) if node < n else (prev, node - n)
        path.append(cell)
        node = prev
    # path runs i0 -> ... -> j0; first cell shares row i0, so it takes -delta
    return path


def _transport_simplex(a, b, C, max_iter):
    n, m = C.shape
    flow = _northwest_corner(a, b)
    it = 0
    while True:
        u, v, rows, cols = _potentials(flow, C, n, m)
        reduced = C - u[:, None] - v[None, :]
        candidates = np.argwhere(reduced < -_REDUCED_COST_TOL)
        if len(candidates) == 0:
            return flow, u, v, it
        if it >= max_iter:
            raise ConvergenceError(
                f"transportation simplex did not finish in {max_iter} pivots",
                residual=float(-reduced.min()),
            )
        # Bland: lowest-index improving cell enters
        i0, j0 = (int(x) for x in candidates[0])
        path = _cycle(rows, cols, n, i0, j0)
        minus = path[0::2]
        delta = min(flow[c] for c in minus)
        leaving = min(c for c in minus if flow[c] <= delta)
        for k, c in enumerate(path):
            flow[c] += -delta if k % 2 == 0 else delta
        del flow[leaving]
        flow[i0, j0] = delta
        it += 1


def solve_exact(prob: TransportProblem, max_iter: int = 10**7) -> tuple[Coupling, DualPotentials]:
    """Optimal basic plan and dual potentials with psi(first source atom) = 0."""
    n, m = prob.shape
    if n == 0 or m == 0:
        raise ValidationError("source and target must have at least one atom")
    if n * m > MAX_ENTRIES:
        raise ValidationError(f"problem has {n * m} cost entries, limit is {MAX_ENTRIES}")
    C = prob.cost
    flow, u, v, it = _transport_simplex(prob.source.weights, prob.target.weights, C, max_iter)
    plan = np.zeros((n, m))
    for (i, j), q in flow.items():
        plan[i, j] = max(q, 0.0)
    objective = float((plan * C).sum())
    duals = DualPotentials(GridFn(prob.source.atoms, u), GridFn(prob.target.atoms, v))
    return Coupling(plan, objective, it), duals


# entropic solver


def _entropic_plan(f, g, C, loga, logb, eps):
    return np.exp((f[:, None] + g[None, :] - C) / eps + loga[:, None] + logb[None, :])


def _marginal_error(P, a, b) -> float:
    return float(np.abs(P.sum(1) - a).sum() + np.abs(P.sum(0) - b).sum())


def _newton_polish(f, g, C, loga, logb, eps, tol, max_steps=50):
    """Newton ascent on the entropic dual, with g[-1] held fixed to remove the shift mode.

    Sinkhorn contracts slowly when the plan nearly splits into independent
    blocks (equal partial sums of the marginals); Newton resolves the mass
    exchange between blocks in a few steps.
    """
    a, b = np.exp(loga), np.exp(logb)
    n, m = len(a), len(b)

    def dual(f, g):
        return float(f @ a + g @ b - eps * _entropic_plan(f, g, C, loga, logb, eps).sum())

    P = _entropic_plan(f, g, C, loga, logb, eps)
    err = _marginal_error(P, a, b)
    for _ in range(max_steps):
        if err <= tol:
            break
        r, c = P.sum(1), P.sum(0)
        grad = np.concatenate([a - r, (b - c)[:-1]])
        H = np.zeros((n + m - 1, n + m - 1))
        H[:n, :n] = np.diag(r)
        H[n:, n:] = np.diag(c[:-1])
        H[:n, n:] = P[:, :-1]
        H[n:, :n] = P[:, :-1].T
        # blocks joined only by underflowed entries give near-null modes with
        # zero gradient; a tiny ridge keeps their step at zero
        H[np.diag_indices_from(H)] += 1e-12 * H.diagonal().max()
        try:
            step = eps * solve(H, grad, assume_a="pos")
        except LinAlgError:
            step = eps * np.linalg.lstsq(H, grad, rcond=1e-13)[0]
        d0 = dual(f, g)
        t = 1.0
        for _ in range(40):
            f_new = f + t * step[:n]
            g_new = g.copy()
            g_new[:-1] += t * step[n:]
            if dual(f_new, g_new) >= d0:
                break
            t *= 0.5
        else:
            break
        f, g = f_new, g_new
        P = _entropic_plan(f, g, C, loga, logb, eps)
        err = _marginal_error(P, a, b)
    return f, g, P, err


def solve_entropic(
    prob: TransportProblem,
    epsilon: float,
    tol: float = 1e-9,
    max_iter: int = 10**5,
) -> Coupling:
    """Log-domain Sinkhorn with epsilon-scaling; stops when the L1 marginal error <= tol.

    At the target epsilon, a stall of Sinkhorn is handed to a Newton polish of
    the same dual problem every ``_NEWTON_EVERY`` sweeps.
    """
    if not epsilon > 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    C = prob.cost
    loga = np.log(prob.source.weights)
    logb = np.log(prob.target.weights)
    a, b = prob.source.weights, prob.target.weights
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    scale = float(np.ptp(C)) if C.size > 1 else 0.0
    # epsilon-scaling schedule; the last stage runs at the requested epsilon
    eps_list = []
    e = max(epsilon, scale)
    while e > epsilon:
        eps_list.append(e)
        e /= 4.0
    eps_list.append(epsilon)

    it = 0
    err = np.inf
    for eps in eps_list:
        last = eps == epsilon
        stage_tol = tol if last else max(tol, 1e-3)
        sweeps = 0
        while True:
            f = -eps * logsumexp((g[None, :] - C) / eps + logb[None, :], axis=1)
            g = -eps * logsumexp((f[:, None] - C) / eps + loga[:, None], axis=0)
            it += 1
            sweeps += 1
            P = _entropic_plan(f, g, C, loga, logb, eps)
            # columns are exact after the g-update; rows carry the error
            err = _marginal_error(P, a, b)
            if err <= stage_tol:
                break
            if last and sweeps % _NEWTON_EVERY == 0:
                f, g, P, err = _newton_polish(f, g, C, loga, logb, eps, tol)
                if err <= stage_tol:
                    break
            if it >= max_iter:
                raise ConvergenceError(
                    f"Sinkhorn did not converge in {max_iter} iterations "
                    f"(marginal error {err:.3e}, epsilon {epsilon})",
                    residual=err,
                )
    return Coupling(P, float((P * C).sum()), it)


# certificate


@dataclass
class PairCheck:
    i: int
    j: int
    mass: float
    slack: float
    gap: float


@dataclass
class Certificate:
    passed: bool
    max_slack: float
    tolerance: float
    pairs: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "pass": self.passed,
            "max_slack": self.max_slack,
            "tolerance": self.tolerance,
            "pairs_checked": len(self.pairs),
            "failures": [
                {"i": p.i, "j": p.j, "slack": p.slack, "gap": p.gap} for p in self.failures
            ],
        }


def _union_grid(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    pts = np.vstack([xs, ys])
    _, first = np.unique(pts, axis=0, return_index=True)
    return pts[np.sort(first)]


def certify(
    coupling: Coupling,
    duals: DualPotentials,
    prob: TransportProblem,
    tol: float = CERT_TOL,
) -> Certificate:
    """Check that the support of the plan lies in the superdifferential of psi.

    psi is extended off the source atoms as the backward transform of the
    target potential, evaluated on the union of source and target atoms.
    Failures are reported, never raised. A pass proves optimality; a failure
    proves non-optimality only when Lambda0 is bounded below.
    """
    base = prob.base
    grid = _union_grid(prob.source.atoms, prob.target.atoms)
    psi_ext = transform_bwd(duals.psi0, grid, base)
    psi0_ext = transform_fwd(psi_ext, prob.target.atoms, base)
    src_idx = [psi_ext.index_of(x) for x in prob.source.atoms]
    C = prob.cost

    pairs, failures = [], []
    max_slack = 0.0
    for i, j in np.argwhere(coupling.plan > SUPPORT_TOL):
        theta, y = prob.source.atoms[i], prob.target.atoms[j]
        sd = superdiff_check(psi_ext, theta, y, base, tol=tol)
        gap = float(C[i, j] - psi_ext.values[src_idx[i]] - psi0_ext.values[j])
        slack = max(sd.slack, abs(gap))
        check = PairCheck(int(i), int(j), float(coupling.plan[i, j]), slack, gap)
        pairs.append(check)
        if slack > tol:
            failures.append(check)
        max_slack = max(max_slack, slack)
    return Certificate(max_slack <= tol, max_slack, tol, pairs, failures)


# Monge maps


@dataclass
class MongeResult:
    mapping: dict | None
    split_rows: list

    @property
    def is_map(self) -> bool:
        return self.mapping is not None


def monge_extract(coupling: Coupling, tol: float = MONGE_TOL) -> MongeResult:
    """Source-to-target index map when every row charges exactly one target."""
    charged = coupling.plan > tol
    counts = charged.sum(axis=1)
    split = [int(i) for i in np.flatnonzero(counts != 1)]
    if split:
        return MongeResult(None, split)
    return MongeResult({int(i): int(np.argmax(charged[i])) for i in range(len(counts))}, [])


def product_coupling(prob: TransportProblem) -> Coupling:
    plan = np.outer(prob.source.weights, prob.target.weights)
    return Coupling(plan, float((plan * prob.cost).sum()))
