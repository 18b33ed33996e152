"""Exponentially concave functions on measures absolutely continuous w.r.t. mu0.

phi(mu) = min over a theta-grid of [log mu(exp(-<theta, x>)) - g(theta)], where
the generator g is either an arbitrary grid function h or the conjugate psi0 of
a Lambda0-concave psi. Along the exponential family phi recovers psi:
phi(mu_alpha) = psi(alpha) - Lambda0(alpha), and for every superdifferential
pair (alpha, theta) of psi the density

    h_alpha(x) = exp(-<theta, x> - Lambda0(alpha - theta) + Lambda0(alpha))

is a supergradient of phi at mu_alpha, with portfolio map mu_{alpha - theta}.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .cgf import BaseMeasure, cgf_eval, log_mgf, tilt
from .ctransform import (
    CHECK_TOL,
    GridFn,
    boundary_mask,
    concavity_residual,
    grid_tolerance,
    superdiff_check,
    superdiff_pairs,
    transform_fwd,
)
from .errors import PreconditionError, StructuralError, ValidationError
from .measures import (
    DiscreteMeasure,
    Measure,
    MeasureRep,
    as_point,
    mixture,
    tv_distance,
)

NORMALIZATION_TOL_EXACT = 1e-10
QUADRATURE_TOL = 1e-6
DEFAULT_FD_STEPS = (1e-2, 1e-3, 1e-4, 1e-5)


@dataclass(frozen=True, eq=False)
class ExpConcaveFn:
    base: BaseMeasure
    generator: GridFn
    mode: str = "from-h"

    def __post_init__(self):
        if self.mode not in ("from-h", "from-conjugate"):
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.generator.dim != self.base.dim:
            raise StructuralError("generator grid and base have different dimensions")

    @classmethod
    def from_h(cls, base: BaseMeasure, h: GridFn) -> "ExpConcaveFn":
        return cls(base, h, "from-h")

    @classmethod
    def from_psi(cls, base: BaseMeasure, psi: GridFn, theta_grid=None) -> "ExpConcaveFn":
        """Build phi from the conjugate of psi on ``theta_grid`` (default: psi's grid)."""
        theta_grid = psi.grid if theta_grid is None else theta_grid
        return cls(base, transform_fwd(psi, theta_grid, base), "from-conjugate")


@dataclass(frozen=True, eq=False)
class SupergradientDensity:
    base: BaseMeasure
    alpha: np.ndarray
    theta: np.ndarray
    values: np.ndarray
    normalization: float

    @property
    def mu_alpha(self) -> MeasureRep:
        return tilt(self.base, self.alpha)


def _log_masses(base: BaseMeasure, mu: Measure) -> np.ndarray:
    """log-masses of mu on the base nodes; checks absolute continuity."""
    nodes = base.require_nodes()
    if isinstance(mu, MeasureRep):
        if not mu.base.same_as(nodes):
            raise StructuralError("measure is not defined on the base node set")
        m = mu.masses
    elif isinstance(mu, DiscreteMeasure):
        if mu.dim != base.dim:
            raise StructuralError("measure and base have different dimensions")
        m = np.zeros(len(nodes))
        for x, w in zip(mu.atoms, mu.weights):
            if w == 0:
                continue
            k = np.flatnonzero(np.abs(nodes.nodes - x).max(axis=1) <= 1e-12)
            if len(k) == 0:
                raise StructuralError(
                    f"atom {x.tolist()} is not charged by the base measure "
                    "(not absolutely continuous)"
                )
            m[k[0]] += w
    else:
        raise TypeError(f"expected a measure, got {type(mu).__name__}")
    with np.errstate(divide="ignore"):
        return np.log(m)


def _f_terms(f: ExpConcaveFn, log_masses: np.ndarray) -> np.ndarray:
    """Values f_theta(mu) = log mu(exp(-<theta,x>)) - g(theta) for every grid theta.

    ``log_masses`` may be a single vector or a stack of them (last axis = nodes).
    """
    nodes = f.base.nodes.nodes
    expo = -f.generator.grid @ nodes.T  # (k, nodes)
    lm = np.asarray(log_masses)
    logmom = logsumexp(expo + lm[..., None, :], axis=-1)
    with np.errstate(invalid="ignore"):
        out = logmom - f.generator.values
    return np.where(np.isfinite(f.generator.values), out, np.inf)


def phi_terms(f: ExpConcaveFn, mu: Measure) -> np.ndarray:
    return _f_terms(f, _log_masses(f.base, mu))


def phi_eval(f: ExpConcaveFn, mu: Measure) -> float:
    """phi(mu): the minimum of f_theta(mu) over the generator's grid."""
    return float(np.min(phi_terms(f, mu)))


def phi_argmin(f: ExpConcaveFn, mu: Measure) -> tuple[int, bool]:
    """Index of the minimizing theta (smallest index on ties) and whether it sits on the grid boundary."""
    k = int(np.argmin(phi_terms(f, mu)))
    return k, bool(boundary_mask(f.generator.grid)[k])


def phi_batch(f: ExpConcaveFn, mus: list[Measure]) -> np.ndarray:
    lm = np.stack([_log_masses(f.base, mu) for mu in mus])
    return _f_terms(f, lm).min(axis=-1)


def _tolerance_for(base: BaseMeasure, exact: float) -> float:
    return exact if base.is_exact else QUADRATURE_TOL


def theorem5_residual(
    psi: GridFn,
    base: BaseMeasure,
    alpha,
    theta_grid=None,
    tol: float | None = None,
) -> float:
    """|phi(mu_alpha) - psi(alpha) + Lambda0(alpha)| for phi built from psi's conjugate.

    Raises PreconditionError if psi is not Lambda0-concave relative to the
    grids (concavity residual above ``tol``, default the grid tolerance).
    """
    tol = grid_tolerance(psi.grid) if tol is None else tol
    res = concavity_residual(psi, base, theta_grid)
    if res > tol:
        raise PreconditionError(
            f"psi is not Lambda0-concave on its grid: concavity residual {res:.3g} > {tol:.3g}"
        )
    f = ExpConcaveFn.from_psi(base, psi, theta_grid)
    return family_residual_for(f, psi, alpha)


def family_residual_for(f: ExpConcaveFn, psi: GridFn, alpha) -> float:
    alpha = psi.grid[psi.index_of(alpha)]
    value = phi_eval(f, tilt(f.base, alpha))
    return abs(value - psi(alpha) + cgf_eval(f.base, alpha))


def psi_from_phi(f: ExpConcaveFn, alpha_grid) -> GridFn:
    """psi(alpha) = phi(mu_alpha) + Lambda0(alpha) on ``alpha_grid``."""
    alpha_grid = np.asarray(alpha_grid, dtype=float).reshape(-1, f.base.dim)
    vals = phi_batch(f, [tilt(f.base, a) for a in alpha_grid]) + log_mgf(f.base, alpha_grid)
    return GridFn(alpha_grid, vals)


def supergradient(
    base: BaseMeasure,
    psi: GridFn,
    alpha,
    theta,
    tol: float = CHECK_TOL,
) -> SupergradientDensity:
    """h_alpha on the base nodes for a superdifferential pair (alpha, theta) of psi."""
    pair = superdiff_check(psi, alpha, theta, base, tol=tol)
    if not pair.accepted:
        raise PreconditionError(
            f"(alpha, theta) = ({pair.theta.tolist()}, {pair.y.tolist()}) is not a "
            f"superdifferential pair: slack {pair.slack:.3g} > {tol:.3g}"
        )
    return supergradient_density(base, pair.theta, pair.y)


def supergradient_density(base: BaseMeasure, alpha, theta) -> SupergradientDensity:
    """h_alpha without the superdifferential precondition; checks mu_alpha(h_alpha) = 1."""
    alpha = as_point(alpha, base.dim)
    theta = as_point(theta, base.dim)
    nodes = base.require_nodes()
    shift = cgf_eval(base, alpha) - cgf_eval(base, alpha - theta)
    values = np.exp(-nodes.nodes @ theta + shift)
    norm = float(tilt(base, alpha).masses @ values)
    limit = _tolerance_for(base, NORMALIZATION_TOL_EXACT)
    if abs(norm - 1.0) > limit:
        raise PreconditionError(f"mu_alpha(h_alpha) = {norm!r} deviates from 1 by more than {limit}")
    values.setflags(write=False)
    return SupergradientDensity(base, alpha, theta, values, norm)


def portfolio_map(base: BaseMeasure, sg: SupergradientDensity) -> MeasureRep:
    """pi_alpha, the measure with density h_alpha against mu_alpha."""
    mu_alpha = tilt(base, sg.alpha)
    return MeasureRep.from_unnormalized(mu_alpha.base, mu_alpha.density * sg.values)


def pairing(sg: SupergradientDensity, nu: Measure) -> float:
    """<mu*, nu> = nu(h_alpha)."""
    return float(np.exp(_log_masses(sg.base, nu)) @ sg.values)


def supergrad_inequality(f: ExpConcaveFn, sg: SupergradientDensity, nu: Measure) -> float:
    """phi(mu_alpha) + nu(h_alpha) - 1 - phi(nu); nonnegative when sg is a supergradient."""
    return phi_eval(f, sg.mu_alpha) + pairing(sg, nu) - 1.0 - phi_eval(f, nu)


def supergrad_inequalities(f: ExpConcaveFn, sg: SupergradientDensity, nus: list[Measure]) -> np.ndarray:
    """Vectorized supergrad_inequality over many nu."""
    phis = phi_batch(f, nus)
    pairs = np.array([pairing(sg, nu) for nu in nus])
    return phi_eval(f, sg.mu_alpha) + pairs - 1.0 - phis


@dataclass
class GateauxReport:
    steps: list
    quotients: list
    extrapolated: float
    analytic: float
    error: float = field(init=False)
    scaled_error: float = field(init=False)

    def __post_init__(self):
        self.error = abs(self.extrapolated - self.analytic)
        # float64 cannot resolve absolute errors on limits of order 1e15
        self.scaled_error = self.error / max(1.0, abs(self.analytic))


def _richardson(steps: np.ndarray, values: np.ndarray) -> float:
    """Polynomial extrapolation to t = 0 (Neville's scheme)."""
    t = list(steps)
    p = list(values)
    n = len(p)
    for level in range(1, n):
        for i in range(n - level):
            p[i] = (t[i + level] * p[i] - t[i] * p[i + 1]) / (t[i + level] - t[i])
    return float(p[0])


def gateaux_fd(
    f: ExpConcaveFn,
    sg: SupergradientDensity,
    nu: MeasureRep,
    steps=None,
) -> GateauxReport:
    """One-sided difference quotients of f_theta along (1 - t) mu_alpha + t nu.

    The quotients are extrapolated to t -> 0+ and compared with nu(h_alpha) - 1.
    Without explicit ``steps`` the default ladder is divided by a pilot slope
    estimate taken from the t = 1 quotient, keeping t * slope inside the radius
    where the quotient is a power series in t.
    """
    mu_alpha = sg.mu_alpha
    k = f.generator.index_of(sg.theta)
    g = f.generator.values[k]
    if not np.isfinite(g):
        raise PreconditionError("generator is -inf at theta")
    expo = -f.base.nodes.nodes @ sg.theta

    def f_theta(mu: MeasureRep) -> float:
        with np.errstate(divide="ignore"):
            return float(logsumexp(expo + np.log(mu.masses))) - g

    f0 = f_theta(mu_alpha)
    if steps is None:
        pilot = abs(np.expm1(f_theta(nu) - f0))
        steps = np.asarray(DEFAULT_FD_STEPS) / max(1.0, pilot)
    steps = np.asarray(sorted(steps, reverse=True), dtype=float)
    if np.any(steps <= 0) or np.any(steps > 1):
        raise ValidationError("difference steps must lie in (0, 1]")
    quotients = np.array([(f_theta(mixture(mu_alpha, nu, t)) - f0) / t for t in steps])
    limit = _richardson(steps, quotients) if len(steps) > 1 else float(quotients[0])
    return GateauxReport(steps.tolist(), quotients.tolist(), limit, pairing(sg, nu) - 1.0)


def random_measures(base: BaseMeasure, count: int, rng: np.random.Generator, concentration: float = 1.0) -> list[MeasureRep]:
    """Random probability measures on the base nodes with Dirichlet masses."""
    nodes = base.require_nodes()
    masses = rng.dirichlet(np.full(len(nodes), concentration), size=count)
    masses = np.maximum(masses, 1e-300)
    return [MeasureRep.from_unnormalized(nodes, m / nodes.node_weights) for m in masses]


def exp_concavity_check(f: ExpConcaveFn, trials: int, rng: np.random.Generator | None = None) -> float:
    """Worst midpoint-concavity margin of exp(phi) over random pairs (negative = violation)."""
    rng = np.random.default_rng(0) if rng is None else rng
    mus = random_measures(f.base, trials, rng)
    nus = random_measures(f.base, trials, rng)
    mids = [mixture(m, n, 0.5) for m, n in zip(mus, nus)]
    e_mu = np.exp(phi_batch(f, mus))
    e_nu = np.exp(phi_batch(f, nus))
    e_mid = np.exp(phi_batch(f, mids))
    if np.any(e_mu < 0) or np.any(e_nu < 0):
        return -np.inf
    margin = e_mid - 0.5 * e_mu - 0.5 * e_nu
    return float(margin.min()) if len(margin) else 0.0


@dataclass
class SupergradientRecord:
    alpha: list
    theta: list
    normalization: float
    tv: float
    inequality_min: float
    fd_error: float
    fd_scaled_error: float


def accepted_pairs(psi: GridFn, f: ExpConcaveFn, tol: float = CHECK_TOL) -> list[tuple[np.ndarray, np.ndarray]]:
    """Every (alpha, theta) with alpha on psi's grid and theta on the generator grid with zero duality gap."""
    out = []
    for alpha in psi.grid:
        if not np.isfinite(psi(alpha)):
            continue
        for theta in superdiff_pairs(psi, f.generator, alpha, f.base, tol):
            out.append((alpha.copy(), theta))
    return out


def supergradient_report(
    psi: GridFn,
    f: ExpConcaveFn,
    nus: list[MeasureRep],
    fd_nu: MeasureRep | None = None,
    steps=None,
    pairs=None,
) -> list[SupergradientRecord]:
    """Check normalization, portfolio map, supergradient inequality and Gateaux limit for accepted pairs."""
    base = f.base
    phis = phi_batch(f, nus)
    masses = np.stack([nu.masses for nu in nus])
    fd_nu = nus[0] if fd_nu is None else fd_nu
    records = []
    for alpha, theta in accepted_pairs(psi, f) if pairs is None else pairs:
        sg = supergradient(base, psi, alpha, theta)
        tv = tv_distance(portfolio_map(base, sg), tilt(base, alpha - theta))
        ineq = phi_eval(f, sg.mu_alpha) + masses @ sg.values - 1.0 - phis
        fd = gateaux_fd(f, sg, fd_nu, steps)
        records.append(
            SupergradientRecord(
                alpha.tolist(), theta.tolist(), abs(sg.normalization - 1.0), tv,
                float(ineq.min()), fd.error, fd.scaled_error,
            )
        )
    return records
