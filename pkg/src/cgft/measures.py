"""Probability measures on R^d: discrete measures, quadrature node sets and
densities relative to a base measure.

Every expectation here is a finite weighted sum, so exponential moments are
accumulated in log-space with max-subtraction before exponentiating.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import logsumexp

from .errors import MomentOverflowError, StructuralError, ValidationError

ATOM_TOL = 1e-12
WEIGHT_TOL = 1e-12
NODE_WEIGHT_TOL = 1e-10
DENSITY_TOL = 1e-10

_LOG_MAX = np.log(np.finfo(float).max)


def as_points(points, d=None) -> np.ndarray:
    """Coerce a list of points (or scalars when d == 1) to an (n, d) float array."""
    arr = np.array(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if d in (None, 1) else arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValidationError(f"points must be a 2-D array, got shape {arr.shape}")
    if d is not None and arr.shape[1] != d:
        raise ValidationError(f"points have dimension {arr.shape[1]}, expected {d}")
    return arr


def as_point(x, d=None) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ValidationError(f"a point must be a vector, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise ValidationError(f"point has dimension {arr.shape[0]}, expected {d}")
    return arr


def _check_distinct(points: np.ndarray, what: str) -> None:
    if len(points) < 2:
        return
    if len(points) <= 1500:
        diff = np.abs(points[:, None, :] - points[None, :, :]).max(axis=-1)
        np.fill_diagonal(diff, np.inf)
        i, j = np.unravel_index(np.argmin(diff), diff.shape)
        if diff[i, j] <= ATOM_TOL:
            raise ValidationError(f"{what} {i} and {j} coincide within {ATOM_TOL}")
    else:
        # coarse hash check for large sets; misses pairs straddling a bucket edge
        rounded = np.round(points / ATOM_TOL)
        if len(np.unique(rounded, axis=0)) != len(points):
            raise ValidationError(f"duplicate {what} within {ATOM_TOL}")


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported probability measure sum_i w_i delta_{x_i}."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = as_points(self.atoms)
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if len(atoms) == 0:
            raise ValidationError("a discrete measure needs at least one atom")
        if len(weights) != len(atoms):
            raise ValidationError(
                f"{len(atoms)} atoms but {len(weights)} weights"
            )
        if not np.all(np.isfinite(atoms)):
            raise ValidationError("atoms must be finite")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValidationError("weights must be finite and nonnegative")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValidationError(f"weights sum to {weights.sum()!r}, not 1")
        _check_distinct(atoms, "atoms")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def __len__(self) -> int:
        return len(self.weights)

    @classmethod
    def uniform(cls, atoms) -> "DiscreteMeasure":
        atoms = as_points(atoms)
        return cls(atoms, np.full(len(atoms), 1.0 / len(atoms)))

    @classmethod
    def point_mass(cls, x) -> "DiscreteMeasure":
        return cls(as_point(x)[None, :], np.ones(1))

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def to_json(self) -> dict:
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "DiscreteMeasure":
        try:
            atoms, weights = obj["atoms"], obj["weights"]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"discrete measure JSON is missing field {exc}") from None
        return cls(np.asarray(atoms, dtype=float), np.asarray(weights, dtype=float))


@dataclass(frozen=True, eq=False)
class NodeSet:
    """Quadrature nodes standing in for integration against a base measure.

    When the base measure is discrete the nodes are its atoms and the node
    weights its masses.
    """

    nodes: np.ndarray
    node_weights: np.ndarray
    name: str = "nodes"

    def __post_init__(self):
        nodes = as_points(self.nodes)
        w = np.array(self.node_weights, dtype=float).reshape(-1)
        if len(w) != len(nodes) or len(w) == 0:
            raise ValidationError("node set needs one positive weight per node")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValidationError("node weights must be finite and positive")
        if abs(w.sum() - 1.0) > NODE_WEIGHT_TOL:
            raise ValidationError(f"node weights sum to {w.sum()!r}, not 1")
        nodes.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "node_weights", w)
        object.__setattr__(self, "log_weights", np.log(w))

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def __len__(self) -> int:
        return len(self.node_weights)

    def same_as(self, other: "NodeSet") -> bool:
        if self is other:
            return True
        return (
            self.nodes.shape == other.nodes.shape
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.node_weights, other.node_weights)
        )


def gauss_hermite_nodes(d: int, n: int = 20) -> NodeSet:
    """Tensor Gauss-Hermite rule for N(0, I_d) with n nodes per axis."""
    if d < 1 or d > 3:
        raise ValidationError(f"tensor Gauss-Hermite grids support 1 <= d <= 3, got {d}")
    if n < 1:
        raise ValidationError("need at least one node per axis")
    x, w = hermegauss(n)
    w = w / w.sum()
    grids = np.meshgrid(*([x] * d), indexing="ij")
    wgrids = np.meshgrid(*([w] * d), indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=1)
    weights = np.prod(np.stack([g.reshape(-1) for g in wgrids], axis=1), axis=1)
    weights = weights / weights.sum()
    return NodeSet(nodes, weights, name=f"gauss-hermite:{d}:{n}")


@dataclass(frozen=True, eq=False)
class MeasureRep:
    """A probability measure nu << mu0 stored through its density dnu/dmu0 on nodes."""

    base: NodeSet
    density: np.ndarray

    def __post_init__(self):
        dens = np.array(self.density, dtype=float).reshape(-1)
        if len(dens) != len(self.base):
            raise StructuralError(
                f"density has {len(dens)} entries, node set has {len(self.base)}"
            )
        if np.any(dens < 0) or not np.all(np.isfinite(dens)):
            raise ValidationError("density must be finite and nonnegative")
        total = float(self.base.node_weights @ dens)
        if abs(total - 1.0) > DENSITY_TOL:
            raise ValidationError(f"density integrates to {total!r}, not 1")
        dens.setflags(write=False)
        object.__setattr__(self, "density", dens)

    @classmethod
    def from_unnormalized(cls, base: NodeSet, density) -> "MeasureRep":
        dens = np.asarray(density, dtype=float)
        return cls(base, dens / (base.node_weights @ dens))

    @classmethod
    def from_log_density(cls, base: NodeSet, log_density) -> "MeasureRep":
        """Normalize exp(log_density) against the node weights without overflow."""
        log_density = np.asarray(log_density, dtype=float)
        log_z = logsumexp(log_density + base.log_weights)
        return cls(base, np.exp(log_density - log_z))

    @classmethod
    def base_measure(cls, base: NodeSet) -> "MeasureRep":
        return cls(base, np.ones(len(base)))

    @property
    def masses(self) -> np.ndarray:
        return self.base.node_weights * self.density

    @property
    def dim(self) -> int:
        return self.base.dim

    def mean(self) -> np.ndarray:
        return self.masses @ self.base.nodes

    def to_discrete(self) -> DiscreteMeasure:
        keep = self.density > 0
        m = self.masses[keep]
        return DiscreteMeasure(self.base.nodes[keep], m / m.sum())

    def to_json(self) -> dict:
        return {"base": self.base.name, "density": self.density.tolist()}

    @classmethod
    def from_json(cls, obj: dict, base: NodeSet) -> "MeasureRep":
        try:
            name, density = obj["base"], obj["density"]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"measure JSON is missing field {exc}") from None
        if name != base.name:
            raise StructuralError(f"measure refers to base {name!r}, got {base.name!r}")
        return cls(base, np.asarray(density, dtype=float))


Measure = Union[MeasureRep, DiscreteMeasure]


def support_and_log_masses(nu: Measure) -> tuple[np.ndarray, np.ndarray]:
    """Points and log-masses of nu; zero masses map to -inf."""
    if isinstance(nu, MeasureRep):
        pts, m = nu.base.nodes, nu.masses
    elif isinstance(nu, DiscreteMeasure):
        pts, m = nu.atoms, nu.weights
    else:
        raise TypeError(f"expected a MeasureRep or DiscreteMeasure, got {type(nu).__name__}")
    with np.errstate(divide="ignore"):
        return pts, np.log(m)


def log_exp_moment(nu: Measure, theta) -> float:
    """log nu(exp(<theta, x>)) by log-sum-exp."""
    pts, logm = support_and_log_masses(nu)
    theta = as_point(theta, pts.shape[1])
    return float(logsumexp(pts @ theta + logm))


def exp_moment(nu: Measure, theta) -> float:
    """nu(exp(<theta, x>)), accumulated in log-space.

    Raises MomentOverflowError when the result does not fit in a float.
    """
    pts, logm = support_and_log_masses(nu)
    theta = as_point(theta, pts.shape[1])
    exponents = pts @ theta + logm
    value = logsumexp(exponents)
    if value > _LOG_MAX:
        k = int(np.argmax(exponents))
        raise MomentOverflowError(
            f"exponential moment overflows: log value {value:.6g}, "
            f"dominated by node {k} at {pts[k].tolist()}"
        )
    return float(np.exp(value))


def seminorm(nu: Measure, i: int, j: int) -> float:
    """|nu|(exp(j |x_i|)) with a 1-based axis index i."""
    pts, logm = support_and_log_masses(nu)
    d = pts.shape[1]
    if not 1 <= i <= d:
        raise ValidationError(f"axis index must be in 1..{d}, got {i}")
    if j < 0 or int(j) != j:
        raise ValidationError(f"order must be a nonnegative integer, got {j}")
    exponents = j * np.abs(pts[:, i - 1]) + logm
    value = logsumexp(exponents)
    if value > _LOG_MAX:
        k = int(np.argmax(exponents))
        raise MomentOverflowError(
            f"seminorm overflows: log value {value:.6g}, node {k} at {pts[k].tolist()}"
        )
    return float(np.exp(value))


def _require_same_base(mu: MeasureRep, nu: MeasureRep) -> None:
    if not mu.base.same_as(nu.base):
        raise StructuralError(
            f"measures live on different node sets ({mu.base.name!r} vs {nu.base.name!r})"
        )


def mixture(mu: MeasureRep, nu: MeasureRep, t: float) -> MeasureRep:
    """(1 - t) mu + t nu."""
    _require_same_base(mu, nu)
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"mixture weight must lie in [0, 1], got {t}")
    if t == 0.0:
        return mu
    if t == 1.0:
        return nu
    return MeasureRep(mu.base, (1.0 - t) * mu.density + t * nu.density)


def tv_distance(mu: MeasureRep, nu: MeasureRep) -> float:
    _require_same_base(mu, nu)
    return 0.5 * float(mu.base.node_weights @ np.abs(mu.density - nu.density))
