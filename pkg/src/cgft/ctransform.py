"""Lambda0-concave functions on finite grids.

All infima over R^d are truncated to user-supplied grids. Argmins that land on
the boundary of the search grid are recorded, since they usually mean the grid
is too small.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cgf import BaseMeasure, cgf_eval, cost_matrix
from .errors import GridLookupError, PreconditionError, PropernessError, ValidationError
from .measures import as_point, as_points

CHECK_TOL = 1e-8
DEFAULT_LIPSCHITZ = 10.0
LOOKUP_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class GridFn:
    """A function R^d -> R u {-inf} known on a finite grid.

    ``argmin`` and ``boundary_hits`` are filled in when the function was
    produced by a transform: the index of the minimizing source point for each
    entry, and the entries whose minimizer lies on the source grid's boundary.
    """

    grid: np.ndarray
    values: np.ndarray
    argmin: np.ndarray | None = None
    boundary_hits: tuple = ()

    def __post_init__(self):
        grid = as_points(self.grid)
        values = np.array(self.values, dtype=float).reshape(-1)
        if len(values) != len(grid):
            raise ValidationError(f"{len(grid)} grid points but {len(values)} values")
        if np.any(np.isnan(values)) or np.any(values == np.inf):
            raise ValidationError("values must be real or -inf")
        if not np.any(np.isfinite(values)):
            raise PropernessError("grid function is identically -inf")
        _require_distinct(grid)
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.grid.shape[1]

    def __len__(self) -> int:
        return len(self.values)

    def index_of(self, point) -> int:
        """Index of ``point`` on the grid (max-norm tolerance 1e-9)."""
        p = as_point(point, self.dim)
        dist = np.abs(self.grid - p).max(axis=1)
        k = int(np.argmin(dist))
        if dist[k] > LOOKUP_TOL:
            raise GridLookupError(f"point {p.tolist()} is not on the grid")
        return k

    def __call__(self, point) -> float:
        return float(self.values[self.index_of(point)])

    def shifted(self, c: float) -> "GridFn":
        return GridFn(self.grid, self.values + c)

    @classmethod
    def from_callable(cls, grid, fn) -> "GridFn":
        grid = as_points(grid)
        return cls(grid, np.array([fn(p) for p in grid], dtype=float))

    def to_json(self) -> dict:
        return {"grid": self.grid.tolist(), "values": [float(v) for v in self.values]}

    @classmethod
    def from_json(cls, obj: dict) -> "GridFn":
        try:
            grid, values = obj["grid"], obj["values"]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"grid function JSON is missing field {exc}") from None
        vals = []
        for v in values:
            if v == "-inf":
                vals.append(-np.inf)
            elif isinstance(v, (int, float)) and not isinstance(v, bool):
                vals.append(float(v))
            else:
                raise ValidationError(f"field 'values' holds {v!r}; use a number or \"-inf\"")
        return cls(np.asarray(grid, dtype=float), vals)


@dataclass(frozen=True)
class SuperdiffPair:
    theta: np.ndarray
    y: np.ndarray
    slack: float
    tol: float = CHECK_TOL

    @property
    def accepted(self) -> bool:
        return self.slack <= self.tol


def _require_distinct(grid: np.ndarray) -> None:
    if len(grid) < 2:
        return
    order = np.lexsort(grid.T[::-1])
    g = grid[order]
    if np.any(np.abs(np.diff(g, axis=0)).max(axis=1) == 0):
        raise ValidationError("grid points must be distinct")


def grid_spacing(grid) -> float:
    """Largest nearest-neighbour distance on the grid."""
    grid = as_points(grid)
    if len(grid) < 2:
        return 0.0
    dist, _ = cKDTree(grid).query(grid, k=2)
    return float(dist[:, 1].max())


def grid_tolerance(grid, lipschitz: float = DEFAULT_LIPSCHITZ) -> float:
    """Truncation tolerance L*h + h^2 for infima restricted to ``grid``."""
    h = grid_spacing(grid)
    return lipschitz * h + h * h


def boundary_mask(grid) -> np.ndarray:
    """Points sitting on a face of the grid's bounding box."""
    grid = as_points(grid)
    lo, hi = grid.min(axis=0), grid.max(axis=0)
    return np.any((grid == lo) | (grid == hi), axis=1)


def _conjugate(values: np.ndarray, src: np.ndarray, dst: np.ndarray, base: BaseMeasure, src_minus_dst: bool):
    if not np.any(np.isfinite(values)):
        raise PropernessError("cannot transform an identically -inf function")
    C = cost_matrix(base, src, dst) if src_minus_dst else cost_matrix(base, dst, src).T
    # C[k, j] is the cost between source point k and destination point j
    with np.errstate(invalid="ignore"):
        terms = C - values[:, None]
    terms[~np.isfinite(values), :] = np.inf
    idx = np.argmin(terms, axis=0)  # first occurrence = smallest index
    out = terms[idx, np.arange(terms.shape[1])]
    hits = tuple(int(j) for j in np.flatnonzero(boundary_mask(src)[idx]))
    return out, idx, hits


def transform_fwd(psi: GridFn, y_grid, base: BaseMeasure) -> GridFn:
    """Conjugate psi0(y) = min_x [Lambda0(x - y) - psi(x)] over psi's grid."""
    y_grid = as_points(y_grid, base.dim)
    _check_dim(psi, base)
    vals, idx, hits = _conjugate(psi.values, psi.grid, y_grid, base, src_minus_dst=True)
    return GridFn(y_grid, vals, argmin=idx, boundary_hits=hits)


def transform_bwd(rho: GridFn, x_grid, base: BaseMeasure) -> GridFn:
    """psi(x) = min_y [Lambda0(x - y) - rho(y)] over rho's grid."""
    x_grid = as_points(x_grid, base.dim)
    _check_dim(rho, base)
    vals, idx, hits = _conjugate(rho.values, rho.grid, x_grid, base, src_minus_dst=False)
    return GridFn(x_grid, vals, argmin=idx, boundary_hits=hits)


def _check_dim(f: GridFn, base: BaseMeasure) -> None:
    if f.dim != base.dim:
        raise ValidationError(f"grid dimension {f.dim} does not match base dimension {base.dim}")


def superdiff_check(psi: GridFn, theta, y, base: BaseMeasure, tol: float = CHECK_TOL) -> SuperdiffPair:
    """Largest violation over the grid of psi(v) <= psi(theta) + c(v, y) - c(theta, y)."""
    _check_dim(psi, base)
    k = psi.index_of(theta)
    if not np.isfinite(psi.values[k]):
        raise PreconditionError("psi is -inf at theta")
    y = as_point(y, base.dim)
    theta = psi.grid[k]
    c_v = cost_matrix(base, psi.grid, y[None, :])[:, 0]
    c_theta = cgf_eval(base, theta - y)
    finite = np.isfinite(psi.values)
    viol = psi.values[finite] - psi.values[k] - c_v[finite] + c_theta
    return SuperdiffPair(theta.copy(), y, max(0.0, float(viol.max())), tol)


def duality_gap(psi: GridFn, psi0: GridFn, theta, y, base: BaseMeasure) -> float:
    """Lambda0(theta - y) - psi(theta) - psi0(y); zero exactly on superdifferential pairs."""
    a, b = psi(theta), psi0(y)
    return cgf_eval(base, psi.grid[psi.index_of(theta)] - psi0.grid[psi0.index_of(y)]) - a - b


def double_transform(psi: GridFn, base: BaseMeasure, y_grid=None) -> GridFn:
    y_grid = psi.grid if y_grid is None else y_grid
    return transform_bwd(transform_fwd(psi, y_grid, base), psi.grid, base)


def concavity_residual(psi: GridFn, base: BaseMeasure, y_grid=None) -> float:
    """Distance between psi and its double transform, max over the grid.

    The double transform dominates psi, so the first term carries the
    residual; the second only catches round-off. Entries where psi is -inf but
    the double transform is finite make the residual infinite.
    """
    cc = double_transform(psi, base, y_grid).values
    finite = np.isfinite(psi.values)
    if not np.all(finite):
        return float(np.inf)
    over = np.max(cc - psi.values)
    under = np.max(psi.values - cc)
    return float(max(over, 0.0) + max(under, 0.0))


def superdiff_pairs(psi: GridFn, psi0: GridFn, theta, base: BaseMeasure, tol: float = CHECK_TOL) -> list[np.ndarray]:
    """All y on psi0's grid with duality gap <= tol at theta."""
    k = psi.index_of(theta)
    c = cost_matrix(base, psi.grid[k][None, :], psi0.grid)[0]
    gaps = c - psi.values[k] - psi0.values
    return [psi0.grid[j].copy() for j in np.flatnonzero(gaps <= tol)]
