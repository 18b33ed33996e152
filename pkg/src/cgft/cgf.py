"""Cumulant generating functions of base measures, the induced transport cost
c(theta, y) = Lambda0(theta - y), and exponential tilting.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np
from scipy.special import logsumexp

from .errors import ValidationError
from .measures import (
    DiscreteMeasure,
    MeasureRep,
    NodeSet,
    as_point,
    as_points,
    gauss_hermite_nodes,
    log_exp_moment,
)

KINDS = ("gaussian", "discrete", "quadrature")

# entries of the (pairs x atoms) exponent buffer built per chunk in cost_matrix
_CHUNK = 2_000_000


@dataclass(frozen=True, eq=False)
class BaseMeasure:
    """The base measure mu0: owner of Lambda0 and of the node set used for expectations.

    Use the named constructors rather than building one directly.
    """

    kind: str
    dim: int
    nodes: NodeSet | None
    metadata: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown base kind {self.kind!r}")
        if self.dim < 1:
            raise ValidationError("dimension must be at least 1")
        if self.nodes is not None and self.nodes.dim != self.dim:
            raise ValidationError("node set dimension does not match base dimension")
        if self.kind != "gaussian" and self.nodes is None:
            raise ValidationError(f"{self.kind} base needs a node set")
        object.__setattr__(self, "metadata", MappingProxyType(dict(self.metadata)))

    # constructors

    @classmethod
    def gaussian(cls, d: int, nodes_per_axis: int = 20) -> "BaseMeasure":
        """Standard normal N(0, I_d); Lambda0 is closed form, expectations use Gauss-Hermite."""
        nodes = gauss_hermite_nodes(d, nodes_per_axis) if d <= 3 else None
        return cls("gaussian", d, nodes, {"nodes_per_axis": nodes_per_axis})

    @classmethod
    def simplex(cls, d: int) -> "BaseMeasure":
        """Uniform measure on {0, e_1, ..., e_d}."""
        if d < 1:
            raise ValidationError("dimension must be at least 1")
        atoms = np.vstack([np.zeros(d), np.eye(d)])
        nodes = NodeSet(atoms, np.full(d + 1, 1.0 / (d + 1)), name=f"simplex:{d}")
        return cls("discrete", d, nodes, {"family": "simplex"})

    @classmethod
    def discrete(cls, mu: DiscreteMeasure, name: str | None = None) -> "BaseMeasure":
        keep = mu.weights > 0
        atoms, w = mu.atoms[keep], mu.weights[keep]
        if name is None:
            name = "discrete:" + _digest(atoms, w)
        return cls("discrete", mu.dim, NodeSet(atoms, w / w.sum(), name=name))

    @classmethod
    def quadrature(cls, nodes: NodeSet) -> "BaseMeasure":
        return cls("quadrature", nodes.dim, nodes)

    def recentered(self) -> "BaseMeasure":
        """Translate mu0 to mean zero so that Lambda0 >= 0."""
        meta = dict(self.metadata, recentered=True)
        if self.kind == "gaussian":
            return BaseMeasure("gaussian", self.dim, self.nodes, meta)
        m = self.nodes.node_weights @ self.nodes.nodes
        meta["shift"] = (-m).tolist()
        nodes = NodeSet(
            self.nodes.nodes - m, self.nodes.node_weights, name=self.nodes.name + "+centered"
        )
        return BaseMeasure(self.kind, self.dim, nodes, meta)

    # helpers

    @property
    def name(self) -> str:
        if self.kind == "gaussian":
            n = self.metadata.get("nodes_per_axis", 20)
            return f"gaussian:{self.dim}:{n}"
        return self.nodes.name

    def require_nodes(self) -> NodeSet:
        if self.nodes is None:
            raise ValidationError(
                f"{self.name} has no node set (tensor quadrature supports d <= 3)"
            )
        return self.nodes

    @property
    def is_exact(self) -> bool:
        """True when expectations against mu0 are exact finite sums."""
        return self.kind == "discrete"

    def mean(self) -> np.ndarray:
        if self.kind == "gaussian":
            return np.zeros(self.dim)
        return self.nodes.node_weights @ self.nodes.nodes

    def to_json(self) -> dict:
        if self.kind == "gaussian":
            out = {"kind": "gaussian", "d": self.dim,
                   "nodes_per_axis": self.metadata.get("nodes_per_axis", 20)}
        else:
            out = {
                "kind": self.kind,
                "d": self.dim,
                "name": self.nodes.name,
                "atoms" if self.kind == "discrete" else "nodes": self.nodes.nodes.tolist(),
                "weights": self.nodes.node_weights.tolist(),
            }
        if self.metadata.get("recentered"):
            out["recentered"] = True
            if "shift" in self.metadata:
                out["shift"] = list(self.metadata["shift"])
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "BaseMeasure":
        if not isinstance(obj, dict):
            raise ValidationError("base measure JSON must be an object")
        kind, d = obj.get("kind"), obj.get("d")
        if kind not in KINDS:
            raise ValidationError(f"field 'kind' must be one of {KINDS}, got {kind!r}")
        if not isinstance(d, int) or d < 1:
            raise ValidationError(f"field 'd' must be a positive integer, got {d!r}")
        if kind == "gaussian":
            base = cls.gaussian(d, int(obj.get("nodes_per_axis", 20)))
        elif kind == "discrete":
            mu = DiscreteMeasure.from_json(obj)
            if mu.dim != d:
                raise ValidationError(f"field 'atoms' has dimension {mu.dim}, field 'd' says {d}")
            base = cls.discrete(mu, name=obj.get("name"))
        else:
            try:
                pts, w = obj["nodes"], obj["weights"]
            except KeyError as exc:
                raise ValidationError(f"quadrature base JSON is missing field {exc}") from None
            pts = as_points(pts)
            if pts.shape[1] != d:
                raise ValidationError(f"field 'nodes' has dimension {pts.shape[1]}, field 'd' says {d}")
            name = obj.get("name") or "quadrature:" + _digest(pts, np.asarray(w, float))
            base = cls.quadrature(NodeSet(pts, w, name=name))
        if obj.get("recentered"):
            if kind == "gaussian":
                base = base.recentered()
            else:
                # stored nodes are already centered; only restore the flag
                meta = dict(base.metadata, recentered=True, shift=obj.get("shift"))
                base = cls(base.kind, d, base.nodes, meta)
        return base


def _digest(atoms: np.ndarray, weights: np.ndarray) -> str:
    h = hashlib.sha1(np.ascontiguousarray(atoms).tobytes())
    h.update(np.ascontiguousarray(weights).tobytes())
    return h.hexdigest()[:12]


def parse_base(spec: str) -> BaseMeasure:
    """Parse ``gaussian:d[:nodes]``, ``simplex:d`` or a path to a base-measure JSON file."""
    head, _, rest = spec.partition(":")
    if head in ("gaussian", "simplex") and rest:
        parts = rest.split(":")
        try:
            nums = [int(p) for p in parts]
        except ValueError:
            raise ValidationError(f"bad base spec {spec!r}") from None
        if head == "simplex" and len(nums) == 1:
            return BaseMeasure.simplex(nums[0])
        if head == "gaussian" and len(nums) in (1, 2):
            return BaseMeasure.gaussian(*nums)
        raise ValidationError(f"bad base spec {spec!r}")
    path = Path(spec)
    if not path.is_file():
        raise ValidationError(f"base spec {spec!r} is neither gaussian:d, simplex:d nor a file")
    from .io import load_json

    return BaseMeasure.from_json(load_json(path))


# Lambda0 and friends


def log_mgf(base: BaseMeasure, thetas) -> np.ndarray:
    """Lambda0 at each row of an (k, d) array."""
    thetas = as_points(thetas, base.dim)
    if base.kind == "gaussian":
        return 0.5 * np.einsum("ij,ij->i", thetas, thetas)
    nodes = base.nodes
    out = np.empty(len(thetas))
    step = max(1, _CHUNK // len(nodes))
    for s in range(0, len(thetas), step):
        out[s : s + step] = logsumexp(thetas[s : s + step] @ nodes.nodes.T + nodes.log_weights, axis=1)
    return out


def cgf_eval(base: BaseMeasure, theta) -> float:
    """Lambda0(theta) = log mu0(exp(<theta, x>))."""
    theta = as_point(theta, base.dim)
    return float(log_mgf(base, theta[None, :])[0])


def cgf_grad(base: BaseMeasure, theta) -> np.ndarray:
    """Gradient of Lambda0, i.e. the mean of the tilted measure mu_theta."""
    theta = as_point(theta, base.dim)
    if base.kind == "gaussian":
        return theta.copy()
    nodes = base.nodes
    logits = nodes.nodes @ theta + nodes.log_weights
    p = np.exp(logits - logsumexp(logits))
    return p @ nodes.nodes


def cost_eval(base: BaseMeasure, theta, psi) -> float:
    """Transport cost c(theta, psi) = Lambda0(theta - psi)."""
    return cgf_eval(base, as_point(theta, base.dim) - as_point(psi, base.dim))


def cost_matrix(base: BaseMeasure, xs, ys) -> np.ndarray:
    """C[i, j] = Lambda0(x_i - y_j)."""
    xs = as_points(xs, base.dim)
    ys = as_points(ys, base.dim)
    diff = (xs[:, None, :] - ys[None, :, :]).reshape(-1, base.dim)
    return log_mgf(base, diff).reshape(len(xs), len(ys))


def tilt(base: BaseMeasure, theta) -> MeasureRep:
    """mu_theta, with density exp(<theta, x> - Lambda0(theta)) against mu0.

    The density is renormalized on the nodes, which is exact for discrete
    bases and absorbs the quadrature error otherwise.
    """
    theta = as_point(theta, base.dim)
    nodes = base.require_nodes()
    return MeasureRep.from_log_density(nodes, nodes.nodes @ theta)


def tilt_logmoment(base: BaseMeasure, theta, gamma) -> float:
    """log mu_theta(exp(<gamma, x>)), computed on the tilted measure itself."""
    return log_exp_moment(tilt(base, theta), as_point(gamma, base.dim))


def tilted_masses(base: BaseMeasure, theta) -> DiscreteMeasure:
    """mu_theta as a plain discrete measure over the base nodes."""
    return tilt(base, theta).to_discrete()


__all__ = [
    "BaseMeasure",
    "parse_base",
    "log_mgf",
    "cgf_eval",
    "cgf_grad",
    "cost_eval",
    "cost_matrix",
    "tilt",
    "tilt_logmoment",
    "tilted_masses",
]
