"""Weighted grid spaces and discretized linear operators.

A ``WeightedSpace`` is a quadrature grid (nodes plus positive weights) standing
in for a Hilbert space of functions: the inner product is the weighted dot
product of node values.  A ``LinOp`` is a dense matrix mapping node values on
one space to node values on another; its adjoint is taken with respect to the
two weighted inner products, so conditional-expectation operators built from a
joint density satisfy <Sb, g> = <b, S*g> to round-off.

Conventions used throughout the package:

* matrices are (codomain nodes) x (domain nodes), row i gives the output at
  codomain node i;
* probability spaces have weights summing to one;
* score operators built from a joint density are conditional means, so they
  map the constant function 1 to the constant function 1.

Everything here is immutable after construction (arrays are marked
read-only), so spaces and operators can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "SpaceMismatchError",
    "ZeroMassError",
    "DegenerateBasisError",
    "WeightedSpace",
    "GridFunction",
    "JointDensity",
    "LinOp",
    "inner",
    "norm",
    "build_score_from_joint",
    "adjoint",
    "compose",
    "information_operator",
    "restrict_tangent",
    "mean_zero_basis",
    "uniform_grid",
    "gauss_legendre_grid",
    "tensor_space",
    "save_linop",
    "load_linop",
]

PROB_MASS_TOL = 1e-6
JOINT_MASS_TOL = 1e-4
GRAM_COND_MAX = 1e10
OBS_DROP_REL = 1e-12


class SpaceMismatchError(ValueError):
    """Grid functions passed to an operation live on different spaces."""


class ZeroMassError(ValueError):
    """An observation node carries zero probability mass."""


class DegenerateBasisError(ValueError):
    """A tangent basis is numerically rank deficient."""


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class WeightedSpace:
    """Quadrature grid with strictly positive weights.

    ``nodes`` has shape (n,) for 1-d grids or (n, d) for d-dimensional ones.
    ``axes``, when set, records the 1-d axis grids of a tensor-product space
    (used for multilinear interpolation of grid functions at off-node points).
    """

    nodes: np.ndarray
    weights: np.ndarray
    label: str = ""
    axes: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        nodes = _readonly(np.atleast_1d(self.nodes))
        weights = _readonly(np.atleast_1d(self.weights))
        if weights.ndim != 1:
            raise ValueError("weights must be a vector")
        if len(nodes) != len(weights):
            raise ValueError("node count must equal weight count")
        if not np.all(weights > 0):
            raise ValueError("weights must be strictly positive")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        if self.axes is not None:
            object.__setattr__(
                self, "axes", tuple(_readonly(ax) for ax in self.axes)
            )

    @property
    def n_nodes(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return 1 if self.nodes.ndim == 1 else self.nodes.shape[1]

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    @property
    def is_probability(self) -> bool:
        return abs(self.total_mass - 1.0) <= PROB_MASS_TOL

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightedSpace):
            return NotImplemented
        return (
            self.label == other.label
            and self.nodes.shape == other.nodes.shape
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.weights, other.weights)
        )

    def __hash__(self):
        return hash((self.label, self.n_nodes, self.dim))

    def function(self, values) -> "GridFunction":
        return GridFunction(self, values)

    def constant(self, c: float = 1.0) -> "GridFunction":
        return GridFunction(self, np.full(self.n_nodes, float(c)))

    def with_weights(self, weights, label: Optional[str] = None) -> "WeightedSpace":
        """Same grid under a different base measure."""
        return WeightedSpace(
            self.nodes, weights, self.label if label is None else label, self.axes
        )


@dataclass(frozen=True)
class GridFunction:
    """One real value per node of a WeightedSpace."""

    space: WeightedSpace
    values: np.ndarray

    def __post_init__(self):
        values = _readonly(np.atleast_1d(self.values))
        if values.shape != (self.space.n_nodes,):
            raise ValueError(
                f"expected {self.space.n_nodes} values, got {values.shape}"
            )
        object.__setattr__(self, "values", values)

    def dot(self, other: "GridFunction") -> float:
        return inner(self.space, self, other)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.space.weights * self.values**2)))

    def mean(self) -> float:
        """Weighted mean relative to the space's total mass."""
        return float(
            np.sum(self.space.weights * self.values) / self.space.total_mass
        )

    def centered(self) -> "GridFunction":
        return GridFunction(self.space, self.values - self.mean())


def inner(space: WeightedSpace, f: GridFunction, g: GridFunction) -> float:
    """Weighted inner product sum_i w_i f_i g_i on ``space``."""
    if f.space != space or g.space != space:
        raise SpaceMismatchError("space mismatch")
    return float(np.sum(space.weights * f.values * g.values))


def norm(space: WeightedSpace, f: GridFunction) -> float:
    return float(np.sqrt(inner(space, f, f)))


@dataclass(frozen=True)
class JointDensity:
    """Joint density of (observable Z, latent Z*) on a product of base grids.

    ``values[i, j]`` is the joint density at (obs node i, latent node j) with
    respect to the product of the two spaces' base measures, so the
    double-weighted sum is one.  Every latent column must carry positive mass
    (the latent density is positive a.s. on its grid).
    """

    obs_space: WeightedSpace
    latent_space: WeightedSpace
    values: np.ndarray

    def __post_init__(self):
        values = _readonly(self.values)
        if values.shape != (self.obs_space.n_nodes, self.latent_space.n_nodes):
            raise ValueError("joint matrix shape does not match spaces")
        if np.any(values < 0):
            raise ValueError("joint density entries must be nonnegative")
        mass = float(
            self.obs_space.weights @ values @ self.latent_space.weights
        )
        if abs(mass - 1.0) > JOINT_MASS_TOL:
            raise ValueError(f"joint density mass {mass:.6g} is not 1")
        latent_marginal = self.obs_space.weights @ values
        if np.any(latent_marginal <= 0):
            raise ValueError("every latent node needs positive marginal mass")
        object.__setattr__(self, "values", values)

    @property
    def latent_marginal(self) -> np.ndarray:
        """Density of Z* w.r.t. the latent base measure."""
        return self.obs_space.weights @ self.values

    @property
    def obs_marginal(self) -> np.ndarray:
        """Density of Z w.r.t. the observation base measure."""
        return self.values @ self.latent_space.weights


@dataclass(frozen=True)
class LinOp:
    """Dense linear operator between two weighted spaces."""

    domain: WeightedSpace
    codomain: WeightedSpace
    matrix: np.ndarray

    def __post_init__(self):
        matrix = _readonly(self.matrix)
        if matrix.shape != (self.codomain.n_nodes, self.domain.n_nodes):
            raise ValueError(
                f"matrix shape {matrix.shape} does not match "
                f"(codomain {self.codomain.n_nodes}, domain {self.domain.n_nodes})"
            )
        object.__setattr__(self, "matrix", matrix)

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, b: GridFunction) -> GridFunction:
        if b.space != self.domain:
            raise SpaceMismatchError("space mismatch")
        return GridFunction(self.codomain, self.matrix @ b.values)

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(values, dtype=np.float64)

    def operator_norm(self) -> float:
        """Largest singular value w.r.t. the weighted inner products."""
        return float(np.linalg.norm(self.symmetrized(), 2))

    def symmetrized(self) -> np.ndarray:
        """W_cod^(1/2) A W_dom^(-1/2); euclidean geometry of this matrix
        matches the weighted geometry of the operator."""
        sw_c = np.sqrt(self.codomain.weights)
        sw_d = np.sqrt(self.domain.weights)
        return (self.matrix * sw_c[:, None]) / sw_d[None, :]


def build_score_from_joint(
    joint: JointDensity, drop_below: float = OBS_DROP_REL
) -> LinOp:
    """Conditional-mean score operator S b = E[b(Z*) | Z] from a joint density.

    The returned operator's domain carries the latent probability weights
    (base weights times the latent marginal) and its codomain the observation
    probability weights, so adjoint() yields E[g(Z) | Z*] exactly.

    Observation nodes whose marginal falls below ``drop_below`` times the
    maximum are removed from the codomain (count kept in ``dropped_obs_nodes``
    on the returned operator).  With ``drop_below=0`` a zero-mass node is an
    error instead.
    """
    f_z = joint.obs_marginal
    if drop_below > 0:
        keep = f_z >= drop_below * np.max(f_z)
        if not np.any(keep):
            raise ZeroMassError("observation node has zero mass")
    else:
        keep = np.ones(len(f_z), dtype=bool)
        if np.any(f_z <= 0):
            raise ZeroMassError("observation node has zero mass")
    n_dropped = int(np.sum(~keep))

    obs = joint.obs_space
    obs_nodes = obs.nodes[keep]
    obs_w = obs.weights[keep]
    f_z_kept = f_z[keep]
    values = joint.values[keep]

    # Row z of S: values[z, :] * w_latent / f_Z(z).
    matrix = values * joint.latent_space.weights[None, :] / f_z_kept[:, None]

    codomain = WeightedSpace(
        obs_nodes,
        obs_w * f_z_kept,
        label=f"P[{obs.label}]" if obs.label else "P",
        axes=obs.axes if n_dropped == 0 else None,
    )
    domain = WeightedSpace(
        joint.latent_space.nodes,
        joint.latent_space.weights * joint.latent_marginal,
        label=f"G0[{joint.latent_space.label}]"
        if joint.latent_space.label
        else "G0",
        axes=joint.latent_space.axes,
    )
    op = LinOp(domain, codomain, matrix)
    object.__setattr__(op, "dropped_obs_nodes", n_dropped)
    return op


def adjoint(op: LinOp) -> LinOp:
    """Adjoint w.r.t. the weighted inner products of domain and codomain.

    Entrywise A*[i, j] = A[j, i] * w_cod[j] / w_dom[i].
    """
    matrix = (op.matrix * op.codomain.weights[:, None]).T / op.domain.weights[:, None]
    return LinOp(op.codomain, op.domain, matrix)


def compose(outer: LinOp, inner_op: LinOp) -> LinOp:
    """outer o inner, checking that the spaces chain."""
    if inner_op.codomain != outer.domain:
        raise SpaceMismatchError("space mismatch")
    return LinOp(inner_op.domain, outer.codomain, outer.matrix @ inner_op.matrix)


def information_operator(op: LinOp) -> LinOp:
    """S*S: self-adjoint, positive semidefinite on the domain space."""
    return compose(adjoint(op), op)


def restrict_tangent(op: LinOp, basis: Sequence[GridFunction]) -> LinOp:
    """Restrict ``op`` to the span of ``basis``.

    The returned operator acts on coefficient vectors relative to an
    orthonormalized version of the basis (Cholesky factor of the Gram
    matrix), so the coefficient space carries unit weights and singular
    values of the restriction are preserved exactly.  The provided finite
    basis *is* the tangent space here; no closure is taken.
    """
    if len(basis) == 0:
        raise DegenerateBasisError("degenerate tangent basis")
    for b in basis:
        if b.space != op.domain:
            raise SpaceMismatchError("space mismatch")
    bmat = np.stack([b.values for b in basis], axis=1)  # n_dom x K
    gram = bmat.T @ (op.domain.weights[:, None] * bmat)
    if np.linalg.cond(gram) >= GRAM_COND_MAX:
        raise DegenerateBasisError("degenerate tangent basis")
    chol = np.linalg.cholesky(gram)
    # Columns of bmat @ inv(chol).T are orthonormal in the domain space.
    ortho = np.linalg.solve(chol, bmat.T).T
    k = bmat.shape[1]
    coeff_space = WeightedSpace(
        np.arange(k, dtype=float), np.ones(k), label=f"span[{op.domain.label}]"
    )
    return LinOp(coeff_space, op.codomain, op.matrix @ ortho)


def mean_zero_basis(space: WeightedSpace) -> list[GridFunction]:
    """Indicator differences spanning the weighted-mean-zero subspace.

    Returns n-1 functions e_i/w_i - e_{i+1}/w_{i+1}; their span is the
    orthogonal complement of constants.
    """
    n = space.n_nodes
    w = space.weights
    out = []
    for i in range(n - 1):
        v = np.zeros(n)
        v[i] = 1.0 / w[i]
        v[i + 1] = -1.0 / w[i + 1]
        out.append(GridFunction(space, v))
    return out


# ---------------------------------------------------------------------------
# Grid builders
# ---------------------------------------------------------------------------


def uniform_grid(lo: float, hi: float, n: int, label: str = "") -> WeightedSpace:
    """Uniform nodes with trapezoid weights on [lo, hi]."""
    if n < 2:
        raise ValueError("need at least two nodes")
    if n > 4096:
        raise ValueError("grids are capped at 4096 nodes per axis")
    nodes = np.linspace(lo, hi, n)
    h = (hi - lo) / (n - 1)
    weights = np.full(n, h)
    weights[0] = weights[-1] = h / 2
    return WeightedSpace(nodes, weights, label, axes=(nodes,))


def gauss_legendre_grid(lo: float, hi: float, n: int, label: str = "") -> WeightedSpace:
    """Gauss-Legendre nodes and weights on [lo, hi]."""
    if n > 4096:
        raise ValueError("grids are capped at 4096 nodes per axis")
    x, w = np.polynomial.legendre.leggauss(n)
    nodes = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    weights = 0.5 * (hi - lo) * w
    return WeightedSpace(nodes, weights, label, axes=(nodes,))


def tensor_space(spaces: Sequence[WeightedSpace], label: str = "") -> WeightedSpace:
    """Tensor product of 1-d spaces; nodes in row-major (C) order."""
    axes = []
    for s in spaces:
        if s.dim != 1:
            raise ValueError("tensor_space expects 1-d factors")
        axes.append(s.nodes)
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    weights = np.ones(1)
    for s in spaces:
        weights = np.outer(weights, s.weights).ravel()
    return WeightedSpace(nodes, weights, label, axes=tuple(axes))


# ---------------------------------------------------------------------------
# Serialization
#
# Container layout (documented contract, stable across platforms):
#   bytes 0..7   : magic b"IDKLOP01"
#   bytes 8..11  : little-endian uint32, length L of the JSON header
#   bytes 12..   : L bytes of UTF-8 JSON with sorted keys and no whitespace:
#                  {"codomain": {"dim": d, "label": s, "n": n},
#                   "domain":   {"dim": d, "label": s, "n": n}}
#   then five little-endian float64 arrays, row-major, in this order:
#   domain nodes (n_dom*dim_dom), domain weights (n_dom),
#   codomain nodes (n_cod*dim_cod), codomain weights (n_cod),
#   matrix (n_cod*n_dom).
# ---------------------------------------------------------------------------

_MAGIC = b"IDKLOP01"


def _space_header(space: WeightedSpace) -> dict:
    return {"dim": space.dim, "label": space.label, "n": space.n_nodes}


def save_linop(op: LinOp, path) -> None:
    import json
    import struct

    header = json.dumps(
        {"codomain": _space_header(op.codomain), "domain": _space_header(op.domain)},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for arr in (
            op.domain.nodes,
            op.domain.weights,
            op.codomain.nodes,
            op.codomain.weights,
            op.matrix,
        ):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_linop(path) -> LinOp:
    import json
    import struct

    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError("not an operator container file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))

        def read_array(count):
            return np.frombuffer(fh.read(8 * count), dtype="<f8").astype(np.float64)

        def read_space(meta):
            n, dim = meta["n"], meta["dim"]
            nodes = read_array(n * dim)
            if dim > 1:
                nodes = nodes.reshape(n, dim)
            weights = read_array(n)
            return WeightedSpace(nodes, weights, meta["label"])

        domain = read_space(header["domain"])
        codomain = read_space(header["codomain"])
        matrix = read_array(codomain.n_nodes * domain.n_nodes).reshape(
            codomain.n_nodes, domain.n_nodes
        )
    return LinOp(domain, codomain, matrix)
