"""Domains, datasets, empirical Lipschitz bound, covering radius, losses."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .autodiff import make_rng
from .errors import DomainError, InfeasibleDataError, NumericError

Array = np.ndarray


@dataclass(frozen=True)
class Domain:
    """Axis-aligned hyperrectangle [lower_1, upper_1] x ... x [lower_n, upper_n]."""

    lower: Array
    upper: Array

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.ndim != 1 or upper.ndim != 1 or lower.shape != upper.shape:
            raise DomainError(f"bounds must be equal-length vectors, got {lower.shape} vs {upper.shape}")
        if lower.size < 1:
            raise DomainError("domain dimension must be >= 1")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise DomainError("domain bounds must be finite")
        if not np.all(lower < upper):
            raise DomainError("each lower bound must be strictly below its upper bound")

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, points: Array, atol: float = 0.0) -> Array:
        """Boolean mask, one entry per row of ``points``."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.all((pts >= self.lower - atol) & (pts <= self.upper + atol), axis=1)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Domain":
        return cls(np.asarray(d["lower"], dtype=np.float64),
                   np.asarray(d["upper"], dtype=np.float64))


@dataclass
class LabeledDataset:
    """Sampled pairs (x_i, y_i) with a declared noise radius.

    When built from a generator g the construction guarantees
    ||g(x_i) - y_i|| <= noise_bound for every row.
    """

    domain: Domain
    inputs: Array
    outputs: Array
    noise_bound: float = 0.0

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.outputs = np.atleast_2d(np.asarray(self.outputs, dtype=np.float64))
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ValueError(f"row mismatch: {self.inputs.shape[0]} inputs vs "
                             f"{self.outputs.shape[0]} outputs")
        if self.inputs.shape[0] < 1:
            raise ValueError("dataset needs at least one sample")
        if self.inputs.shape[1] != self.domain.dim:
            raise DomainError(f"inputs have dimension {self.inputs.shape[1]}, "
                              f"domain has {self.domain.dim}")
        if self.noise_bound < 0:
            raise ValueError("noise bound must be nonnegative")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.outputs))):
            raise NumericError("dataset contains non-finite values")
        inside = self.domain.contains(self.inputs, atol=1e-12)
        if not np.all(inside):
            bad = int(np.argmin(inside))
            raise DomainError(f"input row {bad} lies outside the domain: {self.inputs[bad]}")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.outputs.shape[1]

    def to_csv(self, path) -> None:
        """First line: n,m,noise_bound. Then one row x_1..x_n,y_1..y_m per sample."""
        with open(path, "w") as fh:
            fh.write(f"{self.input_dim},{self.output_dim},{float(self.noise_bound)!r}\n")
            for x, y in zip(self.inputs, self.outputs):
                row = [repr(float(t)) for t in x] + [repr(float(t)) for t in y]
                fh.write(",".join(row) + "\n")

    @classmethod
    def from_csv(cls, path, domain: Domain | None = None) -> "LabeledDataset":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if len(header) != 3:
                raise ValueError(f"{path}: header must be 'n,m,noise_bound', got {header}")
            n, m, eps = int(header[0]), int(header[1]), float(header[2])
            rows = np.loadtxt(fh, delimiter=",", ndmin=2)
        if rows.shape[1] != n + m:
            raise ValueError(f"{path}: rows have {rows.shape[1]} fields, expected {n + m}")
        inputs, outputs = rows[:, :n], rows[:, n:]
        if domain is None:
            # Tight bounding box; the experiment manifest carries the true domain.
            lo, hi = inputs.min(axis=0), inputs.max(axis=0)
            pad = np.where(hi > lo, 0.0, 0.5)
            domain = Domain(lo - pad, hi + pad)
        return cls(domain, inputs, outputs, eps)


def sample_uniform(domain: Domain, count: int, seed: int) -> Array:
    """IID uniform points in the hyperrectangle, deterministic per seed."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = make_rng(seed)
    u = rng.random((count, domain.dim))
    return domain.lower + u * (domain.upper - domain.lower)


def sample_grid(domain: Domain, per_dim: int) -> Array:
    """Cartesian grid with ``per_dim`` equally spaced points per axis, endpoints included."""
    if per_dim < 2:
        raise ValueError("per_dim must be >= 2")
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in zip(domain.lower, domain.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def make_dataset(g: Callable[[Array], Array], points: Array, noise_bound: float,
                 seed: int, domain: Domain) -> LabeledDataset:
    """Evaluate the generator on ``points`` and add noise uniform in the eps-ball."""
    if noise_bound < 0:
        raise ValueError("noise bound must be nonnegative")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    outputs = np.atleast_2d(np.asarray(g(points), dtype=np.float64))
    if outputs.shape[0] != points.shape[0]:
        raise ValueError("generator returned a wrong number of rows")
    bad = ~np.all(np.isfinite(outputs), axis=1)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NumericError(f"generator returned a non-finite value at point {points[i]}")
    if noise_bound > 0:
        rng = make_rng(seed)
        m = outputs.shape[1]
        direction = rng.normal(size=outputs.shape)
        norms = np.linalg.norm(direction, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        radius = noise_bound * rng.random((outputs.shape[0], 1)) ** (1.0 / m)
        outputs = outputs + direction / norms * radius
    return LabeledDataset(domain, points, outputs, float(noise_bound))


def _pairwise_quotients(inputs: Array, outputs: Array) -> tuple[Array, Array]:
    din = pdist(inputs)
    dout = pdist(outputs)
    dup = din == 0.0
    if np.any(dup):
        if np.any(dout[dup] > 0.0):
            raise InfeasibleDataError("duplicated inputs with distinct outputs; "
                                      "no function can interpolate this dataset")
        din, dout = din[~dup], dout[~dup]
    return din, dout


def empirical_lipschitz_lower(ds: LabeledDataset) -> float:
    """Max pairwise difference quotient max_{i<j} ||y_i-y_j|| / ||x_i-x_j||.

    A lower bound on the Lipschitz constant of any generator of the data
    (exact when the noise bound is zero). Duplicated inputs with equal
    outputs are skipped; with distinct outputs the data is infeasible.
    """
    if ds.size < 2:
        raise ValueError("need at least two samples")
    din, dout = _pairwise_quotients(ds.inputs, ds.outputs)
    if din.size == 0:
        return 0.0
    return float(np.max(dout / din))


def empirical_lipschitz_lower_per_coordinate(ds: LabeledDataset) -> Array:
    """Scalar version of the pairwise bound, one entry per output coordinate."""
    if ds.size < 2:
        raise ValueError("need at least two samples")
    din = pdist(ds.inputs)
    dup = din == 0.0
    out = np.zeros(ds.output_dim)
    for j in range(ds.output_dim):
        dj = pdist(ds.outputs[:, j:j + 1])
        if np.any(dup):
            if np.any(dj[dup] > 0.0):
                raise InfeasibleDataError("duplicated inputs with distinct outputs")
            keep = ~dup
            ratio = dj[keep] / din[keep]
        else:
            ratio = dj / din
        out[j] = float(np.max(ratio)) if ratio.size else 0.0
    return out


def covering_radius(points: Array, domain: Domain, mode: str = "exact-grid",
                    resolution: int = 33, seed: int = 0) -> float:
    """Lower estimate of the fill distance sup_{x in D} min_i ||x - x_i||.

    ``exact-grid`` probes a dense regular grid with ``resolution`` points
    per axis (nested refinements are resolution -> 2*resolution - 1);
    ``monte-carlo`` probes ``resolution`` uniform draws, produced as a
    prefix stream so a larger resolution only adds probes. Both probe
    finitely many points, so the estimate approaches the true covering
    radius from below; consumers of the theorem bounds must treat it as
    a lower bound.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] < 1:
        raise ValueError("need at least one point")
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    if mode == "exact-grid":
        total = resolution ** domain.dim
        if total > 20_000_000:
            raise ValueError(f"grid of {total} probes is too large; lower the resolution "
                             "or use monte-carlo mode")
        axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(domain.lower, domain.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        probes = np.stack([m.reshape(-1) for m in mesh], axis=1)
    elif mode == "monte-carlo":
        rng = make_rng(seed)
        u = rng.random((resolution, domain.dim))
        probes = domain.lower + u * (domain.upper - domain.lower)
    else:
        raise ValueError(f"unknown covering-radius mode {mode!r}")
    tree = cKDTree(points)
    dist, _ = tree.query(probes, k=1)
    return float(np.max(dist))


def training_loss_sup(ds: LabeledDataset, f: Callable[[Array], Array]) -> float:
    """max_i ||y_i - f(x_i)|| over the dataset (Euclidean norm per row)."""
    pred = np.atleast_2d(np.asarray(f(ds.inputs), dtype=np.float64))
    if not np.all(np.isfinite(pred)):
        raise NumericError("model returned non-finite predictions on the training inputs")
    return float(np.max(np.linalg.norm(ds.outputs - pred, axis=1)))


@dataclass(frozen=True)
class SupLossEstimate:
    """Monte Carlo lower estimate of the sup error, plus the probe-set MSE."""

    sup: float
    mse: float
    probes: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def sup_loss_estimate(f: Callable[[Array], Array], g: Callable[[Array], Array],
                      domain: Domain, probes: int, seed: int,
                      include: Array | None = None) -> SupLossEstimate:
    """Estimate max_x ||g(x) - f(x)|| from uniform probes (a lower estimate).

    ``include`` appends fixed probe points (e.g. the training inputs) to
    the uniform draw. The MSE over the probe set is reported alongside;
    its summation order is fixed so reports are bit-reproducible.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    pts = sample_uniform(domain, probes, seed)
    if include is not None:
        pts = np.concatenate([pts, np.atleast_2d(np.asarray(include, dtype=np.float64))], axis=0)
    err = np.atleast_2d(np.asarray(g(pts), dtype=np.float64)) - \
        np.atleast_2d(np.asarray(f(pts), dtype=np.float64))
    if not np.all(np.isfinite(err)):
        raise NumericError("non-finite model output during sup-loss estimation")
    sq = np.sum(err ** 2, axis=1)
    return SupLossEstimate(sup=float(np.sqrt(np.max(sq))), mse=float(np.mean(sq)),
                           probes=int(pts.shape[0]))
