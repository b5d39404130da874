"""Pooling raw samples into tested groups.

Three strategies: contiguous blocks of the sorted sample (homogeneous
pooling), seeded random partition (the baseline method's setting), and
equal-width multivariate bins.  A group's test outcome is positive exactly
when some member is positive; the pooled negative indicator Z* = 1 - Y* is
what the downstream smoothers consume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class PoolingError(ValueError):
    """Invalid pooling request (group size, dimension or bin count)."""


@dataclass(frozen=True)
class RawDataset:
    """Individual-level sample: covariates and optional binary responses.

    ``covariates`` has shape (N,) for one covariate or (N, d) for d >= 2.
    """

    covariates: np.ndarray
    responses: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 2 and x.shape[1] == 1:
            x = x[:, 0]
        if x.ndim not in (1, 2) or x.shape[0] == 0:
            raise ValueError("covariates must be a nonempty (N,) or (N, d) array")
        if not np.isfinite(x).all():
            raise ValueError("covariates must be finite")
        x.flags.writeable = False
        object.__setattr__(self, "covariates", x)
        if self.responses is not None:
            y = np.asarray(self.responses)
            if y.shape != (x.shape[0],):
                raise ValueError("responses must align 1:1 with covariates")
            if not np.isin(y, (0, 1)).all():
                raise ValueError("responses must be 0 or 1")
            y = y.astype(np.int8)
            y.flags.writeable = False
            object.__setattr__(self, "responses", y)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def dimension(self) -> int:
        return 1 if self.covariates.ndim == 1 else self.covariates.shape[1]


@dataclass(frozen=True)
class Group:
    """One tested pool: members, size, center and the pooled outcome."""

    member_covariates: np.ndarray
    size: int
    center: float | tuple[float, ...]
    y_star: int | None
    z_star: int | None

    def __post_init__(self):
        m = np.asarray(self.member_covariates, dtype=float)
        m.flags.writeable = False
        object.__setattr__(self, "member_covariates", m)


@dataclass(frozen=True)
class BinGeometry:
    """Equal-width bin layout over an axis-aligned box (default unit cube)."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    bins_per_axis: int
    widths: tuple[float, ...]
    counts: np.ndarray  # shape (J,) * d, points per bin

    def __post_init__(self):
        c = np.asarray(self.counts)
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    @property
    def dimension(self) -> int:
        return len(self.lo)

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map points (M, d) to bin indices (M, d); mask marks in-region points.

        Bins are half-open on the left, (k*w, (k+1)*w], except that the
        global lower boundary belongs to the first bin.
        """
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        w = np.asarray(self.widths)
        inside = ((pts >= lo) & (pts <= hi)).all(axis=1)
        rel = (pts - lo) / w
        idx = np.ceil(rel).astype(np.int64) - 1
        idx = np.clip(idx, 0, self.bins_per_axis - 1)
        return idx, inside

    def count_at(self, points: np.ndarray) -> np.ndarray:
        """Number of pooled data points in the bin containing each point.

        Points outside the region get count 0.
        """
        idx, inside = self.locate(points)
        m = np.zeros(idx.shape[0], dtype=np.int64)
        if inside.any():
            m[inside] = self.counts[tuple(idx[inside].T)]
        return m


@dataclass(frozen=True)
class PooledDataset:
    """Groups plus the strategy and nominal group size that produced them."""

    groups: tuple[Group, ...]
    strategy: str  # homogeneous_sorted | random | binned | generic
    nu: float
    dimension: int
    bin_geometry: BinGeometry | None = None
    n_outside: int = 0

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def centers(self) -> np.ndarray:
        if self.dimension == 1:
            return np.array([g.center for g in self.groups], dtype=float)
        return np.array([g.center for g in self.groups], dtype=float).reshape(
            len(self.groups), self.dimension
        )

    def z_star(self) -> np.ndarray:
        vals = [g.z_star for g in self.groups]
        if any(v is None for v in vals):
            raise PoolingError("pooled outcomes unknown: responses were absent")
        return np.array(vals, dtype=float)

    def sizes(self) -> np.ndarray:
        return np.array([g.size for g in self.groups], dtype=np.int64)


def _aggregate(y_block: np.ndarray | None) -> tuple[int | None, int | None]:
    if y_block is None:
        return None, None
    y_star = int(y_block.max())
    return y_star, 1 - y_star


def pool_homogeneous(raw: RawDataset, nu: int) -> PooledDataset:
    """Partition the sorted sample into contiguous groups of nu each.

    Ties in the covariate are broken by original index (stable sort), so the
    grouping is deterministic and invariant to permutations of distinct
    inputs.  nu must divide N; unequal group sizes and d > 1 are the binned
    generalization's job.
    """
    if raw.dimension != 1:
        raise PoolingError("homogeneous pooling is univariate; use pool_binned")
    nu = int(nu)
    if nu < 1:
        raise PoolingError("group size nu must be >= 1")
    if raw.n % nu != 0:
        raise PoolingError(
            f"nu={nu} does not divide N={raw.n}; use pool_binned, which "
            "handles unequal group counts"
        )
    order = np.argsort(raw.covariates, kind="stable")
    x = raw.covariates[order]
    y = raw.responses[order] if raw.responses is not None else None

    groups = []
    for j in range(raw.n // nu):
        sl = slice(j * nu, (j + 1) * nu)
        xb = x[sl]
        y_star, z_star = _aggregate(y[sl] if y is not None else None)
        groups.append(Group(xb, nu, float(xb.mean()), y_star, z_star))
    return PooledDataset(tuple(groups), "homogeneous_sorted", nu, 1)


def pool_random(
    raw: RawDataset, nu: int, seed: int | np.random.Generator
) -> PooledDataset:
    """Uniformly random partition into N/nu groups of nu, via seeded shuffle."""
    if raw.dimension != 1:
        raise PoolingError("random pooling is univariate; use pool_binned")
    nu = int(nu)
    if nu < 1:
        raise PoolingError("group size nu must be >= 1")
    if raw.n % nu != 0:
        raise PoolingError(f"nu={nu} does not divide N={raw.n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(raw.n)

    groups = []
    for j in range(raw.n // nu):
        idx = perm[j * nu : (j + 1) * nu]
        xb = raw.covariates[idx]
        y_star, z_star = _aggregate(
            raw.responses[idx] if raw.responses is not None else None
        )
        groups.append(Group(xb, nu, float(xb.mean()), y_star, z_star))
    return PooledDataset(tuple(groups), "random", nu, 1)


def pool_binned(
    raw: RawDataset,
    nu: float,
    region: tuple[tuple[float, float], ...] | None = None,
) -> PooledDataset:
    """Group points into equal-width bins of width (nu/N)^(1/d) per axis.

    The number of bins per axis J = (N/nu)^(1/d) must be an integer; points
    outside the region (the unit cube by default) are excluded from every
    bin but counted.  Each nonempty bin becomes a group centered at the bin
    midpoint; empty bins stay visible through the geometry's count array.
    """
    d = raw.dimension
    x = raw.covariates.reshape(raw.n, d) if d > 1 else raw.covariates[:, None]
    if not nu > 0:
        raise PoolingError("nu must be positive")
    if region is None:
        region = tuple((0.0, 1.0) for _ in range(d))
    if len(region) != d:
        raise PoolingError(f"region must give bounds for all {d} axes")
    lo = np.array([r[0] for r in region], dtype=float)
    hi = np.array([r[1] for r in region], dtype=float)
    if not (hi > lo).all():
        raise PoolingError("region bounds must satisfy lo < hi on every axis")

    j_float = (raw.n / nu) ** (1.0 / d)
    J = int(round(j_float))
    if J < 1 or abs(j_float - J) > 1e-9 * max(1.0, J):
        lo_j = max(1, math.floor(j_float))
        suggestions = sorted(
            {raw.n / lo_j**d, raw.n / (lo_j + 1) ** d}, reverse=True
        )
        raise PoolingError(
            f"(N/nu)^(1/d) = {j_float:.6g} is not an integer; nearest valid "
            f"nu values are {', '.join(f'{s:g}' for s in suggestions)}"
        )
    frac = (nu / raw.n) ** (1.0 / d)
    widths = (hi - lo) * frac

    geometry_counts = np.zeros((J,) * d, dtype=np.int64)
    geom = BinGeometry(tuple(lo), tuple(hi), J, tuple(widths), geometry_counts)
    idx, inside = geom.locate(x)
    n_outside = int((~inside).sum())

    flat = np.ravel_multi_index(tuple(idx[inside].T), (J,) * d)
    counts = np.bincount(flat, minlength=J**d)
    # rebuild geometry with the real counts (the frozen array was a placeholder)
    geom = BinGeometry(tuple(lo), tuple(hi), J, tuple(widths), counts.reshape((J,) * d))

    inside_idx = np.flatnonzero(inside)
    order = np.argsort(flat, kind="stable")
    flat_sorted = flat[order]
    points_sorted = inside_idx[order]
    boundaries = np.flatnonzero(np.diff(flat_sorted)) + 1
    blocks = np.split(points_sorted, boundaries)
    block_bins = flat_sorted[np.concatenate(([0], boundaries))] if flat_sorted.size else []

    groups = []
    for bin_flat, members in zip(block_bins, blocks):
        k = np.unravel_index(int(bin_flat), (J,) * d)
        center = lo + (np.asarray(k) + 0.5) * widths
        xb = x[members, :] if d > 1 else raw.covariates[members]
        y_star, z_star = _aggregate(
            raw.responses[members] if raw.responses is not None else None
        )
        groups.append(
            Group(
                xb,
                int(members.size),
                float(center[0]) if d == 1 else tuple(center),
                y_star,
                z_star,
            )
        )
    return PooledDataset(tuple(groups), "binned", float(nu), d, geom, n_outside)


def pooled_negative_probability(p_values) -> float:
    """Probability that a pool of independent members tests negative.

    Exactly prod(1 - p_i); this is both the simulator's sampling probability
    for a pooled outcome and the oracle the estimators are tested against.
    """
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return 1.0
    if (p < 0.0).any() or (p >= 1.0).any():
        raise ValueError("individual probabilities must lie in [0, 1)")
    return float(np.prod(1.0 - p))
