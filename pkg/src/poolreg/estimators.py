"""Prevalence-curve estimators from pooled and unpooled samples.

Three routes to the curve p(x) = P(positive | covariate x):

* ``estimate_dh``: smooth the pooled negatives of *homogeneous* (sorted,
  equal-count) groups against the group means, then invert the power
  transform: p = 1 - mu^(1/nu) with mu = (1-p)^nu.
* ``estimate_dm``: the random-pooling baseline; regress the pooled
  positives on the individual covariates and undo the mixing with the
  moment estimate q = E{1 - p(X)}.
* ``estimate_ll``: the oracle local polynomial fit on unpooled data.

``estimate_dh_binned`` generalizes the first route to d covariates and
unequal group sizes via equal-width bins, with a per-point exponent given
by the occupancy of the bin containing x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import Kernel
from .models import PrevalenceModel
from .pooling import PooledDataset, RawDataset
from .smoothing import (
    SmootherSpec,
    WIDEN_ATTEMPTS,
    WIDEN_FACTOR,
    _grid_fit_1d,
    grid_fit_local_linear_multi,
    grid_fit_with_widening,
    local_poly_derivatives,
    resolve_bandwidth,
    select_bandwidth_multi,
)

CLAMP_NONE = 0
CLAMP_LOW = 1
CLAMP_HIGH = 2
CLAMP_NAMES = ("none", "clamped_low", "clamped_high")

FAIL_NONE = 0
FAIL_FIT = 1
FAIL_EMPTY_BIN = 2
FAIL_NAMES = ("none", "fit_failed", "empty_bin")


class EstimationError(ValueError):
    """An estimator's preconditions are not met."""


@dataclass(frozen=True, eq=False)
class EstimateResult:
    """Estimated curve on a grid, with clamping and failure bookkeeping.

    ``mu_hat`` holds the raw linear-smoother output before clamping (the
    pooled-negative curve for DH, the pooled-positive regression for DM,
    the direct fit for LL).  ``p_hat`` is NaN wherever ``failures`` is
    nonzero.
    """

    grid: np.ndarray
    p_hat: np.ndarray
    mu_hat: np.ndarray
    clamp_flags: np.ndarray
    failures: np.ndarray
    bandwidth_used: float
    estimator_tag: str
    nu: float = 1.0

    def __eq__(self, other) -> bool:
        if not isinstance(other, EstimateResult):
            return NotImplemented
        return (
            self.estimator_tag == other.estimator_tag
            and self.bandwidth_used == other.bandwidth_used
            and self.nu == other.nu
            and np.array_equal(self.grid, other.grid, equal_nan=True)
            and np.array_equal(self.p_hat, other.p_hat, equal_nan=True)
            and np.array_equal(self.mu_hat, other.mu_hat, equal_nan=True)
            and np.array_equal(self.clamp_flags, other.clamp_flags)
            and np.array_equal(self.failures, other.failures)
        )


def default_grid(lo: float, hi: float, n: int = 201) -> np.ndarray:
    return np.linspace(lo, hi, n)


def _clamp_unit(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clamp into [0, 1]; returns (clamped, flags).  NaN passes through."""
    flags = np.zeros(raw.shape, dtype=np.int8)
    with np.errstate(invalid="ignore"):
        flags[raw < 0.0] = CLAMP_LOW
        flags[raw > 1.0] = CLAMP_HIGH
    return np.clip(raw, 0.0, 1.0), flags


def _check_grid_range(grid: np.ndarray, lo: float, hi: float) -> None:
    if grid.size and (grid.min() < lo or grid.max() > hi):
        raise EstimationError(
            f"grid must lie inside the covariate range [{lo:.6g}, {hi:.6g}]"
        )


def _covariate_range(pooled: PooledDataset) -> tuple[float, float]:
    lo = min(float(g.member_covariates.min()) for g in pooled.groups)
    hi = max(float(g.member_covariates.max()) for g in pooled.groups)
    return lo, hi


def estimate_dh(
    pooled: PooledDataset, spec: SmootherSpec, grid, widen_on_failure: bool = False
) -> EstimateResult:
    """Homogeneous-pooling estimator: smooth (mean, Z*) pairs, invert the root.

    Requires sorted contiguous pooling with a constant group size.  Fit
    failures at single grid points are flagged, not fatal; opting into
    ``widen_on_failure`` retries them with doubled bandwidths (3 attempts).
    """
    if pooled.strategy != "homogeneous_sorted":
        raise EstimationError(
            "estimate_dh needs homogeneously sorted pools "
            f"(got strategy {pooled.strategy!r})"
        )
    sizes = pooled.sizes()
    if not (sizes == sizes[0]).all():
        raise EstimationError(
            "group size varies across pools; use estimate_dh_binned"
        )
    nu = int(sizes[0])
    grid = np.asarray(grid, dtype=float)
    _check_grid_range(grid, *_covariate_range(pooled))

    u = pooled.centers()
    z = pooled.z_star()
    design = np.column_stack([u, z])
    h = resolve_bandwidth(design, spec, nu=nu, n_raw=int(sizes.sum()))

    res = grid_fit_with_widening(
        u, z, spec.degree, spec.kernel, h, grid, widen_on_failure
    )
    mu_raw = res["value"]
    failures = np.where(res["flag"] == 2, FAIL_FIT, FAIL_NONE).astype(np.int8)
    mu_clamped, clamp_flags = _clamp_unit(mu_raw)
    p_hat = 1.0 - mu_clamped ** (1.0 / nu)
    return EstimateResult(grid, p_hat, mu_raw, clamp_flags, failures, h, "DH", nu)


def estimate_ll(
    raw: RawDataset, spec: SmootherSpec, grid, widen_on_failure: bool = False
) -> EstimateResult:
    """Oracle local polynomial regression of the individual responses on x."""
    if raw.responses is None:
        raise EstimationError("estimate_ll needs individual responses")
    if raw.dimension != 1:
        raise EstimationError("estimate_ll is univariate")
    grid = np.asarray(grid, dtype=float)
    _check_grid_range(grid, float(raw.covariates.min()), float(raw.covariates.max()))

    order = np.argsort(raw.covariates, kind="stable")
    u = raw.covariates[order]
    z = raw.responses[order].astype(float)
    design = np.column_stack([u, 1.0 - z])  # pooled-negative orientation
    h = resolve_bandwidth(design, spec, nu=1, n_raw=raw.n)

    res = grid_fit_with_widening(
        u, z, spec.degree, spec.kernel, h, grid, widen_on_failure
    )
    p_raw = res["value"]
    failures = np.where(res["flag"] == 2, FAIL_FIT, FAIL_NONE).astype(np.int8)
    p_hat, clamp_flags = _clamp_unit(p_raw)
    return EstimateResult(grid, p_hat, p_raw, clamp_flags, failures, h, "LL", 1)


def estimate_dm(
    pooled: PooledDataset, spec: SmootherSpec, grid, widen_on_failure: bool = False
) -> EstimateResult:
    """Random-pooling baseline: regress Y* on individual covariates, unmix by q.

    Valid only when groups were formed without regard to the covariates.
    g(x) = E(Y* | X=x) satisfies 1 - g = (1 - p) q^{nu-1} with
    q = E{1 - p(X)}, estimated by (mean Z*)^{1/nu}.
    """
    if pooled.strategy not in ("random", "generic"):
        raise EstimationError(
            "estimate_dm needs randomly formed pools "
            f"(got strategy {pooled.strategy!r})"
        )
    sizes = pooled.sizes()
    if not (sizes == sizes[0]).all():
        raise EstimationError("estimate_dm needs a constant group size")
    nu = int(sizes[0])

    x_all = np.concatenate([g.member_covariates for g in pooled.groups])
    y_star = np.repeat([g.y_star for g in pooled.groups], sizes).astype(float)
    z_star = pooled.z_star()
    grid = np.asarray(grid, dtype=float)
    _check_grid_range(grid, float(x_all.min()), float(x_all.max()))

    q_hat = float(np.mean(z_star)) ** (1.0 / nu)
    if q_hat == 0.0:
        raise EstimationError(
            "every pool tested positive (q_hat = 0); the baseline estimator "
            "is undefined; use a smaller group size nu"
        )

    order = np.argsort(x_all, kind="stable")
    u = x_all[order]
    ys = y_star[order]
    design = np.column_stack([u, 1.0 - ys])
    h = resolve_bandwidth(design, spec, nu=1, n_raw=u.shape[0])

    res = grid_fit_with_widening(
        u, ys, spec.degree, spec.kernel, h, grid, widen_on_failure
    )
    g_raw = res["value"]
    failures = np.where(res["flag"] == 2, FAIL_FIT, FAIL_NONE).astype(np.int8)
    p_raw = 1.0 - (1.0 - g_raw) / q_hat ** (nu - 1)
    p_hat, clamp_flags = _clamp_unit(p_raw)
    return EstimateResult(grid, p_hat, g_raw, clamp_flags, failures, h, "DM", nu)


def estimate_dh_binned(
    pooled: PooledDataset, spec: SmootherSpec, grid, widen_on_failure: bool = False
) -> EstimateResult:
    """Binned variant: d-variate local linear smoothing of the bin negatives.

    The inversion exponent at x is 1/m(x), the occupancy of the bin holding
    x; grid points in empty bins are reported missing rather than fitted.
    """
    if pooled.strategy != "binned" or pooled.bin_geometry is None:
        raise EstimationError("estimate_dh_binned needs binned pooling")
    geom = pooled.bin_geometry
    d = pooled.dimension
    n_bins = len(pooled.groups)
    if n_bins < 2 * (d + 1):
        raise EstimationError(
            f"need at least {2 * (d + 1)} nonempty bins, got {n_bins}"
        )

    grid = np.asarray(grid, dtype=float)
    grid_pts = grid[:, None] if (d == 1 and grid.ndim == 1) else grid
    if grid_pts.ndim != 2 or grid_pts.shape[1] != d:
        raise EstimationError(f"grid must be (M,) for d=1 or (M, {d})")

    centers = pooled.centers()
    z = pooled.z_star()
    m_at = geom.count_at(grid_pts)

    if d == 1:
        design = np.column_stack([centers, z])
        spec1 = SmootherSpec(spec.kernel, 1, spec.bandwidth)
        h = resolve_bandwidth(design, spec1, nu=max(int(round(pooled.nu)), 1),
                              n_raw=int(geom.counts.sum()))
        res = grid_fit_with_widening(
            centers, z, 1, spec.kernel, h, grid_pts[:, 0], widen_on_failure
        )
    else:
        h = select_bandwidth_multi(centers, z, spec.kernel, spec.bandwidth)
        res = grid_fit_local_linear_multi(centers, z, spec.kernel, h, grid_pts)
        if widen_on_failure:
            h_wide = h
            for _ in range(WIDEN_ATTEMPTS):
                bad = np.flatnonzero(res["flag"] == 2)
                if bad.size == 0:
                    break
                h_wide *= WIDEN_FACTOR
                retry = grid_fit_local_linear_multi(
                    centers, z, spec.kernel, h_wide, grid_pts[bad]
                )
                res["value"][bad] = retry["value"]
                res["flag"][bad] = retry["flag"]
                res["count"][bad] = retry["count"]

    mu_raw = res["value"]
    if (res["flag"] == 2).all() and res["flag"].size:
        raise EstimationError(
            "degenerate bin design: no grid point admits a local linear fit "
            "(widen the bandwidth or coarsen the bins)"
        )
    failures = np.where(res["flag"] == 2, FAIL_FIT, FAIL_NONE).astype(np.int8)
    failures[m_at == 0] = FAIL_EMPTY_BIN
    mu_raw = np.where(m_at == 0, np.nan, mu_raw)
    mu_clamped, clamp_flags = _clamp_unit(mu_raw)
    with np.errstate(invalid="ignore"):
        p_hat = 1.0 - mu_clamped ** (1.0 / np.maximum(m_at, 1))
    p_hat[failures != FAIL_NONE] = np.nan
    return EstimateResult(
        grid, p_hat, mu_raw, clamp_flags, failures, h, "DH_binned", float(pooled.nu)
    )


# ---------------------------------------------------------------------------
# asymptotic diagnostics


@dataclass(frozen=True)
class AsymptoticDiagnostics:
    """First-order error components of the pooled and baseline estimators.

    A is the standard-deviation scale and B the bias of the homogeneous
    estimator; A1/B1 are the random-pooling analogues with q = E{1-p(X)}.
    lambda_n**5 = (1 - p(x))**(-nu) measures the over-pooling information
    loss.  b_const and v are the kernel constants of a local linear fit.
    """

    x: np.ndarray
    A: np.ndarray
    B: np.ndarray
    A1: np.ndarray
    B1: np.ndarray
    q: float
    lambda_n: np.ndarray
    b_const: float
    v: np.ndarray


def _diagnostic_formulas(p, p1, p2, f, kern: Kernel, nu: int, n: int, h: float, q: float):
    if (f <= 0.0).any():
        raise EstimationError("design density is zero at a requested point")
    one_m_p = 1.0 - p
    b = kern.second_moment
    v = kern.l2_norm / f
    a_sq = (one_m_p ** (2 - nu)) * (1.0 - one_m_p**nu) * v / (nu * n * h)
    big_a = np.sqrt(a_sq)
    big_b = 0.5 * h * h * (p2 - (nu - 1) * p1**2 / one_m_p) * b
    a1_sq = one_m_p * q ** (1 - nu) * (1.0 - one_m_p * q ** (nu - 1)) * v / (n * h)
    big_a1 = np.sqrt(a1_sq)
    big_b1 = 0.5 * h * h * p2 * b
    lam = one_m_p ** (-nu / 5.0)
    return big_a, big_b, big_a1, big_b1, lam, b, v


def asymptotic_diagnostics(
    model: PrevalenceModel,
    spec: SmootherSpec,
    nu: int,
    n: int,
    h: float,
    x,
) -> AsymptoticDiagnostics:
    """Evaluate the error formulas at x for a model with known p, p', p'', f."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.asarray(model.p(x), dtype=float)
    p1 = np.asarray(model.p_prime(x), dtype=float)
    p2 = np.asarray(model.p_double_prime(x), dtype=float)
    f = np.asarray(model.f(x), dtype=float)
    q = model.mean_survival()
    big_a, big_b, big_a1, big_b1, lam, b, v = _diagnostic_formulas(
        p, p1, p2, f, spec.kernel, nu, n, h, q
    )
    return AsymptoticDiagnostics(x, big_a, big_b, big_a1, big_b1, q, lam, b, v)


def data_mode_diagnostics(
    pooled: PooledDataset,
    spec: SmootherSpec,
    h: float,
    x,
) -> AsymptoticDiagnostics:
    """Diagnostics when the truth is unknown: pilot fits stand in for p and f.

    The prevalence curve and its derivatives come from a local quadratic on
    a pilot pooled fit; the covariate density from a normal-reference kernel
    density of the raw covariates.
    """
    if pooled.strategy != "homogeneous_sorted":
        raise EstimationError("data-mode diagnostics need homogeneous pools")
    sizes = pooled.sizes()
    nu = int(sizes[0])
    n = int(sizes.sum())
    x = np.atleast_1d(np.asarray(x, dtype=float))

    u = pooled.centers()
    z = pooled.z_star()
    res = _grid_fit_1d(u, z, 1, spec.kernel, 1.5 * h, x)
    mu = np.clip(np.nan_to_num(res["value"], nan=1.0), 0.0, 1.0)
    p_pilot = np.clip(1.0 - mu ** (1.0 / nu), 0.0, 1.0 - 1e-6)

    lo, hi = float(u.min()), float(u.max())
    xg = np.linspace(lo, hi, 128)
    res_g = _grid_fit_1d(u, z, 1, spec.kernel, 1.5 * h, xg)
    mu_g = np.clip(np.nan_to_num(res_g["value"], nan=1.0), 0.0, 1.0)
    pg = np.clip(1.0 - mu_g ** (1.0 / nu), 0.0, 1.0 - 1e-6)
    h_der = max(1.5 * h, 4.0 * (hi - lo) / (xg.size - 1))
    der = local_poly_derivatives(xg, pg, 2, spec.kernel, h_der, x)
    p1 = np.nan_to_num(der[:, 1])
    p2 = np.nan_to_num(der[:, 2])

    x_all = np.concatenate([g.member_covariates for g in pooled.groups])
    sd = float(np.std(x_all))
    iqr = float(np.quantile(x_all, 0.75) - np.quantile(x_all, 0.25))
    width = min(sd, iqr / 1.34) if iqr > 0 else sd
    bw = max(0.9 * width * x_all.shape[0] ** (-0.2), 1e-12)
    f_hat = spec.kernel.pdf((x[:, None] - x_all[None, :]) / bw).mean(axis=1) / bw
    f_hat = np.maximum(f_hat, 1e-300)

    q_hat = float(np.mean(z)) ** (1.0 / nu)
    big_a, big_b, big_a1, big_b1, lam, b, v = _diagnostic_formulas(
        p_pilot, p1, p2, f_hat, spec.kernel, nu, n, h, q_hat
    )
    return AsymptoticDiagnostics(x, big_a, big_b, big_a1, big_b1, q_hat, lam, b, v)
