"""Local polynomial smoothing with effective weights and bandwidth selection.

The engine fits, at each evaluation point x, a weighted least-squares
polynomial of degree ``l >= 1`` centered at x, with kernel weights
``K((u_j - x)/h)``.  The fitted curve value is the intercept, and it is a
linear combination of the responses: the normalized coefficients of that
combination are the *effective weights* of the fit.  Everything downstream
(prevalence estimators, cross-validation, plug-in bandwidths) is built on
this one routine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import GAUSSIAN, Kernel

FLAG_OK = "ok"
FLAG_NEAR_SINGULAR = "near_singular"
FLAG_FAILED = "failed"

# Relative-pivot threshold below which a moment matrix counts as singular.
PIVOT_REL_TOL = 1e-12
# Above the hard threshold but below this, fits are flagged near_singular.
PIVOT_WARN_TOL = 1e-6

_CHUNK_BUDGET = 2_000_000  # max J*C elements per temporary in grid fits


class BandwidthError(ValueError):
    """Bandwidth selection failed or a rule is invalid."""


@dataclass(frozen=True)
class BandwidthRule:
    """How the bandwidth is chosen: fixed value, leave-one-out CV, or plug-in.

    ``candidates`` is the search grid for the data-driven modes; ``None``
    means a default geometric grid spanning the design is built at selection
    time.  Results are always clamped to ``bounds``.
    """

    mode: str
    h: float | None = None
    candidates: tuple[float, ...] | None = None
    bounds: tuple[float, float] = (1e-8, math.inf)

    def __post_init__(self):
        if self.mode not in ("fixed", "cross_validation", "plugin"):
            raise BandwidthError(f"unknown bandwidth mode {self.mode!r}")
        if self.mode == "fixed":
            if self.h is None or not self.h > 0:
                raise BandwidthError("fixed bandwidth must be a positive number")
        if self.candidates is not None:
            if len(self.candidates) == 0:
                raise BandwidthError("candidate grid must be nonempty")
            if any(not c > 0 for c in self.candidates):
                raise BandwidthError("candidate bandwidths must be positive")
        lo, hi = self.bounds
        if not lo < hi:
            raise BandwidthError("bandwidth bounds must satisfy h_min < h_max")

    @classmethod
    def fixed(cls, h: float) -> "BandwidthRule":
        return cls("fixed", h=float(h))

    @classmethod
    def cv(cls, candidates=None, bounds=(1e-8, math.inf)) -> "BandwidthRule":
        cand = None if candidates is None else tuple(float(c) for c in candidates)
        return cls("cross_validation", candidates=cand, bounds=bounds)

    @classmethod
    def plugin(cls, candidates=None, bounds=(1e-8, math.inf)) -> "BandwidthRule":
        cand = None if candidates is None else tuple(float(c) for c in candidates)
        return cls("plugin", candidates=cand, bounds=bounds)


@dataclass(frozen=True)
class SmootherSpec:
    """Kernel, polynomial degree and bandwidth rule of a linear smoother."""

    kernel: Kernel = GAUSSIAN
    degree: int = 1
    bandwidth: BandwidthRule = field(default_factory=lambda: BandwidthRule.cv())

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError(
                "degree must be >= 1 (the local constant fit is not supported)"
            )


@dataclass(frozen=True)
class LocalFit:
    """Result of one local polynomial fit.

    ``effective_weights`` are normalized (they sum to one when the fit is
    ok) and reproduce ``value`` as their dot product with the responses.
    ``local_count`` counts design points with nonzero kernel weight.
    """

    value: float | None
    effective_weights: np.ndarray | None
    local_count: int
    condition_flag: str


def _split_design(design) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(design, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
        raise ValueError("design must be a nonempty sequence of (u, z) pairs")
    return np.ascontiguousarray(arr[:, 0]), np.ascontiguousarray(arr[:, 1])


def _solve_batched(S: np.ndarray, rhs: np.ndarray):
    """Solve S a = rhs for a batch of small symmetric systems.

    Gaussian elimination with partial pivoting, vectorized over the batch
    axis.  Returns (solutions, min_relative_pivot) where the relative pivot
    is measured against the largest entry of each initial matrix.
    """
    A = S.copy()
    B = rhs.copy()
    C, n, _ = A.shape
    scale = np.abs(S).max(axis=(1, 2))
    safe_scale = np.where(scale > 0.0, scale, 1.0)
    min_rel_pivot = np.where(scale > 0.0, np.inf, 0.0)

    rows = np.arange(C)
    for k in range(n):
        sub = np.abs(A[:, k:, k])
        piv_row = k + np.argmax(sub, axis=1)
        swap = piv_row != k
        if swap.any():
            idx = rows[swap]
            pr = piv_row[swap]
            A[idx, k, :], A[idx, pr, :] = A[idx, pr, :].copy(), A[idx, k, :].copy()
            B[idx, k, :], B[idx, pr, :] = B[idx, pr, :].copy(), B[idx, k, :].copy()
        piv = A[:, k, k]
        min_rel_pivot = np.minimum(min_rel_pivot, np.abs(piv) / safe_scale)
        piv_safe = np.where(piv != 0.0, piv, 1.0)
        if k + 1 < n:
            factor = A[:, k + 1 :, k] / piv_safe[:, None]
            A[:, k + 1 :, k:] -= factor[:, :, None] * A[:, None, k, k:]
            B[:, k + 1 :, :] -= factor[:, :, None] * B[:, None, k, :]

    X = np.zeros_like(B)
    for k in range(n - 1, -1, -1):
        piv = A[:, k, k]
        piv_safe = np.where(piv != 0.0, piv, 1.0)
        acc = B[:, k, :].copy()
        if k + 1 < n:
            acc -= np.einsum("cj,cjm->cm", A[:, k, k + 1 :], X[:, k + 1 :, :])
        X[:, k, :] = acc / piv_safe[:, None]
    return X, min_rel_pivot


def _grid_fit_1d(
    u: np.ndarray,
    z: np.ndarray,
    degree: int,
    kern: Kernel,
    h: float,
    x_eval: np.ndarray,
    *,
    want_self_weight: bool = False,
):
    """Vectorized local polynomial fit of (u, z) at every point of x_eval.

    Returns a dict with ``value`` (NaN where failed), ``flag`` (int codes
    0=ok, 1=near_singular, 2=failed), ``count``, ``alpha`` (solution of
    S a = e1 in the scaled basis, for effective-weight reconstruction) and,
    on request, the leave-one-out self weight ``self_w`` (valid when the
    evaluation points are design points).
    """
    L1 = degree + 1
    M = x_eval.shape[0]
    values = np.full(M, np.nan)
    flags = np.full(M, 2, dtype=np.int8)
    counts = np.zeros(M, dtype=np.int64)
    alphas = np.zeros((M, L1))
    self_w = np.full(M, np.nan) if want_self_weight else None

    J = u.shape[0]
    chunk = max(1, min(M, _CHUNK_BUDGET // max(J, 1)))
    n_mom = 2 * degree + 1

    for start in range(0, M, chunk):
        xs = x_eval[start : start + chunk]
        Cc = xs.shape[0]
        t = (u[:, None] - xs[None, :]) / h
        w = kern.pdf(t)

        m = np.empty((n_mom, Cc))
        acc = w.copy()
        m[0] = acc.sum(axis=0)
        for k in range(1, n_mom):
            acc *= t
            m[k] = acc.sum(axis=0)

        r = np.empty((L1, Cc))
        acc = w * z[:, None]
        r[0] = acc.sum(axis=0)
        for k in range(1, L1):
            acc *= t
            r[k] = acc.sum(axis=0)

        idx = np.add.outer(np.arange(L1), np.arange(L1))
        S = m[idx].transpose(2, 0, 1)

        e1 = np.zeros((Cc, L1, 1))
        e1[:, 0, 0] = 1.0
        a, rel_piv = _solve_batched(S, e1)
        a = a[:, :, 0]

        cnt = (w > 0.0).sum(axis=0)
        ok_count = cnt >= L1
        ok_piv = rel_piv >= PIVOT_REL_TOL
        ok = ok_count & ok_piv
        near = ok & (rel_piv < PIVOT_WARN_TOL)

        val = np.einsum("ck,kc->c", a, r)
        sl = slice(start, start + Cc)
        values[sl] = np.where(ok, val, np.nan)
        flags[sl] = np.where(ok, np.where(near, 1, 0), 2).astype(np.int8)
        counts[sl] = cnt
        alphas[sl] = a
        if want_self_weight:
            self_w[sl] = kern.at_zero * a[:, 0]

    out = {"value": values, "flag": flags, "count": counts, "alpha": alphas}
    if want_self_weight:
        out["self_w"] = self_w
    return out


WIDEN_FACTOR = 2.0
WIDEN_ATTEMPTS = 3


def local_poly_fit(
    design,
    spec: SmootherSpec,
    x: float,
    h: float | None = None,
    widen_on_failure: bool = False,
) -> LocalFit:
    """Fit a degree-``spec.degree`` local polynomial to the design at x.

    The bandwidth must already be a number: either pass ``h`` or use a spec
    whose rule is fixed.  On failure (fewer than degree+1 usable points, or
    a moment matrix with relative pivot below ``PIVOT_REL_TOL``) the
    returned fit carries ``condition_flag="failed"`` and no value; with
    ``widen_on_failure`` the bandwidth is doubled up to three times first.
    """
    u, z = _split_design(design)
    if h is None:
        if spec.bandwidth.mode != "fixed":
            raise BandwidthError(
                "bandwidth not resolved: pass h or use a fixed bandwidth rule"
            )
        h = spec.bandwidth.h
    if not h > 0:
        raise BandwidthError("bandwidth must be positive")

    attempts = 1 + (WIDEN_ATTEMPTS if widen_on_failure else 0)
    h_used = float(h)
    for attempt in range(attempts):
        res = _grid_fit_1d(u, z, spec.degree, spec.kernel, h_used, np.atleast_1d(float(x)))
        if res["flag"][0] != 2 or attempt == attempts - 1:
            break
        h_used *= WIDEN_FACTOR
    flag = (FLAG_OK, FLAG_NEAR_SINGULAR, FLAG_FAILED)[int(res["flag"][0])]
    count = int(res["count"][0])
    if flag == FLAG_FAILED:
        return LocalFit(None, None, count, flag)

    t = (u - float(x)) / h_used
    w = spec.kernel.pdf(t)
    a = res["alpha"][0]
    poly = np.zeros_like(t)
    for k in range(spec.degree, -1, -1):
        poly = poly * t + a[k]
    eff = w * poly
    eff = eff / eff.sum()
    return LocalFit(float(res["value"][0]), eff, count, flag)


def grid_fit_with_widening(
    u: np.ndarray,
    z: np.ndarray,
    degree: int,
    kern: Kernel,
    h: float,
    x_eval: np.ndarray,
    widen_on_failure: bool = False,
):
    """Grid fit that optionally rescues failed points with doubled bandwidths."""
    res = _grid_fit_1d(u, z, degree, kern, h, x_eval)
    if not widen_on_failure:
        return res
    h_wide = float(h)
    for _ in range(WIDEN_ATTEMPTS):
        bad = np.flatnonzero(res["flag"] == 2)
        if bad.size == 0:
            break
        h_wide *= WIDEN_FACTOR
        retry = _grid_fit_1d(u, z, degree, kern, h_wide, x_eval[bad])
        res["value"][bad] = retry["value"]
        res["flag"][bad] = retry["flag"]
        res["count"][bad] = retry["count"]
    return res


def effective_weight_moments(fit: LocalFit, design, x: float, k: int) -> float:
    """Return sum_j w~_j(x) (u_j - x)^k for the fit's normalized weights."""
    if fit.condition_flag == FLAG_FAILED or fit.effective_weights is None:
        raise ValueError("effective weights unavailable: fit failed")
    u, _ = _split_design(design)
    return float(np.sum(fit.effective_weights * (u - float(x)) ** k))


def local_poly_derivatives(
    u: np.ndarray,
    z: np.ndarray,
    degree: int,
    kern: Kernel,
    h: float,
    x_eval: np.ndarray,
) -> np.ndarray:
    """Estimated derivatives f^(k)(x), k = 0..degree, at each x (NaN if failed).

    The fit solves in the scaled basis t = (u-x)/h, so the coefficient for
    t^k is beta_k = f^(k) h^k / k!.
    """
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    x_eval = np.asarray(x_eval, dtype=float)
    L1 = degree + 1
    M = x_eval.shape[0]
    out = np.full((M, L1), np.nan)

    J = u.shape[0]
    chunk = max(1, min(M, _CHUNK_BUDGET // max(J, 1)))
    n_mom = 2 * degree + 1
    for start in range(0, M, chunk):
        xs = x_eval[start : start + chunk]
        Cc = xs.shape[0]
        t = (u[:, None] - xs[None, :]) / h
        w = kern.pdf(t)
        m = np.empty((n_mom, Cc))
        acc = w.copy()
        m[0] = acc.sum(axis=0)
        for k in range(1, n_mom):
            acc *= t
            m[k] = acc.sum(axis=0)
        r = np.empty((L1, Cc))
        acc = w * z[:, None]
        r[0] = acc.sum(axis=0)
        for k in range(1, L1):
            acc *= t
            r[k] = acc.sum(axis=0)
        idx = np.add.outer(np.arange(L1), np.arange(L1))
        S = m[idx].transpose(2, 0, 1)
        beta, rel_piv = _solve_batched(S, r.T[:, :, None])
        beta = beta[:, :, 0]
        ok = ((w > 0.0).sum(axis=0) >= L1) & (rel_piv >= PIVOT_REL_TOL)
        fact = np.array([math.factorial(k) / h**k for k in range(L1)])
        deriv = beta * fact[None, :]
        out[start : start + Cc] = np.where(ok[:, None], deriv, np.nan)
    return out


# ---------------------------------------------------------------------------
# bandwidth selection


def default_candidates(u: np.ndarray, degree: int, n: int = 16) -> np.ndarray:
    """Geometric bandwidth grid spanning the design: [span/50 .. span/3]."""
    span = float(np.ptp(u))
    if span <= 0.0:
        raise BandwidthError("design points are all identical")
    J = u.shape[0]
    lo = span * max((degree + 2) / max(J, 1), 0.02)
    hi = span / 3.0
    if lo >= hi:
        lo = hi / 10.0
    return np.geomspace(lo, hi, n)


def _min_usable_h(u: np.ndarray, degree: int, kern: Kernel) -> float:
    """Smallest h whose window around every design point holds degree+1 points."""
    su = np.sort(u)
    k = degree  # need degree+1 points including the center
    if su.shape[0] <= k:
        return math.inf
    gaps = su[k:] - su[:-k] if k > 0 else np.zeros(1)
    radius = kern.support_radius if math.isfinite(kern.support_radius) else 2.0
    return float(gaps.max() / radius) if gaps.size else 0.0


def _cv_eval_indices(u: np.ndarray, cap: int) -> np.ndarray:
    """Deterministic quantile-strided subset of design indices for LOO scoring.

    Scoring is restricted to the central 90% of the design (the region the
    curve is estimated on); boundary points have high-leverage residuals
    that only add noise to the score.
    """
    J = u.shape[0]
    order = np.argsort(u, kind="stable")
    lo = int(np.floor(0.05 * J))
    hi = max(lo + 2, int(np.ceil(0.95 * J)))
    inner = order[lo:hi]
    if inner.shape[0] <= cap:
        return inner
    picks = np.unique(
        np.round(np.linspace(0, inner.shape[0] - 1, cap)).astype(int)
    )
    return inner[picks]


def loo_cv_score(
    u: np.ndarray,
    z: np.ndarray,
    degree: int,
    kern: Kernel,
    h: float,
    eval_idx: np.ndarray,
) -> float:
    """Exact leave-one-out squared prediction error at the given design points.

    Uses the weighted-least-squares deletion identity
    ``z_hat_{-j} = (z_hat_j - l_j z_j) / (1 - l_j)`` with leverage
    ``l_j = K(0) a_0(u_j)``, exact because the weights do not depend on z.
    Returns inf when any evaluation fit fails (candidate unusable).
    """
    res = _grid_fit_1d(u, z, degree, kern, h, u[eval_idx], want_self_weight=True)
    if (res["flag"] == 2).any():
        return math.inf
    lev = res["self_w"]
    denom = 1.0 - lev
    if (denom <= 1e-10).any():
        return math.inf
    z_at = z[eval_idx]
    loo = (res["value"] - lev * z_at) / denom
    return float(np.mean((z_at - loo) ** 2))


def select_bandwidth(
    design,
    spec: SmootherSpec,
    *,
    nu: int = 1,
    n_raw: int | None = None,
    interval: tuple[float, float] | None = None,
    cv_eval_cap: int = 800,
) -> float:
    """Choose a bandwidth for the design following the smoother's rule.

    cross_validation minimizes the exact leave-one-out squared prediction
    error over the candidate grid (ties go to the smallest h).  plugin runs
    CV first, smooths a pilot curve at 1.5x that value, estimates the
    prevalence curve's first two derivatives and the design density, and
    minimizes the integrated asymptotic (variance + bias^2) risk of the
    pooled estimator over the same grid; ``nu`` and ``n_raw`` supply the
    pooling context (group size and raw sample size).

    The result is clamped to the rule's bounds.
    """
    rule = spec.bandwidth
    if rule.mode == "fixed":
        raise BandwidthError("select_bandwidth requires a data-driven rule")
    u, z = _split_design(design)
    J = u.shape[0]
    if J < 2 * (spec.degree + 1):
        raise BandwidthError(
            f"need at least {2 * (spec.degree + 1)} design points, got {J}"
        )

    if rule.candidates is not None:
        cands = np.sort(np.asarray(rule.candidates, dtype=float))
    else:
        cands = default_candidates(u, spec.degree)
    lo, hi = rule.bounds

    # the plug-in only needs the CV value as a pilot scale, so it can afford
    # a cheaper scoring subset than the pure-CV mode
    cap = cv_eval_cap if rule.mode == "cross_validation" else min(cv_eval_cap, 300)
    eval_idx = _cv_eval_indices(u, cap)
    scores = np.array(
        [loo_cv_score(u, z, spec.degree, spec.kernel, h, eval_idx) for h in cands]
    )
    if not np.isfinite(scores).any():
        raise BandwidthError(
            "every candidate bandwidth failed to fit; "
            f"smallest usable h is about {_min_usable_h(u, spec.degree, spec.kernel):.6g}"
        )
    # scores within floating noise of the minimum are ties -> smallest h wins
    best = np.nanmin(np.where(np.isfinite(scores), scores, np.nan))
    tol = 1e-12 * max(best, float(np.mean(z * z)), 1e-300)
    h_cv = float(cands[int(np.argmax(scores <= best + tol))])

    if rule.mode == "cross_validation":
        return float(min(max(h_cv, lo), hi))

    # a CV value at the bottom of the grid signals a collapsed (noise-driven)
    # selection; the pilot derived from it cannot be trusted for derivatives
    collapsed = cands.shape[0] > 1 and h_cv <= cands[1]
    return float(
        min(
            max(
                _plugin_bandwidth(u, z, spec, cands, h_cv, nu, n_raw, interval,
                                  collapsed),
                lo,
            ),
            hi,
        )
    )


def _plugin_bandwidth(u, z, spec, cands, h_cv, nu, n_raw, interval, collapsed=False):
    """Minimize the integrated first-order risk of the root-transformed estimator."""
    kern = spec.kernel
    n_raw = int(n_raw) if n_raw is not None else u.shape[0] * nu
    if interval is None:
        interval = (float(np.quantile(u, 0.05)), float(np.quantile(u, 0.95)))
    a, b = interval
    xg = np.linspace(a, b, 128)

    h_pilot = 1.5 * h_cv
    pilot = _grid_fit_1d(u, z, spec.degree, kern, h_pilot, xg)
    mu = np.clip(np.nan_to_num(pilot["value"], nan=1.0), 0.0, 1.0)
    p_pilot = 1.0 - mu ** (1.0 / nu)
    p_pilot = np.clip(p_pilot, 0.0, 1.0 - 1e-6)

    # Derivatives of the pilot curve by a local quadratic on the pilot grid.
    # When the CV pilot collapsed, widen the quadratic's window to a fifth of
    # the interval so the rough pilot cannot inject spurious curvature.
    h_der = max(h_pilot, 4.0 * (b - a) / (xg.size - 1))
    if collapsed:
        h_der = max(h_der, 0.2 * (b - a))
    der = local_poly_derivatives(xg, p_pilot, 2, kern, h_der, xg)
    p1 = np.nan_to_num(der[:, 1])
    p2 = np.nan_to_num(der[:, 2])

    # Normal-reference kernel density of the design points.
    sd = float(np.std(u))
    iqr = float(np.quantile(u, 0.75) - np.quantile(u, 0.25))
    width = min(sd, iqr / 1.34) if iqr > 0 else sd
    bw = max(0.9 * width * u.shape[0] ** (-0.2), 1e-12)
    f_hat = kern.pdf((xg[:, None] - u[None, :]) / bw).mean(axis=1) / bw
    f_hat = np.maximum(f_hat, 1e-12)

    one_m_p = 1.0 - p_pilot
    v = kern.l2_norm / f_hat
    var_profile = one_m_p ** (2 - nu) * (1.0 - one_m_p**nu) * v
    bias_profile = 0.5 * (p2 - (nu - 1) * p1**2 / one_m_p) * kern.second_moment

    risks = np.empty(cands.shape[0])
    for i, h in enumerate(cands):
        a2 = var_profile / (nu * n_raw * h)
        b2 = (bias_profile * h * h) ** 2
        risks[i] = np.trapezoid(a2 + b2, xg)
    return float(cands[int(np.argmin(risks))])


def resolve_bandwidth(design, spec: SmootherSpec, **ctx) -> float:
    """Turn the smoother's bandwidth rule into a number for this design."""
    if spec.bandwidth.mode == "fixed":
        return float(spec.bandwidth.h)
    return select_bandwidth(design, spec, **ctx)


# ---------------------------------------------------------------------------
# d-variate local linear smoother (for the binned estimator)


def grid_fit_local_linear_multi(
    centers: np.ndarray,
    z: np.ndarray,
    kern: Kernel,
    h: float,
    x_eval: np.ndarray,
    *,
    want_self_weight: bool = False,
):
    """Local linear fit with d covariates, vectorized over evaluation points.

    ``centers`` is (J, d), ``x_eval`` is (M, d).  Weights use the kernel's
    spherically symmetric radial profile.  Returns the same dict layout as
    the univariate grid fit.
    """
    centers = np.asarray(centers, dtype=float)
    x_eval = np.asarray(x_eval, dtype=float)
    z = np.asarray(z, dtype=float)
    J, d = centers.shape
    M = x_eval.shape[0]
    n = d + 1

    values = np.full(M, np.nan)
    flags = np.full(M, 2, dtype=np.int8)
    counts = np.zeros(M, dtype=np.int64)
    self_w = np.full(M, np.nan) if want_self_weight else None

    chunk = max(1, min(M, _CHUNK_BUDGET // max(J * d, 1)))
    for start in range(0, M, chunk):
        xs = x_eval[start : start + chunk]
        Cc = xs.shape[0]
        t = (centers[:, None, :] - xs[None, :, :]) / h  # (J, C, d)
        w = kern.radial_profile((t * t).sum(axis=2))  # (J, C)

        S = np.empty((Cc, n, n))
        T = np.empty((Cc, n))
        S[:, 0, 0] = w.sum(axis=0)
        wz = w * z[:, None]
        T[:, 0] = wz.sum(axis=0)
        for k in range(d):
            wtk = w * t[:, :, k]
            S[:, 0, k + 1] = S[:, k + 1, 0] = wtk.sum(axis=0)
            T[:, k + 1] = (wz * t[:, :, k]).sum(axis=0)
            for l in range(k, d):
                S[:, k + 1, l + 1] = S[:, l + 1, k + 1] = (wtk * t[:, :, l]).sum(axis=0)

        e1 = np.zeros((Cc, n, 1))
        e1[:, 0, 0] = 1.0
        a, rel_piv = _solve_batched(S, e1)
        a = a[:, :, 0]

        cnt = (w > 0.0).sum(axis=0)
        ok = (cnt >= n) & (rel_piv >= PIVOT_REL_TOL)
        near = ok & (rel_piv < PIVOT_WARN_TOL)
        val = np.einsum("ck,ck->c", a, T)

        sl = slice(start, start + Cc)
        values[sl] = np.where(ok, val, np.nan)
        flags[sl] = np.where(ok, np.where(near, 1, 0), 2).astype(np.int8)
        counts[sl] = cnt
        if want_self_weight:
            # radial_profile(0) == 1 for every family
            self_w[sl] = a[:, 0]

    out = {"value": values, "flag": flags, "count": counts}
    if want_self_weight:
        out["self_w"] = self_w
    return out


def select_bandwidth_multi(
    centers: np.ndarray,
    z: np.ndarray,
    kern: Kernel,
    rule: BandwidthRule,
    *,
    cv_eval_cap: int = 400,
) -> float:
    """Leave-one-out CV bandwidth for the d-variate local linear smoother."""
    if rule.mode == "fixed":
        return float(rule.h)
    if rule.mode == "plugin":
        raise BandwidthError("plugin bandwidths are univariate; use cv or fixed")
    centers = np.asarray(centers, dtype=float)
    J, d = centers.shape
    if rule.candidates is not None:
        cands = np.sort(np.asarray(rule.candidates, dtype=float))
    else:
        span = float(np.ptp(centers, axis=0).max())
        if span <= 0.0:
            raise BandwidthError("design points are all identical")
        lo = span * max((d + 2) / max(J, 1), 0.01)
        cands = np.geomspace(min(lo, span / 4.0), span / 2.0, 16)

    if J > cv_eval_cap:
        picks = np.unique(np.round(np.linspace(0, J - 1, cv_eval_cap)).astype(int))
    else:
        picks = np.arange(J)

    scores = np.full(cands.shape[0], math.inf)
    for i, h in enumerate(cands):
        res = grid_fit_local_linear_multi(
            centers, z, kern, float(h), centers[picks], want_self_weight=True
        )
        if (res["flag"] == 2).any():
            continue
        denom = 1.0 - res["self_w"]
        if (denom <= 1e-10).any():
            continue
        loo = (res["value"] - res["self_w"] * z[picks]) / denom
        scores[i] = float(np.mean((z[picks] - loo) ** 2))
    if not np.isfinite(scores).any():
        raise BandwidthError("every candidate bandwidth failed to fit")
    best = scores[np.isfinite(scores)].min()
    tol = 1e-12 * max(best, float(np.mean(z * z)), 1e-300)
    best_h = float(cands[int(np.argmax(scores <= best + tol))])
    lo, hi = rule.bounds
    return float(min(max(best_h, lo), hi))
