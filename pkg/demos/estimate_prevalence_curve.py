"""Estimate an infection-probability curve from pooled tests, start to finish.

We simulate a screening study where individual samples are pooled in groups
of five before testing, then recover the prevalence curve p(x) from nothing
but the pooled outcomes, and compare against the oracle fit that sees every
individual result.
"""

import numpy as np

from poolreg import (
    BandwidthRule,
    SmootherSpec,
    estimate_dh,
    estimate_ll,
    make_model,
    pool_homogeneous,
    sample_replicate,
    seed_stream,
)

# A cohort of 5000 individuals; the true curve is p(x) = x^2 / 8 on [0, 1].
model = make_model("iii")
raw = sample_replicate(model, 5000, seed_stream(7))
print(f"simulated {raw.n} individuals, {int(raw.responses.sum())} true positives")

# Homogeneous pooling: sort by the covariate, group consecutive blocks of 5.
# Only the 1000 pooled outcomes would be observed in the field.
pooled = pool_homogeneous(raw, nu=5)
n_positive_pools = sum(g.y_star for g in pooled.groups)
print(f"pooled into {pooled.n_groups} groups of 5; {n_positive_pools} pools positive")

# Pooled-data estimator: smooth the pooled negatives against the group means,
# then invert mu = (1-p)^nu.  The plug-in bandwidth mimics the asymptotic
# risk trade-off; cross-validation is available too.
spec = SmootherSpec(bandwidth=BandwidthRule.plugin())
grid = np.linspace(0.05, 0.95, 10)
dh = estimate_dh(pooled, spec, grid)

# Oracle: local linear fit on the individual (x, y) pairs.
ll = estimate_ll(raw, spec, grid)

print(f"\nbandwidths: pooled fit h={dh.bandwidth_used:.3f}, oracle h={ll.bandwidth_used:.3f}")
print(f"\n{'x':>6} {'truth':>8} {'pooled':>8} {'oracle':>8}")
for x, t, a, b in zip(grid, model.p(grid), dh.p_hat, ll.p_hat):
    print(f"{x:6.2f} {t:8.4f} {a:8.4f} {b:8.4f}")

print(
    "\nThe pooled estimator tracks the oracle although it used 5x fewer tests."
)
