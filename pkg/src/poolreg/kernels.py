"""Smoothing kernels: densities, radial profiles and moment constants."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Kernel:
    """A symmetric, nonnegative, density-normalized smoothing kernel.

    Attributes
    ----------
    family : str
        One of ``"gaussian"``, ``"epanechnikov"``, ``"uniform"``.
    support_radius : float
        Half-width of the support; ``inf`` for the gaussian.
    second_moment : float
        ``int u^2 K(u) du`` (the bias constant b of a local linear fit).
    l2_norm : float
        ``int K(u)^2 du`` (enters the variance constant v = l2_norm / f).
    """

    family: str
    support_radius: float
    second_moment: float
    l2_norm: float

    def pdf(self, u: np.ndarray) -> np.ndarray:
        """Evaluate the density K(u) elementwise."""
        u = np.asarray(u, dtype=float)
        if self.family == "gaussian":
            return np.exp(-0.5 * u * u) / _SQRT_2PI
        if self.family == "epanechnikov":
            out = 0.75 * (1.0 - u * u)
            return np.where(np.abs(u) <= 1.0, out, 0.0)
        # uniform
        return np.where(np.abs(u) <= 1.0, 0.5, 0.0)

    def radial_profile(self, r2: np.ndarray) -> np.ndarray:
        """Unnormalized spherically-symmetric profile at squared radius r2.

        Used for d-variate weights; the normalization constant cancels in
        any weight-normalized smoother, so it is omitted.
        """
        r2 = np.asarray(r2, dtype=float)
        if self.family == "gaussian":
            return np.exp(-0.5 * r2)
        if self.family == "epanechnikov":
            return np.maximum(1.0 - r2, 0.0)
        return np.where(r2 <= 1.0, 1.0, 0.0)

    @property
    def at_zero(self) -> float:
        """K(0), needed for leave-one-out self weights."""
        if self.family == "gaussian":
            return 1.0 / _SQRT_2PI
        if self.family == "epanechnikov":
            return 0.75
        return 0.5


GAUSSIAN = Kernel("gaussian", math.inf, 1.0, 1.0 / (2.0 * math.sqrt(math.pi)))
EPANECHNIKOV = Kernel("epanechnikov", 1.0, 0.2, 0.6)
UNIFORM = Kernel("uniform", 1.0, 1.0 / 3.0, 0.5)

_BY_NAME = {k.family: k for k in (GAUSSIAN, EPANECHNIKOV, UNIFORM)}


def kernel(name: str) -> Kernel:
    """Look a kernel up by family name."""
    try:
        return _BY_NAME[name]
    except KeyError:
        raise ValueError(
            f"unknown kernel {name!r}; choose from {sorted(_BY_NAME)}"
        ) from None
