"""Reference values: the exact bias of the two-point swap action under
Gaussian noise, and the large-noise behaviour of the rotation action."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .noise import LANE_EXACT, SampleStream, chi_mean

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class QuadratureSpec:
    absolute_tol: float = 1e-12
    relative_tol: float = 1e-10
    truncation: float = 9.0  # integrate on [d/s, d/s + truncation]

    def __post_init__(self):
        if self.absolute_tol <= 0 or self.relative_tol <= 0 or self.truncation <= 0:
            raise ValueError("quadrature tolerances and truncation must be positive")
        if radial_tail(self.truncation) >= self.absolute_tol:
            raise ValueError(f"truncation {self.truncation} leaves a tail above absolute_tol")


def radial_tail(R: float) -> float:
    """Integral of r^2 exp(-r^2/2) over [R, inf)."""
    return R * math.exp(-0.5 * R * R) + math.sqrt(math.pi / 2.0) * math.erfc(R / math.sqrt(2.0))


def g_fold(x):
    """sin(arccos x) - x arccos x on [0, 1]: decreasing from 1 to 0."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0) or np.any(~np.isfinite(arr)):
        raise ValueError("g_fold is defined on [0, 1]")
    out = np.sqrt(1.0 - arr * arr) - arr * np.arccos(arr)
    return float(out) if np.ndim(out) == 0 else out


def _integrand(r, a):
    # a / r <= 1 on the integration range
    x = min(1.0, a / r) if r > 0 else 0.0
    return r * r * math.exp(-0.5 * r * r) * (math.sqrt(1.0 - x * x) - x * math.acos(x))


def rho_tilde_certified(d: float, s: float, q: QuadratureSpec = QuadratureSpec()):
    """Bias of the swap action for N(t0, s^2 Id_2) noise, with an error bound.

    ``d`` is the distance from t0 to the line of fixed points. Returns
    ``(value, error)`` where ``error`` adds the quadrature estimate and the
    certified tail beyond the truncation radius.
    """
    if not (d >= 0 and math.isfinite(d)):
        raise ValueError(f"d must be finite and >= 0, got {d}")
    if not (s > 0 and math.isfinite(s)):
        raise ValueError(f"s must be finite and > 0, got {s}")
    a = d / s
    lo, hi = a, a + q.truncation
    value, err = integrate.quad(_integrand, lo, hi, args=(a,), epsabs=q.absolute_tol,
                                epsrel=q.relative_tol, limit=200)
    k = s * 2.0 / math.pi
    return k * value, k * (err + radial_tail(hi))


def rho_tilde(d: float, s: float, q: QuadratureSpec = QuadratureSpec()) -> float:
    return rho_tilde_certified(d, s, q)[0]


def rho_tilde_upper(d: float, s: float) -> float:
    """Rigorous upper bound s (2/pi) int_{d/s}^inf r^2 exp(-r^2/2) dr (uses g <= 1)."""
    return s * 2.0 / math.pi * radial_tail(d / s)


def rotation_bias_limit(n: int) -> float:
    """Limit of bias / s for large s under rotations of R^n: the chi mean,
    sqrt(2) Gamma((n+1)/2) / Gamma(n/2)."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    return chi_mean(n)


def rotation_exact_bias(n: int, t0_norm: float, s: float, n_mc: int,
                        stream: SampleStream = SampleStream(0)):
    """E|X| - |t0| for X ~ N(t0, s^2 Id_n), by Monte Carlo on the radius only.

    With t0 along the first axis, |X|^2 = (|t0| + s z)^2 + s^2 chi2_{n-1}.
    """
    from .estimators import EstimateWithCI

    if n < 2 or t0_norm <= 0 or s < 0 or n_mc < 2:
        raise ValueError("need n >= 2, |t0| > 0, s >= 0 and n_mc >= 2")
    if s == 0:
        return EstimateWithCI(0.0, 0.0, n_mc)
    rng = stream.with_lane(LANE_EXACT).chunk(n).generator()
    z = rng.standard_normal(n_mc)
    rest = rng.chisquare(n - 1, n_mc)
    r = np.sqrt((t0_norm + s * z) ** 2 + s * s * rest)
    return EstimateWithCI(float(r.mean() - t0_norm), float(r.std(ddof=1) / math.sqrt(n_mc)), n_mc)


def noncentral_chi_mean(n: int, t0_norm: float, s: float) -> float:
    """E|X| for X ~ N(t0, s^2 Id_n) in closed form (confluent hypergeometric)."""
    if s == 0:
        return t0_norm
    lam = t0_norm / s
    # E|X| = s chi_mean(n) 1F1(-1/2; n/2; -lam^2/2)
    return s * chi_mean(n) * special.hyp1f1(-0.5, n / 2.0, -0.5 * lam * lam)
