"""Lower and upper bounds on the consistency bias.

The lower bounds are the positive roots of ``delta^2 + 2 b delta - c = 0``
with ``c = |t0|^2 (a* - 1)^2``:

* ``delta``      uses ``b = |t0| + E|X|``;
* ``delta_star`` uses ``b = |t0| + sqrt(|t0|^2 + sigma^2)``, which is never
  smaller, so ``delta_star <= delta``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .actions import Action, ActionError, as_point, is_fixed
from .noise import (
    DEFAULT_CHUNK,
    LANE_DIRECTIONS,
    NoiseError,
    NoiseSpec,
    SampleStream,
    draw_noise,
    second_moment,
)


class BoundError(ValueError):
    pass


def positive_root(b: float, c: float) -> float:
    """Non-negative root of x^2 + 2 b x - c = 0 for b >= 0, c >= 0.

    Evaluated as c / (b + sqrt(b^2 + c)), which equals -b + sqrt(b^2 + c)
    without the cancellation.
    """
    if c <= 0.0:
        return 0.0
    return c / (b + math.sqrt(b * b + c))


@dataclass(frozen=True)
class BoundInputs:
    norm_t0: float
    expected_norm_X: float
    sigma: float
    a_star: float
    nu: float = 0.0
    dist_t0_fixed: float = 0.0
    group_cardinality: int | None = None
    scale: float | None = None
    dim: int | None = None

    def __post_init__(self):
        vals = [self.norm_t0, self.expected_norm_X, self.sigma, self.a_star, self.nu, self.dist_t0_fixed]
        if not all(math.isfinite(v) for v in vals):
            raise BoundError("bound inputs must be finite")
        if self.norm_t0 < 0 or self.sigma < 0 or self.dist_t0_fixed < 0:
            raise BoundError("norms, sigma and distances must be non-negative")
        if self.a_star < 1.0:
            raise BoundError(f"a_star must be >= 1, got {self.a_star}")


def lower_bound_delta(inputs: BoundInputs) -> float:
    b = inputs.norm_t0 + inputs.expected_norm_X
    return positive_root(b, inputs.norm_t0**2 * (inputs.a_star - 1.0) ** 2)


def lower_bound_delta_star(inputs: BoundInputs) -> float:
    t = inputs.norm_t0
    b = t + math.sqrt(t * t + inputs.sigma**2)
    return positive_root(b, t * t * (inputs.a_star - 1.0) ** 2)


def asymptotic_slope(nu: float) -> float:
    """Limit of delta_star / sigma for large sigma: sqrt(1 + nu^2) - 1."""
    if not 0.0 < nu <= 1.0:
        raise BoundError(f"nu must lie in (0, 1], got {nu}")
    # nu^2 / (sqrt(1 + nu^2) + 1) avoids cancellation for small nu
    return nu * nu / (math.sqrt(1.0 + nu * nu) + 1.0)


def gaussian_upper_bound(s: float, group_cardinality: int) -> float:
    """s sqrt(8 log |G|) for N(t0, s^2 Id) noise under a finite group."""
    if group_cardinality is None or group_cardinality < 2:
        raise BoundError("the Gaussian bound needs a finite group with at least two elements")
    if s < 0:
        raise BoundError("scale must be non-negative")
    return s * math.sqrt(8.0 * math.log(group_cardinality))


@dataclass(frozen=True)
class UpperBound:
    value: float
    envelope: float


def general_upper_bound(sigma: float, nu: float, dist_t0_fixed: float) -> UpperBound:
    """sigma nu + sqrt(sigma^2 nu^2 + 2 dist sigma nu), and its nu = 1 envelope."""
    if sigma < 0 or dist_t0_fixed < 0 or nu < 0 or nu > 1.0 + 1e-12:
        raise BoundError("need sigma >= 0, dist >= 0 and nu in [0, 1]")
    sn = sigma * nu
    value = sn + math.sqrt(sn * sn + 2.0 * dist_t0_fixed * sn)
    envelope = sigma + math.sqrt(sigma * sigma + 2.0 * sigma * dist_t0_fixed)
    return UpperBound(value, envelope)


@dataclass
class BiasReport:
    """Measured bias plus every applicable bound for one configuration."""

    scale: float
    sigma: float
    measured_bias: float
    stderr: float
    delta: float
    delta_star: float
    upper_general: float
    upper_gaussian: float | None
    analytic_exact: float | None
    fold_probability: float
    a_star: float
    nu: float
    asymptotic_slope: float
    config: dict = field(default_factory=dict)

    def ordering_ok(self, k: float = 3.0) -> bool:
        """delta_star <= delta <= bias + k se <= every upper bound + k se."""
        hi = self.measured_bias + k * self.stderr
        ok = self.delta_star <= self.delta * (1 + 1e-12) + 1e-300 and self.delta <= hi
        for ub in (self.upper_general, self.upper_gaussian):
            if ub is not None:
                ok = ok and self.measured_bias <= ub + k * self.stderr
        return bool(ok)

    def as_dict(self):
        return asdict(self)


def fixed_point_bias(a: Action, normalized_noise: NoiseSpec, sigma: float, n_mc: int,
                     n_directions: int = 16, stream: SampleStream = SampleStream(0),
                     template=None, max_iter: int = 500, chunk_size: int = DEFAULT_CHUNK,
                     workers: int = 1):
    """Consistency bias at a fixed-point template:
    sigma * sup_{|v| = 1} E(sup_g <v, g.eps>).

    The supremum over v is searched by alternating maximisation (register
    every draw onto v, then set v to the normalised mean of the registered
    draws) from ``n_directions`` random starts.
    """
    from .estimators import EstimateWithCI

    if template is not None:
        t0 = as_point(template, a.dim)
        if not is_fixed(a, t0):
            raise ActionError("fixed_point_bias needs a template fixed by the whole group")
    if sigma < 0:
        raise BoundError("sigma must be non-negative")
    if abs(second_moment(normalized_noise) - 1.0) > 1e-9:
        raise NoiseError("fixed_point_bias expects noise normalised to E|eps|^2 = 1")
    E = draw_noise(normalized_noise, stream, n_mc, chunk_size, workers)

    best_val, best_sup = -math.inf, None
    for k in range(n_directions):
        rng = stream.with_lane(LANE_DIRECTIONS).chunk(k).generator()
        v = rng.standard_normal(a.dim)
        v /= np.linalg.norm(v)
        val, prev = -math.inf, None
        for _ in range(max_iter):
            Z, sup, labels = a.register_batch(E, v, workers=workers)
            cur = float(sup.mean())
            if cur > best_val:
                best_val, best_sup = cur, sup
            done = cur <= val + 1e-15 * max(1.0, abs(val)) or (
                labels is not None and prev is not None and np.array_equal(labels, prev))
            val, prev = cur, labels
            mean = Z.mean(axis=0)
            nm = float(np.linalg.norm(mean))
            if done or nm == 0.0:
                break
            v = mean / nm
    se = float(best_sup.std(ddof=1) / math.sqrt(len(best_sup))) if len(best_sup) > 1 else 0.0
    return EstimateWithCI(sigma * best_val, sigma * se, int(n_mc))
