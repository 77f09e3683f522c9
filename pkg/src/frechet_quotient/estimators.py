"""Monte Carlo estimators of quotient-space statistics and the max-max algorithm.

All expectations are over X = t0 + eps with eps drawn from a chunked
``SampleStream``; two estimators called with the same stream, sample count
and chunk size see the same draws (common random numbers).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .actions import Action, ActionError, FiniteAction, as_point
from .bounds import positive_root
from .noise import (
    DEFAULT_CHUNK,
    LANE_BOOT,
    LANE_RESTART,
    NoiseError,
    NoiseSpec,
    SampleStream,
    map_chunks,
    second_moment,
)


class NumericInvariantError(RuntimeError):
    """A property that must hold exactly (up to round-off) was violated."""


@dataclass(frozen=True)
class EstimateWithCI:
    value: float
    stderr: float
    n_samples: int

    def as_dict(self):
        return {"value": self.value, "stderr": self.stderr, "n_samples": self.n_samples}


@dataclass(frozen=True)
class VectorEstimate:
    value: np.ndarray
    stderr: np.ndarray
    n_samples: int


@dataclass
class MaxMaxResult:
    estimate: np.ndarray
    objective_trace: list[float]
    iterations: int
    converged: bool
    final_assignments_stable: bool

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


@dataclass
class BiasMeasurement:
    """Outcome of ``measure_bias``.

    ``bias`` is the quotient distance from the template to the best empirical
    Frechet mean found; its stderr is the bootstrap root-mean-square quotient
    distance between re-estimated means and the point estimate.
    """

    bias: EstimateWithCI
    estimate: np.ndarray
    objective: float
    a_star: float
    mean_norm: float
    empirical_delta: float
    restart_objectives: list[float] = field(default_factory=list)
    converged: bool = True


# --------------------------------------------------------------------------
# moment accumulation


def _moments(values):
    """(count, mean, M2) of a chunk; works row-wise for 2-D input."""
    values = np.asarray(values, dtype=np.float64)
    mean = values.mean(axis=0)
    return len(values), mean, ((values - mean) ** 2).sum(axis=0)


def _merge(parts):
    # Chan et al. pairwise update, applied in chunk order for determinism
    n, mean, m2 = parts[0]
    for nb, mb, m2b in parts[1:]:
        tot = n + nb
        delta = mb - mean
        mean = mean + delta * (nb / tot)
        m2 = m2 + m2b + delta * delta * (n * nb / tot)
        n = tot
    return n, mean, m2


def _scalar(parts) -> EstimateWithCI:
    n, mean, m2 = _merge(parts)
    var = m2 / (n - 1) if n > 1 else 0.0
    return EstimateWithCI(float(mean), float(math.sqrt(var / n)), int(n))


def _vector(parts) -> VectorEstimate:
    n, mean, m2 = _merge(parts)
    var = m2 / (n - 1) if n > 1 else np.zeros_like(mean)
    return VectorEstimate(np.asarray(mean), np.sqrt(var / n), int(n))


def _observe(a, noise, t0, fn, n, stream, chunk_size, workers):
    if noise.dim != a.dim:
        raise ActionError(f"noise dimension {noise.dim} does not match the action ({a.dim})")
    return map_chunks(lambda eps: fn(t0 + eps), noise, stream, n, chunk_size, workers)


# --------------------------------------------------------------------------
# expectations


def mc_quotient_variance(a: Action, noise: NoiseSpec, t0, m, n: int, stream: SampleStream,
                         chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> EstimateWithCI:
    """F(m) = E d_Q([m], [X])^2."""
    if n < 2:
        raise ValueError("need at least two samples")
    t0, m = as_point(t0, a.dim), as_point(m, a.dim)

    def chunk(X):
        Z, _, _ = a.register_batch(X, m)
        return _moments(((Z - m) ** 2).sum(axis=1))

    return _scalar(_observe(a, noise, t0, chunk, n, stream, chunk_size, workers))


def mc_top_variance(noise: NoiseSpec, t0, m, n: int, stream: SampleStream,
                    chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> EstimateWithCI:
    """E |m - X|^2 in the top space."""
    t0, m = as_point(t0, noise.dim), as_point(m, noise.dim)
    parts = map_chunks(lambda eps: _moments(((t0 + eps - m) ** 2).sum(axis=1)),
                       noise, stream, n, chunk_size, workers)
    return _scalar(parts)


def mc_gradient_at(a: Action, noise: NoiseSpec, t0, m0, n: int, stream: SampleStream,
                   chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> VectorEstimate:
    """Gradient of F at a regular point: 2 (m0 - E[g(X, m0) . X])."""
    if not isinstance(a, FiniteAction):
        raise ActionError("the gradient formula is implemented for finite groups")
    t0, m0 = as_point(t0, a.dim), as_point(m0, a.dim)
    a.require_regular(m0)

    def chunk(X):
        Z, _, _ = a.register_batch(X, m0)
        return _moments(2.0 * (m0 - Z))

    return _vector(_observe(a, noise, t0, chunk, n, stream, chunk_size, workers))


def mc_gradient_inner(a: FiniteAction, noise: NoiseSpec, t0, n: int, stream: SampleStream,
                      chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> EstimateWithCI:
    """<grad F(t0), t0> with its own standard error (same draws as the gradient)."""
    t0 = as_point(t0, a.dim)
    a.require_regular(t0)

    def chunk(X):
        Z, _, _ = a.register_batch(X, t0)
        return _moments(2.0 * ((t0 - Z) @ t0))

    return _scalar(_observe(a, noise, t0, chunk, n, stream, chunk_size, workers))


def mc_fold_probability(a: Action, noise: NoiseSpec, t0, n: int, stream: SampleStream,
                        tol: float = 1e-12, chunk_size: int = DEFAULT_CHUNK,
                        workers: int = 1) -> EstimateWithCI:
    """P(sup_g <g.X, t0> > <X, t0> + tol |X| |t0|), the probability that an
    observation registers to a non-identity element."""
    t0 = as_point(t0, a.dim)
    if not np.any(t0):
        raise ValueError("the template must be non-zero")
    nt = float(np.linalg.norm(t0))

    def chunk(X):
        _, sup, _ = a.register_batch(X, t0)
        slack = tol * np.sqrt((X * X).sum(axis=1)) * nt
        return _moments((sup - X @ t0 > slack).astype(np.float64))

    return _scalar(_observe(a, noise, t0, chunk, n, stream, chunk_size, workers))


def estimate_a_star(a: Action, noise: NoiseSpec, t0, n: int, stream: SampleStream,
                    chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> EstimateWithCI:
    """E(sup_g <g.X, t0>) / |t0|^2, the minimiser of F along the ray through t0."""
    t0 = as_point(t0, a.dim)
    n2 = float(t0 @ t0)
    if n2 == 0.0:
        raise ValueError("the template must be non-zero")

    def chunk(X):
        _, sup, _ = a.register_batch(X, t0)
        return _moments(sup / n2)

    return _scalar(_observe(a, noise, t0, chunk, n, stream, chunk_size, workers))


def estimate_nu(a: Action, normalized_noise: NoiseSpec, direction, n: int, stream: SampleStream,
                chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> EstimateWithCI:
    """E(sup_g <g.eps, v>) for the unit vector v along ``direction``."""
    v = as_point(direction, a.dim)
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        raise ValueError("direction must be non-zero")
    if abs(second_moment(normalized_noise) - 1.0) > 1e-9:
        raise NoiseError("estimate_nu expects noise normalised to E|eps|^2 = 1")
    v = v / nv

    def chunk(E):
        _, sup, _ = a.register_batch(E, v)
        return _moments(sup)

    return _scalar(_observe(a, normalized_noise, np.zeros(a.dim), chunk, n, stream, chunk_size, workers))


# --------------------------------------------------------------------------
# empirical Frechet mean


def max_max(a: Action, observations, init, max_iter: int = 1000, tol: float = 1e-9,
            workers: int = 1) -> MaxMaxResult:
    """Alternate registration of every observation onto the current mean and
    re-averaging of the registered observations.

    ``objective_trace[k]`` is the empirical quotient variance at the k-th
    visited mean; it never increases.
    """
    Y = np.ascontiguousarray(observations, dtype=np.float64)
    if Y.ndim != 2 or len(Y) == 0:
        raise ValueError("max_max needs a non-empty (n, dim) array of observations")
    if Y.shape[1] != a.dim:
        raise ActionError(f"observations have dimension {Y.shape[1]}, action has {a.dim}")
    m = as_point(init, a.dim).copy()
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")

    trace: list[float] = []
    prev = None
    stable = converged = False
    it = 0
    while it < max_iter:
        it += 1
        Z, _, labels = a.register_batch(Y, m, workers=workers)
        obj = float(((Z - m) ** 2).sum(axis=1).mean())
        _check_monotone(trace, obj)
        trace.append(obj)
        m_new = Z.mean(axis=0)
        # a move at round-off level means the mean is a fixed point of the map
        still = bool(np.linalg.norm(m_new - m) <= 1e-14 * max(1.0, np.linalg.norm(m)))
        if labels is not None:
            stable = prev is not None and np.array_equal(labels, prev)
            prev = labels
        if stable or still:
            converged = True
            stable = True
            break
        m = m_new
        if len(trace) >= 2 and trace[-2] - trace[-1] <= tol * trace[-2]:
            converged = True
            break

    if not stable:
        Z, _, labels = a.register_batch(Y, m, workers=workers)
        obj = float(((Z - m) ** 2).sum(axis=1).mean())
        _check_monotone(trace, obj)
        trace.append(obj)
    return MaxMaxResult(m, trace, it, converged, stable)


def _check_monotone(trace, obj):
    if trace and obj > trace[-1] * (1.0 + 1e-12) + 1e-300:
        raise NumericInvariantError(
            f"max-max objective increased from {trace[-1]!r} to {obj!r}")


def empirical_objective(a: Action, observations, m) -> float:
    Z, _, _ = a.register_batch(observations, m)
    return float(((Z - m) ** 2).sum(axis=1).mean())


def empirical_lower_bound(a: Action, observations, t0) -> float:
    """delta_n: no point within this quotient distance of t0 minimises the
    empirical quotient variance of ``observations``."""
    Y = np.ascontiguousarray(observations, dtype=np.float64)
    if Y.ndim != 2 or len(Y) == 0:
        raise ValueError("need at least one observation")
    t0 = as_point(t0, a.dim)
    n2 = float(t0 @ t0)
    if n2 == 0.0:
        raise ValueError("the template must be non-zero")
    _, sup, _ = a.register_batch(Y, t0)
    a_n = float(sup.mean()) / n2
    b = math.sqrt(n2) + float(np.sqrt((Y * Y).sum(axis=1)).mean())
    return positive_root(b, n2 * (a_n - 1.0) ** 2)


def measure_bias(a: Action, noise: NoiseSpec, t0, n_samples: int, restarts: int = 3,
                 stream: SampleStream = SampleStream(0), n_boot: int = 200,
                 max_iter: int = 1000, tol: float = 1e-9,
                 chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> BiasMeasurement:
    """Consistency bias of the empirical Frechet mean of ``n_samples`` draws.

    max-max is started from t0, from a*.t0 (a* estimated on the same draws)
    and from ``restarts - 2`` random observations; the lowest final objective
    wins. Rotation actions are first reduced to the half-line of norms.
    """
    t0_full = as_point(t0, a.dim)
    parts = _observe(a, noise, t0_full, lambda X: a.reduce(X, t0_full)[1], n_samples,
                     stream, chunk_size, workers)
    Y = np.ascontiguousarray(np.concatenate(parts))
    ra, _, t0_r = a.reduce(t0_full[None, :], t0_full)
    n2 = float(t0_r @ t0_r)

    _, sup, _ = ra.register_batch(Y, t0_r, workers=workers)
    mean_norm = float(np.sqrt((Y * Y).sum(axis=1)).mean())
    a_n = float(sup.mean()) / n2 if n2 > 0 else float("nan")
    delta_n = positive_root(math.sqrt(n2) + mean_norm, n2 * (a_n - 1.0) ** 2) if n2 > 0 else 0.0

    inits = [t0_r]
    if restarts >= 2 and n2 > 0:
        inits.append(a_n * t0_r)
    extra = max(0, restarts - len(inits))
    if extra:
        rng = stream.with_lane(LANE_RESTART).generator()
        inits += [Y[i] for i in rng.choice(len(Y), size=min(extra, len(Y)), replace=False)]

    runs = [max_max(ra, Y, init, max_iter, tol, workers) for init in inits]
    best = min(runs, key=lambda r: r.objective)  # first wins on ties
    bias = ra.quotient_distance(t0_r, best.estimate)

    def boot(b):
        rng = stream.with_lane(LANE_BOOT).chunk(b).generator()
        idx = rng.integers(0, len(Y), size=len(Y))
        r = max_max(ra, Y[idx], best.estimate, max_iter, tol)
        return ra.quotient_distance(r.estimate, best.estimate) ** 2

    if n_boot > 0:
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                sq = list(pool.map(boot, range(n_boot)))
        else:
            sq = [boot(b) for b in range(n_boot)]
        stderr = math.sqrt(math.fsum(sq) / n_boot)
    else:
        stderr = float("nan")

    estimate = best.estimate
    if ra is not a:
        direction = t0_full / math.sqrt(n2) if n2 > 0 else np.eye(a.dim)[0]
        estimate = float(np.linalg.norm(best.estimate)) * direction
    return BiasMeasurement(
        bias=EstimateWithCI(float(bias), stderr, len(Y)),
        estimate=estimate,
        objective=best.objective,
        a_star=a_n,
        mean_norm=mean_norm,
        empirical_delta=delta_n,
        restart_objectives=[r.objective for r in runs],
        converged=all(r.converged for r in runs),
    )
