"""Isometric group actions on finite-dimensional signal spaces.

Three actions are available:

``TorusTranslation(shape)``
    cyclic shifts of a signal sampled on a periodic D-dimensional grid,
    ``(tau . x)(sigma) = x(sigma + tau)``; points are stored flat, row-major.
``SwapR2()``
    the two-element group exchanging the two coordinates of R^2.
``FullRotation(n)``
    rotations of R^n. Elements are stored in alignment form (a source and a
    target unit vector) and applied as a product of two reflections, so no
    rotation matrix is ever built.

Registration picks, among all minimising elements, the one with the smallest
canonical index (lexicographic shift offsets, ``b = 0`` before ``b = 1``).
Values within ``TIE_RTOL * |x| * |m|`` of the best inner product count as ties.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels

TIE_RTOL = 1e-12
REGULARITY_RTOL = 1e-9
# Candidate window for the FFT path; FFT round-off is far below this.
_FFT_RTOL = 1e-8


class ActionError(ValueError):
    """Dimension mismatch or a group element foreign to the action."""


class SingularPointError(ActionError):
    """A regular point (trivial isotropy) was required."""


def as_point(x, dim: int | None = None) -> np.ndarray:
    """Validate ``x`` as a finite 1-D float vector, optionally of size ``dim``."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ActionError(f"a point must be one-dimensional, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ActionError(f"expected a point of dimension {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ActionError("point has non-finite coordinates")
    return arr


# --------------------------------------------------------------------------
# group elements


@dataclass(frozen=True)
class TorusShift:
    offsets: tuple[int, ...]


@dataclass(frozen=True)
class SwapBit:
    b: int


@dataclass(frozen=True, eq=False)
class RotationAlign:
    """Minimal rotation in span{source, target} taking source to target."""

    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        for name in ("source", "target"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            nv = np.linalg.norm(v)
            if v.ndim != 1 or not np.isfinite(nv) or nv == 0.0:
                raise ActionError(f"RotationAlign.{name} must be a non-zero finite vector")
            object.__setattr__(self, name, v / nv)
        if self.source.shape != self.target.shape:
            raise ActionError("RotationAlign source and target differ in dimension")


@dataclass(frozen=True, eq=False)
class RotationProduct:
    """Composition of alignments; the last factor is applied first."""

    factors: tuple[RotationAlign, ...] = ()


def _orthogonal_unit(s: np.ndarray) -> np.ndarray:
    k = int(np.argmin(np.abs(s)))
    u = -s[k] * s
    u[k] += 1.0
    return u / np.linalg.norm(u)


def _apply_align(g: RotationAlign, x: np.ndarray) -> np.ndarray:
    s, t = g.source, g.target
    if np.array_equal(s, t):
        return np.array(x, dtype=np.float64, copy=True)
    w = s + t
    ww = float(w @ w)
    if ww <= 1e-24:
        # antipodal: half-turn in a canonical plane containing s
        u = _orthogonal_unit(s)
        return x - 2.0 * np.multiply.outer(x @ s, s) - 2.0 * np.multiply.outer(x @ u, u)
    y = x - 2.0 * np.multiply.outer(x @ s, s)
    return y - (2.0 / ww) * np.multiply.outer(y @ w, w)


# --------------------------------------------------------------------------
# actions


class Action:
    """Common interface. ``x`` arguments of ``act`` may be a point or a stack."""

    dim: int
    is_finite = False

    def identity(self):
        raise NotImplementedError

    def act(self, g, x):
        raise NotImplementedError

    def compose(self, g, h):
        """The element ``g h`` (apply ``h`` first)."""
        raise NotImplementedError

    def inverse(self, g):
        raise NotImplementedError

    def register(self, x, m):
        raise NotImplementedError

    def sup_inner(self, x, m) -> float:
        raise NotImplementedError

    def register_batch(self, X, m, workers: int = 1):
        """Register every row of ``X`` onto ``m``.

        Returns ``(Z, sup, labels)``: the moved rows, the attained inner
        products, and element indices (``None`` for infinite groups).
        """
        raise NotImplementedError

    def fixed_point_projection(self, x) -> np.ndarray:
        raise NotImplementedError

    def reduce(self, X, t0):
        """An isometric reduction of the quotient used by large Monte Carlo runs.

        Returns ``(action, X', t0')`` with the same quotient distances between
        all the points involved. The default is no reduction.
        """
        return self, X, t0

    # shared helpers
    def _check(self, x):
        return as_point(x, self.dim)

    def quotient_distance(self, x, m) -> float:
        return self.register(x, m)[1]

    def dist_to_fixed(self, x) -> float:
        x = self._check(x)
        return float(np.linalg.norm(x - self.fixed_point_projection(x)))


class FiniteAction(Action):
    """A finite group acting by coordinate permutations."""

    is_finite = True

    @cached_property
    def perm(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def order(self) -> int:
        return self.perm.shape[0]

    def element(self, index: int):
        raise NotImplementedError

    def index(self, g) -> int:
        raise NotImplementedError

    def elements(self):
        return [self.element(i) for i in range(self.order)]

    def identity(self):
        return self.element(0)

    def act(self, g, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ActionError(f"expected dimension {self.dim}, got {x.shape[-1]}")
        return x[..., self.perm[self.index(g)]]

    def _values(self, x, m):
        return (x[self.perm] * m).sum(axis=1)

    def _pick(self, values, x, m, candidates=None) -> int:
        thr = values.max() - TIE_RTOL * math.sqrt(float(x @ x) * float(m @ m))
        first = int(np.argmax(values >= thr))
        return first if candidates is None else int(candidates[first])

    def register(self, x, m):
        x, m = self._check(x), self._check(m)
        i = self._pick(self._values(x, m), x, m)
        d = float(np.linalg.norm(m - x[self.perm[i]]))
        return self.element(i), d

    def sup_inner(self, x, m) -> float:
        x, m = self._check(x), self._check(m)
        return float(self._values(x, m).max())

    def register_batch(self, X, m, workers: int = 1):
        X = np.ascontiguousarray(X, dtype=np.float64)
        m = self._check(m)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ActionError(f"expected an (n, {self.dim}) array, got {X.shape}")
        if workers > 1 and len(X) >= 2 * workers:
            # rows are independent, so the split does not change the result
            parts = np.array_split(X, workers)
            with ThreadPoolExecutor(workers) as pool:
                res = list(pool.map(lambda part: self._register_rows(part, m), parts))
            return tuple(np.concatenate(cols) for cols in zip(*res))
        return self._register_rows(X, m)

    def _register_rows(self, X, m):
        idx, sup = kernels.finite_sup_inner(X, m, self.perm, TIE_RTOL)
        return kernels.finite_gather(X, self.perm, idx), sup, idx

    def is_regular(self, t0) -> bool:
        t0 = self._check(t0)
        if self.order == 1:
            return True
        gaps = np.linalg.norm(t0[self.perm[1:]] - t0, axis=1)
        return bool(gaps.min() >= REGULARITY_RTOL * np.linalg.norm(t0)) and bool(np.any(t0))

    def require_regular(self, t0):
        if not self.is_regular(t0):
            raise SingularPointError("the point has a non-trivial isotropy group")

    def cone_contains(self, t0, x, tol: float = 1e-12) -> bool:
        """Whether ``x`` lies in Cone(t0), the points at least as close to t0
        as to any other point of its orbit. ``tol`` is relative to |t0| |x|."""
        t0, x = self._check(t0), self._check(x)
        self.require_regular(t0)
        vals = t0[self.perm] @ x
        # <g t0, x> for every g; identity first
        slack = tol * float(np.linalg.norm(t0) * np.linalg.norm(x))
        return bool(np.all(vals[0] >= vals - slack))

    def cone_margin(self, t0, x) -> float:
        """Signed distance from ``x`` to the boundary of Cone(t0); negative outside."""
        t0, x = self._check(t0), self._check(x)
        self.require_regular(t0)
        others = t0[self.perm[1:]]
        normals = t0 - others
        return float(np.min((normals @ x) / np.linalg.norm(normals, axis=1)))

    def cone_radius(self, t0) -> float:
        """Distance from ``t0`` to the boundary of its own cone."""
        t0 = self._check(t0)
        self.require_regular(t0)
        return float(np.linalg.norm(t0[self.perm[1:]] - t0, axis=1).min() / 2.0)

    def compose(self, g, h):
        # (g h) . x = g . (h . x): x[perm_h][perm_g] = x[perm_h[perm_g]]
        p = self.perm[self.index(h)][self.perm[self.index(g)]]
        return self.element(self._lookup(p))

    def inverse(self, g):
        p = np.argsort(self.perm[self.index(g)])
        return self.element(self._lookup(p))

    @cached_property
    def _perm_lookup(self):
        return {row.tobytes(): i for i, row in enumerate(self.perm)}

    def _lookup(self, p) -> int:
        return self._perm_lookup[np.asarray(p, dtype=np.intp).tobytes()]


@dataclass(frozen=True, eq=False)
class TorusTranslation(FiniteAction):
    shape: tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if not shape or any(s < 1 for s in shape):
            raise ActionError(f"torus shape must be a non-empty list of positive integers, got {self.shape}")
        object.__setattr__(self, "shape", shape)

    def __eq__(self, other):
        return isinstance(other, TorusTranslation) and other.shape == self.shape

    def __hash__(self):
        return hash(("torus", self.shape))

    def __repr__(self):
        return f"TorusTranslation(shape={list(self.shape)})"

    @property
    def dim(self) -> int:
        return math.prod(self.shape)

    @cached_property
    def perm(self) -> np.ndarray:
        grid = np.indices(self.shape).reshape(len(self.shape), -1)
        table = np.empty((self.dim, self.dim), dtype=np.intp)
        for g in range(self.dim):
            offs = np.unravel_index(g, self.shape)
            moved = tuple((grid[a] + offs[a]) % self.shape[a] for a in range(len(self.shape)))
            table[g] = np.ravel_multi_index(moved, self.shape)
        return table

    def element(self, index: int) -> TorusShift:
        return TorusShift(tuple(int(o) for o in np.unravel_index(int(index), self.shape)))

    def index(self, g) -> int:
        if not isinstance(g, TorusShift) or len(g.offsets) != len(self.shape):
            raise ActionError(f"{g!r} is not a shift of a torus of shape {list(self.shape)}")
        return int(np.ravel_multi_index(tuple(o % s for o, s in zip(g.offsets, self.shape)), self.shape))

    def register_fft(self, x, m):
        """Same result as ``register``, searching the shifts by circular
        cross-correlation and re-scoring only the near-optimal ones exactly."""
        x, m = self._check(x), self._check(m)
        X = np.fft.rfftn(x.reshape(self.shape))
        M = np.fft.rfftn(m.reshape(self.shape))
        corr = np.fft.irfftn(np.conj(M) * X, s=self.shape, axes=tuple(range(len(self.shape)))).ravel()
        window = _FFT_RTOL * math.sqrt(float(x @ x) * float(m @ m))
        cand = np.flatnonzero(corr >= corr.max() - window)
        exact = (x[self.perm[cand]] * m).sum(axis=1)
        i = self._pick(exact, x, m, candidates=cand)
        d = float(np.linalg.norm(m - x[self.perm[i]]))
        return self.element(i), d

    def fixed_point_projection(self, x) -> np.ndarray:
        x = self._check(x)
        return np.full(self.dim, x.mean())


@dataclass(frozen=True, eq=False)
class SwapR2(FiniteAction):
    def __eq__(self, other):
        return isinstance(other, SwapR2)

    def __hash__(self):
        return hash("swap")

    def __repr__(self):
        return "SwapR2()"

    @property
    def dim(self) -> int:
        return 2

    @cached_property
    def perm(self) -> np.ndarray:
        return np.array([[0, 1], [1, 0]], dtype=np.intp)

    def element(self, index: int) -> SwapBit:
        if index not in (0, 1):
            raise ActionError(f"no swap element with index {index}")
        return SwapBit(int(index))

    def index(self, g) -> int:
        if not isinstance(g, SwapBit) or g.b not in (0, 1):
            raise ActionError(f"{g!r} is not an element of the swap group")
        return g.b

    def fixed_point_projection(self, x) -> np.ndarray:
        x = self._check(x)
        return np.full(2, 0.5 * (x[0] + x[1]))


@dataclass(frozen=True, eq=False)
class FullRotation(Action):
    n: int

    def __post_init__(self):
        if int(self.n) < 2:
            raise ActionError(f"rotations need n >= 2, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    def __eq__(self, other):
        return isinstance(other, FullRotation) and other.n == self.n

    def __hash__(self):
        return hash(("rotation", self.n))

    def __repr__(self):
        return f"FullRotation(n={self.n})"

    @property
    def dim(self) -> int:
        return self.n

    def identity(self):
        return RotationProduct(())

    def _factors(self, g):
        if isinstance(g, RotationAlign):
            fs = (g,)
        elif isinstance(g, RotationProduct):
            fs = g.factors
        else:
            raise ActionError(f"{g!r} is not a rotation element")
        for f in fs:
            if f.source.shape[0] != self.n:
                raise ActionError(f"rotation element of dimension {f.source.shape[0]} used on R^{self.n}")
        return fs

    def act(self, g, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n:
            raise ActionError(f"expected dimension {self.n}, got {x.shape[-1]}")
        out = np.array(x, copy=True)
        for f in reversed(self._factors(g)):
            out = _apply_align(f, out)
        return out

    def compose(self, g, h):
        return RotationProduct(self._factors(g) + self._factors(h))

    def inverse(self, g):
        return RotationProduct(tuple(RotationAlign(f.target, f.source) for f in reversed(self._factors(g))))

    def register(self, x, m):
        x, m = self._check(x), self._check(m)
        nx, nm = np.linalg.norm(x), np.linalg.norm(m)
        if nx == 0.0 or nm == 0.0:
            return self.identity(), float(np.linalg.norm(m - x))
        return RotationAlign(x, m), float(abs(nm - nx))

    def sup_inner(self, x, m) -> float:
        x, m = self._check(x), self._check(m)
        return float(np.linalg.norm(x) * np.linalg.norm(m))

    def register_batch(self, X, m, workers: int = 1):
        X = np.asarray(X, dtype=np.float64)
        m = self._check(m)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise ActionError(f"expected an (n, {self.n}) array, got {X.shape}")
        norms = np.sqrt((X * X).sum(axis=1))
        nm = float(np.linalg.norm(m))
        if nm == 0.0:
            return X.copy(), np.zeros(len(X)), None
        return np.multiply.outer(norms, m / nm), norms * nm, None

    def fixed_point_projection(self, x) -> np.ndarray:
        self._check(x)
        return np.zeros(self.n)

    def reduce(self, X, t0):
        # R^n / SO(n) is the half-line of norms, as is R^2 / SO(2).
        X = np.asarray(X, dtype=np.float64)
        red = np.zeros((len(X), 2))
        red[:, 0] = np.sqrt((X * X).sum(axis=1))
        return FullRotation(2), red, np.array([np.linalg.norm(t0), 0.0])


# --------------------------------------------------------------------------
# functional surface


def act(a: Action, g, x):
    """Apply ``g`` to the point ``x``."""
    if np.asarray(x).ndim == 1:
        a._check(x)
    return a.act(g, x)


def register(a: Action, x, m):
    """``(g, d)`` with ``g . x`` as close as possible to ``m`` and ``d`` that distance."""
    return a.register(x, m)


def register_fft(a: Action, x, m):
    if not isinstance(a, TorusTranslation):
        raise ActionError(f"FFT registration needs a torus translation action, got {a!r}")
    return a.register_fft(x, m)


def quotient_distance(a: Action, x, m) -> float:
    return a.quotient_distance(x, m)


def sup_inner(a: Action, x, m) -> float:
    """max over g of <g . x, m>."""
    return a.sup_inner(x, m)


def cone_contains(a: Action, t0, x, tol: float = 1e-12) -> bool:
    if not a.is_finite:
        raise ActionError("Cone(t0) membership is only defined for finite groups")
    return a.cone_contains(t0, x, tol)


def fixed_point_projection(a: Action, x) -> np.ndarray:
    """Orthogonal projection onto the points fixed by the whole group."""
    return a.fixed_point_projection(x)


def dist_to_fixed(a: Action, x) -> float:
    return a.dist_to_fixed(x)


def is_fixed(a: Action, x, rtol: float = REGULARITY_RTOL) -> bool:
    x = as_point(x, a.dim)
    return a.dist_to_fixed(x) <= rtol * max(1.0, float(np.linalg.norm(x)))
