"""Random coefficient fields a(x, xi) on the unit square.

Three families are provided, each written as ``link(a0 + B(x) @ xi)`` with a
per-family basis matrix ``B``:

* :func:`kl_example1` - truncated cosine KL expansion, uniform noise;
* :func:`kl_example2` - log-normal field from a separable exponential
  covariance on [-1/2, 1/2]^2, truncated Gaussian noise;
* :func:`example3` - piecewise constant on the two horizontal halves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

SQRT3 = math.sqrt(3.0)


class FieldError(ValueError):
    pass


@dataclass(frozen=True)
class EigenPair:
    """One KL term: eigenvalue and the mode indices that identify its eigenfunction.

    ``modes`` is ``(j, k)`` for the cosine family and the pair of 1D mode
    indices for the separable family, where ``omegas`` carries the matching
    transcendental roots.
    """
    value: float
    modes: tuple
    omegas: tuple = ()


# -- noise distributions ------------------------------------------------------

@dataclass(frozen=True)
class UniformNoise:
    low: tuple
    high: tuple

    @property
    def dim(self) -> int:
        return len(self.low)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(np.asarray(self.low), np.asarray(self.high))

    def in_support(self, xi) -> bool:
        xi = np.asarray(xi)
        return bool(np.all((xi >= np.asarray(self.low)) & (xi <= np.asarray(self.high))))


@dataclass(frozen=True)
class TruncatedNormalNoise:
    mu: float
    sigma: float
    low: float
    high: float
    size: int
    max_attempts: int = 1000

    @property
    def dim(self) -> int:
        return self.size

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Rejection against the untruncated normal, redrawing only rejected coordinates."""
        out = self.mu + self.sigma * rng.standard_normal(self.size)
        bad = (out < self.low) | (out > self.high)
        attempts = 1
        while bad.any():
            if attempts >= self.max_attempts:
                raise FieldError("truncated normal rejection sampling did not terminate")
            out[bad] = self.mu + self.sigma * rng.standard_normal(int(bad.sum()))
            bad = (out < self.low) | (out > self.high)
            attempts += 1
        return out

    def in_support(self, xi) -> bool:
        xi = np.asarray(xi)
        return bool(np.all((xi >= self.low) & (xi <= self.high)))


# -- field specification ------------------------------------------------------

class FieldSpec:
    """A random-field family with its truncated expansion and noise law.

    Subclasses provide ``basis(x)`` (shape ``(n, m)``) and ``link``.
    ``t`` (Hoelder exponent) and ``s`` (regularity guess) are user inputs
    that only feed the mesh-schedule exponent ``p = min(2s, t, 1)``.
    """

    family = "abstract"

    def __init__(self, a0: float, m: int, eigenpairs: Sequence[EigenPair], noise,
                 t: float = 1.0, s: float = 1.0, params: Optional[dict] = None):
        if m < 1:
            raise FieldError("truncation count m must be >= 1")
        self.a0 = float(a0)
        self.m = int(m)
        self.eigenpairs = tuple(eigenpairs)
        self.noise = noise
        self.t = float(t)
        self.s = float(s)
        self.params = dict(params or {})
        self._basis_cache: dict = {}

    def __repr__(self):
        return f"{type(self).__name__}(family={self.family!r}, a0={self.a0}, m={self.m}, params={self.params})"

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([e.value for e in self.eigenpairs])

    @property
    def p(self) -> float:
        return min(2.0 * self.s, self.t, 1.0)

    def basis(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def link(self, z: np.ndarray) -> np.ndarray:
        return z

    def basis_on(self, mesh) -> np.ndarray:
        """Basis evaluated at the triangle centroids of ``mesh`` (cached)."""
        key = id(mesh)
        hit = self._basis_cache.get(key)
        if hit is None or hit[0] is not mesh:
            hit = (mesh, self.basis(mesh.centroids))
            self._basis_cache[key] = hit
        return hit[1]

    def evaluate(self, x, xi) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.link(self.a0 + self.basis(x) @ np.asarray(xi, dtype=float))

    def sample(self, rng: np.random.Generator) -> "FieldRealization":
        return FieldRealization(self, self.noise.sample(rng))

    @property
    def a_min(self) -> float:
        return self.bounds[0]

    @property
    def a_max(self) -> float:
        return self.bounds[1]

    @cached_property
    def bounds(self) -> tuple:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class FieldRealization:
    """One coefficient function x -> a(x, xi)."""
    spec: FieldSpec
    xi: np.ndarray = field(repr=False)

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float)
        if xi.shape != (self.spec.noise.dim,):
            raise FieldError(f"expected {self.spec.noise.dim} noise coordinates, got {xi.shape}")
        if not self.spec.noise.in_support(xi):
            raise FieldError("noise vector outside the distribution's support")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)

    def __call__(self, x) -> np.ndarray:
        return self.spec.evaluate(x, self.xi)


def sample_realization(spec: FieldSpec, rng: np.random.Generator) -> FieldRealization:
    return spec.sample(rng)


def certify_bounds(spec: FieldSpec, n_samples: int = 10_000, grid: int = 41,
                   rng: Optional[np.random.Generator] = None, batch: int = 500) -> tuple:
    """Empirical (min, max) of a(x, xi) over random draws and a uniform grid on [0, 1]^2."""
    rng = np.random.default_rng(0) if rng is None else rng
    g = np.linspace(0.0, 1.0, grid)
    X, Y = np.meshgrid(g, g)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    B = spec.basis(pts)
    lo, hi = np.inf, -np.inf
    done = 0
    while done < n_samples:
        k = min(batch, n_samples - done)
        xis = np.stack([spec.noise.sample(rng) for _ in range(k)], axis=1)
        vals = spec.link(spec.a0 + B @ xis)
        lo, hi = min(lo, float(vals.min())), max(hi, float(vals.max()))
        done += k
    return lo, hi


# -- example 1: cosine expansion ---------------------------------------------

class CosineKLField(FieldSpec):
    family = "example1"

    def basis(self, x):
        x = np.atleast_2d(x)
        j = np.array([e.modes[0] for e in self.eigenpairs])
        k = np.array([e.modes[1] for e in self.eigenpairs])
        sq = np.sqrt(self.eigenvalues)
        return sq * 2.0 * np.cos(np.pi * np.outer(x[:, 1], j)) * np.cos(np.pi * np.outer(x[:, 0], k))

    @cached_property
    def bounds(self):
        # |phi| <= 2, |xi| <= sqrt(3)
        spread = float(np.sum(np.sqrt(self.eigenvalues)) * 2.0 * SQRT3)
        return self.a0 - spread, self.a0 + spread


def kl_example1(m: int = 20, l: float = 0.5, a0: float = 5.0, t: float = 1.0, s: float = 1.0) -> CosineKLField:
    """Eigenvalues 1/4 exp(-pi (j^2 + k^2) l^2), eigenfunctions 2 cos(j pi x2) cos(k pi x1)."""
    if l <= 0:
        raise FieldError("correlation length must be positive")
    if m < 1:
        raise FieldError("truncation count m must be >= 1")
    # every (j, k) with j^2 + k^2 <= r2 precedes anything outside that disc
    r = int(math.ceil(math.sqrt(m))) + 1
    cand = [(0.25 * math.exp(-math.pi * (j * j + k * k) * l * l), j, k)
            for j in range(1, r + 1) for k in range(1, r + 1)]
    cand.sort(key=lambda c: (-c[0], c[1], c[2]))
    pairs = [EigenPair(v, (j, k)) for v, j, k in cand[:m]]
    field = CosineKLField(a0, m, pairs, UniformNoise((-SQRT3,) * m, (SQRT3,) * m),
                          t=t, s=s, params={"l": l})
    if field.a_min <= 0:
        raise FieldError(f"worst-case coefficient {field.a_min:.4g} is not positive")
    return field


# -- example 2: separable exponential covariance, log-normal -----------------

def _cos_root_eq(w, l):
    # l^{-1} - w tan(w/2) = 0, multiplied by cos(w/2) / w
    return math.cos(0.5 * w) / (l * w) - math.sin(0.5 * w)


def _sin_root_eq(w, l):
    # l^{-1} tan(w/2) + w = 0, multiplied by cos(w/2) / w
    return math.sin(0.5 * w) / (l * w) + math.cos(0.5 * w)


def root_residuals(omegas: np.ndarray, l: float) -> np.ndarray:
    """Residuals of an interleaved root sequence under its defining equations."""
    out = np.empty(len(omegas))
    for i, w in enumerate(omegas):
        out[i] = _cos_root_eq(w, l) if i % 2 == 0 else _sin_root_eq(w, l)
    return out


def separable_exp_roots(l: float, count: int) -> np.ndarray:
    """First ``count`` roots of each transcendental family, interleaved.

    Entry ``2j`` is the (j+1)-th positive root of ``1/l - w tan(w/2)`` (cosine
    modes), entry ``2j + 1`` the (j+1)-th positive root of
    ``tan(w/2)/l + w`` (sine modes).  Roots are bracketed between the
    singularities of ``tan(w/2)``.
    """
    if l <= 0:
        raise FieldError("correlation length must be positive")
    out = np.empty(2 * count)
    eps = 1e-12
    for j in range(1, count + 1):
        lo, hi = 2 * (j - 1) * math.pi, (2 * j - 1) * math.pi
        try:
            out[2 * j - 2] = brentq(_cos_root_eq, lo + eps, hi, args=(l,), xtol=1e-15, rtol=8.9e-16)
            out[2 * j - 1] = brentq(_sin_root_eq, hi, hi + math.pi, args=(l,), xtol=1e-15, rtol=8.9e-16)
        except ValueError as exc:
            raise FieldError(f"root bracketing failed for j={j}: {exc}") from None
    return out


def eigenvalues_1d(omegas: np.ndarray, l: float) -> np.ndarray:
    return 2.0 / l / (omegas**2 + 1.0 / l**2)


def eigenfunctions_1d(omegas: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Normalized eigenfunctions on [-1/2, 1/2]; column ``i`` uses ``omegas[i]``.

    Even positions (odd mode numbers) are cosines, odd positions are sines.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((x.size, len(omegas)))
    cos_idx = np.arange(0, len(omegas), 2)
    sin_idx = np.arange(1, len(omegas), 2)
    wc, ws = omegas[cos_idx], omegas[sin_idx]
    out[:, cos_idx] = np.cos(np.outer(x, wc)) / np.sqrt(0.5 + np.sin(wc) / (2 * wc))
    out[:, sin_idx] = np.sin(np.outer(x, ws)) / np.sqrt(0.5 - np.sin(ws) / (2 * ws))
    return out


class LogNormalKLField(FieldSpec):
    family = "example2"

    def __init__(self, *args, omegas=None, **kw):
        super().__init__(*args, **kw)
        self.omegas = omegas  # (omega dim 1, omega dim 2) interleaved root arrays

    def link(self, z):
        return np.exp(z)

    def basis(self, x):
        x = np.atleast_2d(x)
        w1, w2 = self.omegas
        i = np.array([e.modes[0] for e in self.eigenpairs]) - 1
        k = np.array([e.modes[1] for e in self.eigenpairs]) - 1
        used1, used2 = i.max() + 1, k.max() + 1
        f1 = eigenfunctions_1d(w1[:used1], x[:, 0] - 0.5)[:, i]
        f2 = eigenfunctions_1d(w2[:used2], x[:, 1] - 0.5)[:, k]
        return np.sqrt(self.eigenvalues) * f1 * f2

    @cached_property
    def bounds(self):
        return certify_bounds(self)


def kl_example2(m: int = 100, l1: float = 1.0, l2: float = 1.0, a0: float = 1.0,
                sigma: float = 0.1, cutoff: float = 100.0, t: float = 0.5, s: float = 1.0) -> LogNormalKLField:
    """Log-normal field with tensor-product eigenpairs of the 1D exponential kernel."""
    if m < 1:
        raise FieldError("truncation count m must be >= 1")
    n1d = 2 * ((m + 1) // 2)  # per dimension; products with a 1D index > m never reach the top m
    w1 = separable_exp_roots(l1, n1d // 2)
    w2 = w1 if l2 == l1 else separable_exp_roots(l2, n1d // 2)
    lam1, lam2 = eigenvalues_1d(w1, l1), eigenvalues_1d(w2, l2)
    prod = np.outer(lam1, lam2)
    ii, kk = np.meshgrid(np.arange(n1d), np.arange(n1d), indexing="ij")
    order = np.lexsort((kk.ravel(), ii.ravel(), -prod.ravel()))[:m]
    pairs = [EigenPair(float(prod.ravel()[o]), (int(ii.ravel()[o]) + 1, int(kk.ravel()[o]) + 1),
                       (float(w1[ii.ravel()[o]]), float(w2[kk.ravel()[o]])))
             for o in order]
    noise = TruncatedNormalNoise(0.0, sigma, -cutoff, cutoff, m)
    return LogNormalKLField(a0, m, pairs, noise, t=t, s=s,
                            params={"l1": l1, "l2": l2, "sigma": sigma}, omegas=(w1, w2))


# -- example 3: piecewise constant -------------------------------------------

class PiecewiseConstantField(FieldSpec):
    family = "example3"

    def basis(self, x):
        x = np.atleast_2d(x)
        upper = x[:, 1] > 0.5
        return np.column_stack([upper, ~upper]).astype(float)

    @cached_property
    def bounds(self):
        return float(min(self.noise.low)), float(max(self.noise.high))


def example3(bounds=((3.0, 4.0), (1.0, 2.0)), t: float = 1.0, s: float = 1.0) -> PiecewiseConstantField:
    """xi_1 on the upper half (0,1)x(1/2,1), xi_2 on the lower half."""
    (l1, h1), (l2, h2) = bounds
    if min(l1, l2) <= 0:
        raise FieldError("subdomain coefficients must be positive")
    if h1 < l1 or h2 < l2:
        raise FieldError("interval upper bound below lower bound")
    noise = UniformNoise((float(l1), float(l2)), (float(h1), float(h2)))
    return PiecewiseConstantField(0.0, 2, [EigenPair(1.0, (1,)), EigenPair(1.0, (2,))], noise,
                                  t=t, s=s, params={"bounds": ((l1, h1), (l2, h2))})


def example3_modified(t: float = 1.0, s: float = 1.0) -> PiecewiseConstantField:
    return example3(((5.0, 5.1), (1.0, 1.1)), t=t, s=s)
