"""Periodic grid functions, finite differences, mollification and local norms.

Interfaces live on a truncated periodic domain [-L, L) sampled at
``x_i = -L + i*dx`` with ``dx = 2L/n``.  A grid function stands for the
periodic extension of its samples to the whole line, and every norm below is
the norm of that extension.
"""

from __future__ import annotations

import csv
import functools
import math
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, ndimage, optimize

from .errors import ResolutionError

__all__ = [
    "GridFunction",
    "derivative",
    "half_shift",
    "sample_profile",
    "Mollifier",
    "build_mollifier",
    "mollify",
    "cutoff_h0",
    "TildeL2",
    "TildeHk",
    "DdotC",
    "TildeHkGamma",
    "CkGammaHolder",
    "CkGammaGamma",
    "CkGamma",
    "TildeL2Mu",
    "TildeL2X0",
    "local_norm",
    "maximal_function",
    "tilde_l2",
    "ddot_c",
    "holder_seminorm",
]

MIN_SAMPLES = 16


@dataclass(frozen=True)
class GridFunction:
    """Uniform samples of a 2L-periodic real function.

    Attributes:
        L: half period; samples cover [-L, L).
        samples: values at ``x_i = -L + i*dx``.
    """

    L: float
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.samples, dtype=float)
        if values.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if values.size < MIN_SAMPLES:
            raise ValueError(f"need at least {MIN_SAMPLES} samples, got {values.size}")
        if not self.L > 0:
            raise ValueError("half period L must be positive")
        if not np.all(np.isfinite(values)):
            raise ValueError("samples contain NaN or Inf")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "samples", values)

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def period(self) -> float:
        return 2.0 * self.L

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def x(self) -> np.ndarray:
        return -self.L + self.dx * np.arange(self.n)

    def with_samples(self, samples) -> GridFunction:
        return GridFunction(self.L, samples)

    def __call__(self, x):
        """Periodic 4-point (cubic Lagrange) interpolation at arbitrary ``x``."""
        return interpolate(self.samples, self.L, x)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "f"])
            for xi, fi in zip(self.x, self.samples):
                writer.writerow([f"{xi:.17g}", f"{fi:.17g}"])

    @classmethod
    def from_csv(cls, path) -> GridFunction:
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        x, f = data[:, 0], data[:, 1]
        n = x.size
        if n < 2:
            raise ValueError(f"{path}: need at least two rows")
        dx = (x[-1] - x[0]) / (n - 1)
        L = n * dx / 2.0
        if not np.allclose(x, -L + dx * np.arange(n), rtol=0, atol=1e-9 * max(1.0, L)):
            raise ValueError(f"{path}: x column is not the uniform grid -L + i*dx")
        return cls(L, f)


def interpolate(samples: np.ndarray, L: float, x):
    """Cubic Lagrange interpolation of periodic samples on [-L, L)."""
    n = samples.size
    dx = 2.0 * L / n
    # reduce before scaling so that x and x + 2L land on the same position
    s = np.mod(np.asarray(x, dtype=float) + L, 2.0 * L) / dx
    i0 = np.floor(s).astype(int)
    t = s - i0
    w_m1 = -t * (t - 1.0) * (t - 2.0) / 6.0
    w_0 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0
    w_1 = -(t + 1.0) * t * (t - 2.0) / 2.0
    w_2 = (t + 1.0) * t * (t - 1.0) / 6.0
    return (
        w_m1 * samples[(i0 - 1) % n]
        + w_0 * samples[i0 % n]
        + w_1 * samples[(i0 + 1) % n]
        + w_2 * samples[(i0 + 2) % n]
    )


def half_shift(samples: np.ndarray) -> np.ndarray:
    """Values midway between nodes: entry ``m`` approximates f at x_m + dx/2.

    This is the cubic Lagrange interpolant evaluated at t = 1/2.
    """
    f = np.asarray(samples, dtype=float)
    return (9.0 * (f + np.roll(f, -1)) - (np.roll(f, 1) + np.roll(f, -2))) / 16.0


# -- finite differences -------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _central_weights(k: int) -> tuple[np.ndarray, np.ndarray]:
    # 4th-order central stencils: 5 points for k <= 2, 7 points for k in {3, 4}
    p = 2 if k <= 2 else 3
    offsets = np.arange(-p, p + 1)
    m = offsets.size
    vander = np.array([offsets.astype(float) ** j for j in range(m)])
    rhs = np.zeros(m)
    rhs[k] = math.factorial(k)
    # the exact weights are small-denominator rationals; snap the solve to them
    weights = np.array([float(Fraction(w).limit_denominator(1000)) for w in np.linalg.solve(vander, rhs)])
    return offsets, weights


def derivative(g: GridFunction, k: int = 1) -> GridFunction:
    """k-th derivative (1 <= k <= 4) by 4th-order central differences."""
    if k not in (1, 2, 3, 4):
        raise ValueError(f"derivative order must be in 1..4, got {k}")
    if g.n < 2 * k + 8:
        raise ValueError(f"need n >= {2 * k + 8} samples for order {k}")
    return g.with_samples(_diff(g.samples, g.dx, k))


def _diff(samples: np.ndarray, dx: float, k: int) -> np.ndarray:
    # summed as symmetric pair differences so constants map to exactly 0
    offsets, weights = _central_weights(k)
    p = offsets[-1]
    out = np.zeros_like(samples, dtype=float)
    for j in range(1, p + 1):
        w = weights[p + j]
        ahead, behind = np.roll(samples, -j), np.roll(samples, j)
        if k % 2:
            out += w * (ahead - behind)
        else:
            out += w * ((ahead - samples) + (behind - samples))
    return out / dx**k


# -- scenario profiles --------------------------------------------------------


def _smoothstep5(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def _profile_values(name: str, params: dict, x: np.ndarray) -> np.ndarray:
    base = float(params.get("base", 0.0))
    if name == "constant":
        return np.full_like(x, float(params.get("c", params.get("value", 0.0))) + base)
    if name == "sine":
        return base + float(params["A"]) * np.sin(float(params["k"]) * x)
    if name == "bump":
        A = float(params["A"])
        w = float(params.get("w", 1.0))
        xc = float(params.get("x_c", 0.0))
        s = (x - xc) / w
        out = np.zeros_like(x)
        inside = np.abs(s) < 1.0
        out[inside] = A * np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
        return base + out
    if name == "invasion":
        heights = params.get("heights", params.get("h", 1.0))
        if np.ndim(heights) == 0:
            h_left = h_right = float(heights)
        else:
            h_left, h_right = (float(v) for v in heights)
        a, b = (float(v) for v in params.get("gap", (-1.0, 1.0)))
        s = float(params.get("smoothing", 0.5))
        if not (a <= b and s > 0):
            raise ValueError("invasion profile needs gap a <= b and smoothing > 0")
        left = h_left * _smoothstep5((a - x) / s)
        right = h_right * _smoothstep5((x - b) / s)
        return base + np.where(x < a, left, np.where(x > b, right, 0.0))
    raise ValueError(f"unknown profile {name!r}")


def parse_profile(spec) -> tuple[str, dict]:
    """Accept ``{"sine": {"A": 1e-4, "k": 1}}`` or ``{"name": "sine", "A": ...}``."""
    if isinstance(spec, str):
        return spec, {}
    spec = dict(spec)
    if "name" in spec:
        name = spec.pop("name")
        return name, spec
    if len(spec) == 1:
        (name, params), = spec.items()
        if isinstance(params, dict):
            return name, dict(params)
    raise ValueError(f"cannot interpret profile spec {spec!r}")


def sample_profile(spec, L: float, n: int, geometry=None) -> GridFunction:
    """Sample a named scenario profile on the grid (L, n).

    Profiles: ``constant(c)``, ``bump(A, w, x_c)``, ``sine(A, k)`` and
    ``invasion(heights, gap, smoothing)``; each also takes an additive ``base``.
    The invasion profile vanishes on the gap and rises to its heights through
    quintic smoothstep ramps of width ``smoothing``, so it is C^2.
    """
    name, params = parse_profile(spec)
    x = -L + (2.0 * L / n) * np.arange(n)
    g = GridFunction(L, _profile_values(name, params, x))
    if geometry is not None:
        geometry.check_range(g.samples, what=f"profile {name!r}")
    return g


def cutoff_h0(x):
    """C^2 cut-off with chi_[-1,1] <= h0 <= chi_[-4,4] and |h0'|, |h0''| <= 1."""
    return 1.0 - _smoothstep5((np.abs(np.asarray(x, dtype=float)) - 1.0) / 3.0)


# -- mollifier ----------------------------------------------------------------


def _unit_profile(x, beta):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    out[inside] = np.exp(beta * xi * xi / (xi * xi - 1.0))
    return out


def _unit_mass(beta: float) -> float:
    value, _ = integrate.quad(
        lambda x: math.exp(beta * x * x / (x * x - 1.0)), 0.0, 1.0,
        epsabs=1e-14, epsrel=1e-13, limit=200,
    )
    return 2.0 * value


@functools.lru_cache(maxsize=1)
def _solve_beta() -> tuple[float, float, float]:
    # mass decreases continuously from 2 (beta -> 0) to 0 (beta -> inf)
    try:
        beta = optimize.brentq(lambda b: _unit_mass(b) - 1.0, 1e-6, 50.0, xtol=1e-15, rtol=1e-15)
    except ValueError as exc:  # pragma: no cover - the bracket always changes sign
        raise RuntimeError("could not solve for the unit-mass shape parameter") from exc
    mass = _unit_mass(beta)
    xs = np.linspace(-1.0, 1.0, 400_001)[1:-1]
    phi = _unit_profile(xs, beta)
    dphi = phi * beta * (-2.0 * xs / (xs * xs - 1.0) ** 2)
    return beta, mass, float(np.max(np.abs(dphi)))


@dataclass(frozen=True)
class Mollifier:
    """phi_eps(x) = phi(x/eps)/eps with phi(x) = exp(beta x^2/(x^2-1)) on (-1, 1).

    ``mass`` is the quadrature value of the unit profile's integral and
    ``dphi_sup`` the measured sup of |phi'|; ``dphi_exceeds_two`` flags a
    violation of the |phi'| <= 2 requirement.
    """

    eps: float
    beta: float
    mass: float
    dphi_sup: float
    table_x: np.ndarray = field(repr=False)
    table: np.ndarray = field(repr=False)

    @property
    def dphi_exceeds_two(self) -> bool:
        return self.dphi_sup > 2.0

    def unit(self, x):
        """The unit-scale profile phi."""
        return _unit_profile(x, self.beta)

    def __call__(self, x):
        return _unit_profile(np.asarray(x, dtype=float) / self.eps, self.beta) / self.eps

    def weights(self, dx: float) -> np.ndarray:
        """Discrete convolution weights on offsets -m*dx..m*dx, summing to one."""
        m = int(math.floor(self.eps / dx))
        w = self(dx * np.arange(-m, m + 1)) * dx
        return w / w.sum()


def build_mollifier(eps: float, table_size: int = 257) -> Mollifier:
    if not 0.0 < eps < 0.5:
        raise ValueError(f"mollifier scale must lie in (0, 1/2), got {eps}")
    beta, mass, dphi_sup = _solve_beta()
    tx = np.linspace(-eps, eps, table_size)
    table = _unit_profile(tx / eps, beta) / eps
    return Mollifier(eps, beta, mass, dphi_sup, tx, table)


def mollify(g: GridFunction, m: Mollifier) -> GridFunction:
    """Periodic convolution phi_eps * g by the composite rule on the support."""
    if m.eps < 2.0 * g.dx * (1.0 - 1e-12):
        raise ResolutionError(
            f"mollifier eps={m.eps:g} under-resolved by dx={g.dx:g} (need eps >= 2 dx)"
        )
    return g.with_samples(_mollify_samples(g.samples, m.weights(g.dx)))


def _mollify_samples(samples: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return ndimage.correlate1d(samples, weights, mode="wrap")


# -- local norms --------------------------------------------------------------


@dataclass(frozen=True)
class TildeL2:
    """sup_x ||g||_{L^2([x-1, x+1])}."""


@dataclass(frozen=True)
class TildeHk:
    k: int


@dataclass(frozen=True)
class DdotC:
    """sup_{|x-y| >= 1} |g(x)-g(y)| / |x-y|^alpha."""

    alpha: float


@dataclass(frozen=True)
class TildeHkGamma:
    k: int
    gamma: float


@dataclass(frozen=True)
class CkGammaHolder:
    """The C^{k,gamma} norm."""

    k: int
    gamma: float


@dataclass(frozen=True)
class CkGammaGamma:
    """The C^{k,gamma}_gamma seminorm."""

    k: int
    gamma: float


@dataclass(frozen=True)
class CkGamma:
    """The C^k_gamma seminorm."""

    k: int
    gamma: float


@dataclass(frozen=True)
class TildeL2Mu:
    mu: float


@dataclass(frozen=True)
class TildeL2X0:
    x0: float


# Lag scans for sup-type seminorms: every lag in the dense range, then lags
# growing geometrically by LAG_RATIO.  Cost is O(n log n).
LAG_RATIO = 1.02
DENSE_HOLDER_LAGS = 64


def _lag_set(start: int, stop: int, dense_until: int) -> np.ndarray:
    lags = list(range(start, min(stop, dense_until) + 1))
    m = lags[-1] if lags else start
    while True:
        m = max(m + 1, int(m * LAG_RATIO))
        if m > stop:
            break
        lags.append(m)
    return np.asarray(lags, dtype=int)


def _max_lag_difference(f: np.ndarray, lag: int) -> float:
    return float(np.max(np.abs(f - np.roll(f, -lag))))


def ddot_c(g: GridFunction, alpha: float) -> float:
    """Far-field Hoelder seminorm over pairs at distance >= 1.

    Lags m*dx with ceil(1/dx) <= m < n are scanned (dense up to twice the
    threshold, geometric beyond); larger separations repeat the same
    differences at larger distance and cannot raise the supremum.
    """
    f, n, dx = g.samples, g.n, g.dx
    start = max(1, math.ceil(1.0 / dx - 1e-9))
    if start >= n:
        raise ValueError("period 2L must exceed 1 for the far-field seminorm")
    best = 0.0
    for lag in _lag_set(start, n - 1, 2 * start):
        diff = _max_lag_difference(f, lag)
        if diff > 0.0:
            best = max(best, diff / (lag * dx) ** alpha)
    return best


def holder_seminorm(g: GridFunction, gamma: float) -> float:
    """sup_{x != y} |g(x)-g(y)| / |x-y|^gamma over sampled pairs."""
    f, n, dx = g.samples, g.n, g.dx
    if gamma == 0.0:
        return float(f.max() - f.min())
    best = 0.0
    for lag in _lag_set(1, n // 2, DENSE_HOLDER_LAGS):
        diff = _max_lag_difference(f, lag)
        if diff > 0.0:
            best = max(best, diff / (lag * dx) ** gamma)
    return best


def _periodic_cumulative(values: np.ndarray, dx: float, pad: int):
    ext = np.concatenate([values[-pad:], values, values[:pad]])
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (ext[1:] + ext[:-1]) * dx)])
    return ext, cum


def _window_l2_squared(g: GridFunction, weights=None) -> np.ndarray:
    """Integral of g^2 over [x_i - 1, x_i + 1] at every node (trapezoid rule)."""
    if g.period < 2.0:
        raise ValueError("period 2L must be at least the window length 2")
    values = g.samples**2 if weights is None else weights * g.samples**2
    dx = g.dx
    pad = math.ceil(1.0 / dx) + 2
    _, cum = _periodic_cumulative(values, dx, pad)
    xs = dx * np.arange(-pad, g.n + pad)
    centers = dx * np.arange(g.n)
    upper = np.interp(centers + 1.0, xs, cum)
    lower = np.interp(centers - 1.0, xs, cum)
    return np.maximum(upper - lower, 0.0)


def tilde_l2(g: GridFunction) -> float:
    return float(math.sqrt(np.max(_window_l2_squared(g))))


def _require_k(kind, k, lo=0):
    if not lo <= k <= 3:
        raise ValueError(f"{type(kind).__name__}: k must lie in {lo}..3, got {k}")


def _require_exponent(name, value):
    if not 0.0 < value <= 1.0:
        raise ValueError(f"{name} must lie in (0, 1], got {value}")


def _derivatives(g: GridFunction, k: int) -> list[GridFunction]:
    out = [g]
    for j in range(1, k + 1):
        out.append(g.with_samples(_diff(g.samples, g.dx, j)))
    return out


def local_norm(g: GridFunction, kind) -> float:
    """Evaluate one of the local (semi)norms on a grid function."""
    if not np.all(np.isfinite(g.samples)):
        raise ValueError("samples contain NaN")
    if g.dx > 0.25:
        raise ResolutionError(f"dx={g.dx:g} does not resolve unit windows (need dx <= 0.25)")
    match kind:
        case TildeL2():
            return tilde_l2(g)
        case TildeHk(k=k):
            _require_k(kind, k)
            return sum(tilde_l2(d) for d in _derivatives(g, k))
        case DdotC(alpha=alpha):
            _require_exponent("alpha", alpha)
            return ddot_c(g, alpha)
        case TildeHkGamma(k=k, gamma=gamma):
            _require_k(kind, k, lo=1)
            _require_exponent("gamma", gamma)
            ds = _derivatives(g, k)
            return sum(tilde_l2(d) for d in ds[1:]) + ddot_c(g, 1.0 - gamma)
        case CkGammaHolder(k=k, gamma=gamma):
            _require_k(kind, k)
            _require_exponent("gamma", gamma)
            ds = _derivatives(g, k)
            sup = sum(float(np.max(np.abs(d.samples))) for d in ds)
            return sup + holder_seminorm(ds[k], gamma)
        case CkGammaGamma(k=k, gamma=gamma):
            _require_k(kind, k, lo=1)
            _require_exponent("gamma", gamma)
            ds = _derivatives(g, k)
            sup = sum(float(np.max(np.abs(d.samples))) for d in ds[1:])
            return sup + holder_seminorm(ds[k], gamma) + ddot_c(g, 1.0 - gamma)
        case CkGamma(k=k, gamma=gamma):
            _require_k(kind, k, lo=1)
            _require_exponent("gamma", gamma)
            ds = _derivatives(g, k)
            sup = sum(float(np.max(np.abs(d.samples))) for d in ds[1:])
            return sup + holder_seminorm(ds[k], 0.0) + ddot_c(g, 1.0 - gamma)
        case TildeL2Mu(mu=mu):
            if mu < 0:
                raise ValueError(f"mu must be non-negative, got {mu}")
            weight = 1.0 + np.maximum(mu - np.abs(g.x), 0.0)
            return float(math.sqrt(np.max(_window_l2_squared(g, weight))))
        case TildeL2X0(x0=x0):
            return _tilde_l2_x0(g, x0)
    raise TypeError(f"unknown norm kind {kind!r}")


def _tilde_l2_x0(g: GridFunction, x0: float, images: int = 2000) -> float:
    # weight min(1, |x-x0|^-2) summed over periodic images, with the far tail
    # of sum 1/(x + 2Lm)^2 replaced by its integral
    P = g.period
    dist = g.x - x0
    m = np.arange(-images, images + 1)
    shifted = np.abs(dist[:, None] + P * m[None, :])
    w = (1.0 / np.maximum(shifted, 1.0) ** 2).sum(axis=1)
    w += 2.0 / (P * P * (images + 0.5))
    return float(math.sqrt(np.sum(w * g.samples**2) * g.dx))


def maximal_function(g: GridFunction) -> GridFunction:
    """Dyadic Hardy-Littlewood maximal function of |g|.

    At each node, the largest average of |g| over [x - y, x + y] for
    y in {dx, 2dx, 4dx, ...} up to L, integrating with the trapezoid rule
    through prefix sums.  Within a factor 2 of the full supremum.
    """
    a = np.abs(g.samples)
    n, dx = g.n, g.dx
    ext, cum = _periodic_cumulative(a, dx, n)
    idx = np.arange(n) + n
    best = np.zeros(n)
    m = 1
    while m * dx <= g.L * (1.0 + 1e-12):
        avg = (cum[idx + m] - cum[idx - m]) / (2.0 * m * dx)
        best = np.maximum(best, avg)
        m *= 2
    return g.with_samples(best)
