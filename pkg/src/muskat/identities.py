"""Numerical checks of the closed-form identities and pointwise bounds.

The cancellation identities relate the explicit kernels S4, P4/Q4 and U4/V4
(functions of y with parameters a = f(0), b = f'(0), c = f''(0)) to exact
y-derivatives of rational primitives in D = y^2 + 4a^2.  Each is checked along
two independent paths: hand-derived analytic derivatives of the primitives,
evaluated in extended precision, and 5-point central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridFunction, _diff
from .kernels import HalfPlane, RhsForm, lattice_theta, pv_all, theta

__all__ = [
    "DEFAULT_SEED",
    "ABCSample",
    "CancellationResult",
    "check_cancellation",
    "cancellation_sweep",
    "PositivityReport",
    "check_positivity_bounds",
    "random_nonnegative_profiles",
    "check_form_equivalence",
    "check_arctan_primitive",
    "ThetaTable",
    "check_theta_sum",
]

DEFAULT_SEED = 20240617
IDENTITIES = ("S4", "PQ", "UV")


@dataclass(frozen=True)
class ABCSample:
    """Taylor data (a, b, c) = (f(0), f'(0), f''(0)) of a nonnegative f.

    ``f2sup`` stands for sup |f''|; nonnegativity forces
    |b| <= 2 sqrt(f2sup * a), which is enforced here.  The y-grid spans
    [1e-3 sqrt(a), sqrt(a)] logarithmically unless given explicitly.
    """

    a: float
    b: float
    c: float
    f2sup: float = 1.0
    y: np.ndarray = field(default=None, repr=False)
    n_y: int = 64

    def __post_init__(self):
        if not 0.0 <= self.a <= 1.0:
            raise ValueError(f"a must lie in [0, 1], got {self.a}")
        if abs(self.c) > self.f2sup:
            raise ValueError(f"|c| = {abs(self.c)} exceeds sup|f''| = {self.f2sup}")
        bound = 2.0 * math.sqrt(self.f2sup * self.a)
        if abs(self.b) > bound * (1.0 + 1e-15):
            raise ValueError(f"|b| = {abs(self.b)} exceeds 2 sqrt(sup|f''| a) = {bound}")
        if self.y is None:
            if self.a == 0:
                raise ValueError("a = 0 needs an explicit y-grid avoiding 0")
            root = math.sqrt(self.a)
            y = np.geomspace(1e-3 * root, root, self.n_y)
        else:
            y = np.asarray(self.y, dtype=float)
            if np.any(y <= 0):
                raise ValueError("y-grid must be strictly positive")
        object.__setattr__(self, "y", y)

    @classmethod
    def random(cls, rng: np.random.Generator, f2sup: float = 1.0, n_y: int = 64) -> ABCSample:
        a = float(rng.uniform(0.0, 1.0))
        while a == 0.0:  # pragma: no cover - probability zero
            a = float(rng.uniform(0.0, 1.0))
        bound = 2.0 * math.sqrt(f2sup * a)
        return cls(a, float(rng.uniform(-bound, bound)), float(rng.uniform(-f2sup, f2sup)), f2sup,
                   n_y=n_y)


# Each primitive is a list of terms (coefficient, p, q) meaning coef * y^p / D^q.


def _primitive_terms(which, a, b, c):
    if which == "S4":
        return [(-8 * b * c * c, 3, 2)]
    if which == "PQ":
        return [
            (16 * 8 * a * b * c * (2 * a * c - b * b), 3, 3),
            (-16 * 3 * b * c * c, 3, 2),
            (16 * 4 * b * c * c, 5, 3),
        ]
    if which == "UV":
        k = b**3 * (4 * a * c + b * b)
        return [
            (-32 * 2 * k / 3, 5, 4),
            (32 * k / 3, 3, 3),
            (-32 * 16 * a * a * b**3 * (2 * a * c - b * b) / 3, 3, 4),
        ]
    raise ValueError(f"unknown identity {which!r}; expected one of {IDENTITIES}")


def _lhs(which, a, b, c, y):
    D = y * y + 4 * a * a
    if which == "S4":
        s4 = 8 * b * c * c * y / D**2 - 128 * a * a * b * c * c * y / D**3
        return y * s4
    if which == "PQ":
        p4 = 16 * b * c * c * y / D**2 - 128 * a * b**3 * c * y / D**3
        q4 = 16 * b * c * c * y / D**3 - 192 * a * b**3 * c * y / D**4
        return 3 * y * p4 - 4 * y**3 * q4
    if which == "UV":
        u4 = 128 * a * b**3 * c * y / D**3 + 32 * b**5 * y / D**3 - 768 * a * a * b**5 * y / D**4
        v4 = 128 * a * b**3 * c * y / D**4 + 32 * b**5 * y / D**4 - 1024 * a * a * b**5 * y / D**5
        return 2 * y**3 * v4 - y * u4
    raise ValueError(f"unknown identity {which!r}; expected one of {IDENTITIES}")


def _primitive(terms, a, y):
    D = y * y + 4 * a * a
    return sum(k * y**p / D**q for k, p, q in terms)


def _primitive_dy(terms, a, y):
    # d/dy [y^p D^-q] = p y^(p-1) D^-q - 2 q y^(p+1) D^-(q+1)
    D = y * y + 4 * a * a
    return sum(k * (p * y ** (p - 1) / D**q - 2 * q * y ** (p + 1) / D ** (q + 1)) for k, p, q in terms)


def _five_point(fn, y, h):
    return (fn(y - 2 * h) - 8 * fn(y - h) + 8 * fn(y + h) - fn(y + 2 * h)) / (12 * h)


@dataclass(frozen=True)
class CancellationResult:
    which: str
    analytic: float
    finite_difference: float

    @property
    def residual(self) -> float:
        return self.analytic


def check_cancellation(which: str, sample: ABCSample, fd_step: float = 1e-3) -> CancellationResult:
    """Max residual of one identity over the sample's y-grid.

    The analytic residual is absolute and computed in ``np.longdouble``.  The
    finite-difference residual uses steps h = fd_step * y and is divided by
    max(1, max|LHS|), since difference quotients carry relative error.
    """
    ld = np.longdouble
    a, b, c = ld(sample.a), ld(sample.b), ld(sample.c)
    y = sample.y.astype(ld)
    terms = _primitive_terms(which, a, b, c)
    lhs = _lhs(which, a, b, c, y)
    analytic = float(np.max(np.abs(lhs - _primitive_dy(terms, a, y))))

    af, bf, cf = sample.a, sample.b, sample.c
    yf = sample.y
    terms_f = _primitive_terms(which, af, bf, cf)
    fd = _five_point(lambda s: _primitive(terms_f, af, s), yf, fd_step * yf)
    lhs_f = _lhs(which, af, bf, cf, yf)
    scale = max(1.0, float(np.max(np.abs(lhs_f))))
    finite = float(np.max(np.abs(lhs_f - fd))) / scale
    return CancellationResult(which, analytic, finite)


def cancellation_sweep(which: str, draws: int = 1000, seed: int = DEFAULT_SEED,
                       f2sup: float = 1.0) -> dict:
    rng = np.random.default_rng(seed)
    results = [check_cancellation(which, ABCSample.random(rng, f2sup)) for _ in range(draws)]
    return {
        "identity": which,
        "draws": draws,
        "seed": seed,
        "max_analytic": max(r.analytic for r in results),
        "max_finite_difference": max(r.finite_difference for r in results),
    }


# -- positivity bounds --------------------------------------------------------


@dataclass(frozen=True)
class PositivityReport:
    """Worst LHS/RHS ratios of the three small-f bounds; pass iff all <= 1 + 1e-6."""

    fprime_sqrt: float
    shifted_fprime: float
    shifted_f: float
    tolerance: float = 1e-6

    @property
    def worst(self) -> float:
        return max(self.fprime_sqrt, self.shifted_fprime, self.shifted_f)

    @property
    def passed(self) -> bool:
        return self.worst <= 1.0 + self.tolerance


def _ratio(lhs, rhs, zero_tol=1e-12):
    lhs, rhs = np.broadcast_arrays(np.abs(lhs), rhs)
    pos = rhs > 0
    worst = float(np.max(lhs[pos] / rhs[pos], initial=0.0))
    if np.any(lhs[~pos] > zero_tol):
        return math.inf
    return worst


def check_positivity_bounds(f: GridFunction, y_stride: int = 4) -> PositivityReport:
    """Scan |f'| <= 2 sup|f''|^(1/2) sqrt(f) and the shifted bounds on f(x - y), f'(x - y).

    Shifts y run over every ``y_stride``-th grid offset in (0, L] and their
    negatives, so shifted values are exact samples.
    """
    s = f.samples
    if np.any(s < 0):
        raise ValueError(f"profile must be nonnegative, min f = {s.min():.6g}")
    d1 = _diff(s, f.dx, 1)
    d2 = _diff(s, f.dx, 2)
    f2 = float(np.max(np.abs(d2)))
    c1 = float(np.max(np.abs(d1))) + f2
    r1 = _ratio(d1, 2.0 * math.sqrt(f2) * np.sqrt(s))

    n = f.n
    shifts = np.arange(y_stride, n // 2 + 1, y_stride)
    shifts = np.concatenate([shifts, -shifts])
    idx = (np.arange(n)[:, None] - shifts[None, :]) % n
    y = np.abs(shifts)[None, :] * f.dx
    k = 2.0 * (1.0 + c1)
    r2 = _ratio(d1[idx], k * np.maximum(y, np.sqrt(s)[:, None]))
    r3 = _ratio(s[idx], k * np.maximum(y * y, s[:, None]))
    return PositivityReport(r1, r2, r3)


def random_nonnegative_profiles(count: int, L: float = math.pi, n: int = 512, modes: int = 4,
                                seed: int = DEFAULT_SEED):
    """Squares of random trigonometric polynomials, plus a shift making some touch zero."""
    rng = np.random.default_rng(seed)
    x = -L + (2.0 * L / n) * np.arange(n)
    out = []
    for _ in range(count):
        ks = np.arange(1, modes + 1) * (math.pi / L)
        p = rng.normal(size=modes) @ np.cos(np.outer(ks, x) + rng.uniform(0, 2 * math.pi, size=(modes, 1)))
        p += rng.normal(scale=0.5)
        out.append(GridFunction(L, p * p))
    return out


# -- form equivalence ---------------------------------------------------------


def check_form_equivalence(f: GridFunction, y_max: float | None = None, min_height: float = 0.05) -> float:
    """Max |primary - alternate| over all nodes for a strictly positive f."""
    fmin = float(np.min(f.samples))
    if fmin < min_height:
        raise ValueError(
            f"form comparison needs min f >= {min_height}, got {fmin:.6g} (indicator jump at contact)"
        )
    geom = HalfPlane()
    primary = pv_all(geom, f, RhsForm.PRIMARY, y_max=y_max)
    alternate = pv_all(geom, f, RhsForm.ALTERNATE, y_max=y_max)
    return float(np.max(np.abs(primary - alternate)))


# -- arctan primitive ---------------------------------------------------------


def check_arctan_primitive(f, df, x, y, rel_step: float = 1e-3) -> float:
    """Residual of fraction + d/dy arctan((f(x) +- f(x - y)) / y) over both branches.

    ``f`` and ``df`` are vectorized callables for f and f'; ``x`` and ``y``
    broadcast against each other and y must avoid 0.  The y-derivative uses a
    5-point stencil with step rel_step * |y|.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y == 0):
        raise ValueError("y-grid must avoid 0")
    x, y = np.broadcast_arrays(x, y)
    fx = f(x)
    worst = 0.0
    for sign in (1.0, -1.0):
        r = fx + sign * f(x - y)
        frac = (r + sign * y * df(x - y)) / (y * y + r * r)
        with np.errstate(divide="ignore", invalid="ignore"):
            arct = lambda s: np.arctan((fx + sign * f(x - s)) / s)  # noqa: E731
            dy = _five_point(arct, y, rel_step * np.abs(y))
        worst = max(worst, float(np.max(np.abs(frac + dy))))
    return worst


# -- lattice sum for the strip kernel -------------------------------------------


@dataclass
class ThetaTable:
    """|lattice_theta - theta| per sample (rows) and truncation N (columns)."""

    l: float
    points: np.ndarray
    N: np.ndarray
    errors: np.ndarray
    exponents: np.ndarray

    def to_csv_rows(self):
        yield ["y", "r"] + [f"N={int(k)}" for k in self.N] + ["exponent"]
        for (yv, rv), errs, p in zip(self.points, self.errors, self.exponents):
            yield [f"{yv:.17g}", f"{rv:.17g}"] + [f"{e:.6e}" for e in errs] + [f"{p:.6f}"]


def check_theta_sum(l: float, points, N_schedule=(100, 1000, 10000)) -> ThetaTable:
    """Convergence table of the truncated image sum towards the closed form.

    The fitted exponent is the negated log-log slope of the error against N;
    rows whose error is identically 0 (y = 0), or a single-N schedule, give NaN.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    Ns = np.asarray(N_schedule, dtype=int)
    exact = theta(pts[:, 0], pts[:, 1], l)
    errors = np.column_stack([np.abs(lattice_theta(pts[:, 0], pts[:, 1], l, int(N)) - exact) for N in Ns])
    exps = np.full(len(pts), np.nan)
    for i, row in enumerate(errors):
        if Ns.size >= 2 and np.all(row > 0):
            exps[i] = -np.polyfit(np.log(Ns), np.log(row), 1)[0]
    return ThetaTable(l, pts, Ns, errors, exps)
