"""Contour-dynamics kernels and principal-value quadrature.

The interface velocity at node x is a principal-value integral over offsets y.
Quadrature uses midpoint nodes ``y_j = (j + 1/2) dx`` for ``j < J`` and pairs
each node with its mirror ``-y_j``; for smooth data the paired integrand is
bounded, so the singularity at y = 0 never has to be evaluated.  Because the
nodes sit exactly halfway between grid points, f(x -+ y_j) is the cubic
half-shift of the samples and all reads are index arithmetic.
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import QuadratureError, RangeError
from .grid import GridFunction, _diff, half_shift

__all__ = [
    "Plane",
    "HalfPlane",
    "Strip",
    "RhsForm",
    "QuadratureSpec",
    "theta",
    "lattice_theta",
    "rhs_integrand",
    "pv_integral",
    "pv_all",
    "velocity_on_interface",
    "tangential_multiple",
    "geometry_from_json",
    "geometry_to_json",
    "kernel_benchmark",
]

# |pi y / l| beyond which theta switches to its exponential asymptotics
THETA_ASYMPTOTIC = 30.0


@dataclass(frozen=True)
class Plane:
    def check_range(self, f, what="interface"):
        return None


@dataclass(frozen=True)
class HalfPlane:
    def check_range(self, f, what="interface"):
        fmin = float(np.min(f))
        if fmin < 0.0:
            raise RangeError(f"{what} dips below the bottom: min f = {fmin:.6g} < 0")


@dataclass(frozen=True)
class Strip:
    l: float

    def __post_init__(self):
        if not self.l > 0:
            raise ValueError(f"strip height must be positive, got {self.l}")

    def check_range(self, f, what="interface"):
        fmin, fmax = float(np.min(f)), float(np.max(f))
        if fmin < 0.0 or fmax > self.l:
            raise RangeError(
                f"{what} leaves the strip [0, {self.l:g}]: min f = {fmin:.6g}, max f = {fmax:.6g}"
            )


def geometry_from_json(value):
    if value == "plane":
        return Plane()
    if value in ("half_plane", "halfplane"):
        return HalfPlane()
    if isinstance(value, dict) and set(value) == {"strip"}:
        return Strip(float(value["strip"]))
    raise ValueError(f"unknown geometry {value!r}")


def geometry_to_json(geom):
    if isinstance(geom, Plane):
        return "plane"
    if isinstance(geom, HalfPlane):
        return "half_plane"
    return {"strip": geom.l}


class RhsForm(enum.Enum):
    PRIMARY = "primary"
    ALTERNATE = "alternate"


@dataclass(frozen=True)
class QuadratureSpec:
    """Midpoint nodes y_j = (j + 1/2) dx, j < J, paired with -y_j; Y_max = J dx."""

    dx: float
    J: int

    @classmethod
    def for_grid(cls, g: GridFunction, y_max: float | None = None) -> QuadratureSpec:
        y_max = g.L if y_max is None else y_max
        if not 0 < y_max <= g.L * (1 + 1e-12):
            raise ValueError(f"Y_max must lie in (0, L={g.L:g}], got {y_max:g}")
        J = int(math.floor(y_max / g.dx + 1e-9))
        if J < 1:
            raise ValueError("Y_max shorter than one grid spacing")
        return cls(g.dx, J)

    @property
    def y_max(self) -> float:
        return self.J * self.dx

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.J) + 0.5) * self.dx


# -- strip kernel -------------------------------------------------------------


def theta(y, r, l):
    """Strip kernel (pi/2l) sinh(pi y/l) / (cosh(pi y/l) - cos(pi r/l))."""
    y = np.asarray(y, dtype=float)
    r = np.asarray(r, dtype=float)
    if l <= 0:
        raise ValueError("strip height must be positive")
    a = math.pi * y / l
    b = math.pi * r / l
    # cosh a - cos b = 2 (sinh^2(a/2) + sin^2(b/2)), free of cancellation
    denom = 2.0 * (np.sinh(0.5 * np.minimum(np.abs(a), THETA_ASYMPTOTIC)) ** 2 + np.sin(0.5 * b) ** 2)
    k = r / (2.0 * l)
    if np.any((y == 0.0) & (np.abs(k - np.round(k)) <= 1e-12 * np.maximum(1.0, np.abs(k)))):
        raise ValueError("theta is singular at y = 0, r = 2 l k")
    far = np.abs(a) > THETA_ASYMPTOTIC
    with np.errstate(divide="ignore", invalid="ignore"):
        near = np.sinh(np.where(far, 0.0, a)) / np.where(far, 1.0, denom)
    e = np.exp(-np.abs(a))
    asym = np.sign(a) * (1.0 + 2.0 * e * np.cos(b) + 2.0 * e * e * np.cos(2.0 * b))
    out = (math.pi / (2.0 * l)) * np.where(far, asym, near)
    return out if out.ndim else float(out)


def lattice_theta(y, r, l, N):
    """Truncated image sum sum_{|n| <= N} y / (y^2 + (r - 2 l n)^2)."""
    if N < 1:
        raise ValueError("N must be at least 1")
    y = np.asarray(y, dtype=float)
    r = np.asarray(r, dtype=float)
    ns = np.arange(-N, N + 1, dtype=float)
    yy = y[..., None]
    rr = r[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = yy / (yy * yy + (rr - 2.0 * l * ns) ** 2)
    terms = np.where(yy == 0.0, 0.0, terms)
    if np.any(~np.isfinite(terms)):
        raise ValueError("lattice sum hits the singular point y = 0, r = 2 l k")
    out = terms.sum(axis=-1)
    return out if out.ndim else float(out)


# -- integrands ---------------------------------------------------------------


def _branch_primary(geom, y, fx, px, fo, po, sign):
    """One fraction of the primary integrand at offset y (f(x - y) = fo)."""
    r = fx + sign * fo
    num = px + sign * po
    if isinstance(geom, Strip):
        return num * theta(y, r, geom.l)
    return y * num / (y * y + r * r)


def _branch_alternate(y, fx, px, fo, sign):
    r = fx + sign * fo
    return (y * px - r) / (y * y + r * r)


def _signs(geom):
    return (-1.0,) if isinstance(geom, Plane) else (-1.0, 1.0)


def _paired(geom, form, y, fx, px, f_minus, p_minus, f_plus, p_plus):
    """Integrand at +y plus integrand at -y.

    ``f_minus``/``p_minus`` are f and f' at x - y, ``f_plus``/``p_plus`` at x + y.
    """
    total = 0.0
    for sign in _signs(geom):
        if form is RhsForm.PRIMARY:
            total = total + _branch_primary(geom, y, fx, px, f_minus, p_minus, sign)
            total = total + _branch_primary(geom, -y, fx, px, f_plus, p_plus, sign)
        else:
            total = total + _branch_alternate(y, fx, px, f_minus, sign)
            total = total + _branch_alternate(-y, fx, px, f_plus, sign)
    return total


def _check_form(geom, form):
    if form is RhsForm.ALTERNATE and not isinstance(geom, HalfPlane):
        raise ValueError("the alternate form is only defined on the half-plane")


def rhs_integrand(geom, f: GridFunction, x: float, y: float, form=RhsForm.PRIMARY,
                  fprime: GridFunction | None = None) -> float:
    """Paired integrand at node x and offset y > 0.

    Off-grid reads of f and f' use periodic cubic interpolation; ``fprime``
    may be supplied to avoid recomputing the finite-difference derivative.
    """
    _check_form(geom, form)
    if y == 0:
        raise ValueError("offset y must be non-zero")
    geom.check_range(f.samples)
    y = abs(float(y))
    fp = fprime if fprime is not None else f.with_samples(_diff(f.samples, f.dx, 1))
    fx, px = float(f(x)), float(fp(x))
    return float(_paired(geom, form, y, fx, px, float(f(x - y)), float(fp(x - y)),
                         float(f(x + y)), float(fp(x + y))))


def _alternate_closure(fx, f_far_minus, f_far_plus, Y, has_jump):
    """pi chi(f(x) > 0) minus the arctan boundary values at |y| = Y.

    Over the window 0 < |y| < Y the two forms differ by the integral of
    -d/dy arctan((f(x) +- f(x - y))/y); this is that integral in closed form.
    """
    out = np.where(has_jump, math.pi, 0.0)
    for sign in (-1.0, 1.0):
        out = out - np.arctan((fx + sign * f_far_minus) / Y) - np.arctan((fx + sign * f_far_plus) / Y)
    return out


def pv_integral(geom, f: GridFunction, x_index: int, form=RhsForm.PRIMARY,
                y_max: float | None = None) -> float:
    """Principal-value integral at a single node, via general interpolation.

    Independent of the vectorized path in :func:`pv_all`; both must agree.
    """
    _check_form(geom, form)
    geom.check_range(f.samples)
    quad = QuadratureSpec.for_grid(f, y_max)
    fp = f.with_samples(_diff(f.samples, f.dx, 1))
    x = float(f.x[x_index])
    y = quad.nodes
    fx, px = float(f.samples[x_index]), float(fp.samples[x_index])
    vals = _paired(geom, form, y, fx, px, f(x - y), fp(x - y), f(x + y), fp(x + y))
    total = float(np.sum(vals) * quad.dx)
    if form is RhsForm.ALTERNATE:
        Y = quad.y_max
        total += float(_alternate_closure(fx, f(x - Y), f(x + Y), Y, fx > 0.0))
    if not math.isfinite(total):
        raise QuadratureError(f"non-finite PV integral at node {x_index} (x = {x:g})", node=x_index)
    return total


def _worker_count(workers):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("MUSKAT_THREADS")
    if env:
        return max(1, int(env))
    return 1


def pv_all(geom, f: GridFunction, form=RhsForm.PRIMARY, y_max: float | None = None,
           fprime: np.ndarray | None = None, workers: int | None = None,
           check_range: bool = True) -> np.ndarray:
    """Principal-value integral at every node (the O(n J) core).

    Rows are independent, so blocks of nodes are farmed out to a thread pool
    when ``workers`` (or ``MUSKAT_THREADS``) exceeds one; results do not
    depend on the block split.
    """
    _check_form(geom, form)
    if check_range:
        geom.check_range(f.samples)
    quad = QuadratureSpec.for_grid(f, y_max)
    n, J = f.n, quad.J
    fs = f.samples
    ps = _diff(fs, f.dx, 1) if fprime is None else np.asarray(fprime, dtype=float)
    fh, ph = half_shift(fs), half_shift(ps)
    y = quad.nodes[None, :]
    offsets = np.arange(J)[None, :]

    def block(rows):
        i = rows[:, None]
        minus = (i - offsets - 1) % n  # x_i - y_j sits at x_{i-j-1} + dx/2
        plus = (i + offsets) % n  # x_i + y_j sits at x_{i+j} + dx/2
        vals = _paired(geom, form, y, fs[rows][:, None], ps[rows][:, None],
                       fh[minus], ph[minus], fh[plus], ph[plus])
        return vals.sum(axis=1) * quad.dx

    nworkers = _worker_count(workers)
    rows = np.arange(n)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if nworkers == 1 or n < 64:
            out = block(rows)
        else:
            chunks = np.array_split(rows, nworkers)
            with ThreadPoolExecutor(max_workers=nworkers) as pool:
                out = np.concatenate(list(pool.map(block, chunks)))
    if form is RhsForm.ALTERNATE:
        Y = quad.y_max
        idx = np.arange(n)
        out = out + _alternate_closure(fs, fs[(idx - J) % n], fs[(idx + J) % n], Y, fs > 0.0)
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        node = int(bad[0])
        raise QuadratureError(
            f"non-finite PV integral at node {node} (x = {f.x[node]:g}, f = {fs[node]:g})", node=node
        )
    return out


# -- velocity reconstruction --------------------------------------------------


def _velocity_paired(y, fx, px, f_minus, p_minus, f_plus, p_plus):
    u1 = 0.0
    u2 = 0.0
    w = 0.0
    for z, fo, po in ((y, f_minus, p_minus), (-y, f_plus, p_plus)):
        for sign in (-1.0, 1.0):
            r = fx + sign * fo
            d = z * z + r * r
            u1 = u1 - sign * r * po / d
            u2 = u2 + sign * z * po / d
            w = w + z / d
    return u1, u2, w


def _velocity_parts(f: GridFunction, y_max=None):
    HalfPlane().check_range(f.samples)
    quad = QuadratureSpec.for_grid(f, y_max)
    n, J = f.n, quad.J
    fs = f.samples
    ps = _diff(fs, f.dx, 1)
    fh, ph = half_shift(fs), half_shift(ps)
    i = np.arange(n)[:, None]
    offsets = np.arange(J)[None, :]
    minus = (i - offsets - 1) % n
    plus = (i + offsets) % n
    u1, u2, w = _velocity_paired(quad.nodes[None, :], fs[:, None], ps[:, None],
                                 fh[minus], ph[minus], fh[plus], ph[plus])
    return (u1.sum(axis=1) * quad.dx, u2.sum(axis=1) * quad.dx, w.sum(axis=1) * quad.dx, ps)


def velocity_on_interface(f: GridFunction, y_max: float | None = None):
    """Half-plane fluid velocity (u1, u2) at every interface point (x, f(x)).

    Diagnostic only.  Adding the tangential multiple W (1, f_x) with
    W = :func:`tangential_multiple` gives a vector whose second component is
    the primary-form f_t.  The first component u1 + W integrates a y-derivative
    over a full period, so it vanishes only up to quadrature error (third
    order in dx), and exactly when Y_max = L.
    """
    u1, u2, _, _ = _velocity_parts(f, y_max)
    if not (np.all(np.isfinite(u1)) and np.all(np.isfinite(u2))):
        raise QuadratureError("non-finite interface velocity")
    return u1, u2


def tangential_multiple(f: GridFunction, y_max: float | None = None) -> np.ndarray:
    """W(x) = sum_+- PV int z / (z^2 + (f(x) +- f(x - z))^2) dz."""
    return _velocity_parts(f, y_max)[2]


# -- microbenchmark -----------------------------------------------------------


def kernel_benchmark(ns=(128, 256, 512), geometry=None, repeats: int = 3, workers: int | None = 1):
    """Rows ``{"n", "nodes", "ns_per_eval"}`` timing :func:`pv_all` on a smooth bump.

    ``nodes`` counts paired integrand evaluations (n * J); the time is the
    best of ``repeats``.
    """
    import time

    geometry = HalfPlane() if geometry is None else geometry
    rows = []
    for n in ns:
        L = 4.0
        x = -L + (2.0 * L / n) * np.arange(n)
        f = GridFunction(L, 1.0 + 0.3 * np.exp(-x * x))
        nodes = n * QuadratureSpec.for_grid(f).J
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            pv_all(geometry, f, workers=workers)
            best = min(best, time.perf_counter() - t0)
        rows.append({"n": n, "nodes": nodes, "ns_per_eval": 1e9 * best / nodes})
    return rows


def _main(argv=None):
    import argparse
    import csv
    import sys

    p = argparse.ArgumentParser(description="PV quadrature microbenchmark (CSV on stdout)")
    p.add_argument("--n", type=int, nargs="+", default=[128, 256, 512])
    p.add_argument("--geometry", default="half_plane", help='"plane", "half_plane" or a strip height')
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args(argv)
    try:
        geom = geometry_from_json(args.geometry)
    except ValueError:
        geom = Strip(float(args.geometry))
    w = csv.DictWriter(sys.stdout, fieldnames=["n", "nodes", "ns_per_eval"])
    w.writeheader()
    for row in kernel_benchmark(args.n, geom, args.repeats):
        w.writerow({**row, "ns_per_eval": f"{row['ns_per_eval']:.3f}"})


if __name__ == "__main__":
    _main()
