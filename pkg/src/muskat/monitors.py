"""Run reports and the theorem monitors evaluated on them.

Every check returns a :class:`Verdict`; none of them raise on a failed check.
Tolerances are banded because the simulator carries O(dt^4 + dx^3) error
that the continuous statements do not.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

from .grid import CkGammaHolder, GridFunction, TildeHkGamma, TildeL2Mu, _diff, local_norm
from .manifest import build_manifest

__all__ = [
    "SERIES_COLUMNS",
    "RunReport",
    "Verdict",
    "extrema_check",
    "blowup_integral",
    "blowup_integral_series",
    "existence_time_scale",
    "TPsiBound",
    "t_psi_bound",
    "apriori_rate_check",
    "stability_compare",
]

SERIES_COLUMNS = (
    "t",
    "tilde_h3_gamma",
    "c2_gamma_gamma",
    "l2_d1",
    "l2_d2",
    "l2_d3",
    "sup_f",
    "inf_f",
    "rhs_sup",
    "blowup_integrand",
)

# Default extrema tolerance tau = TAU_DT * dt + TAU_DX * dx^3, scaled like the
# local RK4 and cubic-interpolation errors; the flat, sine, bump and invasion
# regression runs show no excursions at all, so the level is a bound, not a fit.
TAU_DT = 1e-6
TAU_DX = 1e-2
# inf f of bottom-touching lifted data must stay within [eps/2, BAND_K * eps]
BAND_K = 3.0
STABILITY_MAX_PREFACTOR = 10.0


def _snap_name(t: float) -> str:
    return f"snap_{t:.6f}.csv"


@dataclass
class RunReport:
    """Recorded trajectory of one run.

    ``series`` maps each name in :data:`SERIES_COLUMNS` to an array aligned
    with the record times; ``snapshots`` holds the interface at those times.
    """

    config: dict
    series: dict
    snapshots: list
    eps: float = 0.0
    abort: dict | None = None
    stats: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        t = self.times
        if t.size and np.any(np.diff(t) <= 0):
            raise ValueError("record times must be strictly increasing")
        for name in SERIES_COLUMNS:
            if not np.all(np.isfinite(self.series[name])):
                raise ValueError(f"recorded series {name!r} is not finite")
        if len(self.snapshots) != t.size:
            raise ValueError("one snapshot per record time is required")

    @classmethod
    def from_rows(cls, rows, **kwargs) -> RunReport:
        series = {name: np.array([r[name] for r in rows], dtype=float) for name in SERIES_COLUMNS}
        return cls(series=series, snapshots=[r["snapshot"] for r in rows], **kwargs)

    @property
    def times(self) -> np.ndarray:
        return self.series["t"]

    def __getitem__(self, name) -> np.ndarray:
        return self.series[name]

    @property
    def completed(self) -> bool:
        return self.abort is None

    def to_dir(self, path, seed=None) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        with open(path / "series.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SERIES_COLUMNS)
            for i in range(self.times.size):
                w.writerow([f"{self.series[c][i]:.17g}" for c in SERIES_COLUMNS])
        names = []
        for t, snap in zip(self.times, self.snapshots):
            names.append(_snap_name(t))
            snap.to_csv(path / names[-1])
        manifest = build_manifest(
            self.config,
            seed=self.config.get("seed") if seed is None else seed,
            timings=self.timings,
            abort=self.abort,
            extra={"eps": self.eps, "stats": self.stats, "snapshots": names},
        )
        (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_dir(cls, path) -> RunReport:
        path = Path(path)
        manifest = json.loads((path / "manifest.json").read_text())
        with open(path / "series.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        series = {c: np.array([float(r[c]) for r in rows]) for c in SERIES_COLUMNS}
        snaps = [GridFunction.from_csv(path / name) for name in manifest["snapshots"]]
        return cls(
            config=manifest["config"],
            series=series,
            snapshots=snaps,
            eps=manifest.get("eps", 0.0),
            abort=manifest.get("abort"),
            stats=manifest.get("stats", {}),
            timings=manifest.get("timings", {}),
        )


@dataclass
class Verdict:
    check: str
    passed: bool
    tolerance: float | None = None
    worst_violation: float = 0.0
    violations: list = field(default_factory=list)
    fitted_constants: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def __bool__(self):
        return self.passed

    def to_json(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


# -- maximum principles -------------------------------------------------------


def default_tau(report: RunReport) -> float:
    dx = report.stats.get("dx") or 2.0 * report.config["L"] / report.config["n"]
    dt = report.stats.get("dt_max") or report.stats.get("dt_min") or 0.0
    return TAU_DT * dt + TAU_DX * dx**3


def extrema_check(report: RunReport, tau: float | None = None, band_k: float = BAND_K,
                  bottom_contact: bool | None = None, top_contact: bool | None = None) -> Verdict:
    """sup f non-increasing, inf f non-decreasing, and the contact bands.

    A sample violates monotonicity when it exceeds (for sup) or falls below
    (for inf) the running extreme of the earlier samples by more than tau.
    For lifted data that touched the bottom (inferred when inf f(0) sits at
    the 2 eps lift) inf f must stay within [eps/2, band_k * eps]; the top of
    a strip is handled symmetrically, and any strip run must keep sup f
    at most l - eps/2.
    """
    tau = default_tau(report) if tau is None else float(tau)
    sup, inf = report["sup_f"], report["inf_f"]
    eps = report.eps
    violations = []
    worst = 0.0

    up = sup - np.minimum.accumulate(sup)
    down = np.maximum.accumulate(inf) - inf
    for name, excess in (("sup increased", up), ("inf decreased", down)):
        for i in np.flatnonzero(excess > tau):
            violations.append({"index": int(i), "t": float(report.times[i]), "kind": name,
                               "amount": float(excess[i])})
        worst = max(worst, float(np.max(excess, initial=0.0)))

    geom = report.config.get("geometry")
    l = geom["strip"] if isinstance(geom, dict) else None
    lifted = eps > 0 and geom != "plane"
    if bottom_contact is None:
        bottom_contact = lifted and inf[0] <= 2.0 * eps * (1.0 + 1e-9)
    if top_contact is None:
        top_contact = lifted and l is not None and sup[0] >= l - 2.0 * eps * (1.0 + 1e-9)

    def band(values, lo, hi, kind):
        nonlocal worst
        for i, v in enumerate(values):
            miss = max(lo - v, v - hi, 0.0)
            if miss > 0:
                violations.append({"index": i, "t": float(report.times[i]), "kind": kind,
                                   "amount": float(miss)})
                worst = max(worst, miss)

    if bottom_contact:
        band(inf, 0.5 * eps, band_k * eps, "inf outside contact band")
    if l is not None and lifted:
        lo = l - band_k * eps if top_contact else -math.inf
        band(sup, lo, l - 0.5 * eps, "sup outside top band")

    return Verdict(
        check="extrema",
        passed=not violations and report.completed,
        tolerance=tau,
        worst_violation=worst,
        violations=violations,
        fitted_constants={},
        notes=[] if report.completed else [f"run aborted: {report.abort.get('reason')}"],
    )


# -- blow-up criterion --------------------------------------------------------


def _blowup_samples(report: RunReport, gamma_prime):
    gamma = report.config.get("gamma")
    if gamma_prime is None or gamma_prime == gamma:
        return report["blowup_integrand"]
    if not 0.0 < gamma_prime <= 1.0:
        raise ValueError(f"gamma' must lie in (0, 1], got {gamma_prime}")
    return np.array([
        local_norm(s.with_samples(_diff(s.samples, s.dx, 1)), CkGammaHolder(1, gamma_prime)) ** 4
        for s in report.snapshots
    ])


def blowup_integral_series(report: RunReport, gamma_prime: float | None = None) -> np.ndarray:
    """Cumulative trapezoid of ||f_x||^4 in C^{1,gamma'} over the record times."""
    vals = _blowup_samples(report, gamma_prime)
    return integrate.cumulative_trapezoid(vals, report.times, initial=0.0)


def blowup_integral(report: RunReport, gamma_prime: float | None = None) -> float:
    return float(blowup_integral_series(report, gamma_prime)[-1])


# -- existence time -----------------------------------------------------------


def existence_time_scale(norm: float) -> float:
    """min{N^-4, 1 + |ln N|}, the bracket multiplying the unknown constant."""
    if norm < 0 or not math.isfinite(norm):
        raise ValueError(f"norm must be finite and non-negative, got {norm}")
    if norm == 0:
        return math.inf
    return min(norm**-4, 1.0 + abs(math.log(norm)))


@dataclass(frozen=True)
class TPsiBound:
    bound: float
    norm: float
    note: str = ""


def t_psi_bound(psi: GridFunction, gamma: float) -> TPsiBound:
    norm = local_norm(psi, TildeHkGamma(3, gamma))
    if norm == 0:
        return TPsiBound(math.inf, 0.0, "constant datum: no finite existence-time scale")
    return TPsiBound(existence_time_scale(norm), norm,
                     "scale only: the multiplying constant is unknown")


# -- a priori growth rate -----------------------------------------------------


def apriori_rate_check(report: RunReport, rhs_floor: float = 1e-300) -> Verdict:
    """Fit C in d/dt ||f'''||^2 <= C (1 + ||f||_{C^{2,g}_g}^4) (sum ||f^(j)||^2).

    Norms are the tilde-L^2 norms; the derivative is the forward difference
    quotient between records and the right side is averaged over each
    interval.  C_hat is the smallest constant covering every interval,
    negative when the energy decays throughout;
    ``residual`` is the growth left unexplained where the right side vanishes.
    """
    t = report.times
    notes = []
    if t.size < 2:
        return Verdict("apriori_rate", True, fitted_constants={"C_hat": 0.0, "residual": 0.0},
                       notes=["fewer than two records"])
    e3 = report["l2_d3"] ** 2
    energy = report["l2_d1"] ** 2 + report["l2_d2"] ** 2 + e3
    weight = (1.0 + report["c2_gamma_gamma"] ** 4) * energy
    with np.errstate(all="ignore"):
        lhs = np.diff(e3) / np.diff(t)
        rhs = 0.5 * (weight[1:] + weight[:-1])
        finite = np.isfinite(lhs) & np.isfinite(rhs)
        covered = finite & (rhs > rhs_floor)
        ratios = np.where(covered, lhs / np.where(covered, rhs, 1.0), -np.inf)
    # signed: in the smoothing regime the energy decays and C_hat < 0
    c_hat = float(np.max(ratios)) if np.any(covered) else 0.0
    bare = finite & ~covered
    residual = float(np.max(np.maximum(lhs[bare], 0.0), initial=0.0))
    if not np.all(finite):
        notes.append(f"{int(np.sum(~finite))} non-finite intervals skipped")
    bad = [int(i) for i in np.flatnonzero(bare & (lhs > 0))]
    return Verdict(
        check="apriori_rate",
        passed=math.isfinite(c_hat) and residual == 0.0 and np.all(finite),
        tolerance=None,
        worst_violation=residual,
        violations=bad,
        fitted_constants={"C_hat": c_hat, "residual": residual},
        notes=notes,
    )


# -- two-run stability --------------------------------------------------------


def _common_indices(ta, tb, rtol=1e-9):
    ia, ib = [], []
    j = 0
    for i, t in enumerate(ta):
        while j < len(tb) and tb[j] < t - rtol * max(1.0, abs(t)):
            j += 1
        if j < len(tb) and abs(tb[j] - t) <= rtol * max(1.0, abs(t)):
            ia.append(i)
            ib.append(j)
    return ia, ib


def stability_compare(a: RunReport, b: RunReport, mu: float) -> Verdict:
    """Fit log D(t) <= log D(0) + K Lambda(t) for the weighted difference D.

    D(t) is the tilde-L^{2,mu} norm of f_A - f_B and Lambda(t) the time
    integral of 1 + ||f_A||^2 + ||f_B||^2 in C^{2,gamma}_gamma.  K is the
    least-squares slope through the origin; the overall prefactor
    exp(max residual) absorbs the constant in front of the envelope and must
    stay below STABILITY_MAX_PREFACTOR.
    """
    sa, sb = a.snapshots[0], b.snapshots[0]
    if sa.n != sb.n or not math.isclose(sa.L, sb.L) or a.config.get("geometry") != b.config.get("geometry"):
        raise ValueError("runs do not share grid and geometry")
    ia, ib = _common_indices(a.times, b.times)
    if not ia:
        raise ValueError("runs share no record times")
    t = a.times[ia]
    D = np.array([
        local_norm(a.snapshots[i].with_samples(np.abs(a.snapshots[i].samples - b.snapshots[j].samples)),
                   TildeL2Mu(mu))
        for i, j in zip(ia, ib)
    ])
    growth = 1.0 + a["c2_gamma_gamma"][ia] ** 2 + b["c2_gamma_gamma"][ib] ** 2
    lam = integrate.cumulative_trapezoid(growth, t, initial=0.0)
    constants = {"mu": mu, "D0": float(D[0]), "times": t.tolist(), "D": D.tolist()}
    if np.all(D == 0):
        constants.update(K=0.0, prefactor=1.0)
        return Verdict("stability", True, STABILITY_MAX_PREFACTOR, 0.0, [], constants,
                       ["identical runs"])
    if D[0] == 0 or np.any(D == 0):
        return Verdict("stability", False, STABILITY_MAX_PREFACTOR, math.inf, [], constants,
                       ["difference vanishes at some record but not all"])
    y = np.log(D / D[0])
    later = lam > 0
    K = float(np.sum(y[later] * lam[later]) / np.sum(lam[later] ** 2)) if np.any(later) else 0.0
    resid = y - K * lam
    prefactor = float(math.exp(np.max(resid)))
    half = max(1, len(t) // 2)
    slopes = []
    for sl in (slice(0, half + 1), slice(half, len(t))):
        dl = lam[sl][-1] - lam[sl][0]
        slopes.append(float((y[sl][-1] - y[sl][0]) / dl) if dl > 0 else 0.0)
    constants.update(K=K, prefactor=prefactor, early_slope=slopes[0], late_slope=slopes[1])
    viol = [int(i) for i in np.flatnonzero(resid > math.log(STABILITY_MAX_PREFACTOR))]
    return Verdict(
        check="stability",
        passed=math.isfinite(K) and prefactor <= STABILITY_MAX_PREFACTOR,
        tolerance=STABILITY_MAX_PREFACTOR,
        worst_violation=prefactor,
        violations=viol,
        fitted_constants=constants,
    )
