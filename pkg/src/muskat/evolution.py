"""Right-hand side assembly, initial lift, RK4 time stepping and epsilon continuation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AbortError, QuadratureError, RangeError
from .grid import (
    CkGammaGamma,
    CkGammaHolder,
    GridFunction,
    TildeHkGamma,
    _diff,
    build_mollifier,
    local_norm,
    mollify,
    sample_profile,
    tilde_l2,
)
from .kernels import HalfPlane, Plane, RhsForm, Strip, pv_all
from .monitors import RunReport

log = logging.getLogger(__name__)

__all__ = [
    "FixedDt",
    "AdaptiveDt",
    "SimState",
    "SolverConfig",
    "lift_initial",
    "rhs",
    "step",
    "run",
    "ContinuationReport",
    "epsilon_continuation",
]

MAX_HALVINGS = 8
# a step whose update exceeds this multiple of dt*||k1|| is treated as a spike
SPIKE_FACTOR = 4.0


@dataclass(frozen=True)
class FixedDt:
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"fixed dt must be positive, got {self.dt}")


@dataclass(frozen=True)
class AdaptiveDt:
    """dt = safety * dx / (1 + ||F'||_inf), halved on guard breaches."""

    safety: float = 0.5

    def __post_init__(self):
        if not self.safety > 0:
            raise ValueError(f"safety factor must be positive, got {self.safety}")


@dataclass(frozen=True)
class SimState:
    t: float
    eps: float
    f: GridFunction
    geometry: object


@dataclass(frozen=True)
class SolverConfig:
    geometry: object
    L: float
    n: int
    t_end: float
    profile: dict
    gamma: float = 0.5
    dt: FixedDt | AdaptiveDt = field(default_factory=AdaptiveDt)
    epsilons: tuple = (0.0,)
    y_max: float | None = None
    form: RhsForm = RhsForm.PRIMARY
    cadence: float | None = None
    output_dir: str | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 0.5:
            raise ValueError(
                f"gamma must lie in (0, 1/2], got {self.gamma}; larger exponents reduce to 1/2"
            )
        if not self.t_end > 0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if self.cadence is not None and not self.cadence > 0:
            raise ValueError(f"cadence must be positive, got {self.cadence}")
        if not self.epsilons:
            raise ValueError("at least one epsilon is required")
        dx = 2.0 * self.L / self.n
        for eps in self.epsilons:
            # the mollifier itself is only defined for eps < 1/2
            if eps < 0 or eps >= 0.5:
                raise ValueError(f"epsilon must lie in [0, 1/2), got {eps}")
            if 0 < eps < 2.0 * dx * (1.0 - 1e-12):
                raise ValueError(f"epsilon {eps:g} is under-resolved: need eps >= 2 dx = {2 * dx:g}")
        if self.form is RhsForm.ALTERNATE and not isinstance(self.geometry, HalfPlane):
            raise ValueError("the alternate form is only defined on the half-plane")

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def record_interval(self) -> float:
        return self.cadence if self.cadence is not None else self.t_end / 20.0


def lift_initial(psi: GridFunction, eps: float, geometry) -> GridFunction:
    """Mollify and raise the initial datum by 2 eps.

    On a strip of height l the mollified datum is first compressed by
    (1 - 4 eps / l) so that the lifted datum lies in [2 eps, l - 2 eps].
    ``eps = 0`` returns psi unchanged.
    """
    geometry.check_range(psi.samples, what="initial datum")
    if eps == 0:
        return psi
    smooth = mollify(psi, build_mollifier(eps)).samples
    if isinstance(geometry, Strip):
        lifted = (1.0 - 4.0 * eps / geometry.l) * smooth + 2.0 * eps
    else:
        lifted = smooth + 2.0 * eps
    out = psi.with_samples(lifted)
    geometry.check_range(out.samples, what="lifted datum")
    return out


def _check_floor(state: SimState):
    """Raise AbortError if the state breaches the eps/2 distance to the walls."""
    f = state.f.samples
    geom, eps = state.geometry, state.eps
    if not np.all(np.isfinite(f)):
        raise AbortError("NaN", "non-finite interface samples", t=state.t)
    if eps > 0 and not isinstance(geom, Plane):
        fmin = float(np.min(f))
        if fmin < 0.5 * eps:
            raise AbortError("range breach", f"min f = {fmin:.6g} < eps/2 = {0.5 * eps:g}",
                             t=state.t, details={"min_f": fmin})
        if isinstance(geom, Strip):
            fmax = float(np.max(f))
            if fmax > geom.l - 0.5 * eps:
                raise AbortError("range breach", f"max f = {fmax:.6g} > l - eps/2",
                                 t=state.t, details={"max_f": fmax})
    else:
        try:
            geom.check_range(f)
        except RangeError as exc:
            raise AbortError("range breach", str(exc), t=state.t) from exc


def rhs(state: SimState, form: RhsForm = RhsForm.PRIMARY, y_max: float | None = None,
        workers: int | None = None) -> GridFunction:
    """f_t for the state: the direct equation at eps = 0, else phi * PV[phi * f]."""
    _check_floor(state)
    f = state.f
    if state.eps == 0:
        return f.with_samples(pv_all(state.geometry, f, form, y_max=y_max, workers=workers))
    m = build_mollifier(state.eps)
    F = mollify(f, m)
    inner = pv_all(state.geometry, F, form, y_max=y_max, workers=workers)
    return mollify(f.with_samples(inner), m)


def _driving(state: SimState) -> GridFunction:
    if state.eps == 0:
        return state.f
    return mollify(state.f, build_mollifier(state.eps))


def adaptive_dt(state: SimState, safety: float) -> float:
    F = _driving(state)
    slope = float(np.max(np.abs(_diff(F.samples, F.dx, 1))))
    return safety * F.dx / (1.0 + slope)


def _rk4(state: SimState, dt: float, rhs_fn):
    f0 = state.f.samples
    k1 = rhs_fn(state)
    stage = lambda c, k: replace(state, t=state.t + c * dt, f=state.f.with_samples(f0 + c * dt * k))  # noqa: E731
    k2 = rhs_fn(stage(0.5, k1))
    k3 = rhs_fn(stage(0.5, k2))
    k4 = rhs_fn(stage(1.0, k3))
    return f0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), k1


def _trial(state: SimState, dt: float, rhs_fn) -> SimState:
    """One RK4 step followed by the guards; guard failures raise AbortError."""
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            new, k1 = _rk4(state, dt, rhs_fn)
    except (RangeError, QuadratureError) as exc:
        raise AbortError("range breach", f"stage evaluation failed: {exc}", t=state.t) from exc
    except (FloatingPointError, ValueError) as exc:
        # a non-finite stage state is rejected by the GridFunction constructor
        raise AbortError("NaN", str(exc), t=state.t) from exc
    if not np.all(np.isfinite(new)):
        raise AbortError("NaN", "non-finite samples after step", t=state.t)
    nxt = replace(state, t=state.t + dt, f=state.f.with_samples(new))
    _check_floor(nxt)
    jump = float(np.max(np.abs(new - state.f.samples)))
    allowed = SPIKE_FACTOR * dt * float(np.max(np.abs(k1))) + 1e-14
    if jump > allowed:
        raise AbortError("range breach", f"norm spike: |df| = {jump:.3g} > {allowed:.3g}",
                         t=state.t, details={"spike": jump})
    return nxt


def _samples_rhs(form, y_max, workers):
    return lambda s: rhs(s, form, y_max, workers).samples


def step(state: SimState, dt: float, *, form: RhsForm = RhsForm.PRIMARY,
         y_max: float | None = None, adaptive: bool = True,
         max_halvings: int = MAX_HALVINGS, rhs_fn=None, workers: int | None = None) -> SimState:
    """Advance by one classical RK4 step.

    With ``adaptive`` the step is retried with dt halved, up to ``max_halvings``
    times, whenever the trial breaches the NaN, wall-distance or spike guards;
    the returned state's ``t`` shows the dt actually taken.  ``rhs_fn`` maps a
    state to an array of f_t samples and defaults to :func:`rhs`.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    rhs_fn = rhs_fn or _samples_rhs(form, y_max, workers)
    trial_dt = dt
    for attempt in range(max_halvings + 1):
        try:
            return _trial(state, trial_dt, rhs_fn)
        except AbortError as exc:
            if not adaptive:
                raise
            log.debug("t=%.6g: %s; halving dt %.3g", state.t, exc, trial_dt)
            last = exc
            trial_dt *= 0.5
    raise AbortError(
        "dt collapse",
        f"{max_halvings} halvings did not clear the guards (last: {last})",
        t=state.t,
        details={"dt": trial_dt * 2.0, "last_reason": last.reason, **last.details},
    )


def _record(report_rows, state: SimState, cfg: SolverConfig, rhs_fn):
    f = state.f
    g = cfg.gamma
    derivs = [f.with_samples(_diff(f.samples, f.dx, k)) for k in (1, 2, 3)]
    ft = rhs_fn(state)
    report_rows.append({
        "t": state.t,
        "tilde_h3_gamma": local_norm(f, TildeHkGamma(3, g)),
        "c2_gamma_gamma": local_norm(f, CkGammaGamma(2, g)),
        "l2_d1": tilde_l2(derivs[0]),
        "l2_d2": tilde_l2(derivs[1]),
        "l2_d3": tilde_l2(derivs[2]),
        "sup_f": float(np.max(f.samples)),
        "inf_f": float(np.min(f.samples)),
        "rhs_sup": float(np.max(np.abs(ft))),
        "blowup_integrand": local_norm(derivs[0], CkGammaHolder(1, g)) ** 4,
        "snapshot": f,
    })


def run(config: SolverConfig, eps: float | None = None, psi: GridFunction | None = None,
        workers: int | None = None) -> RunReport:
    """March one epsilon member of ``config`` from its lifted datum to t_end.

    Records at every multiple of the cadence (the step is shortened to land on
    each record time exactly).  Aborts are caught and embedded in the report.
    """
    eps = config.epsilons[0] if eps is None else eps
    geom = config.geometry
    timings = {}
    t0 = time.perf_counter()
    if psi is None:
        psi = sample_profile(config.profile, config.L, config.n, geometry=geom)
    state = SimState(0.0, eps, lift_initial(psi, eps, geom), geom)
    rhs_fn = _samples_rhs(config.form, config.y_max, workers)
    rows: list[dict] = []
    _record(rows, state, config, rhs_fn)
    timings["setup"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    interval = config.record_interval
    n_records = max(1, int(math.ceil(config.t_end / interval - 1e-9)))
    record_times = [min(config.t_end, (i + 1) * interval) for i in range(n_records)]
    adaptive = isinstance(config.dt, AdaptiveDt)
    abort = None
    steps = 0
    dt_min, dt_max = math.inf, 0.0
    try:
        for t_rec in record_times:
            while t_rec - state.t > 1e-12 * max(1.0, t_rec):
                dt = adaptive_dt(state, config.dt.safety) if adaptive else config.dt.dt
                dt = min(dt, t_rec - state.t)
                new = step(state, dt, adaptive=adaptive, rhs_fn=rhs_fn)
                dt_min = min(dt_min, new.t - state.t)
                dt_max = max(dt_max, new.t - state.t)
                # land exactly on the record time despite rounding in t + dt
                state = replace(new, t=t_rec) if abs(new.t - t_rec) <= 1e-12 * max(1.0, t_rec) else new
                steps += 1
            _record(rows, state, config, rhs_fn)
    except AbortError as exc:
        log.warning("run aborted at t=%.6g: %s", state.t, exc)
        abort = {"reason": exc.reason, "message": str(exc), "t": exc.t, "details": exc.details}
    timings["march"] = time.perf_counter() - t0
    return RunReport.from_rows(
        rows,
        config=config_to_json(config),
        eps=eps,
        abort=abort,
        stats={"steps": steps, "dt_min": dt_min if steps else None,
               "dt_max": dt_max if steps else None, "dx": config.dx},
        timings=timings,
    )


def config_to_json(cfg: SolverConfig) -> dict:
    from .kernels import geometry_to_json

    dt = {"fixed": cfg.dt.dt} if isinstance(cfg.dt, FixedDt) else {"adaptive": cfg.dt.safety}
    return {
        "geometry": geometry_to_json(cfg.geometry),
        "L": cfg.L,
        "n": cfg.n,
        "gamma": cfg.gamma,
        "t_end": cfg.t_end,
        "dt": dt,
        "epsilons": list(cfg.epsilons),
        "y_max": cfg.L if cfg.y_max is None else cfg.y_max,
        "form": cfg.form.value,
        "profile": cfg.profile,
        "cadence": cfg.record_interval,
        "output_dir": cfg.output_dir,
        "seed": cfg.seed,
    }


@dataclass
class ContinuationReport:
    """Differences d_k between successive epsilon members at t_end.

    ``slope`` is the least-squares slope of log d_k against log eps_k and
    ``extrapolated`` the Richardson limit of the two smallest members under
    the assumed exponent ``rate``.
    """

    epsilons: list
    reports: list
    differences: list
    slope: float | None
    rate: float
    extrapolated: GridFunction | None
    partial: bool

    def to_json(self) -> dict:
        return {
            "epsilons": self.epsilons,
            "differences": self.differences,
            "slope": self.slope,
            "assumed_rate": self.rate,
            "partial": self.partial,
            "aborts": [r.abort for r in self.reports],
        }


def epsilon_continuation(config: SolverConfig, rate: float = 0.5,
                         workers: int | None = None) -> ContinuationReport:
    eps_list = [float(e) for e in config.epsilons]
    if any(e <= 0 for e in eps_list):
        raise ValueError("continuation needs strictly positive epsilons")
    psi = sample_profile(config.profile, config.L, config.n, geometry=config.geometry)
    reports = [run(config, eps=e, psi=psi, workers=workers) for e in eps_list]
    partial = any(r.abort is not None for r in reports)
    finals = [r.snapshots[-1] for r in reports]
    diffs = [
        tilde_l2(a.with_samples(a.samples - b.samples)) for a, b in zip(finals, finals[1:])
    ]
    slope = None
    usable = [(e, d) for e, d in zip(eps_list, diffs) if d > 0]
    if len(usable) >= 2:
        le, ld = np.log([u[0] for u in usable]), np.log([u[1] for u in usable])
        slope = float(np.polyfit(le, ld, 1)[0])
    extrapolated = None
    if len(finals) >= 2 and not partial:
        e1, e2 = eps_list[-2], eps_list[-1]
        w = (e2 / e1) ** rate
        f1, f2 = finals[-2].samples, finals[-1].samples
        extrapolated = finals[-1].with_samples((f2 - w * f1) / (1.0 - w)) if w != 1 else finals[-1]
    return ContinuationReport(eps_list, reports, diffs, slope, rate, extrapolated, partial)

