"""Epsilon sweeps, log-log rate fitting, invariant suites and CSV/plot emission.

A sweep runs the kinetic solver once per epsilon against a single macroscopic
reference trajectory (the limit equation does not depend on epsilon), reduces
each distance history to one number, and fits ``log err = s log eps + c`` by
ordinary least squares.
"""
from __future__ import annotations

import configparser
import csv
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .functionals import (
    check_ckp,
    check_coercivity,
    check_log_sobolev,
    check_sharp_ckp,
    energy_balance_residual,
    entropy_decomposition,
    kinetic_energy_bound,
    relative_entropy,
)
from .grid import Field, PhaseGrid, SpatialGrid, VelocityGrid
from .kinetic import DISTANCE_KEYS, KineticRun, KineticRunConfig, run
from .macrolimits import (
    MacroRunConfig,
    MacroTrajectory,
    corrector_divergence_check,
    gyro_average,
    gyro_generator,
    hilbert_corrector_check,
    run_macro,
)
from .metrics import NodeSet, bl_distance, bl_estimate, exhaustive_lp, w1_1d
from .states import (
    DataKind,
    KineticState,
    Regime,
    ScalingRegime,
    prepared_data,
    single_mode_velocity,
    smooth_density,
)

__all__ = [
    "SweepConfig",
    "SweepResult",
    "MemberResult",
    "SlopeFit",
    "SuiteReport",
    "METRICS",
    "default_sweep",
    "load_config",
    "dump_config",
    "fit_slope",
    "run_member",
    "run_sweep",
    "check_suite",
    "random_kinetic_state",
    "write_run_csv",
    "report_row",
    "write_summary_csv",
    "write_gnuplot",
    "write_plots",
    "RUN_CSV_HEADER",
    "SUMMARY_CSV_HEADER",
]

log = logging.getLogger(__name__)

METRICS = (
    "modE",
    "L1_f",
    "L1_rho",
    "Hneg_rho",
    "dBL_rho",
    "dBL_f",
    "momentum_L1",
    "momentum_dBLT",
)

RUN_CSV_HEADER = (
    "t",
    "H",
    "K",
    "F",
    "P",
    "D",
    "relH",
    "relP",
    "modE",
    "dec_micro",
    "dec_density",
    "dec_velocity",
) + DISTANCE_KEYS
SUMMARY_CSV_HEADER = ("eps", "metric", "value", "slope_window")

DEFAULT_EPS = {
    Regime.DIFFUSIVE: (0.2, 0.1, 0.05, 0.025),
    Regime.HIGHFIELD: (0.4, 0.2, 0.1, 0.05),
    Regime.GSQG: (0.4, 0.2, 0.1),
}
# the mildly-prepared diffusive error is pre-asymptotic at eps = 0.2, so that
# study starts one octave lower
MILD_DIFFUSIVE_EPS = (0.1, 0.05, 0.025, 0.0125)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class GridSpec:
    dim: int = 1
    nx: int = 64
    nv: int = 64
    vmax: float = 8.0

    def phase_grid(self) -> PhaseGrid:
        return PhaseGrid(SpatialGrid(self.dim, self.nx), VelocityGrid(self.dim, self.nv, self.vmax))


@dataclass(frozen=True)
class SweepConfig:
    """Everything one epsilon study needs.

    ``thresholds`` maps metric names to the minimum acceptable fitted slope;
    ``slope_window = (lo, hi)`` restricts the fit to ``lo <= eps <= hi``.
    """

    regime: Regime
    eps_list: tuple[float, ...]
    alpha: float
    data_kind: DataKind = DataKind.WELL_PREPARED
    delta: float = 1.0
    grid: GridSpec = GridSpec()
    t_end: float = 0.5
    metrics: tuple[str, ...] = ("modE", "L1_rho")
    thresholds: dict = field(default_factory=dict)
    slope_window: tuple[float, float] | None = None
    seed: int = 0
    reports: int = 10
    macro_dt: float = 1e-3
    relax_factor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        object.__setattr__(self, "data_kind", DataKind(self.data_kind))
        eps = tuple(float(e) for e in self.eps_list)
        if len(eps) < 3:
            raise ValueError("a sweep needs at least three epsilon values")
        if any(e <= 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_list must be positive and strictly descending")
        object.__setattr__(self, "eps_list", eps)
        unknown = set(self.metrics) - set(METRICS)
        if unknown:
            raise ValueError(f"unknown metrics {sorted(unknown)}")
        unknown = set(self.thresholds) - set(self.metrics)
        if unknown:
            raise ValueError(f"thresholds for metrics not in the sweep: {sorted(unknown)}")
        if self.regime is Regime.GSQG and self.grid.dim != 2:
            raise ValueError("gSQG sweeps need dim = 2")
        if self.slope_window is not None:
            lo, hi = self.slope_window
            if not 0 < lo <= hi:
                raise ValueError("slope_window must satisfy 0 < lo <= hi")

    def regime_for(self, eps: float) -> ScalingRegime:
        return ScalingRegime.make(self.regime, eps, self.alpha)

    def window_label(self) -> str:
        if self.slope_window is None:
            return f"{min(self.eps_list):g}:{max(self.eps_list):g}"
        return f"{self.slope_window[0]:g}:{self.slope_window[1]:g}"


def default_sweep(regime, data_kind="well") -> SweepConfig:
    """The reference studies: metrics, grids and slope thresholds per regime."""
    regime = Regime(regime)
    kind = DataKind(data_kind)
    eps = DEFAULT_EPS[regime]
    if regime is Regime.DIFFUSIVE and kind is DataKind.WELL_PREPARED:
        th = {"modE": 1.7, "L1_rho": 0.8, "dBL_rho": 1.7, "momentum_L1": 0.8}
        return SweepConfig(regime, eps, 0.25, kind, metrics=tuple(th), thresholds=th)
    if regime is Regime.DIFFUSIVE:
        th = {"dBL_rho": 0.4}
        return SweepConfig(regime, MILD_DIFFUSIVE_EPS, 0.25, kind, delta=1.0, metrics=tuple(th), thresholds=th)
    if regime is Regime.GSQG:
        th = {"L1_rho": 0.4, "momentum_dBLT": 0.0}
        return SweepConfig(
            regime,
            eps,
            0.5,
            kind,
            delta=0.5,
            grid=GridSpec(2, 24, 24, 8.0),
            metrics=("L1_rho", "modE", "momentum_dBLT"),
            thresholds=th,
            macro_dt=1e-2,
        )
    th = {"Hneg_rho": 0.8, "momentum_L1": 0.4}
    return SweepConfig(regime, eps, 0.25, kind, delta=0.5, metrics=("Hneg_rho", "momentum_L1", "modE"), thresholds=th)


_SWEEP_KEYS = {
    "regime",
    "eps",
    "alpha",
    "data",
    "delta",
    "t_end",
    "metrics",
    "seed",
    "slope_window",
    "reports",
    "macro_dt",
    "relax_factor",
}
_GRID_KEYS = {"dim", "nx", "nv", "vmax"}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(s) for s in text.replace(",", " ").split())


def load_config(path) -> SweepConfig:
    """Read an INI-style sweep description.

    Sections ``[sweep]`` (required), ``[grid]`` and ``[thresholds]``; any other
    section or key is rejected.  Values missing from the file fall back to
    :func:`default_sweep` for the named regime and data kind.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    with open(path) as fh:
        cp.read_file(fh)
    extra = set(cp.sections()) - {"sweep", "grid", "thresholds"}
    if extra:
        raise ValueError(f"unknown config sections {sorted(extra)}")
    if "sweep" not in cp:
        raise ValueError("config needs a [sweep] section")
    sw = cp["sweep"]
    bad = set(sw) - _SWEEP_KEYS
    if bad:
        raise ValueError(f"unknown [sweep] keys {sorted(bad)}")
    if "regime" not in sw:
        raise ValueError("[sweep] needs a regime")
    base = default_sweep(sw["regime"].strip(), sw.get("data", "well").strip())
    kw: dict = {}
    if "eps" in sw:
        kw["eps_list"] = _floats(sw["eps"])
    for key, conv in (("alpha", float), ("delta", float), ("t_end", float), ("seed", int), ("reports", int),
                      ("macro_dt", float), ("relax_factor", float)):
        if key in sw:
            kw[key] = conv(sw[key])
    if "metrics" in sw:
        kw["metrics"] = tuple(sw["metrics"].replace(",", " ").split())
    if "slope_window" in sw:
        lo, hi = _floats(sw["slope_window"])
        kw["slope_window"] = (lo, hi)
    if "grid" in cp:
        bad = set(cp["grid"]) - _GRID_KEYS
        if bad:
            raise ValueError(f"unknown [grid] keys {sorted(bad)}")
        g = cp["grid"]
        kw["grid"] = GridSpec(
            int(g.get("dim", base.grid.dim)),
            int(g.get("nx", base.grid.nx)),
            int(g.get("nv", base.grid.nv)),
            float(g.get("vmax", base.grid.vmax)),
        )
    metrics = kw.get("metrics", base.metrics)
    if "thresholds" in cp:
        th = {k: float(v) for k, v in cp["thresholds"].items()}
    else:
        th = {k: v for k, v in base.thresholds.items() if k in metrics}
    kw["thresholds"] = th
    return replace(base, **kw)


def dump_config(cfg: SweepConfig, path) -> None:
    """Write ``cfg`` in the format :func:`load_config` reads."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["sweep"] = {
        "regime": cfg.regime.value,
        "eps": ", ".join(f"{e:g}" for e in cfg.eps_list),
        "alpha": repr(cfg.alpha),
        "data": cfg.data_kind.value,
        "delta": repr(cfg.delta),
        "t_end": repr(cfg.t_end),
        "metrics": ", ".join(cfg.metrics),
        "seed": str(cfg.seed),
        "reports": str(cfg.reports),
        "macro_dt": repr(cfg.macro_dt),
        "relax_factor": repr(cfg.relax_factor),
    }
    if cfg.slope_window is not None:
        cp["sweep"]["slope_window"] = f"{cfg.slope_window[0]!r}, {cfg.slope_window[1]!r}"
    cp["grid"] = {k: str(v) for k, v in asdict(cfg.grid).items()}
    cp["thresholds"] = {k: repr(v) for k, v in cfg.thresholds.items()}
    with open(path, "w") as fh:
        cp.write(fh)


# ---------------------------------------------------------------------------
# slope fitting


RESIDUAL_FLAG = 0.1


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    residual: float
    npoints: int
    threshold: float = float("nan")

    @property
    def passed(self) -> bool:
        return bool(math.isnan(self.threshold) or self.slope >= self.threshold)

    @property
    def flagged(self) -> bool:
        """True when the points bend away from a straight line (largest log deviation above ``RESIDUAL_FLAG``)."""
        return bool(not math.isfinite(self.residual) or self.residual > RESIDUAL_FLAG)


def fit_slope(points: Iterable[tuple[float, float]]) -> tuple[float, float, float]:
    """Least-squares line through ``(log eps, log err)``.

    Returns ``(slope, intercept, residual)`` where ``residual`` is the largest
    absolute deviation of a point from the line in log space.  Points with a
    nonpositive error are dropped with a warning; fewer than three survivors is
    an error.
    """
    pts = [(float(e), float(v)) for e, v in points]
    keep = [(e, v) for e, v in pts if v > 0 and e > 0 and math.isfinite(v)]
    if len(keep) < len(pts):
        warnings.warn(f"fit_slope: dropped {len(pts) - len(keep)} nonpositive or non-finite point(s)", stacklevel=2)
    if len(keep) < 3:
        raise ValueError("fit_slope needs at least three positive points")
    le = np.log([e for e, _ in keep])
    lv = np.log([v for _, v in keep])
    slope, intercept = np.polyfit(le, lv, 1)
    resid = float(np.max(np.abs(lv - (slope * le + intercept))))
    return float(slope), float(intercept), resid


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class MemberResult:
    eps: float
    errors: dict
    rows: list = field(default_factory=list)
    H0: float = float("nan")
    dt: float = float("nan")
    steps: int = 0
    seconds: float = 0.0
    failure: str | None = None


@dataclass
class SweepResult:
    config: SweepConfig
    members: list
    slopes: dict
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.slopes.values())

    def table(self) -> dict:
        """``{metric: [(eps, value), ...]}`` over surviving members."""
        out = {m: [] for m in self.config.metrics}
        for mem in self.members:
            if mem.failure is None:
                for m in self.config.metrics:
                    out[m].append((mem.eps, mem.errors[m]))
        return out


def _initial_density(cfg: SweepConfig) -> Field:
    return smooth_density(SpatialGrid(cfg.grid.dim, cfg.grid.nx))


def _reference(cfg: SweepConfig) -> MacroTrajectory:
    reg = cfg.regime_for(cfg.eps_list[-1])
    return run_macro(_initial_density(cfg), MacroRunConfig(reg, cfg.macro_dt, cfg.t_end))


def _needed_distances(metrics: Sequence[str]) -> set[str]:
    need = {m for m in metrics if m in DISTANCE_KEYS}
    if "momentum_L1" in metrics:
        need.add("mom_err")
    return need


def _reduce(cfg: SweepConfig, eps: float, kr: KineticRun) -> dict:
    out = {}
    for m in cfg.metrics:
        if m == "modE":
            out[m] = max(r.modE for r in kr.trace)
        elif m == "momentum_L1":
            if cfg.regime is Regime.DIFFUSIVE:
                out[m] = kr.momentum_integral
            else:
                out[m] = max(d["mom_err"] for d in kr.distances)
        elif m == "momentum_dBLT":
            out[m] = kr.momentum_timespace / eps
        else:
            out[m] = max(d[m] for d in kr.distances)
    return out


def run_member(cfg: SweepConfig, eps: float, reference: MacroTrajectory) -> MemberResult:
    """One kinetic run of the sweep, reduced to one error per metric."""
    t0 = time.perf_counter()
    try:
        reg = cfg.regime_for(eps)
        grid = cfg.grid.phase_grid()
        rho0 = _initial_density(cfg)
        v = single_mode_velocity(rho0.grid) if cfg.data_kind is DataKind.MILDLY_PREPARED else None
        init = prepared_data(cfg.data_kind, reg, rho0, v, cfg.delta, grid.velocity)
        kcfg = KineticRunConfig(reg, grid, cfg.t_end, report_interval=cfg.t_end / cfg.reports,
                                relax_factor=cfg.relax_factor)
        kr = run(
            init,
            kcfg,
            macro_ref=reference,
            metrics=_needed_distances(cfg.metrics),
            momentum_timespace="momentum_dBLT" in cfg.metrics,
        )
    except Exception as exc:  # a failed member is recorded, the sweep goes on
        log.warning("sweep member eps=%g failed: %s", eps, exc)
        return MemberResult(eps, {}, failure=f"{type(exc).__name__}: {exc}",
                            seconds=time.perf_counter() - t0)
    rows = [report_row(r, d) for r, d in zip(kr.trace, kr.distances)]
    return MemberResult(
        eps,
        _reduce(cfg, eps, kr),
        rows,
        H0=kr.trace[0].relH,
        dt=kr.dt,
        steps=kr.steps,
        seconds=time.perf_counter() - t0,
    )


def report_row(rep, dist) -> dict:
    row = {"t": rep.time}
    d = rep.as_dict()
    for k in RUN_CSV_HEADER[1:12]:
        row[k] = d[k]
    for k in DISTANCE_KEYS:
        row[k] = dist.get(k, float("nan"))
    return row


def _in_window(cfg: SweepConfig, eps: float) -> bool:
    if cfg.slope_window is None:
        return True
    lo, hi = cfg.slope_window
    return lo * (1 - 1e-12) <= eps <= hi * (1 + 1e-12)


def fit_members(cfg: SweepConfig, members: Sequence[MemberResult]) -> dict:
    fits = {}
    ok = [m for m in members if m.failure is None]
    for metric in cfg.metrics:
        pts = [(m.eps, m.errors[metric]) for m in ok if _in_window(cfg, m.eps)]
        th = cfg.thresholds.get(metric, float("nan"))
        try:
            s, c, r = fit_slope(pts)
        except ValueError:
            fits[metric] = SlopeFit(float("nan"), float("nan"), float("nan"), len(pts), th)
            continue
        fits[metric] = SlopeFit(s, c, r, len(pts), th)
    return fits


def _member_job(args):
    return run_member(*args)


def run_sweep(
    cfg: SweepConfig,
    workers: int = 1,
    out_dir=None,
    plots: bool = True,
    progress: Callable[[MemberResult], None] | None = None,
) -> SweepResult:
    """Solve the limit once, run every epsilon, fit slopes, optionally write reports."""
    t0 = time.perf_counter()
    reference = _reference(cfg)
    jobs = [(cfg, eps, reference) for eps in cfg.eps_list]
    members: list[MemberResult] = []
    if workers <= 1:
        for job in jobs:
            members.append(_member_job(job))
            if progress:
                progress(members[-1])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for mem in pool.map(_member_job, jobs):
                members.append(mem)
                if progress:
                    progress(mem)
    members.sort(key=lambda m: -m.eps)
    result = SweepResult(cfg, members, fit_members(cfg, members), time.perf_counter() - t0)
    if out_dir is not None:
        write_sweep(result, out_dir, plots=plots)
    return result


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    return repr(float(v))


def write_run_csv(path, rows: Sequence[dict]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RUN_CSV_HEADER)
        for row in rows:
            w.writerow([_fmt(row.get(k, float("nan"))) for k in RUN_CSV_HEADER])
    return path


def write_summary_csv(path, result: SweepResult) -> Path:
    path = Path(path)
    label = result.config.window_label()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_CSV_HEADER)
        for mem in result.members:
            if mem.failure is not None:
                continue
            for metric in result.config.metrics:
                w.writerow([_fmt(mem.eps), metric, _fmt(mem.errors[metric]), label])
    return path


def write_slopes_csv(path, result: SweepResult) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("metric", "slope", "intercept", "residual", "npoints", "threshold", "passed", "flagged"))
        for metric, s in result.slopes.items():
            w.writerow([metric, _fmt(s.slope), _fmt(s.intercept), _fmt(s.residual), s.npoints,
                        _fmt(s.threshold), int(s.passed), int(s.flagged)])
    return path


def run_csv_name(eps: float) -> str:
    return f"run_eps{eps:g}.csv"


def write_gnuplot(path, result: SweepResult) -> Path:
    """A gnuplot script drawing the log-log rates and the per-run histories from the CSVs."""
    path = Path(path)
    metrics = result.config.metrics
    lines = [
        "# usage: gnuplot sweep.gp  (run inside the output directory)",
        "set datafile separator ','",
        "set terminal pngcairo size 800,600",
        "set logscale xy",
        "set key left top",
        "set xlabel 'epsilon'",
        "set ylabel 'error'",
        "set output 'rates_gnuplot.png'",
    ]
    plots = []
    for m in metrics:
        s = result.slopes[m]
        plots.append(f"'summary.csv' using 1:(strcol(2) eq '{m}' ? $3 : 1/0) with linespoints "
                     f"title '{m} (slope {s.slope:.2f})'")
    lines.append("plot " + ", \\\n     ".join(plots))
    cols = {name: i + 1 for i, name in enumerate(RUN_CSV_HEADER)}
    lines += ["unset logscale", "set logscale y", "set xlabel 't'"]
    for m in metrics:
        key = "mom_err" if m == "momentum_L1" else m
        if key not in cols:
            continue
        lines.append(f"set output 'history_{key}.png'")
        lines.append(f"set ylabel '{key}'")
        runs = [
            f"'{run_csv_name(mem.eps)}' using 1:{cols[key]} every ::1 with lines title 'eps={mem.eps:g}'"
            for mem in result.members
            if mem.failure is None
        ]
        lines.append("plot " + ", \\\n     ".join(runs))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_plots(out_dir, result: SweepResult) -> list[Path]:
    """Matplotlib PNGs of the fitted rates and of each metric's time history."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    paths = []
    table = result.table()
    fig, ax = plt.subplots(figsize=(7, 5))
    for metric, pts in table.items():
        pts = [(e, v) for e, v in pts if v > 0]
        if not pts:
            continue
        e, v = np.array(pts).T
        s = result.slopes[metric]
        ax.loglog(e, v, "o-", label=f"{metric}: slope {s.slope:.2f}")
        if math.isfinite(s.slope):
            ax.loglog(e, np.exp(s.intercept) * e**s.slope, "k:", lw=0.8)
    ax.set_xlabel(r"$\varepsilon$")
    ax.set_ylabel("error")
    ax.set_title(f"{result.config.regime.value}, {result.config.data_kind.value}")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=9)
    p = out_dir / "rates.png"
    fig.savefig(p, bbox_inches="tight", dpi=120)
    plt.close(fig)
    paths.append(p)

    keys = sorted({"mom_err" if m == "momentum_L1" else m for m in result.config.metrics} & set(RUN_CSV_HEADER))
    for key in keys:
        fig, ax = plt.subplots(figsize=(7, 5))
        for mem in result.members:
            if mem.failure is None and mem.rows:
                t = [r["t"] for r in mem.rows]
                ax.semilogy(t, [max(r[key], 1e-300) for r in mem.rows], label=f"eps={mem.eps:g}")
        ax.set_xlabel("t")
        ax.set_ylabel(key)
        ax.legend(fontsize=9)
        p = out_dir / f"history_{key}.png"
        fig.savefig(p, bbox_inches="tight", dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths


def write_sweep(result: SweepResult, out_dir, plots: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for mem in result.members:
        if mem.failure is None:
            write_run_csv(out / run_csv_name(mem.eps), mem.rows)
    write_summary_csv(out / "summary.csv", result)
    write_slopes_csv(out / "slopes.csv", result)
    dump_config(result.config, out / "sweep.ini")
    write_gnuplot(out / "sweep.gp", result)
    if plots:
        write_plots(out, result)
    return out


# ---------------------------------------------------------------------------
# invariant suites


@dataclass
class SuiteReport:
    name: str
    checks: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def add(self, key: str, passed: bool, value: float, limit: float) -> None:
        self.checks[key] = {"passed": bool(passed), "value": float(value), "limit": float(limit)}

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "seconds": self.seconds, "checks": self.checks}


def random_kinetic_state(
    grid: PhaseGrid,
    rng: np.random.Generator,
    n_bumps: int = 3,
    drift: float = 1.5,
    temperature: tuple[float, float] = (0.6, 1.6),
) -> KineticState:
    """A positive, velocity-resolved state: a random mixture of local Maxwellians.

    Each component has its own smooth positive density, a constant drift with
    entries in ``[-drift, drift]`` and a temperature drawn from ``temperature``;
    the total mass is normalized to one.
    """
    space = grid.space
    f = np.zeros(grid.shape)
    for _ in range(n_bumps):
        rho = np.full(space.shape, rng.uniform(0.2, 1.0))
        for _ in range(3):
            k = rng.integers(-3, 4, size=space.dim)
            phase = rng.uniform(0, 2 * np.pi)
            arg = sum(ki * xi for ki, xi in zip(k, space.mesh))
            rho = rho + rng.uniform(0, 0.3) * (1 + np.cos(arg + phase))
        u = np.broadcast_to(rng.uniform(-drift, drift, size=(space.dim,) + (1,) * space.dim), (space.dim,) + space.shape)
        temp = rng.uniform(*temperature)
        expand = (Ellipsis,) + (None,) * space.dim
        scaled = [c / math.sqrt(temp) for c in grid.xi]
        dist2 = sum((c - u[i][expand] / math.sqrt(temp)) ** 2 for i, c in enumerate(scaled))
        f += rho[expand] * np.exp(-0.5 * dist2) / (2 * np.pi * temp) ** (space.dim / 2)
    f /= f.sum() * grid.cell_volume
    return KineticState(grid, f)


def _random_density(space: SpatialGrid, rng: np.random.Generator) -> np.ndarray:
    rho = np.full(space.shape, 1.0)
    for _ in range(3):
        k = rng.integers(1, 4, size=space.dim)
        arg = sum(ki * xi for ki, xi in zip(k, space.mesh))
        rho = rho + rng.uniform(0, 0.3) * np.cos(arg + rng.uniform(0, 2 * np.pi))
    return rho


def _suite_functionals(rep: SuiteReport, rng: np.random.Generator, n: int) -> None:
    grid = PhaseGrid(SpatialGrid(1, 64), VelocityGrid(1, 64, 8.0))
    space = grid.space
    worst = {k: 0.0 for k in ("decomposition", "ckp", "sharp_ckp", "log_sobolev", "coercivity")}
    for _ in range(n):
        st = random_kinetic_state(grid, rng)
        rho = _random_density(space, rng)
        rho *= st.mass() / (rho.sum() * space.cell_volume)
        u = rng.uniform(-1, 1) * np.cos(space.mesh[0] + rng.uniform(0, 6.3))[None]
        parts = entropy_decomposition(st, rho, u)
        total = relative_entropy(st, rho, u)
        err = abs(sum(parts) - total) / max(abs(total), 1e-300)
        if min(parts) < -1e-12:
            err = max(err, 1.0)
        worst["decomposition"] = max(worst["decomposition"], err)

        p = rng.uniform(0.01, 1.0, 256)
        q = rng.uniform(0.01, 1.0, 256)
        p, q = p / p.sum(), q / q.sum()
        for key, chk in (("ckp", check_ckp(p, q)), ("sharp_ckp", check_sharp_ckp(p, q))):
            worst[key] = max(worst[key], chk.lhs - chk.rhs)
        chk = check_log_sobolev(st, u)
        worst["log_sobolev"] = max(worst["log_sobolev"], chk.lhs - chk.rhs)
        a = rng.uniform(0.0, 3.0, 256)
        b = rng.uniform(0.05, 3.0, 256)
        chk = check_coercivity(a, b)
        worst["coercivity"] = max(worst["coercivity"], 0.0 if chk.holds else chk.lhs - chk.rhs)
    rep.add("decomposition", worst["decomposition"] <= 1e-9, worst["decomposition"], 1e-9)
    for key in ("ckp", "sharp_ckp", "log_sobolev", "coercivity"):
        rep.add(key, worst[key] <= 1e-12, worst[key], 1e-12)


def _suite_metrics(rep: SuiteReport, rng: np.random.Generator, n: int) -> None:
    worst_rel = 0.0
    for shape in ((8, 8), (8, 8, 8)):
        nodes_p = (1.0,) * len(shape)
        for trial in range(max(1, n // 50)):
            a = rng.uniform(0, 1, shape)
            b = rng.uniform(0, 1, shape)
            w = a / a.sum() - b / b.sum()
            per = tuple(8.0 if i < len(shape) - 1 else None for i in range(len(shape)))
            nodes = NodeSet(w, nodes_p, per)
            est = bl_estimate(w, nodes, certify=False).value
            ref = exhaustive_lp(w, nodes)
            worst_rel = max(worst_rel, abs(est - ref) / ref)
    rep.add("bl_vs_exhaustive", worst_rel <= 0.05, worst_rel, 0.05)
    space = SpatialGrid(1, 64)
    excess = -math.inf
    for _ in range(n):
        a, b = _random_density(space, rng), _random_density(space, rng)
        b *= a.sum() / b.sum()
        d = bl_distance(Field(space, a), Field(space, b)).value
        excess = max(excess, d - w1_1d(Field(space, a), Field(space, b)))
    rep.add("bl_below_w1", excess <= 1e-12, excess, 1e-12)


def _suite_gyro(rep: SuiteReport, rng: np.random.Generator) -> None:
    space = SpatialGrid(2, 8)
    grid = PhaseGrid(space, VelocityGrid(2, 48, 8.0))
    # narrow, centred profiles keep rotated copies resolved and inside the box
    st = random_kinetic_state(grid, rng, n_bumps=2, drift=0.75, temperature=(0.6, 0.8))
    g = Field(grid, st.f)
    avg = gyro_average(g)
    scale = g.max_abs()
    idem = (gyro_average(avg) - avg).max_abs() / scale
    annih = gyro_average(gyro_generator(g)).max_abs() / scale
    rep.add("idempotence", idem <= 1e-9, idem, 1e-9)
    rep.add("annihilation", annih <= 1e-8, annih, 1e-8)
    rho0 = smooth_density(SpatialGrid(2, 32))
    h = hilbert_corrector_check(rho0, 0.5).err
    rep.add("hilbert_corrector", h <= 1e-8, h, 1e-8)
    cancel, ident = corrector_divergence_check(rho0, 0.5)
    rep.add("corrector_divergence", max(cancel, ident) <= 1e-10, max(cancel, ident), 1e-10)


def _suite_energy(rep: SuiteReport) -> None:
    reg = ScalingRegime.make("diffusive", 0.1, 0.25)
    grid = PhaseGrid(SpatialGrid(1, 64), VelocityGrid(1, 64, 8.0))
    rho0 = smooth_density(grid.space)
    init = prepared_data("well", reg, rho0, None, 0.0, grid.velocity)
    runs = [run(init, KineticRunConfig(reg, grid, 0.5))]
    for _ in range(2):
        runs.append(run(init, KineticRunConfig(reg, grid, 0.5, dt=0.5 * runs[-1].dt)))
    residuals = [energy_balance_residual(kr.trace, reg) for kr in runs]
    rep.add("energy_balance", residuals[0] <= 1e-3, residuals[0], 1e-3)
    order = min(math.log2(a / b) for a, b in zip(residuals, residuals[1:]))
    rep.add("energy_balance_order", order >= 1.8, order, 1.8)
    kb = kinetic_energy_bound(runs[0].trace, reg, 1)
    rep.add("kinetic_energy_bound", kb.holds, kb.lhs, kb.rhs)
    drift = max(kr.mass_drift for kr in runs)
    rep.add("mass_drift", drift <= 1e-10, drift, 1e-10)


SUITES = ("functionals", "metrics", "gyro", "energy")


def check_suite(name: str, seed: int = 0, n: int = 200) -> SuiteReport:
    """Run one named property suite with a seeded generator."""
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
    rng = np.random.default_rng(seed)
    rep = SuiteReport(name)
    t0 = time.perf_counter()
    if name == "functionals":
        _suite_functionals(rep, rng, n)
    elif name == "metrics":
        _suite_metrics(rep, rng, n)
    elif name == "gyro":
        _suite_gyro(rep, rng)
    else:
        _suite_energy(rep)
    rep.seconds = time.perf_counter() - t0
    return rep
