"""Command line entry point: ``vfplab {simulate, limit, sweep, check}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (
    SUITES,
    check_suite,
    default_sweep,
    load_config,
    run_sweep,
    write_run_csv,
    report_row,
)
from .kinetic import KineticRunConfig, run, write_checkpoint
from .macrolimits import MacroRunConfig, run_macro, write_trajectory
from .states import DataKind, prepared_data, single_mode_velocity, smooth_density
from .grid import SpatialGrid

log = logging.getLogger("vfplab")


def _eps_list(text: str | None) -> tuple[float, ...] | None:
    if text is None:
        return None
    return tuple(float(s) for s in text.replace(",", " ").split())


def _config(args):
    if args.config:
        cfg = load_config(args.config)
        if args.regime and args.regime != cfg.regime.value:
            raise SystemExit(f"--regime {args.regime} contradicts the config file ({cfg.regime.value})")
    else:
        cfg = default_sweep(args.regime or "diffusive", getattr(args, "data", None) or "well")
    eps = _eps_list(args.eps)
    if eps is not None and len(eps) >= 3:
        cfg = replace(cfg, eps_list=eps)
    cfg = replace(cfg, seed=args.seed)
    return cfg, eps


def cmd_simulate(args) -> int:
    cfg, eps = _config(args)
    e = eps[0] if eps else cfg.eps_list[-1]
    reg = cfg.regime_for(e)
    grid = cfg.grid.phase_grid()
    rho0 = smooth_density(grid.space)
    v = single_mode_velocity(grid.space) if cfg.data_kind is DataKind.MILDLY_PREPARED else None
    init = prepared_data(cfg.data_kind, reg, rho0, v, cfg.delta, grid.velocity)
    ref = run_macro(rho0, MacroRunConfig(reg, cfg.macro_dt, cfg.t_end))
    kr = run(init, KineticRunConfig(reg, grid, cfg.t_end, report_interval=cfg.t_end / cfg.reports), macro_ref=ref)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = write_run_csv(out / f"run_eps{e:g}.csv", [report_row(r, d) for r, d in zip(kr.trace, kr.distances)])
    write_checkpoint(out / f"final_eps{e:g}.bin", kr.final, reg, kr.dt)
    print(f"{reg.name.value} eps={e:g}: {kr.steps} steps of dt={kr.dt:.4g}, mass drift {kr.mass_drift:.2e}")
    print(f"wrote {csv_path}")
    return 0


def cmd_limit(args) -> int:
    cfg, eps = _config(args)
    reg = cfg.regime_for(eps[0] if eps else cfg.eps_list[-1])
    rho0 = smooth_density(SpatialGrid(cfg.grid.dim, cfg.grid.nx))
    traj = run_macro(rho0, MacroRunConfig(reg, cfg.macro_dt, cfg.t_end))
    every = max(1, round(len(traj.times) / (cfg.reports + 1)))
    path = write_trajectory(Path(args.out), traj, every=every)
    print(f"{reg.name.value} limit to t={traj.t_end:g}: {len(traj.times) - 1} steps, index at {path}")
    return 0


def cmd_sweep(args) -> int:
    cfg, _ = _config(args)

    def progress(mem):
        if mem.failure:
            print(f"  eps={mem.eps:g}: FAILED ({mem.failure})", flush=True)
        else:
            vals = ", ".join(f"{k}={v:.4g}" for k, v in mem.errors.items())
            print(f"  eps={mem.eps:g}: {mem.steps} steps, {mem.seconds:.1f}s, {vals}", flush=True)

    print(f"sweep {cfg.regime.value}/{cfg.data_kind.value} over eps={list(cfg.eps_list)}", flush=True)
    res = run_sweep(cfg, workers=args.workers, out_dir=args.out, plots=not args.no_plots, progress=progress)
    for metric, s in res.slopes.items():
        verdict = "PASS" if s.passed else "FAIL"
        note = " [not a straight line]" if s.flagged else ""
        print(f"  {metric:14s} slope {s.slope:6.3f} (threshold {s.threshold:g}, residual {s.residual:.3f}) {verdict}{note}")
    print(f"outputs in {args.out}")
    return 0 if res.passed else 1


def cmd_check(args) -> int:
    names = SUITES if args.suite == "all" else (args.suite,)
    reports = [check_suite(n, seed=args.seed) for n in names]
    print(json.dumps([r.as_dict() for r in reports], indent=2))
    return 0 if all(r.passed for r in reports) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vfplab", description="Kinetic-limit laboratory for scaled Vlasov-Fokker-Planck equations.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="INI sweep description")
        sp.add_argument("--regime", choices=["diffusive", "highfield", "gsqg"])
        sp.add_argument("--data", choices=["well", "mild"], help="initial data family (without --config)")
        sp.add_argument("--eps", help="comma separated epsilon values")
        sp.add_argument("--out", default=out_default)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--seed", type=int, default=0)

    common(sub.add_parser("simulate", help="one kinetic run"), "out/simulate")
    common(sub.add_parser("limit", help="one macroscopic run"), "out/limit")
    sp = sub.add_parser("sweep", help="epsilon study with slope fits")
    common(sp, "out/sweep")
    sp.add_argument("--no-plots", action="store_true", help="skip the matplotlib PNGs")
    sp = sub.add_parser("check", help="invariant suites")
    sp.add_argument("suite", nargs="?", default="all", choices=("all",) + SUITES)
    sp.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handler = {"simulate": cmd_simulate, "limit": cmd_limit, "sweep": cmd_sweep, "check": cmd_check}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
