"""Command-line entry point ``kinklab``.

Exit codes: 0 pass, 1 numerical or assertion failure, 2 usage or
configuration error. Library errors are reported on standard error by
class name. ``KINKLAB_THREADS`` caps BLAS threads when ``threadpoolctl``
is installed.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .errors import ConfigError, KinklabError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _UsageError(Exception):
    pass


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _num(v) -> str:
    return format(float(v) + 0.0, ".17g")


def _potential(args):
    from .potential import get_potential
    if getattr(args, "config", None):
        return ExperimentConfig.load(args.config).potential()
    try:
        return get_potential(args.potential)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None


def _outdir(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


# profile -------------------------------------------------------------------
def cmd_profile(args) -> int:
    from .io import write_csv, write_json
    from .potential import compute_kink_profile

    pot = _potential(args)
    prof = compute_kink_profile(pot, args.half_width, args.step)
    res = prof.bogomolny_residual()
    consts = {"potential": pot.name, "kappa": prof.kappa, "mass": prof.mass, "bogomolny_residual": res}
    out = _outdir(args)
    sel = slice(None, None, max(1, args.every))
    write_csv(out / "profile.csv", ["x", "H", "dH"], zip(prof.xs[sel], prof.h[sel], prof.dh[sel]))
    write_json(out / "constants.json", consts)
    print(json.dumps({k: (v if isinstance(v, str) else float(v)) for k, v in consts.items()}))
    if res > args.tol:
        print(f"bogomolny residual {res:.3g} exceeds {args.tol:.3g}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# evolve --------------------------------------------------------------------
def cmd_evolve(args) -> int:
    from .evolution import EvolutionConfig, evolve
    from .forge import seeded_state
    from .io import load_checkpoint, save_checkpoint, write_csv, write_json, write_snapshot_csv
    from .modulation import ModulationTracker, seed_from_crossings
    from .potential import cached_profile
    from .statics import gaps, uniform_grid

    pot = _potential(args)
    prof = cached_profile(pot)
    if args.checkpoint:
        init = load_checkpoint(args.checkpoint)
        seed = None
    elif args.multikink is not None:
        a = np.sort(np.array(args.multikink, dtype=float))
        v = np.array(args.velocities if args.velocities is not None else [0.0] * a.size)
        if v.size != a.size:
            raise ConfigError(f"{v.size} velocities for {a.size} kinks")
        lo = (a[0] if a.size else 0.0) - args.t_end - args.margin
        hi = (a[-1] if a.size else 0.0) + args.t_end + args.margin
        init = seeded_state(a, v, prof, uniform_grid(lo, hi, args.dx), 0.0)
        seed = a
    else:
        raise _UsageError("evolve needs --multikink or --checkpoint")

    t0 = init.t
    t1 = t0 - args.t_end if args.backward else t0 + args.t_end
    every = max(1, int(round(args.stride / args.dt)))
    cfg = EvolutionConfig(args.dt, (t0, t1), energy_stride=every, guard=args.guard)
    tracker = None
    if args.track:
        if seed is None:
            seed = seed_from_crossings(init, _count_crossings(init))
        tracker = ModulationTracker(prof, seed, stop_on_loss=True).bind(init.x)
    traj = evolve(init, pot, cfg, observer=tracker, observe_every=every)

    out = _outdir(args)
    write_csv(out / "energy.csv", ["t", "E", "E_p", "E_k"],
              (np.concatenate([[t], e]) for t, e in zip(traj.energy_times, traj.energies)))
    save_checkpoint(out / "final.bin", traj.final)
    write_snapshot_csv(out / "final.csv", traj.final)
    summary = {"t_start": t0, "t_end": traj.final.t, "stopped": bool(traj.stopped),
               "energy_start": float(traj.energies[0, 0]), "energy_end": float(traj.energies[-1, 0]),
               "energy_drift": float(np.max(np.abs(traj.energies[:, 0] - traj.energies[0, 0])))}
    code = EXIT_OK
    if tracker is not None:
        s = tracker.series().sorted()
        write_csv(out / "modulation.csv", s.header(), s.to_rows())
        if len(s):
            summary["gaps_first"] = gaps(s.a[0]).tolist()
            summary["gaps_last"] = gaps(s.a[-1]).tolist()
        summary["tracking_lost"] = bool(s.lost)
        if s.lost:
            print(f"TrackingLost: {s.lost_reason} at t = {s.lost_time}", file=sys.stderr)
            code = EXIT_FAIL
    write_json(out / "summary.json", summary)
    print(json.dumps(summary))
    return code


def _count_crossings(snap) -> int:
    from .statics import zero_crossings
    return int(zero_crossings(snap.x, snap.phi).size)


# construct -----------------------------------------------------------------
def cmd_construct(args) -> int:
    from .forge import ShootSpec, construct_cluster
    from .io import save_checkpoint, write_csv, write_json, write_snapshot_csv
    from .potential import cached_profile

    a0 = np.sort(np.array(args.positions, dtype=float))
    if a0.size < 2:
        raise ConfigError("construct needs at least two positions")
    # validate before any expensive work
    ShootSpec(tuple(np.diff(a0)), args.L, args.T, l0=args.l0, dx=args.dx, dt=args.dt, stride=args.stride)
    pot = _potential(args)
    prof = cached_profile(pot)
    init, cert = construct_cluster(a0, args.L, args.T, prof, pot, l0=args.l0, dx=args.dx,
                                   dt=args.dt, stride=args.stride)
    out = _outdir(args)
    write_snapshot_csv(out / "initial.csv", init)
    save_checkpoint(out / "initial.bin", init)
    write_csv(out / "delta_bound.csv", ["t", "delta_bound"], cert.delta_bound)
    fwd = cert.forward.sorted()
    write_csv(out / "forward_modulation.csv", fwd.header(), fwd.to_rows())
    back = cert.shoot.series.sorted()
    write_csv(out / "backward_modulation.csv", back.header(), back.to_rows())
    write_json(out / "certificate.json", {
        "passed": cert.passed, "checks": cert.checks, "measured": cert.measured, "shift": cert.shift,
        "gaps_at_T": cert.shoot.gaps_at_T, "exit_reason": cert.shoot.exit_reason,
        "positions": a0, "L": args.L, "T": args.T})
    print(json.dumps({"passed": bool(cert.passed), "failing": cert.failing(),
                      "position_error": float(cert.measured["position_error"])}))
    if not cert.passed:
        print(f"certificate failed: {', '.join(cert.failing())}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# verify-asymptotics --------------------------------------------------------
def cmd_verify_asymptotics(args) -> int:
    from .io import read_csv, write_csv
    from .potential import cached_profile
    from .toda import TodaConstants, asymptotic_residuals, residuals_decrease

    try:
        header, data = read_csv(args.input)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {args.input}: {exc}") from None
    col = {h: i for i, h in enumerate(header)}
    n = sum(1 for h in header if h.startswith("a_"))
    if "t" not in col or n == 0 or any(f"p_{k}" not in col for k in range(1, n + 1)):
        raise ConfigError(f"{args.input}: needs columns t, a_k and p_k")
    prof = cached_profile(_potential(args))
    c = TodaConstants(prof.kappa, prof.mass, max(n, 2))
    t = data[:, col["t"]]
    sel = (t >= args.t_start - 1e-9) & (t <= args.t_end + 1e-9)
    if np.count_nonzero(sel) < 2:
        raise ConfigError(f"fewer than two rows in [{args.t_start}, {args.t_end}]")
    rows = data[sel]
    ts = rows[:, col["t"]]
    targets = np.geomspace(ts[0], ts[-1], args.samples) if ts[0] > 0 else np.linspace(ts[0], ts[-1], args.samples)
    idx = sorted({int(np.argmin(np.abs(ts - tt))) for tt in targets})
    rows = rows[idx]
    a = rows[:, [col[f"a_{k}"] for k in range(1, n + 1)]]
    p = rows[:, [col[f"p_{k}"] for k in range(1, n + 1)]]
    if all(f"adot_{k}" in col for k in range(1, n + 1)):
        adot = rows[:, [col[f"adot_{k}"] for k in range(1, n + 1)]]
    else:
        adot = p / prof.mass
    table = asymptotic_residuals(rows[:, col["t"]], a, adot, p, c)
    head = ["t", "gap_residual", "velocity_residual", "tq_residual"]
    if args.out:
        write_csv(Path(args.out), head, table)
    print(",".join(head))
    for r in table:
        print(",".join(_num(v) for v in r))
    ok = all(residuals_decrease(table[:, j], args.floor) for j in (1, 2, 3))
    if not ok:
        print("residuals do not decrease over the window", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# toda ----------------------------------------------------------------------
def _toda_constants(args, n):
    from .potential import cached_profile
    from .toda import TodaConstants
    prof = cached_profile(_potential(args))
    return TodaConstants(prof.kappa, prof.mass, n)


def cmd_toda(args) -> int:
    from .io import csv_text, write_csv
    from .toda import (cluster_state, critical_profile_zcr, integrate, parabolic_solution,
                       trajectory_header, trajectory_rows)

    if args.n < 2:
        raise ConfigError("toda needs n >= 2")
    c = _toda_constants(args, args.n)
    if args.action == "zcr":
        print(" ".join(_num(v) for v in critical_profile_zcr(c)))
        return EXIT_OK
    if args.action == "parabolic":
        s = parabolic_solution(c, args.n, args.t, args.center)
        print(" ".join(_num(v) for v in s.y))
        if args.out:
            write_csv(Path(args.out), trajectory_header(args.n), trajectory_rows([s], c))
        return EXIT_OK
    if args.perturb:
        # random combination of decaying modes keeps the orbit a cluster
        coeffs = np.random.default_rng(args.seed).normal(size=args.n - 1)
        init = cluster_state(c, args.t0, max(args.t1, args.t0) * 10.0,
                             args.perturb * coeffs / np.linalg.norm(coeffs), center=args.center)
    else:
        init = parabolic_solution(c, args.n, args.t0, args.center)
    lo, hi = sorted((args.t0, args.t1))
    t_eval = np.geomspace(lo, hi, args.samples) if lo > 0 else np.linspace(lo, hi, args.samples)
    if args.t1 < args.t0:
        t_eval = t_eval[::-1]
    states = integrate(init, c, (args.t0, args.t1), tol=args.tol, t_eval=t_eval)
    rows = trajectory_rows(states, c)
    head = trajectory_header(args.n)
    if args.out:
        write_csv(Path(args.out), head, rows)
    else:
        sys.stdout.write(csv_text(head, rows))
    return EXIT_OK


# accept --------------------------------------------------------------------
def cmd_accept(args) -> int:
    from .acceptance import CRITERIA, run
    from .io import write_json

    names = list(CRITERIA) if args.name == "all" else [args.name]
    if any(n not in CRITERIA for n in names):
        raise ConfigError(f"unknown criterion {args.name!r}; choose from {', '.join(CRITERIA)} or all")
    cfg = ExperimentConfig.load(args.config) if args.config else None
    ok = True
    for name in names:
        res = run(name, cfg)
        print(res.line())
        if args.verbose:
            for k, v in res.values.items():
                print(f"  {k} = {_num(v)}")
        if args.out:
            write_json(Path(args.out) / f"accept_{name}.json",
                       {"passed": res.passed, "checks": res.checks, "values": res.values,
                        "runtime": res.runtime, "time_limit": res.time_limit})
        ok = ok and res.passed
    return EXIT_OK if ok else EXIT_FAIL


# parser --------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kinklab", description="Kink cluster numerics.")
    ap.add_argument("--version", action="version", version=f"kinklab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--potential", default="phi4", help="registry name (phi4, sine-gordon)")
        p.add_argument("--config", help="config file with a [potential] or [experiment] section")
        p.add_argument("--out", default=out_default, help="output location")

    p = sub.add_parser("profile", help="kink profile and constants")
    common(p, "out/profile")
    p.add_argument("--half-width", type=float, default=40.0)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--every", type=int, default=10, help="write every k-th profile sample")
    p.add_argument("--tol", type=float, default=1e-6, help="Bogomolny residual tolerance")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("evolve", help="evolve a multikink ansatz or a checkpoint")
    common(p, "out/evolve")
    p.add_argument("--multikink", type=_floats, help="kink positions, e.g. '-6,6'")
    p.add_argument("--velocities", type=_floats)
    p.add_argument("--checkpoint")
    p.add_argument("--t-end", type=float, default=10.0, help="duration")
    p.add_argument("--dx", type=float, default=0.02)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--stride", type=float, default=0.1, help="output interval")
    p.add_argument("--margin", type=float, default=30.0)
    p.add_argument("--guard", type=float, default=10.0)
    p.add_argument("--track", action="store_true", help="record modulation parameters")
    p.add_argument("--backward", action="store_true", help="run toward earlier times")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("construct", help="construct a kink cluster by backward shooting")
    common(p, "out/construct")
    p.add_argument("--positions", type=_floats, required=True)
    p.add_argument("--L", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--l0", type=float, default=10.0, help="admissible floor for L")
    p.add_argument("--dx", type=float, default=0.02)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--stride", type=float, default=0.1)
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("verify-asymptotics", help="compare a run with the parabolic law")
    common(p, None)
    p.add_argument("--input", required=True, help="modulation or Toda trajectory CSV")
    p.add_argument("--t-start", type=float, default=10.0)
    p.add_argument("--t-end", type=float, default=100.0)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--floor", type=float, default=1e-6, help="residuals below this count as zero")
    p.set_defaults(func=cmd_verify_asymptotics)

    p = sub.add_parser("toda", help="reduced Toda dynamics")
    p.add_argument("action", choices=["integrate", "parabolic", "zcr"])
    common(p, None)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--t", type=float, default=10.0)
    p.add_argument("--t0", type=float, default=10.0)
    p.add_argument("--t1", type=float, default=100.0)
    p.add_argument("--center", type=float, default=0.0)
    p.add_argument("--perturb", type=float, default=0.0,
                   help="size of a random displacement along the decaying modes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--samples", type=int, default=50)
    p.set_defaults(func=cmd_toda)

    p = sub.add_parser("accept", help="run a named acceptance experiment")
    p.add_argument("name")
    p.add_argument("--config", help="override the checked-in config")
    p.add_argument("--out", help="directory for JSON results")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_accept)
    return ap


def _thread_limit():
    raw = os.environ.get("KINKLAB_THREADS")
    if not raw:
        return contextlib.nullcontext()
    try:
        k = int(raw)
        if k < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"KINKLAB_THREADS must be a positive integer, got {raw!r}") from None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return contextlib.nullcontext()
    return threadpool_limits(limits=k)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with _thread_limit():
            return args.func(args)
    except (ConfigError, _UsageError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KinklabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
