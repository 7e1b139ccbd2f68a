"""Command-line front end: ``hybridformation run|synth-check|abstract-check|des-check``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .abstraction import available_labels, monte_carlo_soundness
from .config import load_raw, partition_of, scenario_of, v_max_of
from .des import des_report
from .exceptions import ConfigError, HybridFormationError
from .partition import to_spherical
from .scenarios import run_scenario
from .synthesis import SpeedBound, feasibility_table

log = logging.getLogger("hybridformation")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

TRAJ_COLUMNS = ("t", "x", "y", "z", "rel_x", "rel_y", "rel_z", "r", "theta", "phi",
                "i", "j", "k", "u_x", "u_y", "u_z", "active_label")


def fmt(v) -> str:
    return f"{float(v):.9g}"


def _round(v):
    """Floats rounded to 9 significant digits, recursively, for JSON output."""
    if isinstance(v, float):
        return float(fmt(v))
    if isinstance(v, dict):
        return {k: _round(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_round(x) for x in v]
    return v


def _dump_json(obj) -> str:
    return json.dumps(_round(obj), sort_keys=True, separators=(",", ":"))


# --- writers ---------------------------------------------------------------------

def write_trajectory(path: Path, fr):
    traj = fr.trajectory
    sph = to_spherical(fr.rel)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJ_COLUMNS)
        for n in range(len(traj)):
            reg = traj.region[n]
            w.writerow([fmt(fr.t[n]), *map(fmt, fr.absolute[n]), *map(fmt, fr.rel[n]), *map(fmt, sph[n]),
                        reg.i, reg.j, reg.k, *map(fmt, traj.u[n]), str(traj.label[n])])


def write_events(path: Path, fr):
    with open(path, "w", newline="") as fh:
        for e in fr.log:
            fh.write(_dump_json(e.as_dict()) + "\n")


def summary_of(fr) -> dict:
    return {
        "name": fr.config.name,
        "reached": bool(fr.reached),
        "held": bool(fr.held),
        "time_to_formation_s": None if fr.time_to_formation is None else float(fr.time_to_formation),
        "final_region": list(fr.final_region),
        "collision_alarms": int(fr.collision_alarms),
        "min_inter_agent_distance_m": float(fr.min_inter_agent_distance),
    }


def write_summary(path: Path, fr):
    with open(path, "w", newline="") as fh:
        fh.write(json.dumps(_round(summary_of(fr)), sort_keys=True, indent=2) + "\n")


def _write_report(out: Path | None, name: str, lines):
    lines = list(lines)
    for line in lines:
        print(line)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text("\n".join(lines) + "\n")


# --- subcommands ----------------------------------------------------------------------

def cmd_run(args) -> int:
    data = load_raw(args.config)
    if args.seed is not None:
        data.setdefault("sim", {})["seed"] = args.seed
    if args.mode is not None:
        data.setdefault("options", {})["eligible_set_mode"] = args.mode
    cfg = scenario_of(data)
    res = run_scenario(cfg)
    out = Path(args.out)
    for fr in res.followers:
        d = out / (fr.config.name or f"follower_{fr.index}")
        d.mkdir(parents=True, exist_ok=True)
        write_trajectory(d / "trajectory.csv", fr)
        write_events(d / "events.jsonl", fr)
        write_summary(d / "summary.json", fr)
        s = summary_of(fr)
        print(f"{s['name']}: reached={s['reached']} time_to_formation_s={s['time_to_formation_s']} "
              f"final_region={tuple(s['final_region'])} collision_alarms={s['collision_alarms']}")
    return EXIT_OK if res.reached else EXIT_FAIL


def _check_regions(data, spec):
    regs = (data.get("checks") or {}).get("regions")
    if regs is None:
        return list(spec.regions())
    out = []
    for n, r in enumerate(regs):
        try:
            out.append(spec.check_region(r))
        except ValueError as err:
            raise ConfigError(f"checks.regions.{n}: {err}") from err
    return out


def _synth_rows(spec, data, mode):
    bound = SpeedBound(v_max_of(data))
    kappa = float((data.get("options") or {}).get("kappa", 0.8))
    for region in _check_regions(data, spec):
        yield from feasibility_table(spec, bound, [region], available_labels(spec, region), mode, kappa)


def _mode(args, data):
    return args.mode or (data.get("options") or {}).get("eligible_set_mode", "derived")


def cmd_synth_check(args) -> int:
    data = load_raw(args.config)
    spec = partition_of(data)
    lines, ok = [], True
    for region, label, _, res in _synth_rows(spec, data, _mode(args, data)):
        tag = f"{region.i},{region.j},{region.k} {label}"
        if isinstance(res, HybridFormationError):
            ok = False
            lines.append(f"{tag} Infeasible {res}")
        else:
            ok &= res.passed
            em = "-" if res.exit_margin is None else fmt(res.exit_margin)
            lines.append(f"{tag} {'verified' if res.passed else 'FAILED'} margin={fmt(res.margin)} exit_margin={em}")
    lines.insert(0, f"verdict: {'PASS' if ok else 'FAIL'}")
    _write_report(Path(args.out) if args.out else None, "synth_report.txt", lines)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_abstract_check(args) -> int:
    data = load_raw(args.config)
    spec = partition_of(data)
    samples = args.samples if args.samples is not None else (data.get("checks") or {}).get("samples", 20)
    seed = args.seed if args.seed is not None else (data.get("sim") or {}).get("seed", 0)
    controls = {(region, label): c for region, label, c, _ in _synth_rows(spec, data, _mode(args, data))}
    rep = monte_carlo_soundness(spec, controls, samples, seed=seed)
    _write_report(Path(args.out) if args.out else None, "abstract_report.txt", rep.lines())
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_des_check(args) -> int:
    data = load_raw(args.config)
    rep = des_report(partition_of(data))
    lines = [f"verdict: {'PASS' if rep.passed else 'FAIL'}", *rep.lines()]
    _write_report(Path(args.out) if args.out else None, "des_report.txt", lines)
    return EXIT_OK if rep.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridformation", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("config", help="YAML config path or bundled config name")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--mode", choices=("derived", "paper"), help="eligible-set construction")
        return sp

    common(sub.add_parser("run", help="simulate a scenario"), out_required=True).set_defaults(func=cmd_run)
    common(sub.add_parser("synth-check", help="controller feasibility table")).set_defaults(func=cmd_synth_check)
    sp = common(sub.add_parser("abstract-check", help="Monte-Carlo soundness of the abstraction"))
    sp.add_argument("--samples", type=int, help="trials per (region, label)")
    sp.set_defaults(func=cmd_abstract_check)
    common(sub.add_parser("des-check", help="exact DES checks")).set_defaults(func=cmd_des_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "samples", None) is not None and args.samples < 0:
        print("error: --samples must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except HybridFormationError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
