"""Command line: ``chembalance run | single-cell | check-mech``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from chembalance.kinetics import CompositionVector
from chembalance.mechanism import MechanismError, load_mechanism
from chembalance.odesolver import StiffnessError

from chembalance.harness.benchmark import BenchmarkError, run_benchmark, single_cell_benchmark, write_single_cell_csv
from chembalance.harness.config import MODE_NAMES, ConfigError, load_config, shipped_config
from chembalance.harness.report import emit_report, summary_lines, write_field_csv

_OVERRIDES = {
    "nx": int,
    "ny": int,
    "workers": int,
    "iters": int,
    "dt": float,
    "abstol": float,
    "reltol": float,
    "seed": int,
}


def _tolerance_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a tolerance list: {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("tolerances must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chembalance", description="Parallel finite-rate chemistry benchmarks.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the 2D shear-layer benchmark")
    run.add_argument("--config", type=Path, help="flat key = value config (default: the bundled shear layer)")
    for name, typ in _OVERRIDES.items():
        run.add_argument(f"--{name}", type=typ)
    run.add_argument("--mode", choices=MODE_NAMES)
    run.add_argument("--refmap", choices=("on", "off"))
    run.add_argument("--baseline", type=Path, help="summary.txt of a baseline run, for chi_su")
    run.add_argument("--out", type=Path, default=Path("chembalance-out"))

    sc = sub.add_parser("single-cell", help="time one reactor solve across tolerances")
    sc.add_argument("--mech", type=Path, required=True)
    sc.add_argument("--sweep", type=_tolerance_list, default=[1e-8, 1e-10, 1e-12], help="abstol values, e.g. '1e-8,1e-10,1e-12'")
    sc.add_argument("--reltol", type=float, default=1e-5)
    sc.add_argument("--T", type=float, default=1200.0)
    sc.add_argument("--dt", type=float, default=1e-4)
    sc.add_argument("--phi", type=float, default=1.0, help="equivalence ratio of the fuel/oxidizer blend")
    sc.add_argument("--reps", type=int, default=10)
    sc.add_argument("--out", type=Path, default=Path("single_cell.csv"))

    ck = sub.add_parser("check-mech", help="parse and validate a mechanism file")
    ck.add_argument("path", type=Path)
    return ap


def _read_baseline_wall(path: Path) -> float:
    for line in path.read_text().splitlines():
        key, _, val = line.partition("=")
        if key.strip() == "wall_s":
            return float(val)
    raise ConfigError(f"{path} has no wall_s entry")


def cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else shipped_config()
    changes = {}
    for name in _OVERRIDES:
        val = getattr(args, name)
        if val is not None:
            changes["iterations" if name == "iters" else name] = val
    if args.mode:
        changes["mode"] = args.mode
    if args.refmap:
        changes["refmap.enabled"] = args.refmap == "on"
    cfg = cfg.replace(**changes)
    mech = cfg.load_mechanism()
    args.out.mkdir(parents=True, exist_ok=True)

    def snap(it, field):
        write_field_csv(field, mech, args.out / f"field_{it:04d}.csv")

    report = run_benchmark(cfg, mech, snapshot=snap)
    if args.baseline:
        report.baseline_wall = _read_baseline_wall(args.baseline)
        report.baseline_name = str(args.baseline)
    emit_report(report, args.out)
    print("\n".join(summary_lines(report)))
    return 0


def cmd_single_cell(args) -> int:
    mech = load_mechanism(args.mech)
    fuel = mech.mass_fractions(mech.fuel_stream)
    ox = mech.mass_fractions(mech.oxidizer_stream)
    # blend at the requested equivalence ratio through the mixture fraction
    z_st = _stoichiometric_z(mech, fuel, ox)
    z = args.phi * z_st / (1 - z_st + args.phi * z_st)
    phi0 = CompositionVector.from_mass_fractions(args.T, z * fuel + (1 - z) * ox)
    rows = single_cell_benchmark(mech, phi0, 101325.0, args.dt, [(a, args.reltol) for a in args.sweep], reps=args.reps)
    write_single_cell_csv(rows, args.out)
    for r in rows:
        print(f"abstol={r.abstol:g} reltol={r.reltol:g} mode={r.mode:8s} mean={r.mean_s * 1e6:10.2f} us rhs={r.rhs_evals} jac={r.jacobian_evals}")
    return 0


def _stoichiometric_z(mech, fuel, ox) -> float:
    # oxygen demand of the blend vanishes at stoichiometry; it is linear in Z
    need = {"C": 2.0, "H": 0.5, "O": -1.0}

    def demand(Y):
        total = 0.0
        for sp, y in zip(mech.species, Y):
            for e, c in need.items():
                total += c * sp.composition.get(e, 0) * y / sp.molecular_weight
        return total

    df, do = demand(fuel), demand(ox)
    if df == do:
        raise ConfigError("streams have identical oxygen demand")
    return min(max(-do / (df - do), 0.0), 1.0)


def cmd_check_mech(args) -> int:
    mech = load_mechanism(args.path)
    print(f"{args.path}: ok")
    print(f"  elements:  {' '.join(e.symbol for e in mech.elements)}")
    print(f"  species:   {mech.n_species} ({' '.join(mech.species_names)})")
    print(f"  reactions: {len(mech.reactions)} ({sum(r.reversible for r in mech.reactions)} reversible, "
          f"{sum(r.is_third_body for r in mech.reactions)} third-body)")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": cmd_run, "single-cell": cmd_single_cell, "check-mech": cmd_check_mech}
    try:
        return handlers[args.command](args)
    except (ConfigError, MechanismError, BenchmarkError, StiffnessError, OSError) as exc:
        print(f"chembalance: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
