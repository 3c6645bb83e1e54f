"""Report files: per-worker timing CSV, a summary and field snapshots."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from chembalance.mechanism import Mechanism

from chembalance.harness.benchmark import BenchmarkReport
from chembalance.harness.field import FieldState

TIMING_COLUMNS = ("iteration", "rank", "busy_s", "solves_explicit", "solves_mapped")
FORMATS = ("csv",)


def _ensure_dir(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    return out


def summary_lines(report: BenchmarkReport) -> list[str]:
    n = report.iterations
    imb = report.imbalance
    s = report.stats
    lines = [
        f"mode = {report.mode}",
        f"workers = {report.workers}",
        f"iterations = {n}",
        f"wall_s = {report.wall_s:.6f}",
        f"elapsed_s = {report.elapsed_s:.6f}",
        f"mixing_s = {report.mixing_s:.6f}",
        f"busy_total_s = {report.busy.sum():.6f}",
        f"baseline = {report.baseline_name}",
        f"chi_su = {report.chi_su:.6f}",
        f"imbalance_mean = {imb.mean() if n else 1.0:.6f}",
        f"imbalance_max = {imb.max() if n else 1.0:.6f}",
    ]
    if n >= 10:
        lines.append(f"imbalance_mean_10_{n} = {report.mean_imbalance(10, n):.6f}")
    lines += [
        f"solves_explicit = {int(report.explicit.sum())}",
        f"solves_mapped = {int(report.mapped.sum())}",
        f"cells_moved = {int(report.moved.sum())}",
        f"steps_accepted = {s.steps_accepted}",
        f"steps_rejected = {s.steps_rejected}",
        f"rhs_evals = {s.rhs_evals}",
        f"jacobian_evals = {s.jacobian_evals}",
        f"lu_factorizations = {s.lu_factorizations}",
        f"max_T = {report.max_T:.3f}",
    ]
    return lines


def emit_report(report: BenchmarkReport, out_dir, fmt: str = "csv") -> tuple[Path, Path]:
    """Write ``timing.csv`` (one row per iteration and worker) and ``summary.txt``."""
    if fmt not in FORMATS:
        raise ValueError(f"unsupported report format {fmt!r}")
    out = _ensure_dir(out_dir)
    timing = out / "timing.csv"
    with timing.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TIMING_COLUMNS)
        for it in range(report.iterations):
            for r in range(report.workers):
                w.writerow([it + 1, r, f"{report.busy[it, r]:.9e}", int(report.explicit[it, r]), int(report.mapped[it, r])])
    summary = out / "summary.txt"
    summary.write_text("\n".join(summary_lines(report)) + "\n")
    return timing, summary


def write_field_csv(field: FieldState, mech: Mechanism, path) -> Path:
    """Columns x, y, T, Z and every species mass fraction, one row per cell."""
    path = Path(path)
    x, y = field.cell_centres()
    data = np.column_stack([x, y, field.T, field.Z, field.full_mass_fractions()])
    header = ",".join(["x", "y", "T", "Z", *(f"Y_{n}" for n in mech.species_names)])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.12e")
    return path
