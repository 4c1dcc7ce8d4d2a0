"""CSV/JSON artifacts. Floats are written with repr, the shortest round-trip form."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

from .analysis import RateStudy, TriangulationReport
from .pde_solver import PdeSolution
from .simulator import McEstimate, PathEnsemble


def fmt(value: float) -> str:
    return repr(float(value))


def short(value: float) -> str:
    """Integral values without the trailing '.0' (-1.0 -> '-1'), otherwise repr."""
    v = float(value)
    if v.is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(v)


def write_cdf_csv(points: Iterable[Any], path: Path) -> Path:
    rows = ((fmt(p.a), fmt(p.upper), fmt(p.lower)) for p in points)
    return _write_rows(path, ("a", "upper", "lower"), rows)


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_solution_csv(sol: PdeSolution, path: Path, sign: float = 1.0) -> Path:
    """Long format t,x,u; sign=-1 turns the solution for -phi into the lower expectation."""
    nodes = sol.grid.nodes
    rows = ((fmt(t), fmt(x), fmt(sign * u + 0.0)) for t, level in zip(sol.times, sol.values) for x, u in zip(nodes, level))
    return _write_rows(path, ("t", "x", "u"), rows)


def write_ensemble_csv(ens: PathEnsemble, path: Path) -> Path:
    rows = ((i, fmt(x), fmt(m)) for i, (x, m) in enumerate(zip(ens.terminal_values, ens.min_values)))
    return _write_rows(path, ("path_index", "terminal", "running_min"), rows)


def write_rate_csv(study: RateStudy, path: Path) -> Path:
    rows = ((fmt(h), fmt(e)) for h, e in zip(study.meshes, study.errors))
    return _write_rows(path, ("h", "error"), rows)


def estimate_json(est: McEstimate) -> Dict[str, Any]:
    return est.model_dump(exclude_none=True)


def dumps(document: Dict[str, Any]) -> str:
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


def write_json(document: Dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(document), encoding="utf-8")
    return path


def report_text(report: TriangulationReport) -> str:
    header = ["route", "side", "value", "std_error", "reference", "discrepancy", "tolerance", "check", "ok"]
    rows: List[List[str]] = [header]
    for r in report.routes:
        rows.append(
            [
                r.route,
                r.side,
                f"{r.value:.6f}",
                f"{r.std_error:.2e}",
                "" if r.reference is None else f"{r.reference:.6f}",
                "" if r.discrepancy is None else f"{r.discrepancy:.2e}",
                "" if r.tolerance is None else f"{r.tolerance:.2e}",
                r.check,
                "yes" if r.ok else "NO",
            ]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = [
        f"regime={report.regime.value} payoff={report.payoff} x0={report.x0} t'={report.t_prime} "
        f"oracle_exact={report.oracle_exact} ok={report.ok}"
    ]
    lines += ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines) + "\n"
