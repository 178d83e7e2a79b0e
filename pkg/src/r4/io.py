"""CSV/JSON input and output, the lag design builder, and trimmed forecast error."""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from .exceptions import InvalidInput, OutputError
from .rrr import RegressionData

FLOAT_FMT = "%.17g"


def _parse_float(tok: str):
    try:
        return float(tok)
    except ValueError:
        return None


def load_csv_matrix(path) -> np.ndarray:
    """Read a numeric CSV into a 2-D float array.

    A first row with any non-numeric field is taken as a header and skipped.
    Ragged rows, unparsable fields and NaN/Inf raise :class:`InvalidInput`
    naming the 1-based row and column.
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(f.strip() for f in r)]
    except OSError as exc:
        raise InvalidInput(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not rows:
        raise InvalidInput(f"{path}: no data rows")
    start = 0
    if any(_parse_float(f) is None for f in rows[0]):
        start = 1
    if start >= len(rows):
        raise InvalidInput(f"{path}: header only, no data rows")
    width = len(rows[start])
    out = np.empty((len(rows) - start, width))
    for i, row in enumerate(rows[start:]):
        lineno = i + start + 1
        if len(row) != width:
            raise InvalidInput(f"{path}: row {lineno} has {len(row)} fields, expected {width}")
        for j, tok in enumerate(row):
            v = _parse_float(tok)
            if v is None:
                raise InvalidInput(f"{path}: row {lineno}, column {j + 1}: cannot parse {tok!r}")
            if not math.isfinite(v):
                raise InvalidInput(f"{path}: row {lineno}, column {j + 1}: non-finite value {tok!r}")
            out[i, j] = v
    return out


def build_var_design(series, lag: int = 1) -> RegressionData:
    """Regress each observation on the one ``lag`` steps earlier.

    ``X`` holds rows ``0..T-lag-1`` of ``series`` and ``Y`` rows ``lag..T-1``.
    """
    S = np.asarray(series, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    if not isinstance(lag, (int, np.integer)) or lag < 1:
        raise InvalidInput(f"lag must be a positive integer, got {lag!r}")
    T = S.shape[0]
    if T <= lag:
        raise InvalidInput(f"series length {T} must exceed lag {lag}")
    return RegressionData(S[:T - lag], S[lag:])


def trimmed_mse(pred, actual, trim_fraction: float) -> float:
    """Mean of the squared errors after dropping the largest ``trim_fraction`` of them."""
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise InvalidInput(f"shape mismatch {pred.shape} vs {actual.shape}")
    if not 0 <= trim_fraction < 0.5:
        raise InvalidInput(f"trim_fraction must lie in [0, 0.5), got {trim_fraction}")
    sq = np.sort(((pred - actual) ** 2).ravel())
    k = int(math.floor(trim_fraction * sq.size))
    kept = sq[:sq.size - k]
    return float(kept.mean())


def ensure_dir(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {out}: {exc.strerror or exc}") from exc
    if not os.access(out, os.W_OK):
        raise OutputError(f"{out} is not writable")
    return out


def _write_text(path: Path, text: str):
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _fmt(x) -> str:
    return FLOAT_FMT % x


def format_matrix(A, header=None) -> str:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    lines = [",".join(header)] if header else []
    lines += [",".join(_fmt(v) for v in row) for row in A]
    return "\n".join(lines) + "\n"


def write_matrix(path, A, header=None):
    _write_text(Path(path), format_matrix(A, header))


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def write_json(path, payload: dict):
    # repr of a float round-trips, so json's default formatting is enough
    _write_text(Path(path), json.dumps(_json_safe(payload), indent=2, sort_keys=True) + "\n")


def _spec_value(spec):
    from .solver import Constrained
    if spec is None:
        return {}
    if isinstance(spec, Constrained):
        return {"rho_count": spec.rho_count, "eta": spec.eta}
    return {"lambda": spec.rule.lam, "rule": spec.rule.kind, "eta": spec.rule.eta,
            "elementwise": type(spec).__name__ == "PenalizedElementwise"}


def write_fit(fit, out_dir, pic_value=None, extra=None) -> list:
    """``B_hat.csv``, ``C_hat.csv``, ``outliers.csv`` and ``fit.json`` for one fit."""
    out = ensure_dir(out_dir)
    write_matrix(out / "B_hat.csv", fit.B_hat)
    write_matrix(out / "C_hat.csv", fit.C_hat)
    norms = fit.row_norms
    lines = ["row,norm"] + [f"{i},{_fmt(norms[i])}" for i in fit.outlier_rows]
    _write_text(out / "outliers.csv", "\n".join(lines) + "\n")
    meta = {
        "rank": fit.rank,
        "objective": fit.objective,
        "objective_trace": list(fit.objective_trace),
        "iterations": fit.iterations,
        "converged": fit.converged,
        "outlier_rows": list(fit.outlier_rows),
        "pic": pic_value,
        "warnings": list(fit.warnings),
        **_spec_value(fit.spec),
    }
    if extra:
        meta.update(extra)
    write_json(out / "fit.json", meta)
    return [out / f for f in ("B_hat.csv", "C_hat.csv", "outliers.csv", "fit.json")]


def write_path(path_result, out_dir, extra=None) -> list:
    """Selected fit plus ``detection_path.csv`` (n x grid) and ``pic.csv`` (ranks x grid)."""
    from .tuning import detection_path_table
    out = ensure_dir(out_dir)
    files = []
    fit = path_result.selected_fit
    info = {"ranks": path_result.ranks, "kind": path_result.kind}
    if fit is None:
        write_json(out / "fit.json", {**info, "selected": None, **(extra or {})})
        files.append(out / "fit.json")
    else:
        k, j = path_result.selected
        info.update(selected_rank=path_result.paths[k].rank,
                    selected_grid_value=path_result.selected_grid_value)
        files += write_fit(fit, out, pic_value=float(path_result.paths[k].pic[j]),
                           extra={**info, **(extra or {})})
        grid, table = detection_path_table(path_result)
        write_matrix(out / "detection_path.csv", table)
        write_matrix(out / "detection_grid.csv", grid[:, None], header=["grid_value"])
        files += [out / "detection_path.csv", out / "detection_grid.csv"]
    pics = path_result.pic_values
    write_matrix(out / "pic.csv", pics)
    files.append(out / "pic.csv")
    return files


def write_report(report, out_dir, extra=None) -> list:
    """``simreport.csv`` (one row per method) and ``simreport.json`` with all records."""
    out = ensure_dir(out_dir)
    rows = report.rows()
    cols = list(rows[0].keys()) if rows else ["method"]
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) if isinstance(row[c], (float, np.floating))
                              else str(row[c]) for c in cols))
    _write_text(out / "simreport.csv", "\n".join(lines) + "\n")
    write_json(out / "simreport.json", {**report.to_dict(), **(extra or {})})
    return [out / "simreport.csv", out / "simreport.json"]


def write_results(obj, out_dir, extra=None) -> list:
    """Write a ``FitResult``, ``PathResult`` or ``SimReport`` to ``out_dir``."""
    from .simbench import SimReport
    from .solver import FitResult
    from .tuning import PathResult
    if isinstance(obj, FitResult):
        return write_fit(obj, out_dir, extra=extra)
    if isinstance(obj, PathResult):
        return write_path(obj, out_dir, extra=extra)
    if isinstance(obj, SimReport):
        return write_report(obj, out_dir, extra=extra)
    raise InvalidInput(f"cannot write results of type {type(obj).__name__}")
