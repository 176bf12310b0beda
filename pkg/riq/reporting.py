"""
Report writers for sweep tables, matrices and residual checks.

Every JSON document, CSV table and Markdown report carries the vectorization
convention and the tool version; nothing time-dependent is written, so identical
inputs give identical files.
"""
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
import pandas as pd

from .constants import RESIDUAL_COLUMNS, TOOL_VERSION, VEC_CONVENTION

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12e"


def matrix_to_pairs(M) -> List[List[List[float]]]:
    """Nested [re, im] pairs, row-major."""
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(M, dtype=complex)]


def _jsonable(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        if np.iscomplexobj(value):
            return matrix_to_pairs(value) if value.ndim == 2 else [[float(z.real), float(z.imag)] for z in value]
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (complex, np.complexfloating)):
        return [float(value.real), float(value.imag)]
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return value
    return value


def write_json(payload: Dict[str, Any], path: Path) -> Path:
    """Write ``payload`` plus convention and version, keys sorted."""
    document = dict(_jsonable(payload))
    document["convention"] = VEC_CONVENTION
    document["version"] = TOOL_VERSION
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"JSON report written to {path}")
    return path


def write_csv(df: pd.DataFrame, path: Path) -> Path:
    """Write ``df`` after a ``#`` comment line with the convention and version.

    Read it back with ``pd.read_csv(path, comment="#")``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# convention={VEC_CONVENTION}; version={TOOL_VERSION}\n")
        df.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"CSV written to {path} ({len(df)} rows)")
    return path


def residual_frame(
    residuals: Mapping[str, float],
    tolerances: Mapping[str, float],
    default_tol: float,
    lower_bounds: Optional[Mapping[str, float]] = None,
) -> pd.DataFrame:
    """One row per check.

    Checks listed in ``lower_bounds`` pass when the value is at least the bound
    (e.g. a commutator norm that must stay away from zero); all others pass
    when the value is at most their tolerance.
    """
    lower_bounds = lower_bounds or {}
    rows = []
    for check, value in residuals.items():
        value = float(value)
        if check in lower_bounds:
            tol = lower_bounds[check]
            passed = value >= tol
        else:
            tol = tolerances.get(check, default_tol)
            passed = value <= tol
        rows.append({"check": check, "residual": value, "tolerance": tol, "passed": passed})
    return pd.DataFrame(rows, columns=RESIDUAL_COLUMNS)


def worst_failure(frame: pd.DataFrame) -> Optional[pd.Series]:
    """Failed row with the largest residual-to-tolerance ratio, if any."""
    failed = frame[~frame["passed"]]
    if failed.empty:
        return None
    ratio = failed["residual"].abs() / failed["tolerance"].where(failed["tolerance"] > 0, 1.0)
    return failed.loc[ratio.idxmax()]


def write_markdown_report(
    path: Path, title: str, tables: Mapping[str, pd.DataFrame], notes: Optional[List[str]] = None
) -> Path:
    """Markdown summary with one section per table."""
    lines = [f"# {title}", ""]
    for heading, frame in tables.items():
        lines.append(f"## {heading}")
        lines.append("")
        lines.append(frame.to_markdown(index=False, floatfmt=".3e"))
        lines.append("")
    if notes:
        lines.append("## Notes")
        for note in notes:
            lines.append(f"- {note}")
        lines.append("")
    lines.append(f"_{TOOL_VERSION}; {VEC_CONVENTION}_")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Markdown report saved to {path}")
    return path
