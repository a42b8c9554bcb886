"""Agreement metrics between variance maps, and tabular reports."""

import csv
import io
from dataclasses import dataclass, fields

import numpy as np

from .errors import DegenerateReference, ShapeMismatch


def _values(m):
    return np.asarray(getattr(m, "values", m), dtype=float)


@dataclass(frozen=True)
class ComparisonReport:
    pcc: float
    nrmse: float
    r_squared: float
    slope: float
    intercept: float
    n_voxels: int


def compare_maps(a, b) -> ComparisonReport:
    """Compare map ``a`` against reference ``b``.

    PCC and NRMSE are in percent; NRMSE is ``||a - b|| / ||b||``. Slope,
    intercept and R^2 come from the least-squares fit ``a ~ slope * b + intercept``.
    """
    a = _values(a).ravel()
    b = _values(b).ravel()
    if a.shape != b.shape:
        raise ShapeMismatch(f"maps have {a.size} and {b.size} voxels")
    db = b - b.mean()
    sbb = np.dot(db, db)
    # Constant up to rounding counts as constant.
    if sbb <= b.size * (1e-12 * np.max(np.abs(b))) ** 2:
        raise DegenerateReference("reference map is constant")
    da = a - a.mean()
    saa = np.dot(da, da)
    sab = np.dot(da, db)
    r = sab / np.sqrt(saa * sbb) if saa > 0 else 0.0
    r = float(np.clip(r, -1.0, 1.0))
    slope = sab / sbb
    return ComparisonReport(
        pcc=100.0 * r,
        nrmse=100.0 * float(np.linalg.norm(a - b) / np.linalg.norm(b)),
        r_squared=r * r,
        slope=float(slope),
        intercept=float(a.mean() - slope * b.mean()),
        n_voxels=a.size,
    )


@dataclass(frozen=True)
class ConvergenceRow:
    param: object
    nrmse: float
    pcc: float


def convergence_table(reference, series):
    """One row per ``(param, map)`` pair, in input order, against ``reference``."""
    ref = _values(reference)
    rows = []
    for param, m in series:
        vals = _values(m)
        if vals.shape != ref.shape:
            raise ShapeMismatch(f"map for {param!r} has shape {vals.shape}")
        nrmse = 100.0 * float(np.linalg.norm(vals - ref) / np.linalg.norm(ref))
        try:
            pcc = compare_maps(vals, ref).pcc
        except DegenerateReference:
            pcc = float("nan")
        rows.append(ConvergenceRow(param, nrmse, pcc))
    return rows


def count_inversions(values):
    """Number of adjacent increases in a sequence expected to be non-increasing."""
    values = list(values)
    return sum(1 for x, y in zip(values, values[1:]) if y > x)


def zscore_map(estimate, mc_reference, n_trials):
    """Per-voxel ``(estimate - mc) / se`` with ``se = mc / sqrt(n_trials)``.

    The standard error is that of a complex sample variance, whose per-trial
    terms ``|x - mean|^2`` have a standard deviation about equal to their mean.
    """
    est = _values(estimate)
    ref = _values(mc_reference)
    se = ref / np.sqrt(n_trials)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(se > 0, (est - ref) / se, 0.0)


def _as_dicts(rows):
    out = []
    for row in rows:
        if hasattr(row, "__dataclass_fields__"):
            out.append({f.name: getattr(row, f.name) for f in fields(row)})
        else:
            out.append(dict(row))
    return out


def _cell(value):
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def format_table(rows):
    """Aligned plain-text table of dataclass rows or dicts."""
    rows = _as_dicts(rows)
    if not rows:
        return ""
    header = list(rows[0])
    cells = [[_cell(r[h]) for h in header] for r in rows]
    widths = [max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def to_csv(rows):
    rows = _as_dicts(rows)
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()
