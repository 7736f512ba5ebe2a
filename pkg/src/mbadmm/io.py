"""Instance, reference and trace file formats.

Instance files are JSON::

    {
      "format": "mbadmm-instance", "version": 1,
      "p": <rows>, "rhs": [b_1, ..., b_p],
      "blocks": [
        {"oracle": "l1" | "nonneg" | "quadratic",
         "params": {} | {"P": [[...]], "c": [...]},
         "rows": p, "cols": n_i,
         "coupling": [[row 1], ..., [row p]],        # dense, row-major
         "sigma": float, "lipschitz": float | "unbounded",
         "constrained": bool},
        ...
      ],
      "metadata": {...}
    }

Floats are written with ``repr`` precision, so files round-trip exactly.

Trace files are CSV with the fixed header :data:`TRACE_COLUMNS`; row
``k = 0`` describes the initial state, empty cells mean "not available" and
numbers carry 17 significant digits.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .core import BlockSpec, L1Norm, NonnegativeIndicator, ProblemInstance, Quadratic, ReferenceSolution

FORMAT = "mbadmm-instance"
VERSION = 1
TRACE_COLUMNS = ("k", "primal_residual", "dual_change", "relative_error", "lyapunov", "contraction")

_ORACLES = {"l1": L1Norm, "nonneg": NonnegativeIndicator}


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def instance_to_dict(instance: ProblemInstance) -> dict:
    blocks = []
    for blk in instance.blocks:
        blocks.append(
            {
                "oracle": blk.oracle.kind,
                "params": blk.oracle.params(),
                "rows": blk.rows,
                "cols": blk.size,
                "coupling": blk.coupling.tolist(),
                "sigma": blk.sigma,
                "lipschitz": "unbounded" if math.isinf(blk.lipschitz) else blk.lipschitz,
                "constrained": blk.constrained,
            }
        )
    return {
        "format": FORMAT,
        "version": VERSION,
        "p": instance.p,
        "rhs": instance.rhs.tolist(),
        "blocks": blocks,
        "metadata": _jsonable(instance.metadata),
    }


def instance_from_dict(data: dict) -> ProblemInstance:
    if data.get("format") != FORMAT:
        raise ValueError("not an mbadmm instance document")
    if data.get("version") != VERSION:
        raise ValueError(f"unsupported instance version {data.get('version')}")
    blocks = []
    oracles = {}
    for i, b in enumerate(data["blocks"]):
        kind = b["oracle"]
        if kind == "quadratic":
            oracle = Quadratic(b["params"]["P"], b["params"]["c"])
        elif kind in _ORACLES:
            oracle = oracles.setdefault(kind, _ORACLES[kind]())
        else:
            raise ValueError(f"block {i}: unknown oracle {kind!r}")
        A = np.array(b["coupling"], dtype=float).reshape(b["rows"], b["cols"])
        lip = math.inf if b["lipschitz"] == "unbounded" else float(b["lipschitz"])
        blocks.append(BlockSpec(A, oracle, float(b["sigma"]), lip, bool(b["constrained"])))
    meta = dict(data.get("metadata", {}))
    if "ground_truth" in meta:
        meta["ground_truth"] = np.array(meta["ground_truth"], dtype=float)
    return ProblemInstance(blocks, np.array(data["rhs"], dtype=float), meta)


def save_instance(instance: ProblemInstance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance)))


def load_instance(path) -> ProblemInstance:
    return instance_from_dict(json.loads(Path(path).read_text()))


def save_reference(ref: ReferenceSolution, path) -> None:
    doc = {
        "primal_star": [x.tolist() for x in ref.primal_star],
        "dual_star": None if ref.dual_star is None else ref.dual_star.tolist(),
        "kkt_residual": None if math.isnan(ref.kkt_residual) else ref.kkt_residual,
        "status": ref.status,
    }
    Path(path).write_text(json.dumps(doc))


def load_reference(path) -> ReferenceSolution:
    doc = json.loads(Path(path).read_text())
    dual = doc.get("dual_star")
    res = doc.get("kkt_residual")
    return ReferenceSolution(
        [np.array(x, dtype=float) for x in doc["primal_star"]],
        None if dual is None else np.array(dual, dtype=float),
        math.nan if res is None else float(res),
        doc.get("status", "kkt"),
    )


# ---------------------------------------------------------------------------
# Traces


def format_number(v) -> str:
    """17 significant digits; empty for missing values."""
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.17g}"


def contraction_factors(lyap: list) -> list:
    out = [None]
    for a, b in zip(lyap, lyap[1:]):
        out.append(b / a if a is not None and b is not None and a > 0 else None)
    return out


def write_trace(target, rows: Iterable[dict]) -> None:
    """Write rows (dicts keyed by :data:`TRACE_COLUMNS`) to a CSV path or open text file."""
    if hasattr(target, "write"):
        _write_rows(target, rows)
        return
    with open(target, "w", newline="") as fh:
        _write_rows(fh, rows)


def _write_rows(fh, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for row in rows:
        w.writerow([str(row["k"])] + [format_number(row.get(c)) for c in TRACE_COLUMNS[1:]])


def read_trace(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {header}")
        for rec in r:
            row = {"k": int(rec[0])}
            for name, cell in zip(TRACE_COLUMNS[1:], rec[1:]):
                row[name] = float(cell) if cell else None
            rows.append(row)
    return rows


def trace_rows(initial: dict, records, lyapunov: Optional[list] = None) -> list:
    """Assemble trace rows: ``initial`` fields for k=0, then one row per record."""
    rows = [{"k": 0, **initial}]
    for rec in records:
        rows.append(
            {
                "k": rec.iteration,
                "primal_residual": rec.primal_residual,
                "dual_change": rec.dual_change,
                "relative_error": rec.relative_error,
                "lyapunov": rec.lyapunov,
            }
        )
    if lyapunov is not None:
        for row, v in zip(rows, lyapunov):
            row["lyapunov"] = v
    for row, c in zip(rows, contraction_factors([row.get("lyapunov") for row in rows])):
        row["contraction"] = c
    return rows
