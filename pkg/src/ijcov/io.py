"""File formats: CSV schemas for datasets, draws, and log-likelihood
matrices, plus JSON (de)serialization of estimates.

Floats are written with ``repr``, Python's shortest round-trip formatting, so
files are bit-exact across platforms and re-reading reproduces the matrices
to the last ulp.  Draw files carry a strictly increasing integer ``draw``
column; log-likelihood files must agree with the draw file row by row.
Validation failures raise :class:`IngestError` citing the 1-based data row.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import IngestError
from .models import Dataset
from .samplers import PosteriorSample

__all__ = [
    "SCHEMA_VERSION",
    "fmt",
    "write_csv",
    "write_dataset_csv",
    "read_dataset_csv",
    "write_draws_csv",
    "write_loglik_csv",
    "ingest_draws",
    "ingest_loglik",
    "assemble_sample",
    "cov_to_dict",
    "cov_from_dict",
]

SCHEMA_VERSION = 1


def fmt(x) -> str:
    """Shortest round-trip decimal for a float; plain digits for ints;
    strings pass through (label columns)."""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def _read_rows(path):
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise IngestError(f"{path}: empty file")
    return rows[0], rows[1:]


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        val = float(cell)
    except ValueError as exc:
        raise IngestError(f"row {row}: column {col!r} is not numeric: {cell!r}") from exc
    if not math.isfinite(val):
        raise IngestError(f"row {row}: column {col!r} is not finite: {cell!r}")
    return val


def write_dataset_csv(path, data: Dataset, kind: str) -> None:
    """`kind` "normal": one `x` column; "poisson_re": integer `y,a` columns."""
    if kind == "normal":
        write_csv(path, ["x"], ([float(v)] for v in np.asarray(data.units)))
    elif kind == "poisson_re":
        write_csv(
            path, ["y", "a"], ([int(r[0]), int(r[1])] for r in np.asarray(data.units))
        )
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")


def read_dataset_csv(path) -> tuple[Dataset, str]:
    """Reads either dataset schema back; returns (Dataset, kind)."""
    header, body = _read_rows(path)
    if header == ["x"]:
        vals = [
            _parse_float(row[0] if row else "", i + 1, "x")
            for i, row in enumerate(body)
        ]
        return Dataset(np.array(vals)), "normal"
    if header == ["y", "a"]:
        units = []
        for i, row in enumerate(body):
            if len(row) != 2:
                raise IngestError(f"row {i + 1}: expected 2 cells, got {len(row)}")
            y = _parse_float(row[0], i + 1, "y")
            a = _parse_float(row[1], i + 1, "a")
            if y != int(y) or a != int(a):
                raise IngestError(f"row {i + 1}: y and a must be integers")
            units.append([int(y), int(a)])
        return Dataset(np.array(units, dtype=np.int64)), "poisson_re"
    raise IngestError(f"{path}: unrecognized dataset header {header}")


def write_draws_csv(path, sample: PosteriorSample, param_names=None) -> None:
    """Schema: draw,<param_1..D>,g_1..g_q (draw = 0-based retained index)."""
    d = sample.draws.shape[1]
    q = sample.q
    names = list(param_names) if param_names else [f"p_{j + 1}" for j in range(d)]
    if len(names) != d:
        raise ValueError("param_names length does not match draw dimension")
    header = ["draw", *names, *[f"g_{j + 1}" for j in range(q)]]
    rows = (
        [m, *sample.draws[m], *sample.g_values[m]] for m in range(sample.m)
    )
    write_csv(path, header, rows)


def write_loglik_csv(path, sample: PosteriorSample) -> None:
    """Schema: draw,ll_1..ll_N."""
    if sample.loglik is None:
        raise ValueError("sample has no log-likelihood matrix")
    n = sample.n_data
    header = ["draw", *[f"ll_{j + 1}" for j in range(n)]]
    rows = ([m, *sample.loglik[m]] for m in range(sample.m))
    write_csv(path, header, rows)


def _parse_indexed_block(path, lead_col: str):
    header, body = _read_rows(path)
    if not header or header[0] != lead_col:
        raise IngestError(f"{path}: first column must be {lead_col!r}, got {header[:1]}")
    cols = header[1:]
    if not cols:
        raise IngestError(f"{path}: no data columns")
    idx = np.empty(len(body), dtype=np.int64)
    vals = np.empty((len(body), len(cols)))
    prev = None
    for i, row in enumerate(body):
        r = i + 1
        if len(row) != len(header):
            raise IngestError(
                f"row {r}: expected {len(header)} cells, got {len(row)}"
            )
        d = _parse_float(row[0], r, lead_col)
        if d != int(d):
            raise IngestError(f"row {r}: draw index must be an integer")
        d = int(d)
        if prev is not None and d <= prev:
            kind = "duplicate" if d == prev else "decreasing"
            raise IngestError(f"row {r}: {kind} draw index {d}")
        prev = d
        idx[i] = d
        for j, col in enumerate(cols):
            vals[i, j] = _parse_float(row[j + 1], r, col)
    if len(body) < 2:
        raise IngestError(f"{path}: need at least 2 draws")
    return idx, cols, vals


def ingest_draws(path):
    """Parse a draws CSV; returns (draw_index, param_names, params, g or None).

    Columns named ``g_*`` are split out as the quantity-of-interest block;
    everything else after ``draw`` is a parameter column.
    """
    idx, cols, vals = _parse_indexed_block(path, "draw")
    g_mask = np.array([c.startswith("g_") for c in cols])
    names = [c for c, m in zip(cols, g_mask) if not m]
    params = vals[:, ~g_mask]
    g = vals[:, g_mask] if g_mask.any() else None
    if params.shape[1] == 0:
        raise IngestError(f"{path}: no parameter columns")
    return idx, names, params, g


def ingest_loglik(path):
    """Parse a log-likelihood CSV; returns (draw_index, M x N matrix)."""
    idx, _, vals = _parse_indexed_block(path, "draw")
    return idx, vals


def assemble_sample(
    draws_path, loglik_path=None, *, g_cols=None, g_expr=None
) -> PosteriorSample:
    """Build a PosteriorSample from external files.

    g resolution order: explicit ``g_*`` columns in the file, then
    ``g_cols`` (comma-separated 1-based parameter column indices), then
    ``g_expr`` (a numpy expression over parameter column names, e.g.
    "p_1 + 2*p_2").  Having none is an error.
    """
    idx, names, params, g = ingest_draws(draws_path)
    if g is None and g_cols is not None:
        try:
            sel = [int(s) for s in str(g_cols).split(",")]
        except ValueError as exc:
            raise IngestError(f"--g-cols must be integers, got {g_cols!r}") from exc
        if any(not (1 <= s <= params.shape[1]) for s in sel):
            raise IngestError(
                f"--g-cols out of range 1..{params.shape[1]}: {g_cols!r}"
            )
        g = params[:, [s - 1 for s in sel]]
    if g is None and g_expr is not None:
        env = {name: params[:, j] for j, name in enumerate(names)}
        env["np"] = np
        try:
            val = eval(g_expr, {"__builtins__": {}}, env)  # noqa: S307 - local CLI selector
        except Exception as exc:
            raise IngestError(f"--g-expr failed: {exc}") from exc
        g = np.asarray(val, dtype=np.float64).reshape(params.shape[0], -1)
    if g is None:
        raise IngestError(
            "no g columns in the draws file; pass --g-cols or --g-expr"
        )

    loglik = None
    n_data = 0
    if loglik_path is not None:
        lidx, loglik = ingest_loglik(loglik_path)
        if loglik.shape[0] != params.shape[0]:
            raise IngestError(
                f"row-count mismatch: {params.shape[0]} draws vs "
                f"{loglik.shape[0]} log-likelihood rows"
            )
        neq = np.nonzero(lidx != idx)[0]
        if neq.size:
            raise IngestError(
                f"row {neq[0] + 1}: draw index differs between files "
                f"({idx[neq[0]]} vs {lidx[neq[0]]})"
            )
        n_data = loglik.shape[1]

    return PosteriorSample(
        draws=params,
        g_values=g,
        loglik=loglik,
        n_data=n_data,
        meta={"source": str(draws_path), "param_names": names},
    )


def cov_to_dict(est) -> dict:
    d = {
        "v": est.v.tolist(),
        "method": est.method,
        "se": None if est.se is None else est.se.tolist(),
        "b_or_m": est.b_or_m,
    }
    return d


def cov_from_dict(d):
    from .estimators import CovEstimate

    return CovEstimate(
        v=np.asarray(d["v"], dtype=np.float64),
        method=d["method"],
        se=None if d.get("se") is None else np.asarray(d["se"], dtype=np.float64),
        b_or_m=int(d.get("b_or_m", 0)),
    )


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
