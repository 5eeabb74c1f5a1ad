"""Serialization of budgets and sweep maps (CSV / JSON / long-form plot data)."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from .budget import NoiseBudget, PhaseSweepMap

BUDGET_COLUMNS = ("total", "thermal", "qrpn", "shot", "dark", "sql", "classical", "excess", "lines")
ASD_UNITS = "m/rtHz"


def fmt(x: float) -> str:
    return repr(float(x))


def write_atomic(path: str | Path, text: str) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _header(meta: dict) -> list[str]:
    return [f"# {k}: {v}" for k, v in meta.items()]


def budget_csv(budget: NoiseBudget, meta: dict | None = None) -> str:
    buf = io.StringIO()
    for line in _header({"units": ASD_UNITS, **(meta or {})}):
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["f_hz"] + [f"asd_{c}" for c in BUDGET_COLUMNS])
    cols = [budget.asd(c) for c in BUDGET_COLUMNS]
    for i, f in enumerate(budget.grid.points):
        w.writerow([fmt(f)] + [fmt(col[i]) for col in cols])
    return buf.getvalue()


def budget_json(budget: NoiseBudget, meta: dict | None = None) -> str:
    doc = {
        "units": ASD_UNITS,
        "metadata": meta or {},
        "f_hz": budget.grid.points.tolist(),
        **{f"asd_{c}": budget.asd(c).tolist() for c in BUDGET_COLUMNS},
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def read_budget_csv(path: str | Path) -> dict[str, np.ndarray]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    names = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return {n: data[:, j] for j, n in enumerate(names)}


def sweep_csv(sweep: PhaseSweepMap, meta: dict | None = None) -> str:
    buf = io.StringIO()
    for line in _header({"units": "dB re r=0 reference", **(meta or {})}):
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["phase_rad\\f_hz"] + [fmt(f) for f in sweep.grid.points])
    for theta, row in zip(sweep.phases, sweep.ratio_db):
        w.writerow([fmt(theta)] + [fmt(v) for v in row])
    return buf.getvalue()


def sweep_json(sweep: PhaseSweepMap, meta: dict | None = None) -> str:
    doc = {
        "units": "dB",
        "metadata": meta or {},
        "squeeze_factor_r": sweep.squeeze_factor_r,
        "phases_rad": sweep.phases.tolist(),
        "f_hz": sweep.grid.points.tolist(),
        "ratio_db": sweep.ratio_db.tolist(),
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def emit_plot_data(result: NoiseBudget | PhaseSweepMap, path: str | Path, series: Iterable[str] | None = None,
                   config_hash: str | None = None) -> int:
    """Long-form ``(frequency, series, value)`` records with ``#`` metadata.

    Budgets emit ASDs in m/rtHz; sweep maps emit one series per phase named
    ``phase=<rad>`` in dB.  Returns the number of records written.
    """
    if isinstance(result, NoiseBudget):
        names = list(series) if series is not None else [c for c in BUDGET_COLUMNS]
        units = ASD_UNITS
        blocks = [(n, result.grid.points, result.asd(n)) for n in names]
        h = config_hash or result.metadata.get("config_sha256", "")
    else:
        units = "dB"
        blocks = [(f"phase={fmt(t)}", result.grid.points, row) for t, row in zip(result.phases, result.ratio_db)]
        h = config_hash or ""
    buf = io.StringIO()
    buf.write(f"# config_sha256: {h}\n# units: {units}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["f_hz", "series", "value"])
    n = 0
    for name, fs, vals in blocks:
        for f, v in zip(fs, vals):
            w.writerow([fmt(f), name, fmt(v)])
            n += 1
    write_atomic(path, buf.getvalue())
    return n
