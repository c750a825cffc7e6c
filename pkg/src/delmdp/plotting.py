"""Static regret plots from the harness CSV files.

Three schemas are recognised by their header: a single-run trace
(regret against ``t``), multi-seed curves (mean against ``t`` with a one-std
band per agent) and a size-sweep summary (mean against ``S`` with a band per
agent). Next to the figure a gnuplot-readable ``.dat`` file is written with
one indexed block per curve.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .harness import CURVE_COLUMNS, SUMMARY_COLUMNS, TRACE_COLUMNS

SCHEMAS = {"trace": TRACE_COLUMNS, "curves": CURVE_COLUMNS, "summary": SUMMARY_COLUMNS}
TEXT_COLUMNS = {"agent"}


class SchemaError(ValidationError):
    pass


def read_table(path):
    """Parse a harness CSV; returns ``(schema, columns)`` with numeric columns as arrays."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        # a zero-byte file is read as a trace with no rows
        return "trace", {name: np.zeros(0) for name in TRACE_COLUMNS}
    header = tuple(h.strip() for h in rows[0])
    schema = next((name for name, cols in SCHEMAS.items() if cols == header), None)
    if schema is None:
        expected = tuple(SCHEMAS.values())
        for col, name in enumerate(header, 1):
            if all(col > len(cols) or cols[col - 1] != name for cols in expected):
                raise SchemaError(f"{path}:1:{col}: unexpected column '{name}'")
        raise SchemaError(f"{path}:1:{len(header) + 1}: header is missing columns")
    data = {name: [] for name in header}
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != len(header):
            raise SchemaError(f"{path}:{lineno}:{min(len(row), len(header)) + 1}: expected {len(header)} fields, got {len(row)}")
        for col, (name, value) in enumerate(zip(header, row), 1):
            if name in TEXT_COLUMNS:
                data[name].append(value)
                continue
            try:
                data[name].append(float(value))
            except ValueError:
                raise SchemaError(f"{path}:{lineno}:{col}: '{value}' in column '{name}' is not a number") from None
    cols = {k: (v if k in TEXT_COLUMNS else np.array(v, dtype=float)) for k, v in data.items()}
    return schema, cols


def _series(schema, cols):
    """``[(label, x, y, std or None)]`` for the curves to draw."""
    if schema == "trace":
        t = cols["t"]
        if t.size == 0:
            return []
        return [
            ("pseudo-regret", t, cols["pseudo_regret"], None),
            ("realized regret", t, cols["realized_regret"], None),
        ]
    x_name, m_name, s_name = {
        "curves": ("t", "mean_pseudo_regret", "std_pseudo_regret"),
        "summary": ("S", "mean_final_pseudo_regret", "std_final_pseudo_regret"),
    }[schema]
    agents = np.array(cols["agent"], dtype=object)
    out = []
    for agent in dict.fromkeys(cols["agent"]):
        sel = agents == agent
        x = cols[x_name][sel]
        order = np.argsort(x, kind="stable")
        out.append((agent, x[order], cols[m_name][sel][order], cols[s_name][sel][order]))
    return out


def write_dat(series, path, x_label) -> None:
    lines = []
    for i, (label, x, y, s) in enumerate(series):
        if i:
            lines += ["", ""]
        lines.append(f"# {label}")
        lines.append(f"# {x_label} mean std")
        for xv, yv, sv in zip(x, y, s if s is not None else np.zeros_like(y)):
            lines.append(f"{xv:.17g} {yv:.17g} {sv:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def emit_plot(csv_path, out) -> Path:
    """Render ``csv_path`` to ``out`` (format from the suffix, SVG by default).

    Output is deterministic: no timestamps and a fixed SVG id salt. Also
    writes ``out`` with a ``.dat`` suffix for gnuplot. Returns the figure path.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    schema, cols = read_table(csv_path)
    series = _series(schema, cols)
    x_label = "S" if schema == "summary" else "t"
    out = Path(out)
    if not out.suffix:
        out = out.with_suffix(".svg")
    out.parent.mkdir(parents=True, exist_ok=True)

    with matplotlib.rc_context({"svg.hashsalt": "delmdp", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, x, y, s in series:
            marker = "o" if schema == "summary" else None
            ax.plot(x, y, label=label, marker=marker)
            if s is not None:
                ax.fill_between(x, y - s, y + s, alpha=0.25)
        ax.set_xlabel("number of states S" if schema == "summary" else "t")
        ax.set_ylabel("regret")
        if series:
            ax.legend()
        fig.tight_layout()
        meta = {"Date": None} if out.suffix in (".svg", ".pdf") else None
        fig.savefig(out, metadata=meta)
        plt.close(fig)
    write_dat(series, out.with_suffix(".dat"), x_label)
    return out
