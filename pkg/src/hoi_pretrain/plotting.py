"""Convergence curves from loss logs: a PNG plus the CSV table behind it."""
from __future__ import annotations

import csv
import io
import json
from typing import Dict, List, Optional, Sequence

import numpy as np

DEFAULT_COLUMNS = ("total", "L_b", "L_g", "L_c", "L_a", "L_s", "dn")

STYLE = {
    "figure.figsize": (7.0, 4.2),
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "grid.linewidth": 0.5,
    "lines.linewidth": 1.2,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "savefig.bbox": "tight",
}


class LogFormatError(ValueError):
    def __init__(self, path: str, problems):
        self.problems = problems
        detail = "\n".join(f"  {path}:{ln}: {msg}" for ln, msg in problems)
        super().__init__(f"malformed loss log:\n{detail}")


def read_loss_log(path: str, columns: Sequence[str] = DEFAULT_COLUMNS) -> Dict[str, np.ndarray]:
    """Parse a JSONL loss log into ``{"step": ..., column: ...}`` arrays.

    Error records written on a non-finite loss are ignored; any other line
    that is not a step record is reported with its line number.
    """
    rows, problems = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append((ln, f"invalid JSON ({exc.msg})"))
                continue
            if not isinstance(rec, dict):
                problems.append((ln, "record must be a JSON object"))
                continue
            if "error" in rec:
                continue
            if not isinstance(rec.get("step"), int):
                problems.append((ln, "missing integer 'step'"))
                continue
            rows.append(rec)
    if problems:
        raise LogFormatError(path, problems)
    if not rows:
        raise LogFormatError(path, [(0, "log has no step records")])
    present = [c for c in columns if all(isinstance(r.get(c), (int, float)) for r in rows)]
    table = {"step": np.asarray([r["step"] for r in rows], dtype=np.int64)}
    for c in present:
        table[c] = np.asarray([r[c] for r in rows], dtype=np.float64)
    return table


def smooth(values: np.ndarray, window: int = 1) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what exists."""
    if window < 1:
        raise ValueError("smoothing window must be at least 1")
    values = np.asarray(values, dtype=np.float64)
    if window == 1 or values.size == 0:
        return values.copy()
    csum = np.cumsum(np.insert(values, 0, 0.0))
    idx = np.arange(1, values.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def smoothed_table(table: Dict[str, np.ndarray], window: int = 1) -> Dict[str, np.ndarray]:
    return {k: (v if k == "step" else smooth(v, window)) for k, v in table.items()}


def table_to_csv(table: Dict[str, np.ndarray]) -> str:
    cols = list(table)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(cols)
    for i in range(len(table["step"])):
        writer.writerow([int(table[c][i]) if c == "step" else repr(float(table[c][i])) for c in cols])
    return out.getvalue()


def plot_convergence(runs: Dict[str, Dict[str, np.ndarray]], path: str,
                     columns: Optional[Sequence[str]] = None, title: Optional[str] = None):
    """Draw loss-vs-step curves; several runs share axes for comparison."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for run_name, table in runs.items():
            for col in columns or [c for c in table if c != "step"]:
                if col not in table:
                    continue
                label = col if len(runs) == 1 else f"{run_name}: {col}"
                ax.plot(table["step"], table[col], label=label)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        if title:
            ax.set_title(title)
        ax.legend(loc="upper right", ncol=2)
        fig.savefig(path)
        plt.close(fig)
    return path


def overlay_tables(runs: Dict[str, Dict[str, np.ndarray]], column: str = "total") -> Dict[str, np.ndarray]:
    """One column per run, aligned on the union of steps (NaN where absent)."""
    steps = np.unique(np.concatenate([t["step"] for t in runs.values()]))
    out = {"step": steps}
    for name, table in runs.items():
        col = np.full(steps.shape, np.nan)
        pos = np.searchsorted(steps, table["step"])
        if column in table:
            col[pos] = table[column]
        out[name] = col
    return out


def metric_columns(names: List[str]) -> List[str]:
    return [n for n in names if n != "step"]
