"""Figure construction over the solver CLI's documented CSV layouts.

Three kinds. "convergence" draws one log-y error curve per group found in a
curves table (any CSV with a t column and a value column, optionally grouped
by instance/k/algorithm/seed columns). "eig_scatter" draws the complex
eigenvalue cloud of an eigenvalues table, green for nonnegative real parts,
red for negative, with the imaginary axis in blue. "batch_panel" draws one
convergence panel per batch size from a median-curves table.

Rendering is read-only over its inputs and deterministic: identical inputs
and spec produce byte-identical images under one matplotlib version.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

FIGURE_KINDS = ("convergence", "eig_scatter", "batch_panel")
GROUP_COLUMNS = ("instance", "k", "algorithm", "seed")
POS_COLOR, NEG_COLOR, AXIS_COLOR = "green", "red", "blue"


class SchemaMismatch(ValueError):
    """An input table exists but its columns do not match the documented
    layout; the message names the offending columns."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple[str, ...]
    out: str
    log_y: bool = True
    log_x: bool = False
    title: str = ""
    value_col: str = "err_sq"

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}, "
                             f"expected one of {FIGURE_KINDS}")
        inputs = tuple(str(p) for p in (
            (self.inputs,) if isinstance(self.inputs, (str, Path))
            else self.inputs))
        if not inputs:
            raise ValueError("inputs must name at least one file")
        object.__setattr__(self, "inputs", inputs)
        if not self.out:
            raise ValueError("out must name the image file to write")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"kind", "inputs", "out", "log_y", "log_x",
                            "title", "value_col"}
        if unknown:
            raise ValueError(f"unknown figure spec fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return {"kind": self.kind, "inputs": list(self.inputs),
                "out": self.out, "log_y": self.log_y, "log_x": self.log_x,
                "title": self.title, "value_col": self.value_col}


def _read_table(path):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    with open(p, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaMismatch(f"{path}: empty file, no header row")
        rows = list(reader)
    if not rows:
        raise SchemaMismatch(f"{path}: header only, no data rows")
    return list(reader.fieldnames), rows


def _require(path, fields, needed):
    missing = [c for c in needed if c not in fields]
    if missing:
        raise SchemaMismatch(f"{path}: missing columns: {', '.join(missing)} "
                             f"(found: {', '.join(fields)})")


def _floats(path, rows, col):
    out = []
    for i, row in enumerate(rows):
        try:
            out.append(float(row[col]))
        except (TypeError, ValueError):
            raise SchemaMismatch(f"{path}: column {col!r} is not numeric "
                                 f"(row {i + 1}: {row[col]!r})") from None
    return out


def _style(ax, spec, ylabel):
    if spec.log_y:
        ax.set_yscale("log")
    if spec.log_x:
        ax.set_xscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)


def _curve_groups(path, fields, rows, value_col):
    """Split rows into labeled (t, value) series by whichever grouping
    columns the table carries; a plain trace is one unlabeled series."""
    group_cols = [c for c in GROUP_COLUMNS if c in fields]
    groups = {}
    for row in rows:
        key = tuple(row[c] for c in group_cols)
        groups.setdefault(key, []).append(row)
    out = []
    for key in sorted(groups):
        sub = groups[key]
        parts = [v if c == "algorithm" else f"{c}={v}"
                 for c, v in zip(group_cols, key)]
        label = " ".join(parts) if parts else Path(path).stem
        ts = _floats(path, sub, "t")
        vals = _floats(path, sub, value_col)
        order = sorted(range(len(ts)), key=lambda i: ts[i])
        out.append((label, [ts[i] for i in order], [vals[i] for i in order]))
    return out


def _build_convergence(spec):
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    n_curves = n_points = 0
    for path in spec.inputs:
        fields, rows = _read_table(path)
        _require(path, fields, ("t", spec.value_col))
        for label, ts, vals in _curve_groups(path, fields, rows, spec.value_col):
            if len(spec.inputs) > 1:
                label = f"{Path(path).stem}: {label}"
            ax.plot(ts, vals, label=label, linewidth=1.4)
            n_curves += 1
            n_points += len(ts)
    _style(ax, spec, spec.value_col)
    if n_curves > 1:
        ax.legend(fontsize=8)
    if spec.title:
        ax.set_title(spec.title)
    return fig, {"kind": "convergence", "curves": n_curves,
                 "points": n_points}


def _build_eig_scatter(spec):
    re, im = [], []
    for path in spec.inputs:
        fields, rows = _read_table(path)
        _require(path, fields, ("re", "im"))
        re.extend(_floats(path, rows, "re"))
        im.extend(_floats(path, rows, "im"))
    pos = [(x, y) for x, y in zip(re, im) if x >= 0.0]
    neg = [(x, y) for x, y in zip(re, im) if x < 0.0]
    fig, ax = plt.subplots(figsize=(5.2, 5.2))
    ax.axvline(0.0, color=AXIS_COLOR, linewidth=1.0, zorder=1)
    if pos:
        ax.scatter([p[0] for p in pos], [p[1] for p in pos], s=12,
                   color=POS_COLOR, label="Re >= 0", zorder=2)
    if neg:
        ax.scatter([p[0] for p in neg], [p[1] for p in neg], s=12,
                   color=NEG_COLOR, label="Re < 0", zorder=2)
    ax.set_xlabel("real part")
    ax.set_ylabel("imaginary part")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    if spec.title:
        ax.set_title(spec.title)
    return fig, {"kind": "eig_scatter", "green": len(pos), "red": len(neg)}


def _build_batch_panel(spec):
    tables = [(path, *_read_table(path)) for path in spec.inputs]
    for path, fields, _ in tables:
        _require(path, fields, ("k", "algorithm", "t", spec.value_col))
    ks = sorted({row["k"] for _, _, rows in tables for row in rows},
                key=float)
    ncols = 2
    nrows = max(1, math.ceil(len(ks) / ncols))
    fig, axes = plt.subplots(nrows, ncols, figsize=(4.6 * ncols, 3.5 * nrows),
                             squeeze=False)
    n_curves = 0
    for idx, k in enumerate(ks):
        ax = axes[idx // ncols][idx % ncols]
        for path, fields, rows in tables:
            sub = [r for r in rows if r["k"] == k]
            panel_fields = [c for c in fields if c != "k"]
            for label, ts, vals in _curve_groups(path, panel_fields, sub,
                                                 spec.value_col):
                ax.plot(ts, vals, label=label, linewidth=1.4)
                n_curves += 1
        _style(ax, spec, spec.value_col)
        ax.set_title(f"k = {k}", fontsize=10)
        ax.legend(fontsize=7)
    for idx in range(len(ks), nrows * ncols):
        axes[idx // ncols][idx % ncols].set_axis_off()
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    return fig, {"kind": "batch_panel", "panels": len(ks),
                 "curves": n_curves}


_BUILDERS = {
    "convergence": _build_convergence,
    "eig_scatter": _build_eig_scatter,
    "batch_panel": _build_batch_panel,
}


def build_figure(spec: FigureSpec):
    """Matplotlib figure plus a stats dict describing what was drawn; the
    caller owns closing the figure."""
    return _BUILDERS[spec.kind](spec)


def save_figure(fig, out) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def render(spec: FigureSpec) -> Path:
    """Build the figure and write it to spec.out; returns the written path."""
    fig, _ = build_figure(spec)
    return save_figure(fig, spec.out)
