"""Run artifacts: the per-state CSV, JSON manifests and reports, SVG plots."""

import json
import logging
import math
import re

import matplotlib
import numpy as np
import pandas as pd
import scipy

from .errors import MalformedRunFile

matplotlib.use("agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
BASE_COLUMNS = ("t", "t_bar", "tau", "s", "volume")
K_COLUMNS = ("lambda_k", "lambda_bar_k", "F_k", "W_k", "M2_k", "M3_k")
TAIL_COLUMNS = ("einstein_residual", "soliton_residual")

_K_PATTERN = re.compile(r"^lambda_k(.+)$")


def run_columns(ks):
    """Header of a run CSV for the given ``k`` values."""
    columns = list(BASE_COLUMNS)
    for k in ks:
        columns += [f"{name}{k:g}" for name in K_COLUMNS]
    return columns + list(TAIL_COLUMNS)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def write_table(df, path):
    """Write ``df`` as CSV with 17 significant digits."""
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.debug("wrote %d rows -> %s", len(df), path)
    return path


def run_ks(columns):
    """``k`` labels present in a run header, in column order."""
    return [m.group(1) for m in map(_K_PATTERN.match, columns) if m]


def read_run_csv(path):
    """Load a run CSV and check its column layout.

    Raises
    ------
    MalformedRunFile
        When the file cannot be parsed or its header is not a run header.
    """
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise MalformedRunFile(path, f"cannot parse: {exc}") from exc

    columns = list(df.columns)
    labels = run_ks(columns)
    if not labels:
        raise MalformedRunFile(path, "no lambda_k<K> column")
    expected = list(BASE_COLUMNS)
    for label in labels:
        expected += [f"{name}{label}" for name in K_COLUMNS]
    expected += list(TAIL_COLUMNS)
    if columns != expected:
        missing = [c for c in expected if c not in columns]
        extra = [c for c in columns if c not in expected]
        raise MalformedRunFile(
            path, f"unexpected header (missing {missing or 'none'}, unexpected {extra or 'none'})")
    if df.empty:
        raise MalformedRunFile(path, "no data rows")
    for column in columns:
        if pd.api.types.is_numeric_dtype(df[column]):
            continue
        coerced = pd.to_numeric(df[column], errors="coerce")
        rows = np.flatnonzero(coerced.isna() & df[column].notna())
        if rows.size == 0:
            continue
        row = int(rows[0])
        raise MalformedRunFile(
            path, f"non-numeric value {df[column].iloc[row]!r} in column '{column}', data row {row + 1}")
    return df


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def write_json(data, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_jsonable(data), f, indent=2, sort_keys=False)
        f.write("\n")
    logger.debug("wrote %s", path)
    return path


def write_manifest(path, config, trajectory=None, outputs=None):
    """Config echo, package versions, trajectory summary and output file list."""
    manifest = {
        "config": config.to_dict() if hasattr(config, "to_dict") else config,
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__,
                     "pandas": pd.__version__},
        "outputs": list(outputs or []),
    }
    if trajectory is not None:
        manifest["trajectory"] = {
            "flow_kind": trajectory.flow_kind,
            "steps": len(trajectory) - 1,
            "dt": trajectory.dt,
            "t_start": float(trajectory.times[0]),
            "t_end": float(trajectory.times[-1]),
            "provider": trajectory.provider.describe() if trajectory.provider else "s=0",
            "truncated": trajectory.truncated,
            "metric": trajectory.states[0].metric.summary(),
        }
    return write_json(manifest, path)


def write_report(report, path):
    return write_json(report.to_dict(), path)


# ---------------------------------------------------------------------------
# Plots
# ---------------------------------------------------------------------------

PLOT_SERIES = (
    ("lambda_k", "lambda"),
    ("M2_k", "tau^2 (lambda + k n / 2 tau)"),
    ("M3_k", "e^{-2st/n} (lambda - k s)"),
    ("lambda_bar_k", "lambda V^(2/n)"),
)


def plot_run(df, path, title=None):
    """SVG with one pane per monitored series against ``t``, one line per ``k``.

    Series other than lambda that are undefined throughout the run (all NaN)
    get no pane. The output is byte-identical for identical input.
    """
    labels = run_ks(df.columns)
    panes = [(prefix, ylabel) for prefix, ylabel in PLOT_SERIES
             if prefix == "lambda_k" or any(np.isfinite(df[f"{prefix}{label}"]).any() for label in labels)]
    with plt.rc_context({"svg.hashsalt": "ricci_lab", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(len(panes), 1, figsize=(6.4, 2.4 * len(panes)),
                                 sharex=True, squeeze=False)
        for ax, (prefix, ylabel) in zip(axes[:, 0], panes):
            for label in labels:
                ax.plot(df["t"], df[f"{prefix}{label}"], label=f"k={label}")
            ax.set_ylabel(ylabel)
        axes[0, 0].legend(loc="best")
        axes[-1, 0].set_xlabel("t")
        if title:
            axes[0, 0].set_title(title)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    logger.debug("wrote plot with %d pane(s) -> %s", len(panes), path)
    return path
